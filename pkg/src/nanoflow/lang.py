"""NanoJS syntax: source locations, AST, parser, and pretty printer.

NanoJS is a small JavaScript-like imperative language with variables,
one-level records on a heap, `if`/`while`, and three analysis-facing
statements: `sink(e)`, `upgrade(x)`, and `markSrc(x)`.  Expressions are
side-effect free.  Concrete syntax (EBNF):

    program := stmt*
    stmt    := "skip" ";"
             | name "=" expr ";"
             | name "." name "=" expr ";"
             | "if" "(" expr ")" block ("else" block)?
             | "while" "(" expr ")" block
             | "sink" "(" expr ")" ";"
             | "upgrade" "(" name ")" ";"
             | "markSrc" "(" name ")" ";"
    block   := "{" stmt* "}"
    expr    := or-expr with operators  ||  &&  ===  !==  <  + -  *  !
    primary := literal | name | name "." name | "(" expr ")"
             | "{" (name ":" expr ("," name ":" expr)*)? "}"

Comments run from `//` to end of line.  Integer literals are 64-bit
signed.  An omitted `else` is normalized to `skip`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Union

INT_MIN = -(2**63)
INT_MAX = 2**63 - 1

BaseValue = Union[bool, int, str]


@dataclass(frozen=True, order=True)
class Loc:
    """A source position, unique per statement within one program."""

    file: str
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.col}"

    @staticmethod
    def parse(text: str) -> "Loc":
        file, line, col = text.rsplit(":", 2)
        return Loc(file, int(line), int(col))


class NanoSyntaxError(Exception):
    def __init__(self, loc: Loc, message: str):
        super().__init__(f"{loc}: {message}")
        self.loc = loc
        self.message = message


class NotAWhile(Exception):
    pass


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------

class Expr:
    pass


@dataclass(frozen=True)
class Lit(Expr):
    value: BaseValue


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class FieldAccess(Expr):
    obj: str
    field: str


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # one of + - * === !== < && ||
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class Not(Expr):
    operand: Expr


@dataclass(frozen=True)
class NewObject(Expr):
    fields: tuple  # tuple of (name, Expr)


# ---------------------------------------------------------------------------
# Statements
# ---------------------------------------------------------------------------

class Stmt:
    pass


@dataclass(frozen=True)
class Skip(Stmt):
    loc: Loc


@dataclass(frozen=True)
class Seq(Stmt):
    first: Stmt
    second: Stmt


@dataclass(frozen=True)
class Assign(Stmt):
    target: str
    rhs: Expr
    loc: Loc


@dataclass(frozen=True)
class AssignField(Stmt):
    obj: str
    field: str
    rhs: Expr
    loc: Loc


@dataclass(frozen=True)
class If(Stmt):
    guard: Expr
    then_branch: Stmt
    else_branch: Stmt
    loc: Loc


@dataclass(frozen=True)
class While(Stmt):
    guard: Expr
    body: Stmt
    loc: Loc


@dataclass(frozen=True)
class Sink(Stmt):
    arg: Expr
    loc: Loc


@dataclass(frozen=True)
class Upgrade(Stmt):
    target: str
    loc: Loc


@dataclass(frozen=True)
class MarkSrc(Stmt):
    target: str
    loc: Loc


def seq_of(stmts: list, fallback_loc: Loc) -> Stmt:
    """Right-fold a statement list into a Seq chain; empty lists become skip."""
    if not stmts:
        return Skip(fallback_loc)
    out = stmts[-1]
    for s in reversed(stmts[:-1]):
        out = Seq(s, out)
    return out


def flatten(stmt: Stmt) -> list:
    if isinstance(stmt, Seq):
        return flatten(stmt.first) + flatten(stmt.second)
    return [stmt]


def iter_statements(stmt: Stmt) -> Iterator[Stmt]:
    """Yield every non-Seq statement node, descending into branches."""
    for s in flatten(stmt):
        yield s
        if isinstance(s, If):
            yield from iter_statements(s.then_branch)
            yield from iter_statements(s.else_branch)
        elif isinstance(s, While):
            yield from iter_statements(s.body)


def collect_locs(stmt: Stmt) -> list:
    """Locations of all flow-relevant statements.  Skips are excluded: they
    never emit events or log entries, and synthesized skips (implicit else
    branches, empty blocks) share the location of their parent construct."""
    return [s.loc for s in iter_statements(stmt) if not isinstance(s, Skip)]


def count_assignments(stmt: Stmt) -> int:
    return sum(1 for s in iter_statements(stmt) if isinstance(s, (Assign, AssignField)))


def is_effectively_skip(stmt: Stmt) -> bool:
    if isinstance(stmt, Skip):
        return True
    if isinstance(stmt, Seq):
        return is_effectively_skip(stmt.first) and is_effectively_skip(stmt.second)
    return False


def normalize(stmt: Stmt) -> Stmt:
    """Drop redundant skips: `skip; c` == `c`.  Branch bodies are normalized too."""
    if isinstance(stmt, Seq):
        parts = [normalize(s) for s in flatten(stmt)]
        parts = [s for s in parts if not isinstance(s, Skip)]
        if not parts:
            return Skip(stmt.first.loc if hasattr(stmt.first, "loc") else Loc("<norm>", 1, 1))
        return seq_of(parts, parts[0].loc if hasattr(parts[0], "loc") else Loc("<norm>", 1, 1))
    if isinstance(stmt, If):
        return replace(stmt, then_branch=normalize(stmt.then_branch),
                       else_branch=normalize(stmt.else_branch))
    if isinstance(stmt, While):
        return replace(stmt, body=normalize(stmt.body))
    return stmt


def same_shape(a: Stmt, b: Stmt) -> bool:
    """Structural equality of statements, ignoring source locations."""
    if isinstance(a, Seq) or isinstance(b, Seq):
        fa, fb = flatten(a), flatten(b)
        return len(fa) == len(fb) and all(same_shape(x, y) for x, y in zip(fa, fb))
    if type(a) is not type(b):
        return False
    if isinstance(a, Skip):
        return True
    if isinstance(a, Assign):
        return a.target == b.target and a.rhs == b.rhs
    if isinstance(a, AssignField):
        return a.obj == b.obj and a.field == b.field and a.rhs == b.rhs
    if isinstance(a, If):
        return (a.guard == b.guard and same_shape(a.then_branch, b.then_branch)
                and same_shape(a.else_branch, b.else_branch))
    if isinstance(a, While):
        return a.guard == b.guard and same_shape(a.body, b.body)
    if isinstance(a, Sink):
        return a.arg == b.arg
    if isinstance(a, (Upgrade, MarkSrc)):
        return a.target == b.target
    raise AssertionError(f"unhandled statement {a!r}")


def desugar_while(stmt: Stmt) -> Stmt:
    """One-step unfolding of a while loop into an if statement.

    `while (e) { c }` becomes `if (e) { c; while (e) { c } } else skip`.
    The synthesized if reuses the loop's location so branch coverage and
    upgrade interception keep pointing at the loop head.
    """
    if not isinstance(stmt, While):
        raise NotAWhile(f"expected a while statement, got {type(stmt).__name__}")
    return If(stmt.guard, Seq(stmt.body, stmt), Skip(stmt.loc), stmt.loc)


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

KEYWORDS = {"skip", "if", "else", "while", "sink", "upgrade", "markSrc", "true", "false"}

_SYMBOLS = ["===", "!==", "&&", "||", ";", "=", ".", ",", ":", "(", ")", "{", "}",
            "<", "+", "-", "*", "!"]


@dataclass
class Token:
    kind: str  # "name" | "int" | "string" | "kw" | "sym" | "eof"
    text: str
    loc: Loc
    value: Optional[BaseValue] = None


def tokenize(text: str, filename: str) -> list:
    tokens = []
    i, line, col = 0, 1, 1
    n = len(text)

    def here() -> Loc:
        return Loc(filename, line, col)

    def advance(k: int = 1):
        nonlocal i, line, col
        for _ in range(k):
            if i < n and text[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = text[i]
        if ch in " \t\r\n":
            advance()
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                advance()
            continue
        loc = here()
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            advance(j - i)
            if word in ("true", "false"):
                tokens.append(Token("kw", word, loc, value=(word == "true")))
            elif word in KEYWORDS:
                tokens.append(Token("kw", word, loc))
            else:
                tokens.append(Token("name", word, loc))
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            digits = text[i:j]
            lit = int(digits)
            if lit > INT_MAX:
                raise NanoSyntaxError(loc, f"integer literal out of 64-bit range: {lit}")
            advance(j - i)
            tokens.append(Token("int", digits, loc, value=lit))
            continue
        if ch == '"':
            advance()
            out = []
            while True:
                if i >= n or text[i] == "\n":
                    raise NanoSyntaxError(loc, "unterminated string literal")
                c = text[i]
                if c == '"':
                    advance()
                    break
                if c == "\\":
                    if i + 1 >= n:
                        raise NanoSyntaxError(here(), "dangling escape")
                    esc = text[i + 1]
                    mapped = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}.get(esc)
                    if mapped is None:
                        raise NanoSyntaxError(here(), f"unknown escape \\{esc}")
                    out.append(mapped)
                    advance(2)
                else:
                    out.append(c)
                    advance()
            tokens.append(Token("string", "".join(out), loc, value="".join(out)))
            continue
        for sym in _SYMBOLS:
            if text.startswith(sym, i):
                advance(len(sym))
                tokens.append(Token("sym", sym, loc))
                break
        else:
            raise NanoSyntaxError(loc, f"unexpected character {ch!r}")
    tokens.append(Token("eof", "", here()))
    return tokens


# ---------------------------------------------------------------------------
# Parser (recursive descent)
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list, filename: str):
        self.tokens = tokens
        self.pos = 0
        self.filename = filename

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str, text: Optional[str] = None) -> Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text if text is not None else kind
            raise NanoSyntaxError(tok.loc, f"expected {want!r}, found {tok.text or tok.kind!r}")
        return self.next()

    def at_sym(self, text: str) -> bool:
        tok = self.peek()
        return tok.kind == "sym" and tok.text == text

    def at_kw(self, text: str) -> bool:
        tok = self.peek()
        return tok.kind == "kw" and tok.text == text

    # -- statements --------------------------------------------------------

    def program(self) -> Stmt:
        stmts = []
        while self.peek().kind != "eof":
            stmts.append(self.statement())
        return seq_of(stmts, Loc(self.filename, 1, 1))

    def block(self) -> Stmt:
        open_tok = self.expect("sym", "{")
        stmts = []
        while not self.at_sym("}"):
            if self.peek().kind == "eof":
                raise NanoSyntaxError(self.peek().loc, "unterminated block")
            stmts.append(self.statement())
        self.expect("sym", "}")
        return seq_of(stmts, open_tok.loc)

    def statement(self) -> Stmt:
        tok = self.peek()
        if tok.kind == "kw":
            if tok.text == "skip":
                self.next()
                self.expect("sym", ";")
                return Skip(tok.loc)
            if tok.text == "if":
                self.next()
                self.expect("sym", "(")
                guard = self.expr()
                self.expect("sym", ")")
                then_branch = self.block()
                if self.at_kw("else"):
                    self.next()
                    else_branch = self.block()
                else:
                    else_branch = Skip(tok.loc)
                return If(guard, then_branch, else_branch, tok.loc)
            if tok.text == "while":
                self.next()
                self.expect("sym", "(")
                guard = self.expr()
                self.expect("sym", ")")
                body = self.block()
                return While(guard, body, tok.loc)
            if tok.text == "sink":
                self.next()
                self.expect("sym", "(")
                arg = self.expr()
                self.expect("sym", ")")
                self.expect("sym", ";")
                return Sink(arg, tok.loc)
            if tok.text in ("upgrade", "markSrc"):
                self.next()
                self.expect("sym", "(")
                name = self.expect("name").text
                self.expect("sym", ")")
                self.expect("sym", ";")
                cls = Upgrade if tok.text == "upgrade" else MarkSrc
                return cls(name, tok.loc)
            raise NanoSyntaxError(tok.loc, f"unexpected keyword {tok.text!r}")
        if tok.kind == "name":
            self.next()
            if self.at_sym("."):
                self.next()
                fld = self.expect("name").text
                self.expect("sym", "=")
                rhs = self.expr()
                self.expect("sym", ";")
                return AssignField(tok.text, fld, rhs, tok.loc)
            self.expect("sym", "=")
            rhs = self.expr()
            self.expect("sym", ";")
            return Assign(tok.text, rhs, tok.loc)
        raise NanoSyntaxError(tok.loc, f"expected a statement, found {tok.text or tok.kind!r}")

    # -- expressions, lowest precedence first ------------------------------

    def expr(self) -> Expr:
        return self.or_expr()

    def _binop_chain(self, sub, ops) -> Expr:
        lhs = sub()
        while self.peek().kind == "sym" and self.peek().text in ops:
            op = self.next().text
            lhs = BinOp(op, lhs, sub())
        return lhs

    def or_expr(self) -> Expr:
        return self._binop_chain(self.and_expr, {"||"})

    def and_expr(self) -> Expr:
        return self._binop_chain(self.equality, {"&&"})

    def equality(self) -> Expr:
        return self._binop_chain(self.comparison, {"===", "!=="})

    def comparison(self) -> Expr:
        return self._binop_chain(self.additive, {"<"})

    def additive(self) -> Expr:
        return self._binop_chain(self.multiplicative, {"+", "-"})

    def multiplicative(self) -> Expr:
        return self._binop_chain(self.unary, {"*"})

    def unary(self) -> Expr:
        if self.at_sym("!"):
            self.next()
            return Not(self.unary())
        return self.primary()

    def primary(self) -> Expr:
        tok = self.peek()
        if tok.kind in ("int", "string"):
            self.next()
            return Lit(tok.value)
        if tok.kind == "kw" and tok.text in ("true", "false"):
            self.next()
            return Lit(tok.value)
        if tok.kind == "name":
            self.next()
            if self.at_sym("."):
                self.next()
                fld = self.expect("name").text
                return FieldAccess(tok.text, fld)
            return Var(tok.text)
        if self.at_sym("("):
            self.next()
            e = self.expr()
            self.expect("sym", ")")
            return e
        if self.at_sym("{"):
            self.next()
            fields = []
            seen = set()
            while not self.at_sym("}"):
                name_tok = self.expect("name")
                if name_tok.text in seen:
                    raise NanoSyntaxError(name_tok.loc, f"duplicate field {name_tok.text!r}")
                seen.add(name_tok.text)
                self.expect("sym", ":")
                fields.append((name_tok.text, self.expr()))
                if self.at_sym(","):
                    self.next()
                elif not self.at_sym("}"):
                    raise NanoSyntaxError(self.peek().loc, "expected ',' or '}'")
            self.expect("sym", "}")
            return NewObject(tuple(fields))
        raise NanoSyntaxError(tok.loc, f"expected an expression, found {tok.text or tok.kind!r}")


def parse(text: str, filename: str = "<input>") -> Stmt:
    """Parse NanoJS source into an AST.  Locations are derived from token
    positions and therefore pairwise distinct."""
    program = _Parser(tokenize(text, filename), filename).program()
    locs = collect_locs(program)
    assert len(locs) == len(set(locs)), "parser produced duplicate locations"
    return program


# ---------------------------------------------------------------------------
# Pretty printer
# ---------------------------------------------------------------------------

def _pp_lit(v: BaseValue) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    out = v.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
    return f'"{out}"'


_PRECEDENCE = {"||": 1, "&&": 2, "===": 3, "!==": 3, "<": 4, "+": 5, "-": 5, "*": 6}


def pp_expr(e: Expr, parent_prec: int = 0) -> str:
    if isinstance(e, Lit):
        return _pp_lit(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, FieldAccess):
        return f"{e.obj}.{e.field}"
    if isinstance(e, Not):
        return f"!{pp_expr(e.operand, 7)}"
    if isinstance(e, BinOp):
        prec = _PRECEDENCE[e.op]
        inner = f"{pp_expr(e.lhs, prec)} {e.op} {pp_expr(e.rhs, prec + 1)}"
        return f"({inner})" if prec < parent_prec else inner
    if isinstance(e, NewObject):
        inner = ", ".join(f"{name}: {pp_expr(expr)}" for name, expr in e.fields)
        return "{" + inner + "}"
    raise AssertionError(f"unhandled expression {e!r}")


def pretty(stmt: Stmt, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(stmt, Seq):
        return "\n".join(pretty(s, indent) for s in flatten(stmt))
    if isinstance(stmt, Skip):
        return f"{pad}skip;"
    if isinstance(stmt, Assign):
        return f"{pad}{stmt.target} = {pp_expr(stmt.rhs)};"
    if isinstance(stmt, AssignField):
        return f"{pad}{stmt.obj}.{stmt.field} = {pp_expr(stmt.rhs)};"
    if isinstance(stmt, If):
        out = f"{pad}if ({pp_expr(stmt.guard)}) {{\n{pretty(stmt.then_branch, indent + 1)}\n{pad}}}"
        if not isinstance(stmt.else_branch, Skip):
            out += f" else {{\n{pretty(stmt.else_branch, indent + 1)}\n{pad}}}"
        return out
    if isinstance(stmt, While):
        return f"{pad}while ({pp_expr(stmt.guard)}) {{\n{pretty(stmt.body, indent + 1)}\n{pad}}}"
    if isinstance(stmt, Sink):
        return f"{pad}sink({pp_expr(stmt.arg)});"
    if isinstance(stmt, Upgrade):
        return f"{pad}upgrade({stmt.target});"
    if isinstance(stmt, MarkSrc):
        return f"{pad}markSrc({stmt.target});"
    raise AssertionError(f"unhandled statement {stmt!r}")
