"""Concrete syntax for expressions and formulas, plus the pretty-printer.

The surface syntax is ASCII (``\\x -> x^2``, ``forall eps > 0. ...``,
``D[3](L)``); the Unicode aliases λ ∀ ∃ ⇒ ∘ are accepted on input but never
emitted. The pretty-printer produces minimally parenthesized text whose
reparse is alpha-equivalent to the original tree.

Precedence, loosest to tightest (normative):

    formula:  quantifier body < ``=>`` (right) < ``&&`` (left) < ``!``
              < comparison / ``==``
    expr:     lambda body < ``.`` compose (right) < ``+`` ``-`` (left)
              < ``*`` ``/`` (left) < unary ``-`` < ``^`` (right)
              < application (left) < atoms
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Union

from .core import (
    And,
    App,
    Arrow,
    BinOp,
    Bound,
    Cmp,
    Compose,
    ConstFun,
    Diagnostic,
    DiagnosticError,
    DomainSet,
    Exists,
    Expr,
    Forall,
    Formula,
    FunEq,
    HasLimit,
    Implies,
    InDom,
    Interval,
    Lam,
    LagrangeEq,
    Lim,
    Lit,
    Neg,
    Node,
    Not,
    PartialD,
    Prim,
    PRIMS,
    Prod,
    Proj,
    Real,
    SourceSpan,
    TotalD,
    Tuple,
    Ty,
    Var,
)

KEYWORDS = frozenset(
    {"forall", "exists", "true", "D", "lim", "const", "expand", "proj",
     "haslimit", "indom", "lagrange"}
)
RESERVED = KEYWORDS | PRIMS

# Recognized-but-unsupported primitives get a dedicated error instead of
# silently becoming free variables.
UNSUPPORTED_PRIMS = frozenset(
    {"tan", "cot", "sec", "csc", "asin", "acos", "atan", "sinh", "cosh",
     "tanh", "log", "log2", "log10"}
)

UNICODE_ALIASES = {"λ": "\\", "∀": "forall", "∃": "exists", "⇒": "=>", "∘": "."}

GRAMMAR = r"""mathdsl expression grammar (EBNF)

file      = { line } ;
line      = [ binding ] [ "#" comment ] newline ;
binding   = name "=" expr | name "::" formula ;

formula   = ("forall" | "exists") name [ relop expr ] "." formula
          | implies ;
implies   = conj [ "=>" implies ] ;                    (* right assoc *)
conj      = negf { "&&" negf } ;                       (* left assoc *)
negf      = "!" negf | atomf ;
atomf     = "true"
          | "haslimit" "(" expr "," expr "," expr ")"
          | "indom" "(" expr "," expr ")"
          | "lagrange" "(" expr "," expr ")"
          | "(" formula ")"
          | expr relop expr [ relop expr ] ;           (* see chain note *)
relop     = "<" | "<=" | "=" | "!=" | ">" | ">=" | "==" ;

expr      = "\" param { param } "->" expr | compose ;
param     = name
          | "(" name "," name { "," name } ")"        (* tuple pattern *)
          | "(" name ":" type ")" ;                   (* annotation *)
compose   = additive [ "." compose ] ;                (* right assoc *)
additive  = mult { ("+" | "-") mult } ;               (* left assoc *)
mult      = unary { ("*" | "/") unary } ;             (* left assoc *)
unary     = "-" unary | power ;
power     = application [ "^" power ] ;               (* right assoc *)
application = atom { atom } ;                         (* left assoc *)
atom      = number | name
          | prim "(" expr ")" | prim
          | "D" "(" expr ")" | "D" "[" index "]" "(" expr ")"
          | "lim" "(" expr "," expr ")"
          | "const" "(" expr ")"
          | "expand" "(" expr ")"
          | "proj" "(" index "," expr ")"
          | "(" expr { "," expr } ")" ;               (* >= 2 exprs: tuple *)
prim      = "sin" | "cos" | "exp" | "ln" | "sqrt" | "abs" ;

type      = tyatom [ "->" type ] ;                    (* right assoc *)
tyatom    = "R" [ "{" label "}" ]
          | "(" type "," type { "," type } ")"
          | "(" type ")" ;

domain    = base [ "\" "{" number { "," number } "}" ] ;
base      = "R" | ("(" | "[") number "," number (")" | "]") ;

Notes.
- Precedence (loose to tight): lambda body; "." compose; "+" "-";
  "*" "/"; unary "-"; "^"; application; atoms.  "^" is right-associative,
  "-" and "/" left-associative; "." is right-associative and binds tighter
  than comparison.
- "a < b < c" (both "<") expands to "a < b && b < c"; any other chained
  comparison is rejected with a repair suggestion.
- ">" and ">=" are accepted and normalized by flipping the operands.
- "==" is extensional function equality; "=" is numeric comparison.
- Unicode aliases accepted on input: λ ∀ ∃ ⇒ ∘ .
- "true" parses as the vacuous comparison "0 = 0".
- A bare primitive name (e.g. "sin") denotes the function \x -> sin(x).
- A tuple-pattern lambda \(a,b,c) -> e is sugar for a lambda over one
  product-of-reals parameter accessed with proj(i, _).
"""


# ---------------------------------------------------------------------------
# Lexer


@dataclass(frozen=True)
class Token:
    kind: str  # "num", "ident", or the operator text itself
    text: str
    start: int  # character offsets; spans convert to bytes
    end: int
    line: int
    col: int
    end_line: int
    end_col: int
    value: Optional[Fraction] = None


TWO_CHAR = ("->", "<=", "!=", "==", "=>", "&&", "::", ">=")
ONE_CHAR = "\\()[],.+-*/^<>=!:{}"


class Lexer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1
        # cumulative UTF-8 byte offset per character position
        self.byte_of = [0] * (len(text) + 1)
        for i, ch in enumerate(text):
            self.byte_of[i + 1] = self.byte_of[i] + len(ch.encode("utf-8"))

    def error(self, msg: str, start: int) -> DiagnosticError:
        span = self._span(start, self.pos, self.line, self.col, self.line, self.col)
        return DiagnosticError(
            Diagnostic("error", "SyntaxError", msg, span=span)
        )

    def _span(self, s, e, l0, c0, l1, c1) -> SourceSpan:
        return SourceSpan(self.byte_of[s], self.byte_of[e], l0, c0, l1, c1)

    def _advance(self, n: int) -> None:
        for _ in range(n):
            if self.pos < len(self.text) and self.text[self.pos] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.pos += 1

    def tokens(self) -> list[Token]:
        out: list[Token] = []
        text = self.text
        while self.pos < len(text):
            ch = text[self.pos]
            if ch == "#":  # comment to end of line
                while self.pos < len(text) and text[self.pos] != "\n":
                    self._advance(1)
                continue
            if ch.isspace():
                self._advance(1)
                continue
            start, line, col = self.pos, self.line, self.col
            if ch in UNICODE_ALIASES:
                alias = UNICODE_ALIASES[ch]
                self._advance(1)
                kind = alias if alias in ("\\", "=>", ".") else "ident"
                out.append(
                    Token(
                        alias if kind != "ident" else "ident",
                        alias,
                        start,
                        self.pos,
                        line,
                        col,
                        self.line,
                        self.col,
                    )
                )
                continue
            if ch.isdigit():
                j = self.pos
                while j < len(text) and text[j].isdigit():
                    j += 1
                if j < len(text) and text[j] == "." and j + 1 < len(text) and text[j + 1].isdigit():
                    j += 1
                    while j < len(text) and text[j].isdigit():
                        j += 1
                if j < len(text) and text[j] in "eE":
                    k = j + 1
                    if k < len(text) and text[k] in "+-":
                        k += 1
                    if k < len(text) and text[k].isdigit():
                        while k < len(text) and text[k].isdigit():
                            k += 1
                        j = k
                lit = text[start:j]
                self._advance(j - start)
                out.append(
                    Token("num", lit, start, self.pos, line, col, self.line,
                          self.col, value=Fraction(lit))
                )
                continue
            if ch.isalpha() or ch == "_":
                j = self.pos
                while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                    j += 1
                word = text[start:j]
                self._advance(j - start)
                out.append(Token("ident", word, start, self.pos, line, col,
                                 self.line, self.col))
                continue
            two = text[self.pos : self.pos + 2]
            if two in TWO_CHAR:
                self._advance(2)
                out.append(Token(two, two, start, self.pos, line, col,
                                 self.line, self.col))
                continue
            if ch in ONE_CHAR:
                self._advance(1)
                out.append(Token(ch, ch, start, self.pos, line, col,
                                 self.line, self.col))
                continue
            raise self.error(f"unexpected character {ch!r}", start)
        return out


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    """Recursive descent over the token list. Spans cover first..last token
    of each construct and always nest within the parent construct."""

    def __init__(self, text: str):
        self.lexer = Lexer(text)
        self.toks = self.lexer.tokens()
        self.i = 0

    # -- token plumbing

    def peek(self, k: int = 0) -> Optional[Token]:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def at(self, kind: str) -> bool:
        t = self.peek()
        return t is not None and t.kind == kind

    def at_word(self, word: str) -> bool:
        t = self.peek()
        return t is not None and t.kind == "ident" and t.text == word

    def next(self) -> Token:
        t = self.peek()
        if t is None:
            raise self.err("unexpected end of input")
        self.i += 1
        return t

    def expect(self, kind: str) -> Token:
        t = self.peek()
        if t is None or t.kind != kind:
            raise self.err(f"expected {kind!r}" + (f", found {t.text!r}" if t else ""))
        self.i += 1
        return t

    def err(self, msg: str, tok: Optional[Token] = None,
            suggestion: Optional[Node] = None) -> DiagnosticError:
        t = tok or self.peek() or (self.toks[-1] if self.toks else None)
        span = self.tok_span(t) if t else None
        return DiagnosticError(
            Diagnostic("error", "SyntaxError", msg, span=span, suggestion=suggestion)
        )

    def tok_span(self, t: Token) -> SourceSpan:
        b = self.lexer.byte_of
        return SourceSpan(b[t.start], b[t.end], t.line, t.col, t.end_line, t.end_col)

    def span_from(self, start_tok: Token) -> SourceSpan:
        last = self.toks[self.i - 1]
        b = self.lexer.byte_of
        return SourceSpan(b[start_tok.start], b[last.end], start_tok.line,
                          start_tok.col, last.end_line, last.end_col)

    def done(self) -> bool:
        return self.i >= len(self.toks)

    def require_done(self) -> None:
        if not self.done():
            raise self.err(f"unexpected trailing input {self.peek().text!r}")

    # -- expressions

    def expr(self) -> Expr:
        if self.at("\\"):
            return self.lambda_()
        return self.compose()

    def lambda_(self) -> Expr:
        start = self.expect("\\")
        params = [self.param()]
        while self.at("ident") or self.at("("):
            params.append(self.param())
        self.expect("->")
        body = self.expr()
        for name, annot, pattern in reversed(params):
            if pattern is not None:
                body = _desugar_tuple_pattern(pattern, body)
                name = body.param
                annot = body.param_ty
                body = body.body
            body = Lam(name, annot, body, span=self.span_from(start))
        return body

    def param(self) -> tuple[str, Optional[Ty], Optional[list[str]]]:
        """Returns (name, annotation, tuple-pattern-names)."""
        if self.at("ident"):
            return (self.binder_name(), None, None)
        self.expect("(")
        name = self.binder_name()
        if self.at(":"):
            self.next()
            ty = self.type_()
            self.expect(")")
            return (name, ty, None)
        names = [name]
        while self.at(","):
            self.next()
            names.append(self.binder_name())
        self.expect(")")
        if len(names) < 2:
            return (names[0], None, None)
        return ("", None, names)

    def binder_name(self) -> str:
        t = self.expect("ident")
        if t.text in RESERVED or t.text in UNSUPPORTED_PRIMS:
            raise self.err(f"{t.text!r} is reserved and cannot be bound", t)
        return t.text

    def compose(self) -> Expr:
        start = self.peek()
        lhs = self.additive()
        if self.at("."):
            self.next()
            rhs = self.compose()
            return Compose(lhs, rhs, span=self.span_from(start))
        return lhs

    def additive(self) -> Expr:
        start = self.peek()
        e = self.mult()
        while self.at("+") or self.at("-"):
            op = self.next().kind
            rhs = self.mult()
            e = BinOp(op, e, rhs, span=self.span_from(start))
        return e

    def mult(self) -> Expr:
        start = self.peek()
        e = self.unary()
        while self.at("*") or self.at("/"):
            op = self.next().kind
            rhs = self.unary()
            e = BinOp(op, e, rhs, span=self.span_from(start))
        return e

    def unary(self) -> Expr:
        if self.at("-"):
            start = self.next()
            arg = self.unary()
            return Neg(arg, span=self.span_from(start))
        return self.power()

    def power(self) -> Expr:
        start = self.peek()
        base = self.application()
        if self.at("^"):
            self.next()
            if self.at("-"):
                neg = self.next()
                inner = self.power()
                exp: Expr = Neg(inner, span=self.span_from(neg))
            else:
                exp = self.power()
            return BinOp("^", base, exp, span=self.span_from(start))
        return base

    def application(self) -> Expr:
        start = self.peek()
        e = self.atom()
        while self._at_atom_start():
            arg = self.atom()
            e = App(e, arg, span=self.span_from(start))
        return e

    def _at_atom_start(self) -> bool:
        t = self.peek()
        if t is None:
            return False
        if t.kind in ("num", "("):
            return True
        if t.kind == "ident":
            return t.text not in ("forall", "exists", "true")
        return False

    def atom(self) -> Expr:
        t = self.peek()
        if t is None:
            raise self.err("expected an expression")
        if t.kind == "num":
            self.next()
            return Lit(t.value, span=self.tok_span(t))
        if t.kind == "(":
            start = self.next()
            items = [self.expr()]
            while self.at(","):
                self.next()
                items.append(self.expr())
            self.expect(")")
            if len(items) == 1:
                return items[0]
            return Tuple(tuple(items), span=self.span_from(start))
        if t.kind == "ident":
            return self.ident_atom()
        raise self.err(f"unexpected {t.text!r} in expression", t)

    def ident_atom(self) -> Expr:
        t = self.next()
        word = t.text
        if word in UNSUPPORTED_PRIMS:
            raise self.err(
                f"unknown primitive {word!r}; supported: "
                + ", ".join(sorted(PRIMS)),
                t,
            )
        if word in PRIMS:
            if self.at("("):
                self.next()
                arg = self.expr()
                self.expect(")")
                return Prim(word, arg, span=self.span_from(t))
            # bare primitive denotes the function itself
            span = self.tok_span(t)
            return Lam("x", None, Prim(word, Var("x", span=span), span=span),
                       span=span)
        if word == "D":
            if self.at("["):
                self.next()
                idx = self.expect("num")
                if idx.value.denominator != 1 or idx.value < 1:
                    raise self.err("partial derivative index must be a positive integer", idx)
                self.expect("]")
                self.expect("(")
                fun = self.expr()
                self.expect(")")
                return PartialD(int(idx.value), fun, span=self.span_from(t))
            self.expect("(")
            fun = self.expr()
            self.expect(")")
            return TotalD(fun, span=self.span_from(t))
        if word == "lim":
            self.expect("(")
            point = self.expr()
            self.expect(",")
            fun = self.expr()
            self.expect(")")
            return Lim(point, fun, span=self.span_from(t))
        if word == "const":
            self.expect("(")
            v = self.expr()
            self.expect(")")
            return ConstFun(v, span=self.span_from(t))
        if word == "proj":
            self.expect("(")
            idx = self.expect("num")
            if idx.value.denominator != 1 or idx.value < 1:
                raise self.err("projection index must be a positive integer", idx)
            self.expect(",")
            e = self.expr()
            self.expect(")")
            return Proj(int(idx.value), e, span=self.span_from(t))
        if word == "expand":
            self.expect("(")
            w = self.expr()
            self.expect(")")
            return expand_combinator(w, self.span_from(t))
        if word in ("forall", "exists", "true", "haslimit", "indom", "lagrange"):
            raise self.err(f"{word!r} starts a formula, not an expression", t)
        return Var(word, span=self.tok_span(t))

    # -- formulas

    def formula(self) -> Formula:
        t = self.peek()
        if t is not None and t.kind == "ident" and t.text in ("forall", "exists"):
            start = self.next()
            name = self.binder_name()
            bound = None
            if self.peek() is not None and self.peek().kind in ("<", "<=", ">", ">="):
                op = self.next().kind
                bexpr = self.additive()
                bound = Bound(op, bexpr)
            self.expect(".")
            body = self.formula()
            cls = Forall if start.text == "forall" else Exists
            return cls(name, bound, body, span=self.span_from(start))
        return self.implies()

    def implies(self) -> Formula:
        start = self.peek()
        lhs = self.conj()
        if self.at("=>"):
            self.next()
            rhs = self.implies()
            return Implies(lhs, rhs, span=self.span_from(start))
        return lhs

    def conj(self) -> Formula:
        start = self.peek()
        f = self.negf()
        while self.at("&&"):
            self.next()
            rhs = self.negf()
            f = And(f, rhs, span=self.span_from(start))
        return f

    def negf(self) -> Formula:
        if self.at("!"):
            start = self.next()
            body = self.negf()
            return Not(body, span=self.span_from(start))
        return self.atomf()

    def atomf(self) -> Formula:
        t = self.peek()
        if t is None:
            raise self.err("expected a formula")
        if t.kind == "ident" and t.text == "true":
            self.next()
            span = self.tok_span(t)
            # truth literal: the vacuous comparison 0 = 0
            return Cmp("=", Lit(Fraction(0), span=span), Lit(Fraction(0), span=span),
                       span=span)
        if t.kind == "ident" and t.text in ("forall", "exists"):
            return self.formula()
        if t.kind == "ident" and t.text == "haslimit":
            self.next()
            self.expect("(")
            fun = self.expr()
            self.expect(",")
            point = self.expr()
            self.expect(",")
            limit = self.expr()
            self.expect(")")
            return HasLimit(fun, point, limit, span=self.span_from(t))
        if t.kind == "ident" and t.text == "indom":
            self.next()
            self.expect("(")
            point = self.expr()
            self.expect(",")
            fun = self.expr()
            self.expect(")")
            return InDom(point, fun, span=self.span_from(t))
        if t.kind == "ident" and t.text == "lagrange":
            self.next()
            self.expect("(")
            lagr = self.expr()
            self.expect(",")
            path = self.expr()
            self.expect(")")
            return LagrangeEq(lagr, path, span=self.span_from(t))
        if t.kind == "(":
            # '(' may open a parenthesized formula or an expression; try the
            # formula reading first and fall back on failure.
            mark = self.i
            try:
                self.next()
                inner = self.formula()
                self.expect(")")
                return inner
            except DiagnosticError:
                self.i = mark
        return self.comparison()

    CMP_TOKENS = ("<", "<=", "=", "!=", ">", ">=", "==")

    def comparison(self) -> Formula:
        start = self.peek()
        lhs = self.expr()
        t = self.peek()
        if t is None or t.kind not in self.CMP_TOKENS:
            raise self.err("expected a comparison operator", t)
        ops = [self.next().kind]
        rhss = [self.expr()]
        while self.peek() is not None and self.peek().kind in self.CMP_TOKENS:
            ops.append(self.next().kind)
            rhss.append(self.expr())
        span = self.span_from(start)
        if len(ops) == 1:
            return self._mk_cmp(ops[0], lhs, rhss[0], span)
        if len(ops) == 2 and ops == ["<", "<"]:
            # the textbook chain a < b < c, expanded for length 2 only
            left = self._mk_cmp("<", lhs, rhss[0], span)
            right = self._mk_cmp("<", rhss[0], rhss[1], span)
            return And(left, right, span=span)
        # repair: the explicit pairwise conjunction
        sides = [lhs] + rhss
        repaired = self._mk_cmp(ops[0], sides[0], sides[1], span)
        for op, a, b in zip(ops[1:], sides[1:], sides[2:]):
            repaired = And(repaired, self._mk_cmp(op, a, b, span), span=span)
        raise self.err(
            "chained comparisons are only supported for `a < b < c`; "
            "write the conjunction explicitly (e.g. `0 < a && a < b`)",
            start,
            suggestion=repaired,
        )

    def _mk_cmp(self, op: str, lhs: Expr, rhs: Expr, span: SourceSpan) -> Formula:
        if op == "==":
            return FunEq(lhs, rhs, span=span)
        if op == ">":
            return Cmp("<", rhs, lhs, span=span)
        if op == ">=":
            return Cmp("<=", rhs, lhs, span=span)
        return Cmp(op, lhs, rhs, span=span)

    # -- types

    def type_(self) -> Ty:
        lhs = self.tyatom()
        if self.at("->"):
            self.next()
            return Arrow(lhs, self.type_())
        return lhs

    def tyatom(self) -> Ty:
        t = self.peek()
        if t is None:
            raise self.err("expected a type")
        if t.kind == "ident" and t.text == "R":
            self.next()
            label = None
            if self.at("{"):
                self.next()
                label = self.expect("ident").text
                self.expect("}")
            return Real(label)
        if t.kind == "(":
            self.next()
            items = [self.type_()]
            while self.at(","):
                self.next()
                items.append(self.type_())
            self.expect(")")
            if len(items) == 1:
                return items[0]
            return Prod(tuple(items))
        raise self.err(f"unexpected {t.text!r} in type", t)

    def domain_number(self) -> float:
        neg = False
        if self.at("-"):
            self.next()
            neg = True
        t = self.expect("num")
        return -float(t.value) if neg else float(t.value)


def _free_names(e: Expr) -> set[str]:
    # local import: binding depends on parser users, not the reverse
    from .binding import free_vars

    return free_vars(e)


def _desugar_tuple_pattern(names: list[str], body: Expr) -> Lam:
    """Rewrite \\(a,b,c) -> body into a lambda over one product-of-reals
    parameter, with pattern names replaced by projections."""
    from .binding import subst

    avoid = _free_names(body)
    param = "s"
    k = 0
    while param in avoid or param in names:
        k += 1
        param = f"s_{k}"
    for j, name in enumerate(names, start=1):
        body = subst(body, name, Proj(j, Var(param)))
    annot = Prod(tuple(Real() for _ in names))
    return Lam(param, annot, body)


def expand_combinator(w: Expr, span: Optional[SourceSpan] = None) -> Expr:
    """``expand(w)`` builds \\t -> (t, w t, D(w) t) without resolving D."""
    avoid = _free_names(w)
    t = "t"
    k = 0
    while t in avoid:
        k += 1
        t = f"t_{k}"
    tv = Var(t, span=span)
    return Lam(
        t,
        None,
        Tuple((tv, App(w, tv, span=span), App(TotalD(w, span=span), tv, span=span)),
              span=span),
        span=span,
    )


# ---------------------------------------------------------------------------
# Public parse entry points


def parse_expr(text: str) -> Expr:
    """Parse an expression; raises DiagnosticError with a source span."""
    p = _Parser(text)
    e = p.expr()
    p.require_done()
    return e


def parse_formula(text: str) -> Formula:
    p = _Parser(text)
    f = p.formula()
    p.require_done()
    return f


def parse_node(text: str) -> Node:
    """Parse as a formula if possible, otherwise as an expression."""
    try:
        return parse_formula(text)
    except DiagnosticError as ferr:
        try:
            return parse_expr(text)
        except DiagnosticError:
            raise ferr from None


def parse_type(text: str) -> Ty:
    p = _Parser(text)
    ty = p.type_()
    p.require_done()
    return ty


@dataclass(frozen=True)
class ProgramBinding:
    name: str
    node: Node
    is_formula: bool
    line: int


def parse_program(text: str) -> list[ProgramBinding]:
    """Parse an expression file: one ``name = expr`` or ``name :: formula``
    per line, ``#`` comments, later bindings may reference earlier names."""
    out: list[ProgramBinding] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        p = _Parser(line)
        name_tok = p.expect("ident")
        if name_tok.text in RESERVED or name_tok.text in UNSUPPORTED_PRIMS:
            raise p.err(f"{name_tok.text!r} is reserved and cannot be bound",
                        name_tok)
        if name_tok.text in seen:
            raise p.err(f"duplicate binding {name_tok.text!r} (line {lineno})",
                        name_tok)
        if p.at("="):
            p.next()
            node: Node = p.expr()
            is_formula = False
        elif p.at("::"):
            p.next()
            node = p.formula()
            is_formula = True
        else:
            raise p.err("expected '=' or '::' after binding name")
        p.require_done()
        seen.add(name_tok.text)
        out.append(ProgramBinding(name_tok.text, node, is_formula, lineno))
    return out


def parse_domain(text: str) -> DomainSet:
    """Parse a domain spec: ``R``, ``R\\{1}``, ``(0,1]``, ``[0,3.14]\\{1.5}``."""
    p = _Parser(text)
    t = p.peek()
    if t is None:
        raise p.err("expected a domain")
    if t.kind == "ident" and t.text == "R":
        p.next()
        base = Interval(float("-inf"), float("inf"), True, True)
    elif t.kind in ("(", "["):
        lo_open = t.kind == "("
        p.next()
        lo = p.domain_number()
        p.expect(",")
        hi = p.domain_number()
        close = p.next()
        if close.kind not in (")", "]"):
            raise p.err("expected ')' or ']'", close)
        base = Interval(lo, hi, lo_open, close.kind == ")")
    else:
        raise p.err(f"unexpected {t.text!r} in domain", t)
    punctures: list[float] = []
    if p.at("\\"):
        p.next()
        p.expect("{")
        punctures.append(p.domain_number())
        while p.at(","):
            p.next()
            punctures.append(p.domain_number())
        p.expect("}")
    p.require_done()
    return DomainSet.of([base], punctures)


# ---------------------------------------------------------------------------
# Pretty-printer

# expression context levels
_LAM, _COMPOSE, _ADD, _MUL, _NEG, _POW, _APP, _ATOM = range(8)
# formula context levels
_QUANT, _IMPLIES, _AND, _NOT, _FATOM = range(5)


def _frac_str(q: Fraction) -> str:
    """Exact rendering of a rational literal. Integers and decimal-exact
    fractions render canonically; anything else falls back to p/q."""
    if q.denominator == 1:
        return str(q.numerator)
    den = q.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den == 1:
        digits = max(twos, fives)
        scaled = q.numerator * 10**digits // q.denominator
        s = str(abs(scaled)).rjust(digits + 1, "0")
        int_part, frac_part = s[:-digits], s[-digits:]
        sign = "-" if scaled < 0 else ""
        return f"{sign}{int_part}.{frac_part}"
    return f"{q.numerator}/{q.denominator}"


def pretty(node: Node) -> str:
    """Minimal-parenthesization text; reparsing yields an alpha-equivalent
    tree (for trees whose literals are decimal-representable)."""
    if isinstance(node, Formula):
        return _pf(node, _QUANT)
    return _pe(node, _LAM)


def _wrap(s: str, need: bool) -> str:
    return f"({s})" if need else s


def _pe(e: Expr, ctx: int) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Lit):
        s = _frac_str(e.value)
        return s
    if isinstance(e, Lam):
        if e.param_ty is not None:
            head = f"\\({e.param} : {_pt(e.param_ty)})"
        else:
            head = f"\\{e.param}"
        return _wrap(f"{head} -> {_pe(e.body, _LAM)}", ctx > _LAM)
    if isinstance(e, Compose):
        s = f"{_pe(e.f, _ADD)} . {_pe(e.g, _COMPOSE)}"
        return _wrap(s, ctx > _COMPOSE)
    if isinstance(e, BinOp):
        if e.op in ("+", "-"):
            s = f"{_pe(e.lhs, _ADD)} {e.op} {_pe(e.rhs, _MUL)}"
            return _wrap(s, ctx > _ADD)
        if e.op in ("*", "/"):
            s = f"{_pe(e.lhs, _MUL)} {e.op} {_pe(e.rhs, _NEG)}"
            return _wrap(s, ctx > _MUL)
        s = f"{_pe(e.lhs, _APP)}^{_pe(e.rhs, _POW)}"
        return _wrap(s, ctx > _POW)
    if isinstance(e, Neg):
        s = f"-{_pe(e.arg, _POW)}"
        return _wrap(s, ctx > _NEG)
    if isinstance(e, App):
        s = f"{_pe(e.fun, _APP)} {_pe(e.arg, _ATOM)}"
        return _wrap(s, ctx > _APP)
    if isinstance(e, Prim):
        return f"{e.name}({_pe(e.arg, _LAM)})"
    if isinstance(e, TotalD):
        return f"D({_pe(e.fun, _LAM)})"
    if isinstance(e, PartialD):
        return f"D[{e.index}]({_pe(e.fun, _LAM)})"
    if isinstance(e, Lim):
        return f"lim({_pe(e.point, _LAM)}, {_pe(e.fun, _LAM)})"
    if isinstance(e, ConstFun):
        return f"const({_pe(e.value, _LAM)})"
    if isinstance(e, Proj):
        return f"proj({e.index}, {_pe(e.tuple_, _LAM)})"
    if isinstance(e, Tuple):
        return "(" + ", ".join(_pe(x, _LAM) for x in e.items) + ")"
    raise TypeError(f"not an expression: {e!r}")


def _pf(f: Formula, ctx: int) -> str:
    if isinstance(f, (Forall, Exists)):
        kw = "forall" if isinstance(f, Forall) else "exists"
        bound = f" {f.bound.op} {_pe(f.bound.expr, _ADD)}" if f.bound else ""
        s = f"{kw} {f.name}{bound}. {_pf(f.body, _QUANT)}"
        return _wrap(s, ctx > _QUANT)
    if isinstance(f, Implies):
        s = f"{_pf(f.lhs, _AND)} => {_pf(f.rhs, _IMPLIES)}"
        return _wrap(s, ctx > _IMPLIES)
    if isinstance(f, And):
        s = f"{_pf(f.lhs, _AND)} && {_pf(f.rhs, _NOT)}"
        return _wrap(s, ctx > _AND)
    if isinstance(f, Not):
        return f"!{_pf(f.body, _FATOM)}"
    if isinstance(f, Cmp):
        return f"{_pe(f.lhs, _COMPOSE)} {f.op} {_pe(f.rhs, _COMPOSE)}"
    if isinstance(f, FunEq):
        return f"{_pe(f.lhs, _COMPOSE)} == {_pe(f.rhs, _COMPOSE)}"
    if isinstance(f, HasLimit):
        return (f"haslimit({_pe(f.fun, _LAM)}, {_pe(f.point, _LAM)}, "
                f"{_pe(f.limit, _LAM)})")
    if isinstance(f, InDom):
        return f"indom({_pe(f.point, _LAM)}, {_pe(f.fun, _LAM)})"
    if isinstance(f, LagrangeEq):
        return f"lagrange({_pe(f.lagrangian, _LAM)}, {_pe(f.path, _LAM)})"
    raise TypeError(f"not a formula: {f!r}")


def _pt(ty: Ty) -> str:
    from .core import ty_to_str

    return ty_to_str(ty)


def span_table(node: Node) -> dict[int, SourceSpan]:
    """Map id(subterm) -> span for every spanned subterm."""
    from .core import subterms

    return {id(n): n.span for n in subterms(node) if n.span is not None}
