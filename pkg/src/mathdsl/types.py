"""Type inference and checking, plus elaboration of traditional
d/dt--partial notation against a declared state signature.

Inference is monomorphic unification over :class:`MetaVar` placeholders;
every call uses a private mutable store, so concurrent calls are
independent. Display labels on ``R`` never influence unification.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

from .core import (
    And,
    App,
    Arrow,
    BinOp,
    Cmp,
    Compose,
    ConstFun,
    Diagnostic,
    DiagnosticError,
    Exists,
    Expr,
    Forall,
    Formula,
    FunEq,
    HasLimit,
    Implies,
    InDom,
    LagrangeEq,
    Lam,
    Lim,
    Lit,
    MetaVar,
    Neg,
    Node,
    Not,
    PartialD,
    Prim,
    Prod,
    Proj,
    Real,
    SourceSpan,
    TotalD,
    Tuple,
    Ty,
    ty_to_str,
    Var,
    expr_size,
)
from .parser import Lexer, Token, expand_combinator


# ---------------------------------------------------------------------------
# Environments and state signatures


class TypeEnv:
    """Ambient declarations, e.g. ``L : (T,Q,V) -> R``. Names are unique and
    declared types are closed (no unification variables)."""

    def __init__(self, decls: dict[str, Ty] | None = None):
        self.decls: dict[str, Ty] = {}
        for name, ty in (decls or {}).items():
            self.declare(name, ty)

    def declare(self, name: str, ty: Ty) -> None:
        if name in self.decls:
            raise ValueError(f"duplicate declaration of {name!r}")
        if _has_meta(ty):
            raise ValueError(f"declared type of {name!r} is not closed")
        self.decls[name] = ty

    def get(self, name: str) -> Ty | None:
        return self.decls.get(name)

    def names(self) -> frozenset[str]:
        return frozenset(self.decls)

    def relabeled(self) -> "TypeEnv":
        """Copy with every real-label erased (label-invariance testing)."""
        return TypeEnv({n: _strip_labels(t) for n, t in self.decls.items()})


def _has_meta(ty: Ty) -> bool:
    if isinstance(ty, MetaVar):
        return True
    if isinstance(ty, Arrow):
        return _has_meta(ty.dom) or _has_meta(ty.cod)
    if isinstance(ty, Prod):
        return any(_has_meta(t) for t in ty.items)
    return False


def _strip_labels(ty: Ty) -> Ty:
    if isinstance(ty, Real):
        return Real()
    if isinstance(ty, Arrow):
        return Arrow(_strip_labels(ty.dom), _strip_labels(ty.cod))
    if isinstance(ty, Prod):
        return Prod(tuple(_strip_labels(t) for t in ty.items))
    return ty


ROLES = ("time", "coordinate", "velocity")


@dataclass(frozen=True)
class StateSignature:
    """Ordered state coordinates: one time entry, n coordinates, and their
    paired velocities. Partial-derivative indices follow the canonical
    (t, q_1..q_n, v_1..v_n) layout: time is 1, coordinate k is 1+k,
    velocity k is 1+n+k."""

    entries: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        names = [n for n, _ in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("state coordinate names must be unique")
        roles = [r for _, r in self.entries]
        if any(r not in ROLES for r in roles):
            raise ValueError(f"roles must be in {ROLES}")
        if roles.count("time") != 1:
            raise ValueError("exactly one time coordinate required")
        if roles.count("coordinate") != roles.count("velocity") or roles.count("coordinate") < 1:
            raise ValueError("velocities must pair 1-1 with coordinates")

    @staticmethod
    def from_names(names: list[str] | tuple[str, ...]) -> "StateSignature":
        """Build from 1+2n names ordered time, coordinates, velocities."""
        if len(names) < 3 or len(names) % 2 == 0:
            raise ValueError("expected 1 + 2n coordinate names")
        n = (len(names) - 1) // 2
        entries = [(names[0], "time")]
        entries += [(nm, "coordinate") for nm in names[1 : 1 + n]]
        entries += [(nm, "velocity") for nm in names[1 + n :]]
        return StateSignature(tuple(entries))

    @property
    def n(self) -> int:
        return sum(1 for _, r in self.entries if r == "coordinate")

    def role_of(self, name: str) -> str | None:
        for nm, role in self.entries:
            if nm == name:
                return role
        return None

    def index_of(self, name: str) -> int | None:
        """1-based position in the canonical state tuple."""
        time = [nm for nm, r in self.entries if r == "time"]
        coords = [nm for nm, r in self.entries if r == "coordinate"]
        vels = [nm for nm, r in self.entries if r == "velocity"]
        if name == time[0]:
            return 1
        if name in coords:
            return 2 + coords.index(name)
        if name in vels:
            return 1 + len(coords) + 1 + vels.index(name)
        return None

    def time_name(self) -> str:
        return next(nm for nm, r in self.entries if r == "time")


# ---------------------------------------------------------------------------
# Inference engine


class _UnifyFail(Exception):
    def __init__(self, expected: Ty, found: Ty, occurs: bool = False):
        self.expected = expected
        self.found = found
        self.occurs = occurs


class _Infer:
    def __init__(self, env: TypeEnv, meta_start: int = 0):
        self.env = env
        self.bindings: dict[int, Ty] = {}
        self.counter = itertools.count(meta_start)
        self.node_types: list[tuple[Node, Ty]] = []

    def fresh(self) -> MetaVar:
        return MetaVar(next(self.counter))

    def resolve(self, ty: Ty) -> Ty:
        while isinstance(ty, MetaVar) and ty.id in self.bindings:
            ty = self.bindings[ty.id]
        return ty

    def zonk(self, ty: Ty) -> Ty:
        ty = self.resolve(ty)
        if isinstance(ty, Arrow):
            return Arrow(self.zonk(ty.dom), self.zonk(ty.cod))
        if isinstance(ty, Prod):
            return Prod(tuple(self.zonk(t) for t in ty.items))
        return ty

    def occurs(self, mid: int, ty: Ty) -> bool:
        ty = self.resolve(ty)
        if isinstance(ty, MetaVar):
            return ty.id == mid
        if isinstance(ty, Arrow):
            return self.occurs(mid, ty.dom) or self.occurs(mid, ty.cod)
        if isinstance(ty, Prod):
            return any(self.occurs(mid, t) for t in ty.items)
        return False

    def unify(self, a: Ty, b: Ty) -> None:
        a, b = self.resolve(a), self.resolve(b)
        if isinstance(a, MetaVar):
            if isinstance(b, MetaVar) and a.id == b.id:
                return
            if self.occurs(a.id, b):
                raise _UnifyFail(self.zonk(a), self.zonk(b), occurs=True)
            self.bindings[a.id] = b
            return
        if isinstance(b, MetaVar):
            self.unify(b, a)
            return
        if isinstance(a, Real) and isinstance(b, Real):
            return  # labels are display-only
        if isinstance(a, Arrow) and isinstance(b, Arrow):
            self.unify(a.dom, b.dom)
            self.unify(a.cod, b.cod)
            return
        if isinstance(a, Prod) and isinstance(b, Prod) and len(a.items) == len(b.items):
            for x, y in zip(a.items, b.items):
                self.unify(x, y)
            return
        raise _UnifyFail(self.zonk(a), self.zonk(b))

    def mismatch(self, expected: Ty, found: Ty, span: SourceSpan | None,
                 message: str, occurs: bool = False) -> DiagnosticError:
        exp, fnd = self.zonk(expected), self.zonk(found)
        if occurs:
            message = f"{message} (occurs check: infinite type)"
        return DiagnosticError(
            Diagnostic("error", "TypeMismatch",
                       f"{message}: expected {ty_to_str(exp)}, found {ty_to_str(fnd)}",
                       span=span, expected=exp, found=fnd)
        )

    # -- expressions

    def infer_expr(self, e: Expr, scope: dict[str, Ty]) -> Ty:
        ty = self._infer_expr(e, scope)
        self.node_types.append((e, ty))
        return ty

    def _infer_expr(self, e: Expr, scope: dict[str, Ty]) -> Ty:
        if isinstance(e, Lit):
            return Real()
        if isinstance(e, Var):
            ty = scope.get(e.name)
            if ty is None:
                ty = self.env.get(e.name)
            if ty is None:
                raise DiagnosticError(
                    Diagnostic("error", "UnknownName",
                               f"'{e.name}' is not declared or bound",
                               span=e.span)
                )
            return ty
        if isinstance(e, Lam):
            pty = e.param_ty if e.param_ty is not None else self.fresh()
            body_ty = self.infer_expr(e.body, {**scope, e.param: pty})
            return Arrow(pty, body_ty)
        if isinstance(e, App):
            arg_ty = self.infer_expr(e.arg, scope)
            fun_ty = self.resolve(self.infer_expr(e.fun, scope))
            if isinstance(fun_ty, MetaVar):
                cod = self.fresh()
                self.unify(fun_ty, Arrow(arg_ty, cod))
                return cod
            if isinstance(fun_ty, Arrow):
                try:
                    self.unify(fun_ty.dom, arg_ty)
                except _UnifyFail as u:
                    raise self.mismatch(fun_ty.dom, arg_ty,
                                        e.arg.span or e.span,
                                        "argument type mismatch", u.occurs)
                return fun_ty.cod
            raise self.mismatch(Arrow(self.zonk(arg_ty), self.fresh()), fun_ty,
                                e.fun.span or e.span,
                                "this expression is not a function")
        if isinstance(e, Tuple):
            return Prod(tuple(self.infer_expr(x, scope) for x in e.items))
        if isinstance(e, Proj):
            tty = self.resolve(self.infer_expr(e.tuple_, scope))
            if isinstance(tty, MetaVar):
                raise DiagnosticError(
                    Diagnostic("error", "Ambiguous",
                               "cannot determine the tuple arity here; "
                               "annotate the parameter",
                               span=e.span)
                )
            if not isinstance(tty, Prod):
                raise self.mismatch(Prod(tuple(Real() for _ in range(max(e.index, 2)))),
                                    tty, e.span, "projection from a non-tuple")
            if e.index > len(tty.items):
                raise DiagnosticError(
                    Diagnostic("error", "TypeMismatch",
                               f"projection index {e.index} exceeds tuple "
                               f"arity {len(tty.items)}",
                               span=e.span, expected=self.zonk(tty),
                               found=self.zonk(tty))
                )
            return tty.items[e.index - 1]
        if isinstance(e, BinOp):
            for side in (e.lhs, e.rhs):
                sty = self.infer_expr(side, scope)
                try:
                    self.unify(Real(), sty)
                except _UnifyFail as u:
                    raise self.mismatch(Real(), sty, side.span or e.span,
                                        f"operand of '{e.op}' must be real",
                                        u.occurs)
            return Real()
        if isinstance(e, Neg):
            sty = self.infer_expr(e.arg, scope)
            try:
                self.unify(Real(), sty)
            except _UnifyFail as u:
                raise self.mismatch(Real(), sty, e.arg.span or e.span,
                                    "negation needs a real operand", u.occurs)
            return Real()
        if isinstance(e, Prim):
            sty = self.infer_expr(e.arg, scope)
            try:
                self.unify(Real(), sty)
            except _UnifyFail as u:
                raise self.mismatch(Real(), sty, e.arg.span or e.span,
                                    f"argument of {e.name} must be real", u.occurs)
            return Real()
        if isinstance(e, Lim):
            pty = self.infer_expr(e.point, scope)
            try:
                self.unify(Real(), pty)
            except _UnifyFail as u:
                raise self.mismatch(Real(), pty, e.point.span or e.span,
                                    "limit point must be real", u.occurs)
            fty = self.infer_expr(e.fun, scope)
            try:
                self.unify(Arrow(Real(), Real()), fty)
            except _UnifyFail as u:
                raise self.mismatch(Arrow(Real(), Real()), fty,
                                    e.fun.span or e.span,
                                    "lim needs a one-argument real function",
                                    u.occurs)
            return Real()
        if isinstance(e, TotalD):
            fty = self.infer_expr(e.fun, scope)
            try:
                self.unify(Arrow(Real(), Real()), fty)
            except _UnifyFail as u:
                raise self.mismatch(
                    Arrow(Real(), Real()), fty, e.span,
                    "D (d/dt) can only be applied to functions of one real "
                    "argument", u.occurs)
            return Arrow(Real(), Real())
        if isinstance(e, PartialD):
            fty = self.resolve(self.infer_expr(e.fun, scope))
            if isinstance(fty, MetaVar):
                raise DiagnosticError(
                    Diagnostic("error", "Ambiguous",
                               "cannot determine the arity under D[i]; "
                               "annotate the function",
                               span=e.span)
                )
            expected_shape = Arrow(
                Prod(tuple(Real() for _ in range(max(e.index, 2)))), Real()
            )
            if not isinstance(fty, Arrow) or not isinstance(self.resolve(fty.dom), Prod):
                raise self.mismatch(expected_shape, fty, e.span,
                                    f"D[{e.index}] needs a function over a tuple")
            dom = self.resolve(fty.dom)
            if e.index > len(dom.items):
                raise self.mismatch(expected_shape, self.zonk(fty), e.span,
                                    f"D[{e.index}] index exceeds argument arity "
                                    f"{len(dom.items)}")
            try:
                for item in dom.items:
                    self.unify(Real(), item)
                self.unify(Real(), fty.cod)
            except _UnifyFail as u:
                raise self.mismatch(Arrow(Prod(tuple(Real() for _ in dom.items)), Real()),
                                    fty, e.span,
                                    f"D[{e.index}] needs a real-valued function "
                                    "of real coordinates", u.occurs)
            return Arrow(dom, Real())
        if isinstance(e, Compose):
            a, b, c = self.fresh(), self.fresh(), self.fresh()
            gty = self.infer_expr(e.g, scope)
            try:
                self.unify(Arrow(a, b), gty)
            except _UnifyFail as u:
                raise self.mismatch(Arrow(a, b), gty, e.g.span or e.span,
                                    "right operand of '.' must be a function",
                                    u.occurs)
            fty = self.infer_expr(e.f, scope)
            try:
                self.unify(Arrow(b, c), fty)
            except _UnifyFail as u:
                raise self.mismatch(Arrow(self.zonk(b), c), fty,
                                    e.f.span or e.span,
                                    "composition needs matching domain/codomain",
                                    u.occurs)
            return Arrow(a, c)
        if isinstance(e, ConstFun):
            vty = self.infer_expr(e.value, scope)
            return Arrow(self.fresh(), vty)
        raise TypeError(f"unhandled expression {e!r}")

    # -- checking mode (bidirectional where it matters)

    def check_expr(self, e: Expr, expected: Ty, scope: dict[str, Ty]) -> None:
        expected_r = self.resolve(expected)
        if isinstance(e, Lam) and isinstance(expected_r, Arrow):
            if e.param_ty is not None:
                try:
                    self.unify(e.param_ty, expected_r.dom)
                except _UnifyFail as u:
                    raise self.mismatch(expected_r.dom, e.param_ty, e.span,
                                        "parameter annotation mismatch", u.occurs)
            self.check_expr(e.body, expected_r.cod, {**scope, e.param: expected_r.dom})
            return
        if isinstance(e, ConstFun) and isinstance(expected_r, Arrow):
            self.check_expr(e.value, expected_r.cod, scope)
            return
        if isinstance(e, Tuple) and isinstance(expected_r, Prod) \
                and len(e.items) == len(expected_r.items):
            for item, ity in zip(e.items, expected_r.items):
                self.check_expr(item, ity, scope)
            return
        found = self.infer_expr(e, scope)
        try:
            self.unify(expected_r, found)
        except _UnifyFail as u:
            raise self.mismatch(expected_r, found, e.span, "type mismatch",
                                u.occurs)

    # -- formulas

    def infer_formula(self, f: Formula, scope: dict[str, Ty]) -> None:
        if isinstance(f, (Forall, Exists)):
            if f.bound is not None:
                self.check_expr(f.bound.expr, Real(), scope)
            self.infer_formula(f.body, {**scope, f.name: Real()})
            return
        if isinstance(f, (Implies, And)):
            self.infer_formula(f.lhs, scope)
            self.infer_formula(f.rhs, scope)
            return
        if isinstance(f, Not):
            self.infer_formula(f.body, scope)
            return
        if isinstance(f, Cmp):
            self.check_expr(f.lhs, Real(), scope)
            self.check_expr(f.rhs, Real(), scope)
            return
        if isinstance(f, InDom):
            self.check_expr(f.point, Real(), scope)
            self.check_expr(f.fun, Arrow(Real(), self.fresh()), scope)
            return
        if isinstance(f, HasLimit):
            self.check_expr(f.fun, Arrow(Real(), Real()), scope)
            self.check_expr(f.point, Real(), scope)
            self.check_expr(f.limit, Real(), scope)
            return
        if isinstance(f, FunEq):
            lty = self.infer_expr(f.lhs, scope)
            a, b = self.fresh(), self.fresh()
            try:
                self.unify(Arrow(a, b), lty)
            except _UnifyFail as u:
                raise self.mismatch(Arrow(a, b), lty, f.lhs.span or f.span,
                                    "'==' compares functions", u.occurs)
            self.check_expr(f.rhs, lty, scope)
            return
        if isinstance(f, LagrangeEq):
            self.check_expr(f.lagrangian,
                            Arrow(Prod((Real("T"), Real("Q"), Real("V"))), Real()),
                            scope)
            self.check_expr(f.path, Arrow(Real("T"), Real("Q")), scope)
            return
        raise TypeError(f"unhandled formula {f!r}")


def _ambiguity_report(inf: _Infer, fallback: Node) -> None:
    """Point at the smallest subterm whose type is still open."""
    open_nodes = [
        (node, inf.zonk(ty))
        for node, ty in inf.node_types
        if _has_meta(inf.zonk(ty))
    ]
    node, ty = min(open_nodes, key=lambda p: expr_size(p[0]),
                   default=(fallback, MetaVar(-1)))
    from .parser import pretty

    raise DiagnosticError(
        Diagnostic("error", "Ambiguous",
                   f"type of `{pretty(node)}` is ambiguous "
                   f"({ty_to_str(ty)}); add an annotation or context",
                   span=node.span)
    )


def infer(e: Expr, env: TypeEnv | None = None, *, _meta_start: int = 0) -> Ty:
    """Principal type of ``e`` with every unification variable resolved.

    Raises :class:`DiagnosticError` (TypeMismatch / Ambiguous / UnknownName)
    with both types fully resolved on failure.
    """
    inf = _Infer(env or TypeEnv(), _meta_start)
    ty = inf.infer_expr(e, {})
    zty = inf.zonk(ty)
    if _has_meta(zty):
        _ambiguity_report(inf, e)
    return zty


def check(e: Expr, expected: Ty, env: TypeEnv | None = None) -> None:
    """Check ``e`` against ``expected``; raises DiagnosticError on mismatch."""
    inf = _Infer(env or TypeEnv())
    inf.check_expr(e, expected, {})


def infer_common(a: Expr, b: Expr, env: TypeEnv | None = None) -> Ty:
    """Joint type of two expressions that must agree (e.g. the two sides of
    an equality). Unlike :func:`infer`, parts left unconstrained by both
    sides are instantiated at R, so ``\\x -> x`` can be compared."""
    inf = _Infer(env or TypeEnv())
    ta = inf.infer_expr(a, {})
    tb = inf.infer_expr(b, {})
    try:
        inf.unify(ta, tb)
    except _UnifyFail as u:
        raise inf.mismatch(ta, tb, b.span or a.span,
                           "compared expressions must have the same type",
                           u.occurs)
    return _default_reals(inf.zonk(ta))


def _default_reals(ty: Ty) -> Ty:
    if isinstance(ty, MetaVar):
        return Real()
    if isinstance(ty, Arrow):
        return Arrow(_default_reals(ty.dom), _default_reals(ty.cod))
    if isinstance(ty, Prod):
        return Prod(tuple(_default_reals(t) for t in ty.items))
    return ty


def infer_formula(f: Formula, env: TypeEnv | None = None) -> None:
    """Typecheck a formula (quantified names are real-valued)."""
    inf = _Infer(env or TypeEnv())
    inf.infer_formula(f, {})


# ---------------------------------------------------------------------------
# Traditional notation: d/dt (partial L / partial qdot) - partial L / partial q = 0


class _TraditionalParser:
    """Parses the textbook Lagrange-equation notation. This notation is only
    meaningful against a state signature, so it lives here and not in the
    general grammar."""

    def __init__(self, text: str, env: TypeEnv, sig: StateSignature):
        self.lexer = Lexer(text)
        self.toks = self.lexer.tokens()
        self.i = 0
        self.env = env
        self.sig = sig
        self.notes: list[Diagnostic] = []

    def peek(self, k: int = 0) -> Token | None:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

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
        return self.next()

    def err(self, msg: str) -> DiagnosticError:
        t = self.peek() or (self.toks[-1] if self.toks else None)
        span = self.tok_span(t) if t else None
        return DiagnosticError(Diagnostic("error", "SyntaxError", msg, span=span))

    def tok_span(self, t: Token) -> SourceSpan:
        b = self.lexer.byte_of
        return SourceSpan(b[t.start], b[t.end], t.line, t.col, t.end_line, t.end_col)

    def span_between(self, a: Token, b: Token) -> SourceSpan:
        off = self.lexer.byte_of
        return SourceSpan(off[a.start], off[b.end], a.line, a.col,
                          b.end_line, b.end_col)

    def equation(self) -> Formula:
        start = self.toks[0] if self.toks else None
        lhs = self.side()
        self.expect("=")
        rhs = self.side()
        if self.i < len(self.toks):
            raise self.err("unexpected trailing input")
        span = self.span_between(start, self.toks[-1]) if start else None
        return Cmp("=", lhs, rhs, span=span)

    def side(self) -> Expr:
        first = self.peek()
        e = self.term()
        while self.peek() is not None and self.peek().kind in ("+", "-"):
            op = self.next().kind
            rhs = self.term()
            e = BinOp(op, e, rhs,
                      span=self.span_between(first, self.toks[self.i - 1]))
        return e

    def term(self) -> Expr:
        t = self.peek()
        if t is None:
            raise self.err("expected a term")
        if t.kind == "num":
            self.next()
            return Lit(t.value, span=self.tok_span(t))
        if t.kind == "ident" and t.text == "d":
            return self.ddt_term()
        if t.kind == "ident" and t.text == "partial":
            return self.partial_term()
        raise self.err(f"unexpected {t.text!r}; expected d/dt(...), "
                       "partial(...)/partial(...), or a number")

    def ddt_term(self) -> Expr:
        start = self.expect("ident")  # 'd'
        self.expect("/")
        dname = self.expect("ident")
        expected = "d" + self.sig.time_name()
        if dname.text != expected:
            raise self.err(f"expected '{expected}' after 'd/', found {dname.text!r}")
        self.expect("(")
        inner = self.term()
        close = self.expect(")")
        return TotalD(inner, span=self.span_between(start, close))

    def partial_term(self) -> Expr:
        start = self.expect("ident")  # 'partial'
        self.expect("(")
        fun_tok = self.expect("ident")
        self.expect(")")
        self.expect("/")
        p2 = self.expect("ident")
        if p2.text != "partial":
            raise self.err(f"expected 'partial', found {p2.text!r}")
        self.expect("(")
        var_tok = self.expect("ident")
        close = self.expect(")")
        span = self.span_between(start, close)
        if self.env.get(fun_tok.text) is None:
            raise DiagnosticError(
                Diagnostic("error", "UnknownName",
                           f"'{fun_tok.text}' is not declared",
                           span=self.tok_span(fun_tok))
            )
        index = self.sig.index_of(var_tok.text)
        if index is None:
            raise DiagnosticError(
                Diagnostic("error", "UnknownName",
                           f"'{var_tok.text}' is not a state coordinate "
                           f"(state: {', '.join(n for n, _ in self.sig.entries)})",
                           span=self.tok_span(var_tok))
            )
        if self.sig.role_of(var_tok.text) == "velocity":
            coord = self._paired_coordinate(var_tok.text)
            self.notes.append(
                Diagnostic(
                    "note", "NotAVariable",
                    f"expected a variable name under 'partial', but "
                    f"'{var_tok.text}' is the same as d{coord}/d"
                    f"{self.sig.time_name()}, a function",
                    span=self.tok_span(var_tok),
                )
            )
        return PartialD(index, Var(fun_tok.text, span=self.tok_span(fun_tok)),
                        span=span)

    def _paired_coordinate(self, vel_name: str) -> str:
        coords = [nm for nm, r in self.sig.entries if r == "coordinate"]
        vels = [nm for nm, r in self.sig.entries if r == "velocity"]
        return coords[vels.index(vel_name)]


def elaborate_traditional(
    text: str,
    env: TypeEnv,
    sig: StateSignature,
    repair: bool = False,
    path_name: str | None = None,
) -> tuple[Formula, list[Diagnostic]]:
    """Parse the traditional Lagrange-equation notation and either surface
    its scope/type defects (``repair=False``) or produce the well-typed
    function equation over an expanded path (``repair=True``).

    The naive reading always yields one TypeMismatch (d/dt applied to a
    function of the full state) and one NotAVariable note per velocity
    partial. The repaired reading returns
    ``D(D_v L . expand(w)) == D_q L . expand(w)``, both sides typed R -> R.
    """
    parser = _TraditionalParser(text, env, sig)
    naive = parser.equation()
    diagnostics: list[Diagnostic] = []

    if not repair:
        try:
            infer_formula(naive, env)
        except DiagnosticError as err:
            diagnostics.append(err.diagnostic)
        diagnostics.extend(parser.notes)
        return naive, diagnostics

    if sig.n != 1:
        raise DiagnosticError(
            Diagnostic("error", "UnsupportedDimension",
                       f"repair is implemented for one coordinate; "
                       f"state has {sig.n}")
        )
    if path_name is None:
        candidates = sorted(
            name for name, ty in env.decls.items()
            if ty == Arrow(Real(), Real())
        )
        if not candidates:
            raise DiagnosticError(
                Diagnostic("error", "UnknownName",
                           "repair needs a declared path of type R -> R")
            )
        path_name = candidates[0]
    elif env.get(path_name) is None:
        raise DiagnosticError(
            Diagnostic("error", "UnknownName",
                       f"path {path_name!r} is not declared")
        )

    lagr_name = _lagrangian_name(naive)
    vel_index = sig.index_of(next(nm for nm, r in sig.entries if r == "velocity"))
    coord_index = sig.index_of(next(nm for nm, r in sig.entries if r == "coordinate"))
    w = Var(path_name)
    ew = expand_combinator(w)
    lhs = TotalD(Compose(PartialD(vel_index, Var(lagr_name)), ew))
    rhs = Compose(PartialD(coord_index, Var(lagr_name)), ew)
    repaired = FunEq(lhs, rhs)
    infer_formula(repaired, env)  # must typecheck, both sides R -> R
    for side in (lhs, rhs):
        side_ty = infer(side, env)
        if side_ty != Arrow(Real(), Real()):
            raise DiagnosticError(
                Diagnostic("error", "TypeMismatch",
                           "repaired side does not have type R -> R",
                           expected=Arrow(Real(), Real()), found=side_ty)
            )
    return repaired, diagnostics


def _lagrangian_name(naive: Formula) -> str:
    """The function name under the first partial derivative."""
    from .core import subterms

    for node in subterms(naive):
        if isinstance(node, PartialD) and isinstance(node.fun, Var):
            return node.fun.name
    raise DiagnosticError(
        Diagnostic("error", "SyntaxError",
                   "no partial derivative found in the equation")
    )
