"""Symbolic differentiation, algebraic normal forms, and function equality.

``differentiate`` applies the textbook rules and deliberately does not
simplify; compose with ``normalize`` for canonical output. The normal form
covers the polynomial/sin/cos/exp fragment exactly; anything else (division
by non-constants, ln, sqrt, abs, unresolved lim/D) is carried as an opaque
residual generator, which keeps symbolic equality sound but incomplete --
``expr_equal`` falls back to seeded numeric sampling for the rest.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

from .binding import free_vars, fresh_name, subst
from .core import (
    App,
    Arrow,
    BinOp,
    Compose,
    ConstFun,
    Diagnostic,
    DiagnosticError,
    DomainSet,
    Expr,
    Lam,
    Lim,
    Lit,
    Neg,
    PartialD,
    Prim,
    Prod,
    Proj,
    Real,
    TotalD,
    Tuple,
    Ty,
    ty_to_str,
    Var,
)
from .types import TypeEnv, infer

_ZERO = Lit(Fraction(0))
_ONE = Lit(Fraction(1))


def _nondiff(message: str, span=None) -> DiagnosticError:
    return DiagnosticError(
        Diagnostic("error", "NonDifferentiable", message, span=span)
    )


# ---------------------------------------------------------------------------
# Structural reduction


class _Fuel:
    __slots__ = ("left",)

    def __init__(self, n: int = 200_000):
        self.left = n

    def tick(self) -> None:
        self.left -= 1
        if self.left <= 0:
            raise DiagnosticError(
                Diagnostic("error", "EvaluationError",
                           "expression reduction did not terminate")
            )


def reduce(e: Expr, _fuel: Optional[_Fuel] = None) -> Expr:
    """Resolve beta-redexes, compositions, projections, const applications,
    and D/D[i] on closed function expressions. Leaves Lim nodes intact."""
    fuel = _fuel or _Fuel()
    return _reduce(e, fuel)


def _reduce(e: Expr, fuel: _Fuel) -> Expr:
    fuel.tick()
    if isinstance(e, (Var, Lit)):
        return e
    if isinstance(e, Lam):
        return Lam(e.param, e.param_ty, _reduce(e.body, fuel), span=e.span)
    if isinstance(e, App):
        fun = _reduce(e.fun, fuel)
        arg = _reduce(e.arg, fuel)
        if isinstance(fun, Lam):
            return _reduce(subst(fun.body, fun.param, arg), fuel)
        if isinstance(fun, ConstFun):
            return fun.value
        if isinstance(fun, Compose):
            return _reduce(App(fun.f, App(fun.g, arg)), fuel)
        return App(fun, arg, span=e.span)
    if isinstance(e, Proj):
        t = _reduce(e.tuple_, fuel)
        if isinstance(t, Tuple) and e.index <= len(t.items):
            return t.items[e.index - 1]
        return Proj(e.index, t, span=e.span)
    if isinstance(e, TotalD):
        fun = _reduce(e.fun, fuel)
        if isinstance(fun, (Lam, Compose, ConstFun, TotalD)) and not free_vars(fun):
            return _reduce(differentiate(fun, _fuel=fuel), fuel)
        return TotalD(fun, span=e.span)
    if isinstance(e, PartialD):
        fun = _reduce(e.fun, fuel)
        if isinstance(fun, Lam) and not free_vars(fun):
            try:
                return _reduce(partial_derivative(e.index, fun, _fuel=fuel), fuel)
            except DiagnosticError as err:
                if err.diagnostic.kind == "Ambiguous":
                    return PartialD(e.index, fun, span=e.span)
                raise
        return PartialD(e.index, fun, span=e.span)
    if isinstance(e, Compose):
        return Compose(_reduce(e.f, fuel), _reduce(e.g, fuel), span=e.span)
    if isinstance(e, ConstFun):
        return ConstFun(_reduce(e.value, fuel), span=e.span)
    if isinstance(e, Lim):
        return Lim(_reduce(e.point, fuel), _reduce(e.fun, fuel), span=e.span)
    if isinstance(e, Tuple):
        return Tuple(tuple(_reduce(x, fuel) for x in e.items), span=e.span)
    if isinstance(e, BinOp):
        return BinOp(e.op, _reduce(e.lhs, fuel), _reduce(e.rhs, fuel), span=e.span)
    if isinstance(e, Neg):
        return Neg(_reduce(e.arg, fuel), span=e.span)
    if isinstance(e, Prim):
        return Prim(e.name, _reduce(e.arg, fuel), span=e.span)
    raise TypeError(f"unhandled expression {e!r}")


# ---------------------------------------------------------------------------
# Differentiation


def differentiate(f: Expr, _fuel: Optional[_Fuel] = None) -> Expr:
    """Symbolic derivative of a closed one-argument real function.

    Black boxes (opaque names) cannot be differentiated symbolically; only
    expressions whose source is available reduce further. The result is not
    simplified.
    """
    fuel = _fuel or _Fuel()
    opaque = free_vars(f)
    if opaque:
        raise _nondiff(
            f"cannot differentiate a black box: {', '.join(sorted(opaque))} "
            "has no available definition", f.span)
    f = _reduce(f, fuel)
    if isinstance(f, ConstFun):
        return ConstFun(_ZERO)
    if isinstance(f, TotalD):
        return differentiate(differentiate(f.fun, _fuel=fuel), _fuel=fuel)
    if isinstance(f, Compose):
        # (f . g)' = (f' . g) * g'
        df = differentiate(f.f, _fuel=fuel)
        dg = differentiate(f.g, _fuel=fuel)
        x = fresh_name("x", free_vars(f))
        return Lam(x, None,
                   BinOp("*",
                         App(Compose(df, f.g), Var(x)),
                         App(dg, Var(x))))
    if not isinstance(f, Lam):
        raise _nondiff("D expects a function expression", f.span)
    _check_rr(f)
    body = _reduce(f.body, fuel)
    return Lam(f.param, f.param_ty, _diff(body, f.param, fuel), span=f.span)


def _check_rr(f: Expr) -> None:
    from .types import check

    try:
        check(f, Arrow(Real(), Real()))
    except DiagnosticError as err:
        try:
            found = infer(f)
        except DiagnosticError:
            raise err from None
        raise DiagnosticError(
            Diagnostic("error", "TypeMismatch",
                       "D (d/dt) can only be applied to functions of one "
                       f"real argument: expected R -> R, found {ty_to_str(found)}",
                       span=f.span, expected=Arrow(Real(), Real()), found=found)
        ) from None


def _int_exponent(e: Expr) -> Optional[int]:
    if isinstance(e, Lit) and e.value.denominator == 1:
        return int(e.value)
    if isinstance(e, Neg):
        inner = _int_exponent(e.arg)
        return -inner if inner is not None else None
    return None


def _syntactically_positive(e: Expr) -> bool:
    """Positive by construction: exp, even powers, positive literals."""
    if isinstance(e, Lit):
        return e.value > 0
    if isinstance(e, Prim) and e.name == "exp":
        return True
    if isinstance(e, BinOp) and e.op == "^":
        n = _int_exponent(e.rhs)
        return n is not None and n % 2 == 0 and n != 0
    return False


def _mul(a: Expr, b: Expr) -> Expr:
    return BinOp("*", a, b)


def _diff(e: Expr, x: str, fuel: _Fuel) -> Expr:
    """d e / d x for a reduced scalar expression."""
    fuel.tick()
    if x not in free_vars(e):
        return _ZERO
    if isinstance(e, Var):
        return _ONE  # e.name == x by the free-variable check
    if isinstance(e, Neg):
        return Neg(_diff(e.arg, x, fuel))
    if isinstance(e, BinOp):
        u, v = e.lhs, e.rhs
        if e.op == "+":
            return BinOp("+", _diff(u, x, fuel), _diff(v, x, fuel))
        if e.op == "-":
            return BinOp("-", _diff(u, x, fuel), _diff(v, x, fuel))
        if e.op == "*":
            return BinOp("+", _mul(_diff(u, x, fuel), v), _mul(u, _diff(v, x, fuel)))
        if e.op == "/":
            num = BinOp("-", _mul(_diff(u, x, fuel), v), _mul(u, _diff(v, x, fuel)))
            return BinOp("/", num, BinOp("^", v, Lit(Fraction(2))))
        # power rule for integer exponents; exp/ln rewrite otherwise
        n = _int_exponent(v)
        if n is not None and x not in free_vars(v):
            if n == 0:
                return _ZERO
            return _mul(_mul(Lit(Fraction(n)), BinOp("^", u, Lit(Fraction(n - 1)))),
                        _diff(u, x, fuel))
        if not _syntactically_positive(u):
            raise _nondiff(
                "cannot differentiate a power with non-integer exponent "
                "unless the base is positive by construction", e.span)
        # u^v = exp(v ln u):  (u^v)' = u^v (v' ln u + v u'/u)
        du, dv = _diff(u, x, fuel), _diff(v, x, fuel)
        return _mul(
            BinOp("^", u, v),
            BinOp("+", _mul(dv, Prim("ln", u)),
                  _mul(v, BinOp("/", du, u))),
        )
    if isinstance(e, Prim):
        du = _diff(e.arg, x, fuel)
        if e.name == "sin":
            return _mul(Prim("cos", e.arg), du)
        if e.name == "cos":
            return _mul(Neg(Prim("sin", e.arg)), du)
        if e.name == "exp":
            return _mul(Prim("exp", e.arg), du)
        if e.name == "ln":
            return BinOp("/", du, e.arg)
        if e.name == "sqrt":
            return BinOp("/", du, _mul(Lit(Fraction(2)), Prim("sqrt", e.arg)))
        raise _nondiff("abs is not differentiable symbolically", e.span)
    if isinstance(e, App):
        head, arg = e.fun, e.arg
        if x not in free_vars(head):
            # chain rule through a closed head: (h u)' = h'(u) * u'
            dh = differentiate(head, _fuel=fuel)
            return _mul(App(dh, arg), _diff(arg, x, fuel))
        raise _nondiff(
            "cannot differentiate through a function that itself depends "
            "on the variable", e.span)
    if isinstance(e, Lim):
        raise _nondiff("cannot differentiate through lim symbolically", e.span)
    if isinstance(e, Proj):
        raise _nondiff("cannot differentiate an unreduced projection", e.span)
    raise _nondiff(f"no differentiation rule for this expression", e.span)


def partial_derivative(i: int, f: Expr, _fuel: Optional[_Fuel] = None) -> Expr:
    """The i-th partial derivative of an n-ary real function, by the
    one-variable reduction: fix the other coordinates, differentiate, and
    reassemble over the tuple parameter."""
    fuel = _fuel or _Fuel()
    opaque = free_vars(f)
    if opaque:
        raise _nondiff(
            f"cannot differentiate a black box: {', '.join(sorted(opaque))} "
            "has no available definition", f.span)
    ty = infer(f)
    if not (isinstance(ty, Arrow) and isinstance(ty.dom, Prod)):
        raise DiagnosticError(
            Diagnostic("error", "TypeMismatch",
                       f"D[{i}] needs a function over a tuple of reals, "
                       f"found {ty_to_str(ty)}",
                       span=f.span, expected=Arrow(Prod((Real(), Real())), Real()),
                       found=ty)
        )
    n = len(ty.dom.items)
    if not 1 <= i <= n:
        raise DiagnosticError(
            Diagnostic("error", "TypeMismatch",
                       f"partial derivative index {i} out of range 1..{n}",
                       span=f.span, expected=ty, found=ty)
        )
    coords = [f"x{j}" for j in range(1, n + 1)]
    applied = _reduce(App(f, Tuple(tuple(Var(c) for c in coords))), fuel)
    d = _diff(applied, coords[i - 1], fuel)
    param = "s"
    for j, c in enumerate(coords, start=1):
        d = subst(d, c, Proj(j, Var(param)))
    annot = Prod(tuple(Real() for _ in range(n)))
    return Lam(param, annot, d)


# ---------------------------------------------------------------------------
# Normal forms

# monomial: sorted tuple of (generator key, positive power)
Monomial = tuple


@dataclass(frozen=True)
class NormalForm:
    """Canonical sum of rational-coefficient terms over generators; the
    ``residual`` flag marks presence of out-of-fragment generators."""

    arity: int
    terms: tuple[tuple[Fraction, Monomial], ...]
    residual: bool
    display_params: tuple[tuple[str, Optional[Ty]], ...] = field(compare=False)
    gens: tuple[tuple[str, Expr], ...] = field(compare=False, repr=False)

    def to_expr(self) -> Expr:
        """Rebuild an expression that evaluates identically."""
        gen_map = dict(self.gens)
        body = _terms_to_expr(self.terms, gen_map)
        for k in range(self.arity, 0, -1):
            name, annot = self.display_params[k - 1]
            body = _rename_var(body, _canon(k), name)
            body = Lam(name, annot, body)
        return body

    def is_zero(self) -> bool:
        return not self.terms


def _canon(k: int) -> str:
    return f"%{k}"


def _rename_var(e: Expr, old: str, new: str) -> Expr:
    return subst(e, old, Var(new))


class _Poly:
    """Mutable polynomial over generator keys during normalization."""

    __slots__ = ("terms",)

    def __init__(self, terms: Optional[dict] = None):
        self.terms: dict[Monomial, Fraction] = terms or {}

    @staticmethod
    def const(q: Fraction) -> "_Poly":
        return _Poly({(): q} if q else {})

    @staticmethod
    def gen(key: str) -> "_Poly":
        return _Poly({((key, 1),): Fraction(1)})

    def add(self, other: "_Poly") -> "_Poly":
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, Fraction(0)) + c
            if not out[m]:
                del out[m]
        return _Poly(out)

    def scale(self, q: Fraction) -> "_Poly":
        if not q:
            return _Poly()
        return _Poly({m: c * q for m, c in self.terms.items()})

    def mul(self, other: "_Poly") -> "_Poly":
        out: dict[Monomial, Fraction] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = _mono_mul(m1, m2)
                out[m] = out.get(m, Fraction(0)) + c1 * c2
                if not out[m]:
                    del out[m]
        return _Poly(out)

    def pow(self, n: int) -> "_Poly":
        result = _Poly.const(Fraction(1))
        base = self
        while n:
            if n & 1:
                result = result.mul(base)
            base = base.mul(base)
            n >>= 1
        return result

    def constant_value(self) -> Optional[Fraction]:
        if not self.terms:
            return Fraction(0)
        if len(self.terms) == 1 and () in self.terms:
            return self.terms[()]
        return None


def _mono_mul(m1: Monomial, m2: Monomial) -> Monomial:
    powers: dict[str, int] = {}
    for key, p in list(m1) + list(m2):
        powers[key] = powers.get(key, 0) + p
    return tuple(sorted((k, p) for k, p in powers.items() if p))


class _Normalizer:
    def __init__(self, fuel: _Fuel):
        self.fuel = fuel
        self.gens: dict[str, Expr] = {}
        self.residual = False

    def gen(self, expr: Expr, residual: bool = False) -> _Poly:
        from .parser import pretty

        key = pretty(expr)
        self.gens.setdefault(key, expr)
        if residual:
            self.residual = True
        return _Poly.gen(key)

    def poly(self, e: Expr) -> _Poly:
        self.fuel.tick()
        if isinstance(e, Lit):
            return _Poly.const(e.value)
        if isinstance(e, Var):
            return self.gen(e)
        if isinstance(e, Neg):
            return self.poly(e.arg).scale(Fraction(-1))
        if isinstance(e, BinOp):
            if e.op == "+":
                return self.poly(e.lhs).add(self.poly(e.rhs))
            if e.op == "-":
                return self.poly(e.lhs).add(self.poly(e.rhs).scale(Fraction(-1)))
            if e.op == "*":
                return self.poly(e.lhs).mul(self.poly(e.rhs))
            if e.op == "/":
                denom = self.poly(e.rhs)
                c = denom.constant_value()
                if c is not None and c != 0:
                    return self.poly(e.lhs).scale(1 / c)
                return self.gen(self.recon_binop(e), residual=True)
            n = _int_exponent(e.rhs)
            if n is not None and n >= 0:
                return self.poly(e.lhs).pow(n)
            return self.gen(self.recon_binop(e), residual=True)
        if isinstance(e, Prim):
            arg = self.recon(self.poly(e.arg))
            if e.name in ("sin", "cos", "exp"):
                return self.gen(Prim(e.name, arg))
            return self.gen(Prim(e.name, arg), residual=True)
        if isinstance(e, Proj):
            t = e.tuple_
            if isinstance(t, Var):
                return self.gen(e)
            return self.gen(e, residual=True)
        # anything else that survived reduction is out of the fragment
        return self.gen(e, residual=True)

    def recon_binop(self, e: BinOp) -> BinOp:
        return BinOp(e.op, self.recon(self.poly(e.lhs)),
                     self.recon(self.poly(e.rhs)))

    def recon(self, p: _Poly) -> Expr:
        terms = _sorted_terms(p)
        return _terms_to_expr(terms, self.gens)


def _sorted_terms(p: _Poly) -> tuple[tuple[Fraction, Monomial], ...]:
    return tuple((p.terms[m], m) for m in sorted(p.terms.keys()))


def _is_decimal(q: Fraction) -> bool:
    den = q.denominator
    while den % 2 == 0:
        den //= 2
    while den % 5 == 0:
        den //= 5
    return den == 1


def _coeff_expr(q: Fraction) -> Expr:
    if _is_decimal(q):
        return Lit(q)
    return BinOp("/", Lit(Fraction(q.numerator)), Lit(Fraction(q.denominator)))


def _term_expr(coeff: Fraction, mono: Monomial, gens: dict[str, Expr]) -> Expr:
    factors: list[Expr] = []
    for key, p in mono:
        g = gens[key]
        factors.append(g if p == 1 else BinOp("^", g, Lit(Fraction(p))))
    if not factors:
        return _coeff_expr(coeff)
    prod = factors[0]
    for fct in factors[1:]:
        prod = BinOp("*", prod, fct)
    if coeff == 1:
        return prod
    if _is_decimal(coeff):
        return BinOp("*", Lit(coeff), prod)
    num = Fraction(coeff.numerator)
    scaled = prod if num == 1 else BinOp("*", Lit(num), prod)
    return BinOp("/", scaled, Lit(Fraction(coeff.denominator)))


def _terms_to_expr(terms, gens: dict[str, Expr]) -> Expr:
    if not terms:
        return _ZERO
    coeff0, mono0 = terms[0]
    if coeff0 < 0:
        acc: Expr = Neg(_term_expr(-coeff0, mono0, gens))
    else:
        acc = _term_expr(coeff0, mono0, gens)
    for coeff, mono in terms[1:]:
        if coeff < 0:
            acc = BinOp("-", acc, _term_expr(-coeff, mono, gens))
        else:
            acc = BinOp("+", acc, _term_expr(coeff, mono, gens))
    return acc


def normalize(e: Expr) -> NormalForm:
    """Canonical form over the supported fragment; idempotent and
    evaluation-preserving. Syntactically equal normal forms denote
    alpha-equal expressions (parameters are canonically renamed)."""
    fuel = _Fuel()
    r = _reduce(e, fuel)
    params: list[tuple[str, Optional[Ty]]] = []
    while True:
        if isinstance(r, Lam):
            params.append((r.param, r.param_ty))
            r = subst(r.body, r.param, Var(_canon(len(params))))
            continue
        if isinstance(r, ConstFun):
            name = fresh_name("x", free_vars(r.value))
            params.append((name, None))
            r = r.value
            continue
        if isinstance(r, Compose):
            name = fresh_name("x", free_vars(r))
            r = _reduce(App(r, Var(name)), fuel)
            params.append((name, None))
            r = subst(r, name, Var(_canon(len(params))))
            continue
        break
    norm = _Normalizer(fuel)
    p = norm.poly(r)
    return NormalForm(
        arity=len(params),
        terms=_sorted_terms(p),
        residual=norm.residual,
        display_params=tuple(params),
        gens=tuple(sorted(norm.gens.items())),
    )


# ---------------------------------------------------------------------------
# Expression equality


@dataclass(frozen=True)
class EqualSymbolic:
    pass


@dataclass(frozen=True)
class EqualNumeric:
    confidence: float


@dataclass(frozen=True)
class NotEqual:
    witness: tuple


@dataclass(frozen=True)
class Unknown:
    reason: str


EqResult = Union[EqualSymbolic, EqualNumeric, NotEqual, Unknown]


def expr_equal(a: Expr, b: Expr, dom: Optional[DomainSet] = None,
               cfg=None, env: Optional[TypeEnv] = None) -> EqResult:
    """Symbolic equality via normal forms, completed by seeded sampling.

    Points where either side fails to evaluate are treated as outside the
    (implicit) common domain and skipped; if no point evaluates the result
    is Unknown.
    """
    from .numeric import NumericConfig, eval_expr, sample_arguments

    from .types import infer_common

    env = env or TypeEnv()
    cfg = cfg or NumericConfig()
    dom = dom or DomainSet.reals()
    ty_a = infer_common(a, b, env)
    if normalize(a) == normalize(b):
        return EqualSymbolic()

    if not isinstance(ty_a, Arrow):
        try:
            va = eval_expr(a, {})
            vb = eval_expr(b, {})
        except DiagnosticError:
            return Unknown("evaluation failed")
        diff = _rel_diff(va.value, vb.value)
        if diff > cfg.tol:
            return NotEqual((None, va.value, vb.value))
        return EqualNumeric(1.0)

    from .numeric import apply_value, to_value

    try:
        fa = eval_expr(a, {})
        fb = eval_expr(b, {})
    except DiagnosticError:
        return Unknown("could not evaluate the function expressions")
    args = sample_arguments(ty_a.dom, dom, cfg, stream=7)
    evaluated = 0
    for x in args:
        try:
            va = apply_value(fa, to_value(x)).value
            vb = apply_value(fb, to_value(x)).value
        except DiagnosticError:
            continue  # outside the honest common domain
        evaluated += 1
        diff = _rel_diff(va, vb)
        if diff > cfg.tol:
            return NotEqual((x, va, vb))
    if evaluated == 0:
        return Unknown("no sample point evaluated on either side")
    return EqualNumeric(evaluated / len(args))


def _rel_diff(u: float, v: float) -> float:
    return abs(u - v) / max(1.0, abs(u), abs(v))


# ---------------------------------------------------------------------------
# The limit-based lowering of D


@dataclass(frozen=True)
class DerivativeLimit:
    """The difference-quotient reading of the derivative of one function:
    formulas ``haslimit(\\h -> (f(x+h) - f(x))/h, 0, D f x)`` per point, and
    the point-free composition ``lim 0 . (psi f)``."""

    fun: Expr
    point_free: Expr

    def at(self, x) -> "HasLimit":
        from .core import HasLimit

        xe = x if isinstance(x, Expr) else Lit(Fraction(x))
        fuel = _Fuel()
        h = fresh_name("h", free_vars(self.fun) | free_vars(xe))
        quotient_body = BinOp(
            "/",
            BinOp("-",
                  _reduce(App(self.fun, BinOp("+", xe, Var(h))), fuel),
                  _reduce(App(self.fun, xe), fuel)),
            Var(h),
        )
        quotient = Lam(h, None, quotient_body)
        limit = _derivative_value(self.fun, xe)
        return HasLimit(quotient, _ZERO, limit)


def _derivative_value(f: Expr, xe: Expr) -> Expr:
    """D f x; evaluated to a literal when both are closed."""
    if not free_vars(f) and not free_vars(xe):
        from .numeric import eval_expr

        try:
            v = eval_expr(App(differentiate(f), xe), {})
            return Lit(Fraction(v.value))
        except DiagnosticError:
            pass
    return App(TotalD(f), xe)


def derivative_as_limit(f: Expr) -> DerivativeLimit:
    """Lower D on ``f : R -> R`` to its epsilon-delta-checkable limit form."""
    x = fresh_name("x", free_vars(f))
    h = fresh_name("h", free_vars(f) | {x})
    psi_f = Lam(
        x, None,
        Lam(h, None,
            BinOp("/",
                  BinOp("-", App(f, BinOp("+", Var(x), Var(h))), App(f, Var(x))),
                  Var(h))),
    )
    g = fresh_name("g", free_vars(f))
    lim_at_zero = Lam(g, None, Lim(_ZERO, Var(g)))
    return DerivativeLimit(fun=f, point_free=Compose(lim_at_zero, psi_f))
