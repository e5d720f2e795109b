"""Interpreter and desk-scale numeric verification.

The forall-epsilon/exists-delta limit predicate is not machine-enumerable;
``check_limit`` runs its falsifiable shadow: a finite descending epsilon
grid, a delta search over finite candidates, and seeded stratified sampling.
Verified is evidence, Refuted is a genuine counterexample up to float
error, and Inconclusive is reported when the domain is too thin to sample.

All sampling derives from (seed, stream, eps-index, delta-index) so results
are deterministic and schedule-independent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import calculus
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
    Fun,
    Lam,
    Lim,
    Lit,
    Neg,
    Num,
    PartialD,
    Prim,
    Prod,
    Proj,
    Real,
    TotalD,
    Tup,
    Tuple,
    Ty,
    Value,
    Var,
)
from .binding import free_vars

# stream ids for independent deterministic sample streams
_STREAM_LIMIT = 1
_STREAM_FUNEQ = 2
_STREAM_EXPR_EQ = 7

# floor for sequence-convergence tolerance: with offsets down to 2^-20 and
# 64-bit floats, successive difference-quotient values carry ~1e-6 of
# cancellation noise; the mean of the two one-sided tails cancels the
# remaining linear term.
_SEQ_TOL_FLOOR = 1e-6


class NonConvergenceError(DiagnosticError):
    pass


class EvalError(DiagnosticError):
    pass


def _eval_error(message: str, span=None) -> EvalError:
    return EvalError(Diagnostic("error", "EvaluationError", message, span=span))


# ---------------------------------------------------------------------------
# Configuration


def _descending(xs: Sequence[float]) -> bool:
    return all(a > b for a, b in zip(xs, xs[1:]))


_DEFAULT_DELTAS = tuple(float(d) for d in np.logspace(0.0, -9.0, 24))


@dataclass(frozen=True)
class NumericConfig:
    """Knobs for the numeric checkers. Grids are strictly descending."""

    eps_grid: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4)
    delta_candidates: tuple[float, ...] = _DEFAULT_DELTAS
    samples_per_delta: int = 128
    seed: int = 0xD51
    tol: float = 1e-9
    fd_step: float = 1e-5
    eq_samples: int = 64

    def __post_init__(self) -> None:
        object.__setattr__(self, "eps_grid", tuple(float(e) for e in self.eps_grid))
        object.__setattr__(
            self, "delta_candidates", tuple(float(d) for d in self.delta_candidates)
        )
        if not self.eps_grid or min(self.eps_grid) <= 0:
            raise ValueError("eps_grid must be positive")
        if not self.delta_candidates or min(self.delta_candidates) <= 0:
            raise ValueError("delta_candidates must be positive")
        if not _descending(self.eps_grid):
            raise ValueError("eps_grid must be strictly descending")
        if not _descending(self.delta_candidates):
            raise ValueError("delta_candidates must be strictly descending")
        if self.samples_per_delta <= 0 or self.eq_samples <= 0:
            raise ValueError("sample counts must be positive")
        if self.tol <= 0 or self.fd_step <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @staticmethod
    def from_toml(path: str) -> "NumericConfig":
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        table = data.get("numeric", data)
        return NumericConfig().updated(**table)

    def updated(self, **kw) -> "NumericConfig":
        rename = {"samples": "samples_per_delta"}
        clean = {rename.get(k, k): v for k, v in kw.items() if v is not None}
        return replace(self, **clean)


def _rng(cfg: NumericConfig, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# Values and evaluation


def to_value(x) -> Value:
    if isinstance(x, Value):
        return x
    if isinstance(x, (int, float, Fraction)):
        return Num(float(x))
    if isinstance(x, (tuple, list, np.ndarray)):
        return Tup(tuple(to_value(v) for v in x))
    raise TypeError(f"cannot convert {x!r} to a Value")


def reify_value(v: Value) -> Expr:
    """Turn a runtime value back into a closed expression."""
    if isinstance(v, Num):
        return Lit(Fraction(v.value))
    if isinstance(v, Tup):
        return Tuple(tuple(reify_value(x) for x in v.items))
    if isinstance(v, Fun):
        body = v.body
        captured = dict(v.env)
        for name in sorted(free_vars(body) - {v.param}):
            if name in captured:
                from .binding import subst

                body = subst(body, name, reify_value(captured[name]))
        return Lam(v.param, None, body)
    raise TypeError(f"cannot reify {v!r}")


def _num(v: Value, span=None) -> float:
    if not isinstance(v, Num):
        raise _eval_error("expected a number", span)
    return v.value


def _finite(x: float, span=None, what: str = "arithmetic") -> float:
    if not math.isfinite(x):
        raise _eval_error(f"{what} produced a non-finite value", span)
    return x


def eval_expr(e: Expr, env: dict[str, Value],
              cfg: Optional[NumericConfig] = None,
              dom: Optional[DomainSet] = None) -> Value:
    """Call-by-value interpretation. Division by zero, logs of non-positive
    numbers, and any NaN/infinity raise EvalError instead of producing a Num.
    Embedded ``lim`` nodes evaluate by sequence extrapolation."""
    cfg = cfg or NumericConfig()
    dom = dom or DomainSet.reals()
    return _eval(e, env, cfg, dom)


def _eval(e: Expr, env: dict[str, Value], cfg: NumericConfig,
          dom: DomainSet) -> Value:
    if isinstance(e, Lit):
        return Num(float(e.value))
    if isinstance(e, Var):
        v = env.get(e.name)
        if v is None:
            raise _eval_error(f"'{e.name}' is not bound to a value", e.span)
        return v
    if isinstance(e, Lam):
        captured = {
            name: env[name]
            for name in free_vars(e.body) - {e.param}
            if name in env
        }
        return Fun(tuple(sorted(captured.items())), e.param, e.body)
    if isinstance(e, App):
        fv = _eval(e.fun, env, cfg, dom)
        av = _eval(e.arg, env, cfg, dom)
        return apply_value(fv, av, cfg, dom)
    if isinstance(e, Tuple):
        return Tup(tuple(_eval(x, env, cfg, dom) for x in e.items))
    if isinstance(e, Proj):
        tv = _eval(e.tuple_, env, cfg, dom)
        if not isinstance(tv, Tup) or e.index > len(tv.items):
            raise _eval_error(f"invalid projection .{e.index}", e.span)
        return tv.items[e.index - 1]
    if isinstance(e, BinOp):
        lhs = _num(_eval(e.lhs, env, cfg, dom), e.lhs.span)
        rhs = _num(_eval(e.rhs, env, cfg, dom), e.rhs.span)
        try:
            if e.op == "+":
                out = lhs + rhs
            elif e.op == "-":
                out = lhs - rhs
            elif e.op == "*":
                out = lhs * rhs
            elif e.op == "/":
                if rhs == 0.0:
                    raise _eval_error("division by zero", e.span)
                out = lhs / rhs
            else:
                out = math.pow(lhs, rhs)
        except OverflowError:
            raise _eval_error("arithmetic overflow", e.span) from None
        except ValueError:
            raise _eval_error(
                f"invalid operands for '{e.op}' ({lhs}, {rhs})", e.span
            ) from None
        return Num(_finite(out, e.span, f"'{e.op}'"))
    if isinstance(e, Neg):
        return Num(-_num(_eval(e.arg, env, cfg, dom), e.span))
    if isinstance(e, Prim):
        x = _num(_eval(e.arg, env, cfg, dom), e.arg.span)
        try:
            if e.name == "sin":
                out = math.sin(x)
            elif e.name == "cos":
                out = math.cos(x)
            elif e.name == "exp":
                out = math.exp(x)
            elif e.name == "ln":
                if x <= 0.0:
                    raise _eval_error(f"ln of non-positive value {x}", e.span)
                out = math.log(x)
            elif e.name == "sqrt":
                if x < 0.0:
                    raise _eval_error(f"sqrt of negative value {x}", e.span)
                out = math.sqrt(x)
            else:
                out = abs(x)
        except OverflowError:
            raise _eval_error(f"{e.name} overflow at {x}", e.span) from None
        return Num(_finite(out, e.span, e.name))
    if isinstance(e, Lim):
        a = _num(_eval(e.point, env, cfg, dom), e.point.span)
        fv = _eval(e.fun, env, cfg, dom)
        feval = _callable_of(fv, cfg, dom)
        return Num(_numeric_limit_callable(feval, a, dom, cfg, span=e.span))
    if isinstance(e, (TotalD, PartialD)):
        closed = _resolve_fun_expr(e.fun, env)
        if isinstance(e, TotalD):
            deriv = calculus.differentiate(closed)
        else:
            deriv = calculus.partial_derivative(e.index, closed)
        return _eval(deriv, {}, cfg, dom)
    if isinstance(e, Compose):
        fv = _eval(e.f, env, cfg, dom)
        gv = _eval(e.g, env, cfg, dom)
        body = App(Var("__f"), App(Var("__g"), Var("__x")))
        return Fun((("__f", fv), ("__g", gv)), "__x", body)
    if isinstance(e, ConstFun):
        captured = {
            name: env[name] for name in free_vars(e.value) if name in env
        }
        return Fun(tuple(sorted(captured.items())), "", e.value)
    raise TypeError(f"unhandled expression {e!r}")


def apply_value(fun: Value, arg: Value,
                cfg: Optional[NumericConfig] = None,
                dom: Optional[DomainSet] = None) -> Value:
    if not isinstance(fun, Fun):
        raise _eval_error("attempt to apply a non-function value")
    cfg = cfg or NumericConfig()
    dom = dom or DomainSet.reals()
    env = dict(fun.env)
    if fun.param:
        env[fun.param] = arg
    return _eval(fun.body, env, cfg, dom)


def _callable_of(fv: Value, cfg: NumericConfig,
                 dom: DomainSet) -> Callable[[float], float]:
    def call(x: float) -> float:
        out = apply_value(fv, Num(x), cfg, dom)
        return _num(out)

    return call


def _resolve_fun_expr(fun: Expr, env: dict[str, Value]) -> Expr:
    """Substitute environment values into a function expression so the
    symbolic differentiator can see its source."""
    from .binding import subst

    out = fun
    for name in sorted(free_vars(fun)):
        if name in env:
            out = subst(out, name, reify_value(env[name]))
    return out


# ---------------------------------------------------------------------------
# Domain membership and sampling


def in_domain(x: float, dom: DomainSet) -> bool:
    return dom.contains(x)


_SAMPLE_BOX = (-10.0, 10.0)


def sample_domain(dom: DomainSet, rng: np.random.Generator, n: int,
                  box: tuple[float, float] = _SAMPLE_BOX) -> list[float]:
    """Draw n in-domain points, uniform over the domain clipped to a box
    (falling back to each interval's own finite extent)."""
    segs: list[tuple[float, float]] = []
    for iv in dom.intervals:
        lo, hi = max(iv.lo, box[0]), min(iv.hi, box[1])
        if lo < hi:
            segs.append((lo, hi))
    if not segs:
        segs = [
            (iv.lo, iv.hi)
            for iv in dom.intervals
            if math.isfinite(iv.lo) and math.isfinite(iv.hi) and iv.lo < iv.hi
        ]
    if not segs:
        return []
    lengths = np.array([hi - lo for lo, hi in segs])
    weights = lengths / lengths.sum()
    out: list[float] = []
    for _ in range(8):  # oversampling rounds; punctures are measure zero
        idx = rng.choice(len(segs), size=2 * n, p=weights)
        us = rng.uniform(0.0, 1.0, size=2 * n)
        for i, u in zip(idx, us):
            lo, hi = segs[i]
            x = lo + (hi - lo) * float(u)
            if dom.contains(x):
                out.append(x)
                if len(out) == n:
                    return out
    return out


def sample_arguments(arg_ty: Ty, dom: DomainSet, cfg: NumericConfig,
                     stream: int):
    """Type-directed argument samples: floats for R, tuples for products."""
    rng = _rng(cfg, stream)
    n = cfg.eq_samples
    if isinstance(arg_ty, Prod):
        width = len(arg_ty.items)
        flat = sample_domain(dom, rng, n * width)
        if len(flat) < n * width:
            return []
        return [tuple(flat[i * width : (i + 1) * width]) for i in range(n)]
    return sample_domain(dom, rng, n)


# ---------------------------------------------------------------------------
# Finite differences


def numeric_derivative(f: Union[Expr, Value], x: float,
                       cfg: Optional[NumericConfig] = None) -> float:
    """Central difference (f(x+h) - f(x-h)) / 2h; the independent oracle for
    the symbolic differentiator."""
    cfg = cfg or NumericConfig()
    fv = eval_expr(f, {}, cfg) if isinstance(f, Expr) else f
    call = _callable_of(fv, cfg, DomainSet.reals())
    h = cfg.fd_step
    return (call(x + h) - call(x - h)) / (2.0 * h)


# ---------------------------------------------------------------------------
# Numeric limits (sequence extrapolation)


def _seq_tol(cfg: NumericConfig, ref: float) -> float:
    return max(cfg.tol, _SEQ_TOL_FLOOR) * (1.0 + abs(ref))


def numeric_limit(f: Union[Expr, Value], a: float,
                  dom: Optional[DomainSet] = None,
                  cfg: Optional[NumericConfig] = None) -> float:
    """Two-sided sequence extrapolation of lim_{x->a} f(x).

    Evaluates f at a +/- 2^-k for k = 0..20 (in-domain, evaluable points
    only), requires each available side to settle, and requires the sides to
    agree; their mean cancels the leading linear error term. Raises
    NonConvergenceError otherwise.
    """
    cfg = cfg or NumericConfig()
    dom = dom or DomainSet.reals()
    fv = eval_expr(f, {}, cfg, dom) if isinstance(f, Expr) else f
    call = _callable_of(fv, cfg, dom)
    return _numeric_limit_callable(call, a, dom, cfg)


def _numeric_limit_callable(call: Callable[[float], float], a: float,
                            dom: DomainSet, cfg: NumericConfig,
                            span=None) -> float:
    sides: list[Optional[float]] = []
    for sign in (1.0, -1.0):
        seq: list[float] = []
        for k in range(21):
            x = a + sign * math.ldexp(1.0, -k)
            if x == a or not dom.contains(x):
                continue
            try:
                seq.append(call(x))
            except DiagnosticError:
                continue  # undefined approach points cannot witness the limit
        if len(seq) < 4:
            sides.append(None)
            continue
        tol = _seq_tol(cfg, seq[-1])
        if abs(seq[-1] - seq[-2]) >= tol or abs(seq[-2] - seq[-3]) >= tol:
            raise NonConvergenceError(
                Diagnostic("error", "NonConvergence",
                           f"f does not settle approaching {a} from the "
                           f"{'right' if sign > 0 else 'left'}", span=span)
            )
        sides.append(seq[-1])
    available = [s for s in sides if s is not None]
    if not available:
        raise NonConvergenceError(
            Diagnostic("error", "NonConvergence",
                       f"no evaluable approach points near {a}", span=span)
        )
    if len(available) == 2:
        if abs(available[0] - available[1]) > 10.0 * _seq_tol(cfg, available[0]):
            raise NonConvergenceError(
                Diagnostic("error", "NonConvergence",
                           f"one-sided limits at {a} disagree: "
                           f"{available[0]} vs {available[1]}", span=span)
            )
        return (available[0] + available[1]) / 2.0
    return available[0]


# ---------------------------------------------------------------------------
# The epsilon-delta checker


@dataclass(frozen=True)
class Verified:
    delta_table: tuple[tuple[float, float], ...]  # (eps, chosen delta)

    def to_json_dict(self) -> dict:
        return {
            "verdict": "Verified",
            "delta_table": [{"eps": e, "delta": d} for e, d in self.delta_table],
        }


@dataclass(frozen=True)
class Refuted:
    eps: float
    witness: float
    gap: float  # |f(witness) - L|

    def to_json_dict(self) -> dict:
        return {"verdict": "Refuted", "eps": self.eps,
                "witness": self.witness, "gap": self.gap}


@dataclass(frozen=True)
class Inconclusive:
    reason: str

    def to_json_dict(self) -> dict:
        return {"verdict": "Inconclusive", "reason": self.reason}


LimitVerdict = Union[Verified, Refuted, Inconclusive]


def _limit_samples(a: float, delta: float, dom: DomainSet,
                   cfg: NumericConfig, ei: int, di: int) -> list[float]:
    """Deterministic stratified points with 0 < |x - a| < delta: half
    log-spaced toward a from both sides (hunting near-point failures), half
    uniform."""
    m = cfg.samples_per_delta
    per_side = max(m // 4, 1)
    # offsets down to delta * 1e-5: closer points drown in float cancellation
    exps = np.linspace(-0.05, -5.0, per_side)
    offsets = delta * np.power(10.0, exps)
    candidates: list[float] = []
    for off in offsets:
        candidates.append(a + float(off))
        candidates.append(a - float(off))
    rng = _rng(cfg, _STREAM_LIMIT, ei, di)
    uniform = rng.uniform(-delta, delta, size=4 * m)
    xs: list[float] = []

    def ok(x: float) -> bool:
        return x != a and 0.0 < abs(x - a) < delta and dom.contains(x)

    for x in candidates:
        if ok(x):
            xs.append(x)
    for u in uniform:
        if len(xs) >= m:
            break
        x = a + float(u)
        if ok(x):
            xs.append(x)
    return xs


def check_limit(f: Union[Expr, Value], a: float, L: float,
                dom: Optional[DomainSet] = None,
                cfg: Optional[NumericConfig] = None) -> LimitVerdict:
    """Falsifiable shadow of 'for every eps > 0 there exists delta > 0...'.

    For each eps (descending) the delta candidates are scanned descending;
    a delta works when every sampled x with 0 < |x-a| < delta has
    |f(x) - L| < eps. The first working delta is recorded. If none works,
    the worst offender among the smallest usable delta's samples is the
    refutation witness. Evaluation failures at in-domain points count as
    violations (the domain must be honest).
    """
    cfg = cfg or NumericConfig()
    dom = dom or DomainSet.reals()
    fv = eval_expr(f, {}, cfg, dom) if isinstance(f, Expr) else f
    call = _callable_of(fv, cfg, dom)
    min_quota = max(8, cfg.samples_per_delta // 4)

    table: list[tuple[float, float]] = []
    for ei, eps in enumerate(cfg.eps_grid):
        chosen: Optional[float] = None
        any_usable = False
        worst: Optional[tuple[float, float]] = None  # (gap, x) at smallest usable delta
        for di, delta in enumerate(cfg.delta_candidates):
            xs = _limit_samples(a, delta, dom, cfg, ei, di)
            if len(xs) < min_quota:
                continue
            any_usable = True
            works = True
            worst_here = (-1.0, a)
            for x in xs:
                try:
                    gap = abs(call(x) - L)
                except DiagnosticError:
                    gap = math.inf
                if gap >= eps:
                    works = False
                if gap > worst_here[0]:
                    worst_here = (gap, x)
            if works:
                chosen = delta
                break
            worst = worst_here
        if chosen is not None:
            table.append((eps, chosen))
            continue
        if not any_usable:
            return Inconclusive(
                "too few in-domain sample points near the limit point"
            )
        gap, x = worst
        return Refuted(eps=eps, witness=x, gap=gap)
    return Verified(tuple(table))


# ---------------------------------------------------------------------------
# Numeric function equality


@dataclass(frozen=True)
class Pass:
    max_diff: float

    def to_json_dict(self) -> dict:
        return {"verdict": "Pass", "max_diff": self.max_diff}


@dataclass(frozen=True)
class Fail:
    witness: tuple  # (x, lhs value or None, rhs value or None, diff)

    def to_json_dict(self) -> dict:
        x, va, vb, diff = self.witness
        return {"verdict": "Fail",
                "witness": {"x": x, "lhs": va, "rhs": vb, "diff": diff}}


FuncEqualVerdict = Union[Pass, Fail]


def func_equal_numeric(a: Expr, b: Expr,
                       dom: Optional[DomainSet] = None,
                       cfg: Optional[NumericConfig] = None) -> FuncEqualVerdict:
    """Seeded pointwise comparison of two same-typed functions; an
    evaluation failure at an in-domain point fails the pair at that point."""
    from .types import infer_common

    cfg = cfg or NumericConfig()
    dom = dom or DomainSet.reals()
    ty = infer_common(a, b)
    arg_ty = ty.dom if isinstance(ty, Arrow) else Real()
    args = sample_arguments(arg_ty, dom, cfg, stream=_STREAM_FUNEQ)
    fa = eval_expr(a, {}, cfg, dom)
    fb = eval_expr(b, {}, cfg, dom)
    max_diff = 0.0
    for x in args:
        try:
            va = apply_value(fa, to_value(x), cfg, dom).value
        except DiagnosticError:
            return Fail((x, None, None, math.inf))
        try:
            vb = apply_value(fb, to_value(x), cfg, dom).value
        except DiagnosticError:
            return Fail((x, va, None, math.inf))
        diff = abs(va - vb) / max(1.0, abs(va), abs(vb))
        if diff > cfg.tol:
            return Fail((x, va, vb, diff))
        max_diff = max(max_diff, diff)
    return Pass(max_diff)
