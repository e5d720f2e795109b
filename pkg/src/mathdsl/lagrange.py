"""Euler-Lagrange machinery: the expand combinator, the two sides of the
equation of motion, and numeric admissibility checking of candidate paths.

A system is a Lagrangian over the state triple (time, coordinate, velocity)
plus a path giving the coordinate over time; ``expand`` lifts the path to
the full state trajectory, which is what makes both sides of the equation
one-argument functions of time. Verification is for one coordinate;
higher-dimensional systems typecheck but are rejected by ``check_path``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import calculus
from .binding import free_vars, fresh_name
from .core import (
    App,
    Arrow,
    Compose,
    Diagnostic,
    DiagnosticError,
    Expr,
    FunEq,
    Lam,
    PartialD,
    Prod,
    Real,
    TotalD,
    Tuple,
    ty_to_str,
    Var,
)
from .numeric import NumericConfig, apply_value, eval_expr, numeric_derivative
from .types import check, infer


def expand(w: Expr) -> Expr:
    """Lift a path to the state trajectory: \\t -> (t, w t, D w t), with the
    derivative resolved symbolically. Requires a closed, differentiable w."""
    opaque = free_vars(w)
    if opaque:
        raise DiagnosticError(
            Diagnostic("error", "NonDifferentiable",
                       f"expand needs a closed path; "
                       f"{', '.join(sorted(opaque))} is opaque", span=w.span)
        )
    dw = calculus.differentiate(w)
    t = fresh_name("t", free_vars(w))
    lifted = Lam(t, None, Tuple((Var(t), App(w, Var(t)), App(dw, Var(t)))))
    return calculus.reduce(lifted)


@dataclass(frozen=True)
class LagrangianSystem:
    """A Lagrangian of type (T,Q,V) -> R, a path of type T -> Q, and the
    time grid on which the equation of motion is checked."""

    lagrangian: Expr
    path: Expr
    time_window: tuple[float, float]
    grid_points: int = 201

    def __post_init__(self) -> None:
        lo, hi = self.time_window
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError("time window must be a non-degenerate interval")
        if self.grid_points < 3:
            raise ValueError("grid needs at least 3 points")
        lty = infer(self.lagrangian)
        if not (isinstance(lty, Arrow) and isinstance(lty.dom, Prod)
                and all(isinstance(t, Real) for t in lty.dom.items)
                and isinstance(lty.cod, Real)):
            raise DiagnosticError(
                Diagnostic("error", "TypeMismatch",
                           "Lagrangian must map a state tuple of reals to R, "
                           f"found {ty_to_str(lty)}",
                           expected=Arrow(Prod((Real("T"), Real("Q"), Real("V"))), Real()),
                           found=lty)
            )
        arity = len(lty.dom.items)
        if arity % 2 == 0:
            raise DiagnosticError(
                Diagnostic("error", "TypeMismatch",
                           f"state arity must be 1 + 2n, found {arity}",
                           expected=Arrow(Prod((Real(),) * 3), Real()), found=lty)
            )
        n = (arity - 1) // 2
        q_ty = Real("Q") if n == 1 else Prod(tuple(Real("Q") for _ in range(n)))
        check(self.path, Arrow(Real("T"), q_ty))

    @property
    def state_arity(self) -> int:
        ty = infer(self.lagrangian)
        return len(ty.dom.items)


def lagrange_sides(sys: LagrangianSystem) -> tuple[Expr, Expr]:
    """The equation of motion as two expressions,
    ``D((D_3 L) . expand w)`` and ``(D_2 L) . expand w``, both of type
    R -> R. Composing with the expanded path is exactly what reduces the
    outer derivative to a one-argument D."""
    _require_single_coordinate(sys)
    ew = expand(sys.path)
    lhs = TotalD(Compose(PartialD(3, sys.lagrangian), ew))
    rhs = Compose(PartialD(2, sys.lagrangian), ew)
    for side in (lhs, rhs):
        ty = infer(side)
        if ty != Arrow(Real(), Real()):
            raise DiagnosticError(
                Diagnostic("error", "TypeMismatch",
                           f"equation side has type {ty_to_str(ty)}, "
                           "expected R -> R",
                           expected=Arrow(Real(), Real()), found=ty)
            )
    return lhs, rhs


def lagrange_predicate(L: Expr, w: Expr) -> FunEq:
    """The path-admissibility predicate as a formula:
    ``D(D_3 L . expand w) == D_2 L . expand w``."""
    sys = LagrangianSystem(L, w, time_window=(0.0, 1.0))
    lhs, rhs = lagrange_sides(sys)
    return FunEq(lhs, rhs)


def _require_single_coordinate(sys: LagrangianSystem) -> None:
    arity = sys.state_arity
    if arity != 3:
        n = (arity - 1) // 2
        raise DiagnosticError(
            Diagnostic("error", "UnsupportedDimension",
                       f"verification supports one coordinate; this system "
                       f"has {n} (state arity {arity}). It typechecks, but "
                       "the residual check is out of scope.")
        )


@dataclass(frozen=True)
class ResidualReport:
    """Pointwise residual of the equation of motion along the grid."""

    residuals: tuple[tuple[float, float, float, float], ...]  # (t, lhs, rhs, |diff|)
    max_residual: float
    verdict: str  # "Admissible" | "NotAdmissible"
    threshold: float
    failed_point: float | None = None
    message: str | None = None

    def to_json_dict(self) -> dict:
        d = {
            "residuals": [
                {"t": t, "lhs": l, "rhs": r, "abs_diff": a}
                for t, l, r, a in self.residuals
            ],
            "max_residual": self.max_residual,
            "verdict": self.verdict,
            "threshold": self.threshold,
        }
        if self.failed_point is not None:
            d["failed_point"] = self.failed_point
            d["message"] = self.message
        return d

    def to_text(self) -> str:
        lines = [f"{'t':>14}  {'lhs':>18}  {'rhs':>18}  {'|lhs-rhs|':>12}"]
        for t, l, r, a in self.residuals:
            lines.append(f"{t:>14.8g}  {l:>18.12g}  {r:>18.12g}  {a:>12.6g}")
        lines.append(f"max residual : {self.max_residual:.6g}")
        lines.append(f"threshold    : {self.threshold:.6g}")
        lines.append(f"verdict      : {self.verdict}")
        if self.failed_point is not None:
            lines.append(f"failed at    : {self.failed_point:.8g} ({self.message})")
        return "\n".join(lines)


def check_path(sys: LagrangianSystem, threshold: float = 1e-6,
               fd: bool = False, cfg: NumericConfig | None = None) -> ResidualReport:
    """Evaluate both sides of the equation of motion on the time grid.

    The outer derivative on the left side is symbolic (exact); ``fd=True``
    recomputes it by central finite differences as an independent
    cross-check route.
    """
    _require_single_coordinate(sys)
    cfg = cfg or NumericConfig()
    lhs, rhs = lagrange_sides(sys)
    rhs_fun = eval_expr(calculus.reduce(rhs), {}, cfg)
    if fd:
        inner = calculus.reduce(Compose(PartialD(3, sys.lagrangian),
                                        expand(sys.path)))
        inner_fun = eval_expr(inner, {}, cfg)

        def lhs_at(t: float) -> float:
            return numeric_derivative(inner_fun, t, cfg)
    else:
        lhs_fun = eval_expr(calculus.reduce(lhs), {}, cfg)

        def lhs_at(t: float) -> float:
            return apply_value(lhs_fun, _num_value(t), cfg).value

    lo, hi = sys.time_window
    grid = np.linspace(lo, hi, sys.grid_points)
    rows: list[tuple[float, float, float, float]] = []
    max_residual = 0.0
    for t in grid:
        t = float(t)
        try:
            lv = lhs_at(t)
            rv = apply_value(rhs_fun, _num_value(t), cfg).value
        except DiagnosticError as err:
            return ResidualReport(
                residuals=tuple(rows),
                max_residual=math.inf,
                verdict="NotAdmissible",
                threshold=threshold,
                failed_point=t,
                message=err.diagnostic.message,
            )
        diff = abs(lv - rv)
        rows.append((t, lv, rv, diff))
        max_residual = max(max_residual, diff)
    verdict = "Admissible" if max_residual <= threshold else "NotAdmissible"
    return ResidualReport(tuple(rows), max_residual, verdict, threshold)


def _num_value(t: float):
    from .core import Num

    return Num(t)
