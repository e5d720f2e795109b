"""Shared abstract syntax, types, values, domains, and diagnostics.

Expressions (:class:`Expr`) and formulas (:class:`Formula`) are immutable
trees built from frozen dataclasses; structural equality ignores source
spans so that parsed and programmatically-built trees compare equal.
All values here are safe to share freely across threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import Iterator, Optional, Union

# ---------------------------------------------------------------------------
# Source locations


@dataclass(frozen=True)
class SourceSpan:
    """Byte range [start, end) with 1-based line/column for both endpoints."""

    start: int
    end: int
    line: int
    col: int
    end_line: int
    end_col: int

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError(f"inverted span: {self.start}..{self.end}")

    def contains(self, other: "SourceSpan") -> bool:
        return self.start <= other.start and other.end <= self.end

    def to_json_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "line": self.line,
            "col": self.col,
            "end_line": self.end_line,
            "end_col": self.end_col,
        }


# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class Expr:
    """Base class for expression nodes.

    ``span`` records where the node came from in source text; it is
    excluded from equality and hashing.
    """

    span: Optional[SourceSpan] = field(
        default=None, compare=False, repr=False, kw_only=True
    )


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Lit(Expr):
    """Numeric literal, stored as an exact rational.

    Decimal surface syntax is exact (``0.1`` is 1/10); conversion to binary
    floats happens only in the interpreter.
    """

    value: Fraction

    def __post_init__(self) -> None:
        if not isinstance(self.value, Fraction):
            object.__setattr__(self, "value", Fraction(self.value))


@dataclass(frozen=True)
class Lam(Expr):
    """Function abstraction. n-ary functions are lambdas over a tuple
    parameter (accessed with projections) or curried lambdas."""

    param: str
    param_ty: Optional["Ty"]
    body: Expr


@dataclass(frozen=True)
class App(Expr):
    fun: Expr
    arg: Expr


@dataclass(frozen=True)
class Tuple(Expr):
    items: tuple[Expr, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.items, tuple):
            object.__setattr__(self, "items", tuple(self.items))
        if len(self.items) < 2:
            raise ValueError("tuple arity must be >= 2")


@dataclass(frozen=True)
class Proj(Expr):
    """1-based projection out of a tuple-typed expression."""

    index: int
    tuple_: Expr

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("projection index is 1-based")


BINOPS = frozenset({"+", "-", "*", "/", "^"})
PRIMS = frozenset({"sin", "cos", "exp", "ln", "sqrt", "abs"})


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    lhs: Expr
    rhs: Expr

    def __post_init__(self) -> None:
        if self.op not in BINOPS:
            raise ValueError(f"unknown operator {self.op!r}")


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Prim(Expr):
    name: str
    arg: Expr

    def __post_init__(self) -> None:
        if self.name not in PRIMS:
            raise ValueError(f"unknown primitive {self.name!r}")


@dataclass(frozen=True)
class Lim(Expr):
    """The value ``lim(point, fun)`` -- usable where existence is assumed."""

    point: Expr
    fun: Expr


@dataclass(frozen=True)
class TotalD(Expr):
    """The one-argument derivative operator D."""

    fun: Expr


@dataclass(frozen=True)
class PartialD(Expr):
    """The i-th partial derivative operator (1-based index)."""

    index: int
    fun: Expr

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("partial derivative index is 1-based")


@dataclass(frozen=True)
class Compose(Expr):
    """Function composition f . g (apply g first)."""

    f: Expr
    g: Expr


@dataclass(frozen=True)
class ConstFun(Expr):
    """The constant function: ``const(e)`` applied to anything yields e."""

    value: Expr


def mk_const_fun(v: Expr) -> Expr:
    """Build the constant function returning ``v`` for any argument."""
    return ConstFun(v)


# ---------------------------------------------------------------------------
# Formulas


@dataclass(frozen=True)
class Formula:
    span: Optional[SourceSpan] = field(
        default=None, compare=False, repr=False, kw_only=True
    )


@dataclass(frozen=True)
class Bound:
    """A constraint attached to a quantifier binder, e.g. ``eps > 0``."""

    op: str  # one of < <= > >=
    expr: Expr


@dataclass(frozen=True)
class Forall(Formula):
    name: str
    bound: Optional[Bound]
    body: Formula


@dataclass(frozen=True)
class Exists(Formula):
    name: str
    bound: Optional[Bound]
    body: Formula


@dataclass(frozen=True)
class Implies(Formula):
    lhs: Formula
    rhs: Formula


@dataclass(frozen=True)
class And(Formula):
    lhs: Formula
    rhs: Formula


@dataclass(frozen=True)
class Not(Formula):
    body: Formula


CMP_OPS = frozenset({"<", "<=", "=", "!="})


@dataclass(frozen=True)
class Cmp(Formula):
    op: str
    lhs: Expr
    rhs: Expr

    def __post_init__(self) -> None:
        if self.op not in CMP_OPS:
            raise ValueError(f"unknown comparison {self.op!r}")


@dataclass(frozen=True)
class InDom(Formula):
    """Membership of a point in the domain of a function."""

    point: Expr
    fun: Expr


@dataclass(frozen=True)
class HasLimit(Formula):
    """The ternary limit predicate: fun tends to limit at point."""

    fun: Expr
    point: Expr
    limit: Expr


@dataclass(frozen=True)
class FunEq(Formula):
    """Extensional equality of two function-valued expressions (``==``)."""

    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class LagrangeEq(Formula):
    """The path-admissibility predicate for a Lagrangian and a path."""

    lagrangian: Expr
    path: Expr


Node = Union[Expr, Formula]


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class Ty:
    pass


@dataclass(frozen=True)
class Real(Ty):
    """The reals. ``label`` is a display hint (T, Q, V) that never affects
    unification."""

    label: Optional[str] = field(default=None, compare=False)


@dataclass(frozen=True)
class Prod(Ty):
    items: tuple[Ty, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.items, tuple):
            object.__setattr__(self, "items", tuple(self.items))
        if len(self.items) < 2:
            raise ValueError("product arity must be >= 2")


@dataclass(frozen=True)
class Arrow(Ty):
    dom: Ty
    cod: Ty


@dataclass(frozen=True)
class MetaVar(Ty):
    """Unification variable; never survives in a fully inferred type."""

    id: int


@dataclass(frozen=True)
class Prop(Ty):
    """Type of formulas (internal)."""


def ty_to_str(ty: Ty, verbose: bool = False) -> str:
    """Render a type in the normative diagnostic format.

    ``R``, ``(R, R, R)``, ``R -> R``; real labels appear as ``R{T}`` only
    when ``verbose`` is set.
    """
    if isinstance(ty, Real):
        if verbose and ty.label:
            return f"R{{{ty.label}}}"
        return "R"
    if isinstance(ty, Prod):
        return "(" + ", ".join(ty_to_str(t, verbose) for t in ty.items) + ")"
    if isinstance(ty, Arrow):
        dom = ty_to_str(ty.dom, verbose)
        if isinstance(ty.dom, Arrow):
            dom = f"({dom})"
        return f"{dom} -> {ty_to_str(ty.cod, verbose)}"
    if isinstance(ty, MetaVar):
        return f"?{ty.id}"
    if isinstance(ty, Prop):
        return "Prop"
    raise TypeError(f"not a type: {ty!r}")


# ---------------------------------------------------------------------------
# Values


class Value:
    """Base class for interpreter results."""

    __slots__ = ()


@dataclass(frozen=True)
class Num(Value):
    """A finite real. Evaluation raises instead of producing NaN/inf."""

    value: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite numeric value: {self.value}")


@dataclass(frozen=True)
class Tup(Value):
    items: tuple[Value, ...]


@dataclass(frozen=True)
class Fun(Value):
    """A closure: captured environment, parameter name, body expression."""

    env: tuple[tuple[str, Value], ...]
    param: str
    body: Expr


# ---------------------------------------------------------------------------
# Domains


NEG_INF = float("-inf")
POS_INF = float("inf")


@dataclass(frozen=True)
class Interval:
    """One interval over the extended reals with open/closed endpoints."""

    lo: float
    hi: float
    lo_open: bool = False
    hi_open: bool = False

    def is_empty(self) -> bool:
        if self.lo > self.hi:
            return True
        if self.lo == self.hi:
            return self.lo_open or self.hi_open or math.isinf(self.lo)
        return False

    def contains(self, x: float) -> bool:
        if self.lo_open or math.isinf(self.lo):
            if not x > self.lo:
                return False
        elif not x >= self.lo:
            return False
        if self.hi_open or math.isinf(self.hi):
            if not x < self.hi:
                return False
        elif not x <= self.hi:
            return False
        return True

    def __str__(self) -> str:
        lo = "(" if (self.lo_open or math.isinf(self.lo)) else "["
        hi = ")" if (self.hi_open or math.isinf(self.hi)) else "]"
        fmt = lambda v: "-inf" if v == NEG_INF else "inf" if v == POS_INF else repr(v)
        return f"{lo}{fmt(self.lo)},{fmt(self.hi)}{hi}"


@dataclass(frozen=True)
class DomainSet:
    """A finite union of intervals minus a finite set of punctured points.

    Always normalized: intervals sorted, disjoint, non-empty; punctures lie
    strictly inside some interval (a puncture at a closed endpoint is folded
    into an open endpoint).
    """

    intervals: tuple[Interval, ...]
    punctures: tuple[float, ...] = ()

    @staticmethod
    def of(intervals, punctures=()) -> "DomainSet":
        return normalize_domain(DomainSet(tuple(intervals), tuple(punctures)))

    @staticmethod
    def reals(*punctures: float) -> "DomainSet":
        return DomainSet.of([Interval(NEG_INF, POS_INF, True, True)], punctures)

    @staticmethod
    def interval(lo: float, hi: float, lo_open: bool = False,
                 hi_open: bool = False) -> "DomainSet":
        return DomainSet.of([Interval(lo, hi, lo_open, hi_open)])

    def contains(self, x: float) -> bool:
        if x in self.punctures:
            return False
        return any(iv.contains(x) for iv in self.intervals)

    def __str__(self) -> str:
        if self.intervals == (Interval(NEG_INF, POS_INF, True, True),):
            base = "R"
        else:
            base = " u ".join(str(iv) for iv in self.intervals)
        if self.punctures:
            pts = ",".join(repr(p) for p in self.punctures)
            return f"{base}\\{{{pts}}}"
        return base


def normalize_domain(dom: DomainSet) -> DomainSet:
    """Sort and merge intervals, drop empty ones and stray punctures.

    Idempotent; a puncture coinciding with a closed endpoint opens the
    endpoint instead of staying in the puncture list.
    """
    ivs = [iv for iv in dom.intervals if not iv.is_empty()]
    ivs.sort(key=lambda iv: (iv.lo, iv.lo_open))
    merged: list[Interval] = []
    for iv in ivs:
        if merged:
            prev = merged[-1]
            touching = iv.lo < prev.hi or (
                iv.lo == prev.hi and not (iv.lo_open and prev.hi_open)
            )
            if touching:
                if (iv.hi, not iv.hi_open) > (prev.hi, not prev.hi_open):
                    merged[-1] = Interval(prev.lo, iv.hi, prev.lo_open, iv.hi_open)
                continue
        merged.append(iv)

    punctures = []
    for p in sorted(set(dom.punctures)):
        for i, iv in enumerate(merged):
            if not iv.contains(p):
                continue
            if p == iv.lo and not iv.lo_open:
                merged[i] = Interval(iv.lo, iv.hi, True, iv.hi_open)
            elif p == iv.hi and not iv.hi_open:
                merged[i] = Interval(iv.lo, iv.hi, iv.lo_open, True)
            else:
                punctures.append(p)
            break
    merged = [iv for iv in merged if not iv.is_empty()]
    return DomainSet(tuple(merged), tuple(punctures))


# ---------------------------------------------------------------------------
# Diagnostics


SEVERITIES = frozenset({"error", "warning", "note"})

# The first six kinds cover scope/type/numeric findings; the remainder are
# needed by the parser, differentiator, and interpreter error paths.
KINDS = frozenset(
    {
        "FreeVariable",
        "ImplicitBinder",
        "TypeMismatch",
        "NotAVariable",
        "NonConvergence",
        "ResidualExceeded",
        "SyntaxError",
        "NonDifferentiable",
        "EvaluationError",
        "Ambiguous",
        "UnknownName",
        "UnsupportedDimension",
    }
)


@dataclass(frozen=True)
class Diagnostic:
    """A structured finding with severity, kind, location, and optional
    suggested repair. TypeMismatch findings carry both fully resolved types.
    """

    severity: str
    kind: str
    message: str
    span: Optional[SourceSpan] = None
    suggestion: Optional[Node] = None
    expected: Optional[Ty] = None
    found: Optional[Ty] = None

    def __post_init__(self) -> None:
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity {self.severity!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown diagnostic kind {self.kind!r}")

    def to_json_dict(self, pretty=None) -> dict:
        d = {
            "severity": self.severity,
            "kind": self.kind,
            "message": self.message,
            "span": self.span.to_json_dict() if self.span else None,
        }
        if self.suggestion is not None:
            d["suggestion"] = pretty(self.suggestion) if pretty else repr(self.suggestion)
        if self.expected is not None:
            d["expected"] = ty_to_str(self.expected)
        if self.found is not None:
            d["found"] = ty_to_str(self.found)
        return d


class DiagnosticError(Exception):
    """Raised by operations whose contract is 'result or Diagnostic'."""

    def __init__(self, diagnostic: Diagnostic):
        super().__init__(diagnostic.message)
        self.diagnostic = diagnostic


# ---------------------------------------------------------------------------
# Generic tree utilities


def child_nodes(node: Node) -> Iterator[Node]:
    """Yield the direct Expr/Formula children of a node."""
    for f in fields(node):
        if f.name == "span":
            continue
        v = getattr(node, f.name)
        if isinstance(v, (Expr, Formula)):
            yield v
        elif isinstance(v, Bound):
            yield v.expr
        elif isinstance(v, tuple):
            for item in v:
                if isinstance(item, (Expr, Formula)):
                    yield item


def expr_size(node: Node) -> int:
    """Node count of an expression or formula tree (>= 1)."""
    return 1 + sum(expr_size(c) for c in child_nodes(node))


def subterms(node: Node) -> Iterator[Node]:
    """Yield node and all its descendants, pre-order."""
    yield node
    for c in child_nodes(node):
        yield from subterms(c)
