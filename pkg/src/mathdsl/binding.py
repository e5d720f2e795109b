"""Scope analysis: free variables, capture-avoiding substitution,
alpha-equivalence, and diagnosis of textbook-implicit quantifiers.

Alpha-equivalence compares binding structure through per-side environments
mapping names to binder depths, so shadowing is handled soundly without a
global renaming pass.
"""
from __future__ import annotations

from dataclasses import dataclass

from .core import (
    And,
    App,
    BinOp,
    Bound,
    Cmp,
    Compose,
    ConstFun,
    Diagnostic,
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
    Neg,
    Node,
    Not,
    PartialD,
    Prim,
    Proj,
    SourceSpan,
    TotalD,
    Tuple,
    Var,
)

# ---------------------------------------------------------------------------
# Free variables


def free_vars(node: Node, ambient: frozenset[str] | set[str] = frozenset()) -> set[str]:
    """The names not bound by any enclosing binder or ambient declaration."""
    out: set[str] = set()
    _free(node, frozenset(ambient), out)
    return out


def _free(node: Node, bound: frozenset[str], out: set[str]) -> None:
    if isinstance(node, Var):
        if node.name not in bound:
            out.add(node.name)
    elif isinstance(node, Lam):
        _free(node.body, bound | {node.param}, out)
    elif isinstance(node, (Forall, Exists)):
        if node.bound is not None:
            _free(node.bound.expr, bound, out)
        _free(node.body, bound | {node.name}, out)
    elif isinstance(node, Lit):
        pass
    else:
        for child in _children(node):
            _free(child, bound, out)


def _children(node: Node) -> tuple[Node, ...]:
    if isinstance(node, App):
        return (node.fun, node.arg)
    if isinstance(node, Tuple):
        return node.items
    if isinstance(node, Proj):
        return (node.tuple_,)
    if isinstance(node, BinOp):
        return (node.lhs, node.rhs)
    if isinstance(node, (Neg, Prim)):
        return (node.arg,)
    if isinstance(node, Lim):
        return (node.point, node.fun)
    if isinstance(node, (TotalD, PartialD)):
        return (node.fun,)
    if isinstance(node, Compose):
        return (node.f, node.g)
    if isinstance(node, ConstFun):
        return (node.value,)
    if isinstance(node, (Implies, And)):
        return (node.lhs, node.rhs)
    if isinstance(node, Not):
        return (node.body,)
    if isinstance(node, Cmp):
        return (node.lhs, node.rhs)
    if isinstance(node, InDom):
        return (node.point, node.fun)
    if isinstance(node, HasLimit):
        return (node.fun, node.point, node.limit)
    if isinstance(node, FunEq):
        return (node.lhs, node.rhs)
    if isinstance(node, LagrangeEq):
        return (node.lagrangian, node.path)
    if isinstance(node, (Var, Lit)):
        return ()
    raise TypeError(f"unhandled node {node!r}")


def _rebuild(node: Node, children: tuple[Node, ...]) -> Node:
    """Reassemble a node (other than binders/leaves) with new children."""
    if isinstance(node, App):
        return App(*children, span=node.span)
    if isinstance(node, Tuple):
        return Tuple(tuple(children), span=node.span)
    if isinstance(node, Proj):
        return Proj(node.index, children[0], span=node.span)
    if isinstance(node, BinOp):
        return BinOp(node.op, *children, span=node.span)
    if isinstance(node, Neg):
        return Neg(children[0], span=node.span)
    if isinstance(node, Prim):
        return Prim(node.name, children[0], span=node.span)
    if isinstance(node, Lim):
        return Lim(*children, span=node.span)
    if isinstance(node, TotalD):
        return TotalD(children[0], span=node.span)
    if isinstance(node, PartialD):
        return PartialD(node.index, children[0], span=node.span)
    if isinstance(node, Compose):
        return Compose(*children, span=node.span)
    if isinstance(node, ConstFun):
        return ConstFun(children[0], span=node.span)
    if isinstance(node, Implies):
        return Implies(*children, span=node.span)
    if isinstance(node, And):
        return And(*children, span=node.span)
    if isinstance(node, Not):
        return Not(children[0], span=node.span)
    if isinstance(node, Cmp):
        return Cmp(node.op, *children, span=node.span)
    if isinstance(node, InDom):
        return InDom(*children, span=node.span)
    if isinstance(node, HasLimit):
        return HasLimit(*children, span=node.span)
    if isinstance(node, FunEq):
        return FunEq(*children, span=node.span)
    if isinstance(node, LagrangeEq):
        return LagrangeEq(*children, span=node.span)
    raise TypeError(f"unhandled node {node!r}")


# ---------------------------------------------------------------------------
# Substitution


def fresh_name(base: str, avoid: set[str]) -> str:
    if base not in avoid:
        return base
    stem = base.rstrip("0123456789").rstrip("_") or "x"
    k = 1
    while f"{stem}_{k}" in avoid:
        k += 1
    return f"{stem}_{k}"


def subst(e: Expr, name: str, replacement: Expr) -> Expr:
    """Capture-avoiding substitution of ``replacement`` for free ``name``."""
    repl_free = free_vars(replacement)
    return _subst(e, name, replacement, repl_free)


def _subst(e: Expr, name: str, replacement: Expr, repl_free: set[str]) -> Expr:
    if isinstance(e, Var):
        return replacement if e.name == name else e
    if isinstance(e, Lit):
        return e
    if isinstance(e, Lam):
        if e.param == name:
            return e  # bound occurrence shadows the substitution
        if e.param in repl_free and name in free_vars(e.body):
            avoid = free_vars(e.body) | repl_free | {name}
            new_param = fresh_name(e.param, avoid)
            body = _subst(e.body, e.param, Var(new_param), {new_param})
            body = _subst(body, name, replacement, repl_free)
            return Lam(new_param, e.param_ty, body, span=e.span)
        return Lam(e.param, e.param_ty,
                   _subst(e.body, name, replacement, repl_free), span=e.span)
    kids = tuple(_subst(c, name, replacement, repl_free) for c in _children(e))
    return _rebuild(e, kids)


def subst_formula(f: Formula, name: str, replacement: Expr) -> Formula:
    """Capture-avoiding substitution into a formula."""
    repl_free = free_vars(replacement)

    def go(n: Node) -> Node:
        if isinstance(n, Expr):
            return _subst(n, name, replacement, repl_free)
        if isinstance(n, (Forall, Exists)):
            bound = n.bound
            if bound is not None:
                bound = Bound(bound.op, _subst(bound.expr, name, replacement, repl_free))
            if n.name == name:
                return type(n)(n.name, bound, n.body, span=n.span)
            if n.name in repl_free and name in free_vars(n.body):
                avoid = free_vars(n.body) | repl_free | {name}
                new_name = fresh_name(n.name, avoid)
                body = subst_formula(n.body, n.name, Var(new_name))
                return type(n)(new_name, bound, go(body), span=n.span)
            return type(n)(n.name, bound, go(n.body), span=n.span)
        return _rebuild(n, tuple(go(c) for c in _children(n)))

    return go(f)


# ---------------------------------------------------------------------------
# Alpha-equivalence


def alpha_eq(a: Node, b: Node) -> bool:
    """Structural equality up to consistent renaming of bound names."""
    return _alpha(a, b, {}, {}, 0)


def _alpha(a: Node, b: Node, env_a: dict, env_b: dict, depth: int) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, Var):
        da, db = env_a.get(a.name), env_b.get(b.name)
        if da is not None or db is not None:
            return da == db
        return a.name == b.name
    if isinstance(a, Lit):
        return a.value == b.value
    if isinstance(a, Lam):
        if a.param_ty != b.param_ty:
            return False
        return _alpha(
            a.body, b.body,
            {**env_a, a.param: depth}, {**env_b, b.param: depth}, depth + 1,
        )
    if isinstance(a, (Forall, Exists)):
        if (a.bound is None) != (b.bound is None):
            return False
        if a.bound is not None:
            if a.bound.op != b.bound.op:
                return False
            if not _alpha(a.bound.expr, b.bound.expr, env_a, env_b, depth):
                return False
        return _alpha(
            a.body, b.body,
            {**env_a, a.name: depth}, {**env_b, b.name: depth}, depth + 1,
        )
    if isinstance(a, BinOp) and a.op != b.op:
        return False
    if isinstance(a, Cmp) and a.op != b.op:
        return False
    if isinstance(a, Prim) and a.name != b.name:
        return False
    if isinstance(a, (Proj, PartialD)) and a.index != b.index:
        return False
    ca, cb = _children(a), _children(b)
    if len(ca) != len(cb):
        return False
    return all(_alpha(x, y, env_a, env_b, depth) for x, y in zip(ca, cb))


# ---------------------------------------------------------------------------
# Implicit-binder diagnosis


@dataclass(frozen=True)
class ScopeReport:
    """Findings of the scope analysis over one formula."""

    free: tuple[tuple[str, SourceSpan | None], ...]
    shadowed: tuple[tuple[str, SourceSpan | None], ...]
    suggestions: tuple[Diagnostic, ...]
    errors: tuple[Diagnostic, ...] = ()

    def all_diagnostics(self) -> tuple[Diagnostic, ...]:
        return self.suggestions + self.errors


def diagnose_implicit_binders(
    f: Formula, ambient: frozenset[str] | set[str] = frozenset()
) -> ScopeReport:
    """Find free names and, for those occurring under an implication, suggest
    the universal quantifier the textbook left implicit.

    The quantifier is inserted at the innermost formula that dominates all
    occurrences of the name, so every suggested repair closes the name.
    """
    occurrences: dict[str, list[tuple[list[Node], SourceSpan | None]]] = {}
    shadowed: list[tuple[str, SourceSpan | None]] = []

    def walk(node: Node, bound: frozenset[str], chain: list[Node]) -> None:
        chain = chain + [node]
        if isinstance(node, Var):
            if node.name not in bound and node.name not in ambient:
                occurrences.setdefault(node.name, []).append((chain, node.span))
            return
        if isinstance(node, Lit):
            return
        if isinstance(node, Lam):
            if node.param in bound or node.param in ambient:
                shadowed.append((node.param, node.span))
            walk(node.body, bound | {node.param}, chain)
            return
        if isinstance(node, (Forall, Exists)):
            if node.bound is not None:
                walk(node.bound.expr, bound, chain)
            if node.name in bound or node.name in ambient:
                shadowed.append((node.name, node.span))
            walk(node.body, bound | {node.name}, chain)
            return
        for child in _children(node):
            walk(child, bound, chain)

    walk(f, frozenset(), [])

    suggestions: list[Diagnostic] = []
    errors: list[Diagnostic] = []
    free_occ: list[tuple[str, SourceSpan | None]] = []
    for name in sorted(occurrences):
        chains = occurrences[name]
        for _, span in chains:
            free_occ.append((name, span))
        first_span = chains[0][1]
        under_implies = any(
            any(isinstance(n, Implies) for n in chain) for chain, _ in chains
        )
        if not under_implies:
            errors.append(
                Diagnostic(
                    "error",
                    "FreeVariable",
                    f"'{name}' is not bound by any quantifier or declaration",
                    span=first_span,
                )
            )
            continue
        target = _innermost_common_formula(chains)
        repaired = _wrap_with_forall(f, target, name)
        suggestions.append(
            Diagnostic(
                "warning",
                "ImplicitBinder",
                f"'{name}' appears free under an implication; the text likely "
                f"hides a quantifier that binds it",
                span=first_span,
                suggestion=repaired,
            )
        )

    return ScopeReport(
        free=tuple(free_occ),
        shadowed=tuple(shadowed),
        suggestions=tuple(suggestions),
        errors=tuple(errors),
    )


def _innermost_common_formula(
    chains: list[tuple[list[Node], SourceSpan | None]]
) -> Formula:
    """Deepest formula node lying on every occurrence's ancestor chain."""
    prefix = chains[0][0]
    for chain, _ in chains[1:]:
        n = 0
        while n < len(prefix) and n < len(chain) and prefix[n] is chain[n]:
            n += 1
        prefix = prefix[:n]
    formulas = [n for n in prefix if isinstance(n, Formula)]
    return formulas[-1]


def _wrap_with_forall(root: Formula, target: Formula, name: str) -> Formula:
    """Rebuild ``root`` with ``target`` (by identity) wrapped in forall."""

    def go(node: Node) -> Node:
        if node is target:
            return Forall(name, None, node)
        if isinstance(node, (Var, Lit)):
            return node
        if isinstance(node, Lam):
            return Lam(node.param, node.param_ty, go(node.body), span=node.span)
        if isinstance(node, (Forall, Exists)):
            bound = node.bound
            if bound is not None:
                bound = Bound(bound.op, go(bound.expr))
            return type(node)(node.name, bound, go(node.body), span=node.span)
        return _rebuild(node, tuple(go(c) for c in _children(node)))

    return go(root)
