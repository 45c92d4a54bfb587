"""Cost-based attribute ordering for plan nodes.

cost(order) = sum over vertices of icost(v) * weight(v). icost classifies
the set intersection at each vertex by guessed operand layouts: the first
visit of a relation's trie lands on its (typically dense) first level, so
it is guessed as a bitset; later visits are guessed sparse. Fully dense
relations never intersect and contribute zero. Weights push high
cardinality attributes early: each relation gets a score relative to the
heaviest relation in the query, a vertex takes the lowest incident score,
and a key-equality selection flips it to the highest incident score.

Orders place materialized attributes before projected ones and must stay
consistent with orders already fixed by ancestor nodes. The single
sanctioned exception swaps the last two slots (materialized last, repaired
by a one-attribute union) when the node has exactly one projected
attribute and the swap lowers the icost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

from .errors import PlanningError
from .sets import BS, UINT, icost


@dataclass(frozen=True)
class EdgeInfo:
    """Planner-facing view of one relation instance inside a node."""

    alias: str
    vertices: frozenset
    cardinality: int
    dense: bool = False


@dataclass
class OrderChoice:
    order: list
    cost: int
    detail: list  # (vertex, icost, weight)
    relaxed: bool
    union_vertex: str


def score_relations(cardinalities):
    """ceil(100 * |r| / |r_heavy|) per relation, in [1, 100]."""
    if not cardinalities:
        raise PlanningError("cannot score an empty edge set")
    heavy = max(cardinalities.values())
    if heavy < 1:
        raise PlanningError("relation cardinalities must be >= 1")
    return {
        alias: max(1, math.ceil(100 * card / heavy))
        for alias, card in cardinalities.items()
    }


def vertex_weight(vertex, edges, scores, selected_vertices):
    """Lowest incident score, or the highest one under a key-equality selection."""
    incident = [scores[e.alias] for e in edges if vertex in e.vertices]
    if not incident:
        raise PlanningError(f"vertex {vertex!r} has no incident relation")
    if vertex in selected_vertices:
        return max(incident)
    return min(incident)


def assign_icosts(order, edges):
    """Per-vertex icost along an order, guessing layouts by first visit."""
    visited = set()
    out = []
    for v in order:
        incident = [e for e in edges if v in e.vertices]
        layouts = []
        for e in sorted(incident, key=lambda e: e.alias):
            if not e.dense:
                layouts.append(BS if e.alias not in visited else UINT)
        for e in incident:
            visited.add(e.alias)
        out.append(icost(layouts) if len(layouts) >= 2 else 0)
    return out


def _respects(order, constraints):
    pos = {v: i for i, v in enumerate(order)}
    for (a, b) in constraints:
        if a in pos and b in pos and pos[a] > pos[b]:
            return False
    return True


def enumerate_orders(vertices, materialized, edges, constraints=(), relax=True):
    """All admissible orders as (order, relaxed) pairs.

    Materialized-first orders consistent with the global constraints, plus
    the sanctioned last-two swap where the node has one projected attribute,
    the slot before it is materialized, and the swap improves total icost.
    """
    mats = sorted(v for v in vertices if v in materialized)
    projs = sorted(v for v in vertices if v not in materialized)
    out = []
    for pm in permutations(mats):
        for pp in permutations(projs):
            base = list(pm) + list(pp)
            if not _respects(base, constraints):
                continue
            out.append((base, False))
            if relax and len(pp) == 1 and pm:
                swapped = base[:-2] + [base[-1], base[-2]]
                if not _respects(swapped, constraints):
                    continue
                if sum(assign_icosts(swapped, edges)) < sum(assign_icosts(base, edges)):
                    out.append((swapped, True))
    return out


def order_cost(order, edges, scores, selected_vertices):
    icosts = assign_icosts(order, edges)
    detail = []
    total = 0
    for v, ic in zip(order, icosts):
        w = vertex_weight(v, edges, scores, selected_vertices)
        detail.append((v, ic, w))
        total += ic * w
    return total, detail


def choose_order(vertices, materialized, edges, scores, selected_vertices, constraints=(), relax=True):
    """Minimum-cost admissible order; ties break lexicographically."""
    candidates = enumerate_orders(vertices, materialized, edges, constraints, relax)
    if not candidates:
        raise PlanningError(
            f"no attribute order over {sorted(vertices)} satisfies the global ordering"
        )
    best = None
    for order, relaxed in candidates:
        total, detail = order_cost(order, edges, scores, selected_vertices)
        key = (total, order)
        if best is None or key < best[0]:
            best = (key, order, total, detail, relaxed)
    _, order, total, detail, relaxed = best
    union_vertex = order[-1] if relaxed else ""
    return OrderChoice(order, total, detail, relaxed, union_vertex)


def worst_order(vertices, materialized, edges, scores, selected_vertices, constraints=()):
    """Highest-cost materialized-first order (for effectiveness comparisons)."""
    candidates = enumerate_orders(vertices, materialized, edges, constraints, relax=False)
    if not candidates:
        raise PlanningError("no admissible order")
    worst = None
    for order, _ in candidates:
        total, _detail = order_cost(order, edges, scores, selected_vertices)
        key = (-total, order)
        if worst is None or key < worst[0]:
            worst = (key, order, total)
    return worst[1], worst[2]
