"""GHD planning: fractional-width LP, decomposition enumeration, tie-break
heuristics, selection push-down, and the EXPLAIN text format.

Plans are trees of nodes, each holding a vertex set (bag) and the relation
instances assigned to it. The width of a bag is the exact rational optimum
of its fractional edge cover LP; the plan width is the max over bags. Plans
whose best width is 1 (acyclic queries) compress to a single node, which is
just one run of the join algorithm.
"""

from __future__ import annotations

import heapq
import itertools
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import PlanningError


# --- fractional edge cover width -------------------------------------------


def _simplex_max(c, rows, rhs):
    """Maximize c.y s.t. rows.y <= rhs, y >= 0, all rational. Bland's rule."""
    m = len(c)
    n = len(rows)
    # tableau: n constraint rows with slack identity, plus objective row
    tab = [[Fraction(x) for x in row] + [Fraction(int(i == j)) for j in range(n)] + [Fraction(rhs[i])]
           for i, row in enumerate(rows)]
    obj = [Fraction(-x) for x in c] + [Fraction(0)] * n + [Fraction(0)]
    basis = [m + i for i in range(n)]
    while True:
        enter = -1
        for j in range(m + n):
            if obj[j] < 0:
                enter = j
                break
        if enter < 0:
            return obj[-1]
        leave = -1
        best = None
        for i in range(n):
            if tab[i][enter] > 0:
                ratio = tab[i][-1] / tab[i][enter]
                if best is None or ratio < best or (ratio == best and basis[i] < basis[leave]):
                    best = ratio
                    leave = i
        if leave < 0:
            raise PlanningError("unbounded cover LP (malformed hypergraph)")
        piv = tab[leave][enter]
        tab[leave] = [x / piv for x in tab[leave]]
        for i in range(n):
            if i != leave and tab[i][enter]:
                f = tab[i][enter]
                tab[i] = [a - f * b for a, b in zip(tab[i], tab[leave])]
        if obj[enter]:
            f = obj[enter]
            obj = [a - f * b for a, b in zip(obj, tab[leave])]
        basis[leave] = enter


def node_width(vertices, edges):
    """Exact rational optimum of min sum(x_e) s.t. every vertex covered.

    Solved through the dual packing LP (max sum(y_v) s.t. per-edge sums <= 1),
    which shares the optimum and starts feasible at y = 0.
    """
    verts = sorted(set(vertices))
    if not verts:
        return Fraction(0)
    use = [e for e in edges if set(e) & set(verts)]
    for v in verts:
        if not any(v in e for e in use):
            raise PlanningError(f"vertex {v!r} is not covered by any relation")
    vi = {v: i for i, v in enumerate(verts)}
    rows = []
    for e in use:
        row = [0] * len(verts)
        for v in e:
            if v in vi:
                row[vi[v]] = 1
        rows.append(row)
    c = [1] * len(verts)
    return _simplex_max(c, rows, [1] * len(rows))


# --- hypergraph acyclicity (GYO reduction) -----------------------------------


def is_acyclic(edge_sets):
    """GYO reduction: repeatedly drop vertices unique to one edge and edges
    contained in another; acyclic iff everything reduces away."""
    sets = [set(e) for e in edge_sets if e]
    changed = True
    while changed and len(sets) > 1:
        changed = False
        cnt = Counter(v for s in sets for v in s)
        for s in sets:
            iso = {v for v in s if cnt[v] == 1}
            if iso:
                s -= iso
                changed = True
        sets = [s for s in sets if s]
        removed = True
        while removed and len(sets) > 1:
            removed = False
            for i, s in enumerate(sets):
                if any(i != j and s <= t for j, t in enumerate(sets)):
                    sets.pop(i)
                    removed = changed = True
                    break
    return len(sets) <= 1


# --- plan structure -----------------------------------------------------------


@dataclass
class GhdNode:
    vertices: frozenset
    edges: list  # instance aliases evaluated at this node
    width: Fraction
    children: list = field(default_factory=list)
    selections: list = field(default_factory=list)  # structured, set by push-down
    node_id: str = ""
    # attribute-order results, attached by the order optimizer
    order: list = field(default_factory=list)
    order_detail: list = field(default_factory=list)  # (vertex, icost, weight)
    cost: int = 0
    relaxed: bool = False
    union_vertex: str = ""
    groupby_notes: list = field(default_factory=list)

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()


@dataclass
class Ghd:
    root: GhdNode
    fhw: Fraction

    def nodes(self):
        return list(self.root.walk())

    def assign_ids(self):
        def rec(node, path):
            node.node_id = "n" + ".".join(str(p) for p in path)
            for i, c in enumerate(node.children):
                rec(c, path + [i])
        rec(self.root, [0])
        return self


def check_validity(ghd, edges):
    """Edge coverage + running intersection, independent of the enumerator."""
    nodes = ghd.nodes()
    for alias, verts in edges.items():
        if not any(verts <= n.vertices for n in nodes):
            return False
    adjacency = {id(n): [] for n in nodes}
    for n in nodes:
        for c in n.children:
            adjacency[id(n)].append(c)
            adjacency[id(c)].append(n)
    all_vertices = set().union(*[n.vertices for n in nodes])
    for v in all_vertices:
        holders = [n for n in nodes if v in n.vertices]
        seen = {id(holders[0])}
        stack = [holders[0]]
        holder_ids = {id(h) for h in holders}
        while stack:
            cur = stack.pop()
            for nb in adjacency[id(cur)]:
                if id(nb) in holder_ids and id(nb) not in seen:
                    seen.add(id(nb))
                    stack.append(nb)
        if len(seen) != len(holders):
            return False
    return True


# --- enumeration --------------------------------------------------------------


def _set_partitions(items):
    """All partitions of a list into nonempty blocks."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def _prufer_trees(m):
    """All labeled trees on m nodes as edge lists (Prüfer decoding)."""
    if m == 1:
        yield []
        return
    if m == 2:
        yield [(0, 1)]
        return
    for seq in itertools.product(range(m), repeat=m - 2):
        deg = [1] * m
        for s in seq:
            deg[s] += 1
        heap = [i for i in range(m) if deg[i] == 1]
        heapq.heapify(heap)
        tree = []
        for s in seq:
            leaf = heapq.heappop(heap)
            tree.append((leaf, s))
            deg[s] -= 1
            if deg[s] == 1:
                heapq.heappush(heap, s)
        tree.append((heapq.heappop(heap), heapq.heappop(heap)))
        yield tree


def _running_intersection_ok(bags, tree_edges):
    m = len(bags)
    adj = [[] for _ in range(m)]
    for a, b in tree_edges:
        adj[a].append(b)
        adj[b].append(a)
    vertices = set().union(*bags)
    for v in vertices:
        holders = [i for i in range(m) if v in bags[i]]
        if len(holders) <= 1:
            continue
        hset = set(holders)
        seen = {holders[0]}
        stack = [holders[0]]
        while stack:
            cur = stack.pop()
            for nb in adj[cur]:
                if nb in hset and nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != len(holders):
            return False
    return True


def _depths(m, tree_edges, root):
    adj = [[] for _ in range(m)]
    for a, b in tree_edges:
        adj[a].append(b)
        adj[b].append(a)
    depth = [-1] * m
    depth[root] = 0
    stack = [root]
    while stack:
        cur = stack.pop()
        for nb in adj[cur]:
            if depth[nb] < 0:
                depth[nb] = depth[cur] + 1
                stack.append(nb)
    return depth, adj


_MAX_EDGES = 12
_MAX_EDGES_EXHAUSTIVE = 8


def enumerate_and_select(translated):
    """Choose a GHD: minimum fractional width first, then the four tie-break
    heuristics, then a canonical ordering for full determinism."""
    edges = translated.edges
    if len(edges) > _MAX_EDGES:
        raise PlanningError(f"query joins {len(edges)} relations; at most {_MAX_EDGES} supported")
    edge_sets = list(edges.values())
    aliases = sorted(edges)

    selection_edges = {alias for alias, preds in translated.ann_predicates.items() if preds}
    for v, sels in translated.key_selections.items():
        for alias, _col, _lit in sels:
            selection_edges.add(alias)

    if is_acyclic(edge_sets):
        # min FHW is 1; such plans compress into a single node
        all_vertices = frozenset().union(*edge_sets) if edge_sets else frozenset()
        node = GhdNode(all_vertices, aliases, Fraction(1))
        return Ghd(node, Fraction(1)).assign_ids()

    if len(aliases) > _MAX_EDGES_EXHAUSTIVE:
        raise PlanningError(
            f"cyclic query over {len(aliases)} relations exceeds the exhaustive "
            f"GHD enumeration bound ({_MAX_EDGES_EXHAUSTIVE})"
        )

    width_cache = {}

    def bag_width(bag):
        if bag not in width_cache:
            width_cache[bag] = node_width(bag, edge_sets)
        return width_cache[bag]

    def colocated_ok(blocks):
        for group in translated.colocations:
            if not any(group <= set(block) for block in blocks):
                return False
        return True

    # pass 1: min feasible width over partitions admitting a valid tree
    candidates = []
    best_width = None
    for part in _set_partitions(aliases):
        blocks = [sorted(b) for b in part]
        bags = [frozenset().union(*[edges[a] for a in block]) for block in blocks]
        width = max(bag_width(b) for b in bags)
        if best_width is not None and width > best_width:
            continue
        m = len(blocks)
        trees = [t for t in _prufer_trees(m) if _running_intersection_ok(bags, t)]
        if not trees:
            continue
        if best_width is None or width < best_width:
            best_width = width
            candidates = []
        candidates.append((blocks, bags, width, trees))

    if best_width is None:
        raise PlanningError("no valid decomposition found")

    # keep the min-width set, then require co-location inside it
    at_optimum = [c for c in candidates if c[2] == best_width]
    satisfying = [c for c in at_optimum if colocated_ok(c[0])]
    if not satisfying:
        groups = "; ".join(",".join(sorted(g)) for g in translated.colocations)
        raise PlanningError(
            f"aggregate expression requires relations ({groups}) to share a plan node, "
            f"but no width-{best_width} decomposition allows it"
        )

    scored = []
    for blocks, bags, width, trees in satisfying:
        m = len(blocks)
        sel_blocks = [i for i, block in enumerate(blocks) if any(a in selection_edges for a in block)]
        for tree_edges in trees:
            shared = sum(len(bags[a] & bags[b]) for a, b in tree_edges)
            for root in range(m):
                depth, adj = _depths(m, tree_edges, root)
                key = (
                    m,
                    max(depth),
                    shared,
                    -sum(depth[i] for i in sel_blocks),
                    _canonical_form(blocks, bags, adj, root),
                )
                scored.append((key, blocks, bags, tree_edges, root, adj))
    scored.sort(key=lambda t: t[0])
    key, blocks, bags, tree_edges, root, adj = scored[0]

    def build(i, parent):
        node = GhdNode(bags[i], list(blocks[i]), bag_width(bags[i]))
        for nb in sorted(adj[i], key=lambda j: (tuple(sorted(bags[j])), blocks[j])):
            if nb != parent:
                node.children.append(build(nb, i))
        return node

    root_node = build(root, -1)
    return Ghd(root_node, best_width).assign_ids()


def _canonical_form(blocks, bags, adj, root):
    def rec(i, parent):
        subs = sorted(rec(nb, i) for nb in adj[i] if nb != parent)
        return (tuple(sorted(bags[i])), tuple(blocks[i]), tuple(subs))
    return rec(root, -1)


# --- selection push-down --------------------------------------------------------


def push_down_selections(ghd, translated):
    """Create per-edge selection child nodes below multi-edge nodes.

    For a selection owned by edge e in node t: if t holds more than one
    edge, a child holding only e (with the selection) is added and e's
    result flows up from there; a single-edge node keeps the selection in
    place. The plan width never changes.
    """
    by_edge = {}
    for v, sels in translated.key_selections.items():
        for alias, col, lit in sels:
            by_edge.setdefault(alias, []).append(("key", v, alias, col, lit))
    for alias, preds in translated.ann_predicates.items():
        for col, op, lit in preds:
            by_edge.setdefault(alias, []).append(("ann", alias, col, op, lit))

    # edges feeding a multi-relation aggregate expression must stay in their
    # node, so their selections apply in place
    pinned = set()
    for group in translated.colocations:
        pinned |= set(group)

    for node in ghd.nodes():
        here = [alias for alias in node.edges if alias in by_edge]
        for alias in here:
            sels = by_edge[alias]
            if len(node.edges) > 1 and alias not in pinned:
                child = GhdNode(
                    vertices=translated.edges[alias],
                    edges=[alias],
                    width=node_width(translated.edges[alias], translated.edges.values()),
                    selections=list(sels),
                )
                node.edges.remove(alias)
                node.children.append(child)
            else:
                node.selections.extend(sels)
    return ghd.assign_ids()


# --- EXPLAIN ---------------------------------------------------------------------


def _sel_text(sel):
    if sel[0] == "key":
        _, _v, alias, col, lit = sel
        return f"{alias}.{col}={_lit_text(lit)}"
    _, alias, col, op, lit = sel
    return f"{alias}.{col}{op}{_lit_text(lit)}"


def _lit_text(lit):
    if isinstance(lit, str):
        return f"'{lit}'"
    return repr(lit)


def explain_text(ghd):
    """Deterministic one-line-per-node plan rendering (depth indented)."""
    lines = []

    def rec(node, depth):
        verts = ",".join(sorted(node.vertices))
        edges = ",".join(node.edges)
        sels = ",".join(_sel_text(s) for s in node.selections)
        if node.order:
            entries = ",".join(f"{v}({ic},{w})" for v, ic, w in node.order_detail)
        else:
            entries = ""
        w = node.width
        width = f"{w.numerator}/{w.denominator}" if w.denominator != 1 else str(w.numerator)
        line = (
            f"{'  ' * depth}node{{{verts}}}[{edges}] width={width} "
            f"sel=[{sels}] order=[{entries}] cost={node.cost}"
        )
        if node.relaxed:
            line += f" union={node.union_vertex}"
        for note in node.groupby_notes:
            line += f" {note}"
        lines.append(line)
        for c in node.children:
            rec(c, depth + 1)

    rec(ghd.root, 0)
    return "\n".join(lines) + "\n"
