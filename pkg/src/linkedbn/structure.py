"""Chow-Liu tree learning: mutual information, maximum spanning tree, rooting.

A relation's network is the maximum-likelihood tree over its modeled
attributes.  Construction is deterministic: edges are ranked by
(weight desc, name pair asc) and root ties fall back to attribute
declaration order, so the same data always yields the same model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .catalog import EncodedColumn, RelationData
from .factor import (
    ConditionalTable,
    Marginal,
    cpt_from_counts,
    joint_counts,
    marginal_from_counts,
)


class StructureError(ValueError):
    pass


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def mutual_information(x: EncodedColumn, y: EncodedColumn) -> float:
    """MI in nats; zero joint cells contribute 0. Exactly symmetric."""
    if len(x.codes) != len(y.codes):
        raise StructureError("columns have different lengths")
    if len(x.codes) == 0:
        raise StructureError("empty columns")
    # Canonical operand order so summation order (and hence rounding) is
    # identical for (x, y) and (y, x).
    if (x.dictionary, x.kind) > (y.dictionary, y.kind) or (
        x.dictionary == y.dictionary and x.codes.tobytes() > y.codes.tobytes()
    ):
        x, y = y, x
    joint = joint_counts(x, y)  # [y code][x code]
    n = joint.sum()
    px = joint.sum(axis=0) / n
    py = joint.sum(axis=1) / n
    p = joint / n
    mask = p > 0
    outer = py[:, None] * px[None, :]
    mi = float(np.sum(p[mask] * np.log(p[mask] / outer[mask])))
    return max(mi, 0.0)


@dataclass
class WeightedGraph:
    """Complete undirected graph over attributes, weighted by MI."""

    nodes: tuple[str, ...]
    weights: dict[tuple[str, str], float] = field(default_factory=dict)

    def weight(self, a: str, b: str) -> float:
        return self.weights[_pair(a, b)]

    def edges(self) -> list[tuple[str, str, float]]:
        return [(a, b, w) for (a, b), w in self.weights.items()]


def build_mi_graph(rel: RelationData, attributes: tuple[str, ...] | None = None) -> WeightedGraph:
    attrs = tuple(attributes) if attributes is not None else tuple(rel.columns)
    if not attrs or rel.row_count == 0:
        raise StructureError(f"relation {rel.name} has no modeled attributes or no rows")
    g = WeightedGraph(attrs)
    for i, a in enumerate(attrs):
        for b in attrs[i + 1 :]:
            g.weights[_pair(a, b)] = mutual_information(rel.columns[a], rel.columns[b])
    return g


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def maximum_spanning_tree(g: WeightedGraph) -> list[tuple[str, str, float]]:
    """Kruskal with deterministic (weight desc, name pair asc) edge order."""
    if not g.nodes:
        raise StructureError("empty graph")
    ranked = sorted(g.edges(), key=lambda e: (-e[2], _pair(e[0], e[1])))
    uf = _UnionFind(g.nodes)
    tree = []
    for a, b, w in ranked:
        if uf.union(a, b):
            tree.append((a, b, w))
            if len(tree) == len(g.nodes) - 1:
                break
    if len(tree) != len(g.nodes) - 1:
        raise StructureError("graph is not connected")
    return tree


def choose_root(mst: list[tuple[str, str, float]], g: WeightedGraph) -> str:
    """Node with the largest summed incident tree weight; ties fall back to
    the graph's node order (attribute declaration order)."""
    incident = {n: 0.0 for n in g.nodes}
    for a, b, w in mst:
        incident[a] += w
        incident[b] += w
    best = max(g.nodes, key=lambda n: (incident[n], -g.nodes.index(n)))
    return best


@dataclass
class TreeBN:
    """A rooted tree network: one marginal at the root, one CPT per other node."""

    relation: str
    nodes: tuple[str, ...]
    root: str | None
    parent: dict[str, str]
    edge_weight: dict[str, float]  # node -> MI of the edge to its parent
    root_marginal: Marginal | None
    cpts: dict[str, ConditionalTable]

    def children(self, node: str) -> list[str]:
        return [n for n in self.nodes if self.parent.get(n) == node]

    def subtree(self, node: str) -> list[str]:
        out, stack = [], [node]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(self.children(n))
        return out

    def node_marginals(self) -> dict[str, np.ndarray]:
        """Marginal of every node implied by the tree (downward pass)."""
        if self.root is None:
            return {}
        out = {self.root: np.asarray(self.root_marginal.probs)}
        order = self.subtree(self.root)
        for n in order:
            if n == self.root:
                continue
            out[n] = out[self.parent[n]] @ self.cpts[n].probs
        return out

    def log_likelihood(self, rel: RelationData) -> float:
        """Training-data log-likelihood of the tree fitted on ``rel``."""
        total = 0.0
        with np.errstate(divide="ignore"):
            if self.root is not None:
                probs = self.root_marginal.probs[rel.columns[self.root].codes]
                total += float(np.sum(np.log(probs)))
            for n in self.nodes:
                if n == self.root:
                    continue
                cpt = self.cpts[n].probs
                pc = rel.columns[self.parent[n]].codes
                cc = rel.columns[n].codes
                total += float(np.sum(np.log(cpt[pc, cc])))
        return total


def orient_and_fit(
    rel: RelationData,
    mst: list[tuple[str, str, float]],
    graph: WeightedGraph,
    root: str,
) -> TreeBN:
    adjacency: dict[str, list[str]] = {n: [] for n in graph.nodes}
    for a, b, _ in mst:
        adjacency[a].append(b)
        adjacency[b].append(a)
    parent: dict[str, str] = {}
    order = [root]
    seen = {root}
    for n in order:  # BFS from the root
        for m in sorted(adjacency[n], key=graph.nodes.index):
            if m not in seen:
                seen.add(m)
                parent[m] = n
                order.append(m)
    cpts = {
        n: cpt_from_counts(rel.columns[n], rel.columns[parent[n]], n, parent[n])
        for n in order
        if n != root
    }
    weights = {n: graph.weight(n, parent[n]) for n in parent}
    return TreeBN(
        relation=rel.name,
        nodes=tuple(order),
        root=root,
        parent=parent,
        edge_weight=weights,
        root_marginal=marginal_from_counts(rel.columns[root], root),
        cpts=cpts,
    )


def build_tree_edges(
    graph: WeightedGraph,
    forced_edges: list[tuple[str, str]] = (),
    core: tuple[str, ...] | None = None,
) -> list[tuple[str, str, float]]:
    """Spanning tree via staged Kruskal.

    ``forced_edges`` are accepted first (import subtrees must mirror their
    source tree).  Edges wholly inside ``core`` come next so the subtree over
    a relation's own attributes is identical to the one an unaugmented build
    would produce; remaining edges connect the pieces by weight.
    """
    uf = _UnionFind(graph.nodes)
    tree: list[tuple[str, str, float]] = []
    for a, b in forced_edges:
        if not uf.union(a, b):
            raise StructureError(f"forced edge ({a}, {b}) creates a cycle")
        tree.append((a, b, graph.weight(a, b)))
    core_set = set(core if core is not None else graph.nodes)
    remaining = [e for e in graph.edges() if (e[0], e[1]) not in {(_pair(a, b)) for a, b, _ in tree}]
    inner = sorted(
        (e for e in remaining if e[0] in core_set and e[1] in core_set),
        key=lambda e: (-e[2], _pair(e[0], e[1])),
    )
    outer = sorted(
        (e for e in remaining if not (e[0] in core_set and e[1] in core_set)),
        key=lambda e: (-e[2], _pair(e[0], e[1])),
    )
    for a, b, w in inner + outer:
        if uf.union(a, b):
            tree.append((a, b, w))
    if len(tree) != len(graph.nodes) - 1:
        raise StructureError("could not span the attribute graph")
    return tree


def build_bn(
    rel: RelationData,
    attributes: tuple[str, ...] | None = None,
    forced_edges: list[tuple[str, str]] = (),
    core: tuple[str, ...] | None = None,
) -> TreeBN:
    """Learn the tree network of one relation from its encoded columns."""
    if rel.row_count == 0:
        raise StructureError(f"relation {rel.name} is empty")
    attrs = tuple(attributes) if attributes is not None else tuple(rel.columns)
    if not attrs:
        return TreeBN(rel.name, (), None, {}, {}, None, {})
    if len(attrs) == 1:
        only = attrs[0]
        return TreeBN(
            rel.name,
            (only,),
            only,
            {},
            {},
            marginal_from_counts(rel.columns[only], only),
            {},
        )
    graph = build_mi_graph(rel, attrs)
    tree = build_tree_edges(graph, forced_edges=forced_edges, core=core)
    root = choose_root(tree, graph)
    return orient_and_fit(rel, tree, graph, root)
