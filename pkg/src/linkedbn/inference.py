"""Selectivity inference over a linked model.

A query is answered in four steps: extract the queried relations, stitch
their trees into one structure by unifying each exported attribute with its
imported copy, prune subtrees that carry no constraint, and run sum-product
message passing leaf-to-root.  Join semantics are inner: every queried link
conditions on its shared root attribute being non-null, so the reported
selectivity is a fraction of actual join rows.
"""
from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .linker import LinkedModel
from .query import Query, codes_for

NodeId = tuple[str, str]  # (relation, network attribute)


class InferenceError(ValueError):
    pass


@dataclass
class StitchedForest:
    """Directed forest of variables with one incoming table per non-root."""

    nodes: set[NodeId] = field(default_factory=set)
    parent: dict[NodeId, NodeId] = field(default_factory=dict)
    tables: dict[NodeId, np.ndarray] = field(default_factory=dict)  # [parent][child]
    marginals: dict[NodeId, np.ndarray] = field(default_factory=dict)
    domain: dict[NodeId, int] = field(default_factory=dict)

    def roots(self) -> list[NodeId]:
        return sorted(n for n in self.nodes if n not in self.parent)

    def children(self) -> dict[NodeId, list[NodeId]]:
        out: dict[NodeId, list[NodeId]] = {n: [] for n in self.nodes}
        for n, p in self.parent.items():
            out[p].append(n)
        return out


def _resolve(alias: dict[NodeId, NodeId], node: NodeId) -> NodeId:
    while node in alias:
        node = alias[node]
    return node


def extract_relations(model: LinkedModel, query: Query) -> tuple[str, ...]:
    """Relations whose networks participate in answering the query: every
    join parent (it holds the imported copies) plus every filtered relation."""
    active = {rel for rel, _ in ((p.relation, None) for p in query.predicates)}
    active.update(p for p, _ in query.joins)
    if len(query.relations) == 1:
        active.update(query.relations)
    return tuple(sorted(active))


def _reroot(parentmap, mats, root, rootmarg, new_root, marginals):
    """Re-root a directed tree at ``new_root``, reversing the tables on the
    path to the old root with the node marginals."""
    path = [new_root]
    while path[-1] != root:
        path.append(parentmap[path[-1]])
    for lower, upper in zip(path, path[1:]):
        m_low = marginals[lower]
        m_up = marginals[upper]
        table = mats[lower]  # [upper][lower]
        with np.errstate(invalid="ignore", divide="ignore"):
            reversed_table = np.where(
                m_low[:, None] > 0, (table * m_up[:, None]).T / m_low[:, None], 0.0
            )
        del parentmap[lower], mats[lower]
        parentmap[upper] = lower
        mats[upper] = reversed_table
    return parentmap, mats, new_root, None


def stitch(model: LinkedModel, query: Query):
    """Build the stitched forest for a query.

    Returns (forest, alias, nonnull_nodes): the variable forest, the map from
    exported child attributes to their governing imported copies, and the
    variables that must be non-null for inner-join semantics.
    """
    linked = [
        (p, fk, model.link_for(p, fk))
        for p, fk in query.joins
        if model.has_link(p, fk)
    ]
    alias: dict[NodeId, NodeId] = {}
    reroot_at: dict[str, NodeId] = {}
    claimed: set[str] = set()
    for p, fk, link in linked:
        root_copy = (p, link.parent_name(link.shared[0]))
        if link.child not in claimed:
            claimed.add(link.child)
            for a in link.shared:
                alias[(link.child, a)] = (p, link.parent_name(a))
        else:
            # The child is already unified with another parent; merge this
            # parent's copy of the child root into that variable instead.
            if p in reroot_at:
                raise InferenceError(
                    f"unsupported join pattern: {p} merges into two other relations"
                )
            reroot_at[p] = root_copy
            alias[root_copy] = (link.child, link.shared[0])

    forest = StitchedForest()
    for rel in extract_relations(model, query):
        bn = model.networks[rel]
        if bn.root is None:
            continue
        parentmap = dict(bn.parent)
        mats = {n: bn.cpts[n].probs for n in bn.cpts}
        root, rootmarg = bn.root, np.asarray(bn.root_marginal.probs)
        if rel in reroot_at:
            parentmap, mats, root, rootmarg = _reroot(
                parentmap, mats, root, rootmarg, reroot_at[rel][1], bn.node_marginals()
            )
        for n in bn.nodes:
            cid = _resolve(alias, (rel, n))
            forest.nodes.add(cid)
            forest.domain.setdefault(cid, len(model.meta[rel][n].dictionary) + 1)
            if (rel, n) in alias:
                continue  # variable owned by the aliased copy; local table dropped
            if n == root:
                if rootmarg is not None:
                    if cid in forest.marginals or cid in forest.parent:
                        raise InferenceError(
                            "unsupported join pattern: variable gets two distributions"
                        )
                    forest.marginals[cid] = rootmarg
            else:
                pid = _resolve(alias, (rel, parentmap[n]))
                if cid in forest.parent or cid in forest.marginals:
                    raise InferenceError(
                        "unsupported join pattern: variable gets two distributions"
                    )
                forest.nodes.add(pid)
                forest.parent[cid] = pid
                forest.tables[cid] = mats[n]
    nonnull = sorted(
        {_resolve(alias, (p, link.parent_name(link.shared[0]))) for p, fk, link in linked}
    )
    return forest, alias, nonnull


def prune(forest: StitchedForest, terminals: set[NodeId]) -> StitchedForest:
    """Drop every subtree containing no terminal; such subtrees always sum
    to one and cannot change the result."""
    children = forest.children()
    keep: set[NodeId] = set()

    def visit(node: NodeId) -> bool:
        hit = node in terminals
        for c in children[node]:
            hit = visit(c) or hit
        if hit:
            keep.add(node)
        return hit

    for root in forest.roots():
        visit(root)
    out = StitchedForest()
    out.nodes = keep
    out.parent = {n: p for n, p in forest.parent.items() if n in keep and p in keep}
    out.tables = {n: forest.tables[n] for n in out.parent}
    out.marginals = {n: m for n, m in forest.marginals.items() if n in keep}
    out.domain = {n: forest.domain[n] for n in keep}
    return out


def eliminate(forest: StitchedForest, allowed: dict[NodeId, set[int]]) -> float:
    """Sum-product over the forest with per-variable allowed code sets.

    Each tree contributes the probability mass of its allowed assignments;
    the forest result is the product (independent components).
    """
    children = forest.children()

    def unary(node: NodeId) -> np.ndarray:
        vec = np.ones(forest.domain[node])
        if node in allowed:
            mask = np.zeros(forest.domain[node])
            for code in allowed[node]:
                if 0 <= code < forest.domain[node]:
                    mask[code] = 1.0
            vec = mask
        return vec

    def message(node: NodeId) -> np.ndarray:
        vec = unary(node)
        for c in sorted(children[node]):
            vec = vec * (forest.tables[c] @ message(c))
        return vec

    total = 1.0
    for root in forest.roots():
        if root not in forest.marginals:
            raise InferenceError(f"stitched component rooted at {root} has no marginal")
        total *= float(np.sum(forest.marginals[root] * message(root)))
    return total


def join_size_estimate(model: LinkedModel, query: Query) -> float:
    """Estimated join cardinality: the product of per-edge matched-row counts
    scaled by each relation's size to the power (1 - degree)."""
    if len(query.relations) == 1:
        return float(model.row_counts[query.relations[0]])
    degree: Counter[str] = Counter()
    size = 1.0
    for p, fk in query.joins:
        key = f"{p}.{fk}"
        try:
            size *= model.join_cards[key]
            child = model.fk_targets[key]
        except KeyError:
            raise InferenceError(f"model has no statistics for join {key}") from None
        degree[p] += 1
        degree[child] += 1
    for rel in query.relations:
        size *= float(model.row_counts[rel]) ** (1 - degree[rel])
    return size


@dataclass(frozen=True)
class Estimate:
    selectivity: float
    cardinality: float
    join_size: float
    method: str = "linked"
    elapsed: float = 0.0
    clamped: bool = False


def _evidence(model: LinkedModel, query: Query, alias) -> dict[NodeId, set[int]]:
    out: dict[NodeId, set[int]] = {}
    for pred in query.predicates:
        meta = model.meta[pred.relation].get(pred.attribute)
        if meta is None:
            raise InferenceError(
                f"model has no attribute {pred.relation}.{pred.attribute}"
            )
        codes = codes_for(pred, meta.kind, meta.dictionary, meta.bin_edges)
        node = _resolve(alias, (pred.relation, pred.attribute))
        out[node] = out[node] & codes if node in out else set(codes)
    return out


def estimate(model: LinkedModel, query: Query, clamp: bool = True) -> Estimate:
    """Estimate the query's selectivity and cardinality from the model."""
    start = time.perf_counter()
    if query.fingerprint and query.fingerprint != model.fingerprint:
        raise InferenceError("query was parsed against a different schema")
    forest, alias, nonnull = stitch(model, query)
    evidence = _evidence(model, query, alias)
    denominator_allowed: dict[NodeId, set[int]] = {}
    for node in nonnull:
        full = set(range(forest.domain[node] - 1))  # everything but the null slot
        denominator_allowed[node] = full
    numerator_allowed = {n: set(c) for n, c in denominator_allowed.items()}
    for node, codes in evidence.items():
        if node not in forest.domain:
            raise InferenceError(f"predicate variable {node} missing from the model")
        base = numerator_allowed.get(node, set(range(forest.domain[node])))
        numerator_allowed[node] = base & codes
    numerator = eliminate(prune(forest, set(numerator_allowed)), numerator_allowed)
    denominator = eliminate(prune(forest, set(denominator_allowed)), denominator_allowed)
    selectivity = numerator / denominator if denominator > 0 else 0.0
    join_size = join_size_estimate(model, query)
    clamped = False
    if clamp and join_size > 0:
        floor = 1.0 / (2.0 * join_size)
        if selectivity < floor:
            selectivity, clamped = floor, True
    return Estimate(
        selectivity=selectivity,
        cardinality=selectivity * join_size,
        join_size=join_size,
        method=f"linked-k{model.k}",
        elapsed=time.perf_counter() - start,
        clamped=clamped,
    )
