"""Shared fixtures, independent reference implementations, and data generators.

The reference implementations here (brute-force spanning trees, joint
enumeration, naive join materialization, exhaustive subgraph enumeration)
are deliberately written with a different algorithmic approach than the
package so they can serve as independent cross-checks.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from pathlib import Path

import numpy as np
import pytest

from linkedbn.catalog import Catalog

# One-line acceptance verdicts, echoed after the run (outside output capture).
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


# --- dataset writing helpers -------------------------------------------------


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_schema(path: Path, relations: list[dict]) -> Path:
    schema_path = path / "schema.json"
    schema_path.write_text(json.dumps({"relations": relations}))
    return schema_path


TOY_CUSTOMERS = [
    ["1", "Swedish", "Blond"],
    ["2", "Swedish", "Blond"],
    ["3", "Swedish", "Brown"],
    ["4", "American", "Blond"],
    ["5", "American", "Brown"],
]
TOY_PURCHASES = [["1", "1"], ["2", "1"], ["3", "1"], ["4", "1"], ["5", "2"], ["6", "3"], ["7", "5"]]


def build_toy(directory: Path, shops: bool = False) -> Path:
    """The two-relation running example (optionally with a shops dimension)."""
    write_csv(directory / "customers.csv", ["id", "nationality", "hair"], TOY_CUSTOMERS)
    relations = [
        {
            "name": "customers",
            "path": "customers.csv",
            "primary_key": "id",
            "attributes": [
                {"name": "nationality", "kind": "categorical"},
                {"name": "hair", "kind": "categorical"},
            ],
        }
    ]
    if shops:
        write_csv(
            directory / "shops.csv",
            ["id", "name"],
            [["1", "Izumi"], ["2", "Konbini"], ["3", "Galleria"]],
        )
        purchases = [row + [str(1 + int(row[0]) % 3)] for row in TOY_PURCHASES]
        write_csv(directory / "purchases.csv", ["id", "customer_id", "shop_id"], purchases)
        relations.append(
            {
                "name": "shops",
                "path": "shops.csv",
                "primary_key": "id",
                "attributes": [{"name": "name", "kind": "categorical"}],
            }
        )
        fks = [
            {"attribute": "customer_id", "references": "customers"},
            {"attribute": "shop_id", "references": "shops"},
        ]
    else:
        write_csv(directory / "purchases.csv", ["id", "customer_id"], TOY_PURCHASES)
        fks = [{"attribute": "customer_id", "references": "customers"}]
    relations.append(
        {
            "name": "purchases",
            "path": "purchases.csv",
            "primary_key": "id",
            "attributes": [],
            "foreign_keys": fks,
        }
    )
    return write_schema(directory, relations)


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory) -> Path:
    directory = tmp_path_factory.mktemp("toy")
    build_toy(directory)
    return directory


@pytest.fixture(scope="session")
def toy_catalog(toy_dir) -> Catalog:
    return Catalog.load(toy_dir / "schema.json")


TOY_QUERY = {
    "relations": ["customers", "purchases"],
    "joins": [["purchases", "customer_id"]],
    "predicates": [
        {"relation": "customers", "attribute": "nationality", "op": "eq", "value": "Swedish"},
        {"relation": "customers", "attribute": "hair", "op": "eq", "value": "Blond"},
    ],
}


# --- independent reference implementations -----------------------------------


def brute_force_mst_weight(nodes: tuple[str, ...], weights: dict) -> float:
    """Max total weight over all spanning trees, by exhaustive enumeration."""
    edges = list(weights.items())
    best = -math.inf
    for subset in itertools.combinations(edges, len(nodes) - 1):
        parent = {n: n for n in nodes}

        def find(x):
            while parent[x] != x:
                x = parent[x]
            return x

        ok = True
        for (a, b), _ in subset:
            ra, rb = find(a), find(b)
            if ra == rb:
                ok = False
                break
            parent[ra] = rb
        if ok:
            best = max(best, sum(w for _, w in subset))
    return best


def enumerate_forest(forest, allowed: dict) -> float:
    """Brute-force sum over all assignments of the stitched forest's joint."""
    nodes = sorted(forest.nodes)
    total = 0.0
    domains = [range(forest.domain[n]) for n in nodes]
    index = {n: i for i, n in enumerate(nodes)}
    for assignment in itertools.product(*domains):
        ok = all(
            assignment[index[n]] in allowed[n] for n in allowed if n in index
        )
        if not ok:
            continue
        p = 1.0
        for n in nodes:
            if n in forest.marginals:
                p *= forest.marginals[n][assignment[index[n]]]
            elif n in forest.parent:
                p *= forest.tables[n][assignment[index[forest.parent[n]]], assignment[index[n]]]
        total += p
    return total


def naive_join_rows(catalog: Catalog, query) -> list[dict]:
    """Materialize the inner join row by row (nested loops); returns one dict
    per join row mapping relation name to its row position."""
    edge_list = []
    for parent, fk in query.joins:
        child = next(
            f.references
            for f in catalog.schema.relation(parent).foreign_keys
            if f.attribute == fk
        )
        edge_list.append((parent, fk, child))
    rows = [{query.relations[0]: i} for i in range(catalog.data(query.relations[0]).row_count)]
    remaining = list(edge_list)
    while remaining:
        progressed = False
        for edge in list(remaining):
            parent, fk, child = edge
            if not rows:
                return []
            bound_parent = parent in rows[0]
            bound_child = child in rows[0]
            if bound_parent and not bound_child:
                out = []
                pdata, cdata = catalog.data(parent), catalog.data(child)
                for r in rows:
                    v = pdata.key_values[fk][r[parent]]
                    pos = cdata.pk_index.get(v) if v != "" else None
                    if pos is not None:
                        out.append({**r, child: pos})
                rows = out
                remaining.remove(edge)
                progressed = True
            elif bound_child and not bound_parent:
                out = []
                pdata, cdata = catalog.data(parent), catalog.data(child)
                by_child: dict[int, list[int]] = {}
                for i in range(pdata.row_count):
                    v = pdata.key_values[fk][i]
                    pos = cdata.pk_index.get(v) if v != "" else None
                    if pos is not None:
                        by_child.setdefault(pos, []).append(i)
                for r in rows:
                    for i in by_child.get(r[child], []):
                        out.append({**r, parent: i})
                rows = out
                remaining.remove(edge)
                progressed = True
            elif bound_parent and bound_child:
                pdata, cdata = catalog.data(parent), catalog.data(child)
                rows = [
                    r
                    for r in rows
                    if pdata.key_values[fk][r[parent]] != ""
                    and cdata.pk_index.get(pdata.key_values[fk][r[parent]]) == r[child]
                ]
                remaining.remove(edge)
                progressed = True
        if not progressed:
            raise AssertionError("disconnected query in naive join")
    return rows


def naive_truth(catalog: Catalog, query) -> tuple[int, int]:
    """(qualifying, join_rows) by naive materialization + row filtering."""
    from linkedbn.oracle import predicate_mask

    rows = naive_join_rows(catalog, query)
    masks = {}
    for pred in query.predicates:
        m = predicate_mask(catalog.data(pred.relation), pred)
        key = (pred.relation, id(pred))
        masks[key] = (pred.relation, m)
    qualifying = 0
    for r in rows:
        if all(m[r[rel]] for rel, m in masks.values()):
            qualifying += 1
    return qualifying, len(rows)


def connected_subsets_brute(relations, edges) -> list[frozenset]:
    """All relation subsets whose induced join graph is connected."""
    out = []
    for size in range(1, len(relations) + 1):
        for subset in itertools.combinations(relations, size):
            included = set(subset)
            adj = {r: set() for r in included}
            for a, b in edges:
                if a in included and b in included:
                    adj[a].add(b)
                    adj[b].add(a)
            seen = {subset[0]}
            stack = [subset[0]]
            while stack:
                for m in adj[stack.pop()]:
                    if m not in seen:
                        seen.add(m)
                        stack.append(m)
            if seen == included:
                out.append(frozenset(subset))
    return out


# --- synthetic dataset generators --------------------------------------------


def gen_assumption_pair(directory: Path, seed: int, child_rows: int = 400) -> Path:
    """A dimension/fact pair on which the model's assumptions hold exactly:
    the dimension's attributes are deterministic functions of its root and
    FK multiplicity depends only on that root value."""
    rng = np.random.default_rng(seed)
    a_vals = rng.integers(0, 6, size=child_rows)
    child = [
        [str(i), f"a{a}", f"b{a % 2}", f"c{a // 2}"] for i, a in enumerate(a_vals)
    ]
    write_csv(directory / "dim.csv", ["id", "a", "b", "c"], child)
    fact_rows = []
    fid = 0
    for i, a in enumerate(a_vals):
        for _ in range(1 + int(a) % 3):  # multiplicity is a function of a only
            d = f"d{(int(a) + int(rng.integers(0, 2))) % 4}"
            fact_rows.append([str(fid), str(i), d])
            fid += 1
    write_csv(directory / "fact.csv", ["id", "dim_id", "d"], fact_rows)
    return write_schema(
        directory,
        [
            {
                "name": "dim",
                "path": "dim.csv",
                "primary_key": "id",
                "attributes": [
                    {"name": "a", "kind": "categorical"},
                    {"name": "b", "kind": "categorical"},
                    {"name": "c", "kind": "categorical"},
                ],
            },
            {
                "name": "fact",
                "path": "fact.csv",
                "primary_key": "id",
                "attributes": [{"name": "d", "kind": "categorical"}],
                "foreign_keys": [{"attribute": "dim_id", "references": "dim"}],
            },
        ],
    )


def gen_star(directory: Path, seed: int, fact_rows: int = 100_000, dim_rows: int = 100) -> Path:
    """Star schema with planted cross-relation correlation and FK skew.

    Each dimension has a skewed driver attribute ``r`` and a noisy companion
    ``c``; fact rows pick dimension rows with probability increasing in both
    r and c (so k=1's preserved-conditional assumption is only approximate),
    and the fact's own attribute tracks dimension 1's r.
    """
    rng = np.random.default_rng(seed)
    dim_r: dict[int, np.ndarray] = {}
    weights: dict[int, np.ndarray] = {}
    for d in range(1, 4):
        r = rng.integers(0, 10, size=dim_rows)
        c = (r // 2 + rng.integers(0, 3, size=dim_rows)) % 6
        rows = [[str(i), f"r{v}", f"c{w}"] for i, (v, w) in enumerate(zip(r, c))]
        write_csv(
            directory / f"dim{d}.csv", ["id", "r", "c"], rows
        )
        dim_r[d] = r
        w = (1.0 + 3.0 * r) * (1.0 + 0.8 * c)
        weights[d] = w / w.sum()
    picks = {d: rng.choice(dim_rows, size=fact_rows, p=weights[d]) for d in (1, 2, 3)}
    d_attr = (dim_r[1][picks[1]] + rng.integers(0, 2, size=fact_rows)) % 10
    rows = [
        [str(i), str(picks[1][i]), str(picks[2][i]), str(picks[3][i]), f"v{d_attr[i]}"]
        for i in range(fact_rows)
    ]
    write_csv(directory / "fact.csv", ["id", "fk1", "fk2", "fk3", "d"], rows)
    dims = [
        {
            "name": f"dim{d}",
            "path": f"dim{d}.csv",
            "primary_key": "id",
            "attributes": [
                {"name": "r", "kind": "categorical"},
                {"name": "c", "kind": "categorical"},
            ],
        }
        for d in range(1, 4)
    ]
    fact = {
        "name": "fact",
        "path": "fact.csv",
        "primary_key": "id",
        "attributes": [{"name": "d", "kind": "categorical"}],
        "foreign_keys": [
            {"attribute": f"fk{d}", "references": f"dim{d}"} for d in range(1, 4)
        ],
    }
    return write_schema(directory, dims + [fact])


def gen_chain(directory: Path, seed: int, n_rels: int = 8, rows: int = 1500) -> Path:
    """A chain R1 -> R2 -> ... -> Rn with two attributes per relation."""
    rng = np.random.default_rng(seed)
    relations = []
    for level in range(n_rels, 0, -1):
        name = f"r{level}"
        x = rng.integers(0, 6, size=rows)
        y = (x + rng.integers(0, 3, size=rows)) % 6
        header = ["id", "x", "y"]
        data = [[str(i), f"x{a}", f"y{b}"] for i, (a, b) in enumerate(zip(x, y))]
        fks = []
        if level < n_rels:
            fk = rng.integers(0, rows, size=rows)
            header.append("next_id")
            for i in range(rows):
                data[i].append(str(fk[i]))
            fks = [{"attribute": "next_id", "references": f"r{level + 1}"}]
        write_csv(directory / f"{name}.csv", header, data)
        relations.append(
            {
                "name": name,
                "path": f"{name}.csv",
                "primary_key": "id",
                "attributes": [
                    {"name": "x", "kind": "categorical"},
                    {"name": "y", "kind": "categorical"},
                ],
                "foreign_keys": fks,
            }
        )
    return write_schema(directory, relations)
