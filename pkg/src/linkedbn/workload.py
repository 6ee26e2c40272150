"""Workload expansion, q-error statistics and benchmark reports.

A seed query expands into every connected induced subgraph of its relation
join graph crossed with every non-empty subset of its predicates.  The
bench runner scores each configured estimator against the exact oracle and
emits delimited reports plus a machine-readable summary.
"""
from __future__ import annotations

import csv
import json
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

from .catalog import Catalog, Schema
from .oracle import OracleError, Truth, exact
from .query import Query, _canonicalize, canonical_json, parse_query


class WorkloadError(ValueError):
    pass


@dataclass
class WorkloadSpec:
    seeds: list[Query]
    max_joins: int | None = None
    expand_cap: int | None = None
    seed: int = 0


def load_workload(path: str | Path, schema: Schema) -> WorkloadSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise WorkloadError(f"cannot read workload file {path}: {exc}") from exc
    seeds = [parse_query(q, schema) for q in doc.get("queries", [])]
    if not seeds:
        raise WorkloadError("workload file declares no seed queries")
    return WorkloadSpec(
        seeds=seeds,
        max_joins=doc.get("max_joins"),
        expand_cap=doc.get("expand_cap"),
        seed=doc.get("seed", 0),
    )


def connected_subsets(relations: tuple[str, ...], joins, schema: Schema):
    """Connected induced subgraphs of the seed's relation-join graph."""
    edge_ends = {}
    for parent, fk in joins:
        child = next(
            f.references
            for f in schema.relation(parent).foreign_keys
            if f.attribute == fk
        )
        edge_ends[(parent, fk)] = (parent, child)
    for size in range(1, len(relations) + 1):
        for subset in combinations(sorted(relations), size):
            included = set(subset)
            induced = [e for e, (a, b) in edge_ends.items() if a in included and b in included]
            # connectivity over the induced edges
            seen = {subset[0]}
            frontier = [subset[0]]
            while frontier:
                r = frontier.pop()
                for e in induced:
                    a, b = edge_ends[e]
                    for other in (a, b):
                        if r in (a, b) and other not in seen:
                            seen.add(other)
                            frontier.append(other)
            if seen == included:
                yield subset, induced


def expand(seed: Query, schema: Schema, max_joins: int | None = None) -> list[Query]:
    """All induced connected subqueries with non-empty filter subsets."""
    out: dict[str, Query] = {}
    for subset, induced in connected_subsets(seed.relations, seed.joins, schema):
        if max_joins is not None and len(induced) > max_joins:
            continue
        pool = [p for p in seed.predicates if p.relation in subset]
        for r in range(1, len(pool) + 1):
            for chosen in combinations(pool, r):
                q = _canonicalize(subset, induced, list(chosen), schema)
                out[canonical_json(q)] = q
    return [out[k] for k in sorted(out)]


def expand_workload(spec: WorkloadSpec, schema: Schema) -> list[Query]:
    out: dict[str, Query] = {}
    for seed in spec.seeds:
        for q in expand(seed, schema, max_joins=spec.max_joins):
            out[canonical_json(q)] = q
    queries = [out[k] for k in sorted(out)]
    if spec.expand_cap is not None and len(queries) > spec.expand_cap:
        rng = random.Random(spec.seed)
        queries = sorted(
            rng.sample(queries, spec.expand_cap), key=canonical_json
        )
    return queries


def q_error(y: float, y_hat: float) -> float:
    """max(y, ŷ)/min(y, ŷ); callers clamp counts below at one tuple first."""
    if y <= 0 or y_hat <= 0:
        raise WorkloadError("q-error needs positive inputs; clamp counts first")
    return max(y, y_hat) / min(y, y_hat)


def quantile(values: list[float], frac: float) -> float:
    """Order statistic: the ceil(frac·n)-th smallest value."""
    ranked = sorted(values)
    if not ranked:
        return math.nan
    idx = min(len(ranked) - 1, max(0, math.ceil(frac * len(ranked)) - 1))
    return ranked[idx]


JOIN_BUCKETS = ("0", "1", "2-5", ">=6")
FILTER_BUCKETS = ("1", "2", "3", "4", "5+")


def join_bucket(joins: int) -> str:
    if joins == 0:
        return "0"
    if joins == 1:
        return "1"
    if joins <= 5:
        return "2-5"
    return ">=6"


def filter_bucket(filters: int) -> str:
    return str(filters) if filters <= 4 else "5+"


@dataclass
class QErrorStats:
    per_method: dict[str, dict[str, float]] = field(default_factory=dict)
    join_spread: dict[str, int] = field(default_factory=dict)
    filter_spread: dict[str, int] = field(default_factory=dict)


def compute_stats(records: list[dict]) -> QErrorStats:
    stats = QErrorStats()
    methods = sorted({r["method"] for r in records})
    for method in methods:
        qs = [r["q_error"] for r in records if r["method"] == method]
        stats.per_method[method] = {
            "median": quantile(qs, 0.5),
            "p90": quantile(qs, 0.9),
            "p95": quantile(qs, 0.95),
            "p99": quantile(qs, 0.99),
            "max": max(qs),
            "mean": sum(qs) / len(qs),
        }
    seen_queries = {r["query_id"]: r for r in records}
    for rec in seen_queries.values():
        jb, fb = join_bucket(rec["joins"]), filter_bucket(rec["filters"])
        stats.join_spread[jb] = stats.join_spread.get(jb, 0) + 1
        stats.filter_spread[fb] = stats.filter_spread.get(fb, 0) + 1
    return stats


def run_bench(
    catalog: Catalog,
    methods: dict[str, object],
    queries: list[Query],
    jobs: int = 1,
    max_rows: int | None = None,
) -> tuple[list[dict], list[dict]]:
    """Score every method against the oracle on every query.

    ``methods`` maps a name to a callable Query -> Estimate.  Returns
    (records, skipped); a query lands in ``skipped`` with its reason when
    the oracle raises a resource error — never silently.
    """
    ordered = sorted(queries, key=canonical_json)

    def score(item) -> tuple[list[dict], dict | None]:
        qid, query = item
        oracle_kwargs = {} if max_rows is None else {"max_rows": max_rows}
        try:
            truth: Truth = exact(catalog, query, **oracle_kwargs)
        except OracleError as exc:
            return [], {"query_id": qid, "query": canonical_json(query), "reason": str(exc)}
        true_card = max(truth.qualifying, 1.0)
        rows = []
        for name in sorted(methods):
            est = methods[name](query)
            rows.append(
                {
                    "query_id": qid,
                    "query": canonical_json(query),
                    "joins": query.join_count(),
                    "filters": query.filter_count(),
                    "method": name,
                    "est_selectivity": est.selectivity,
                    "est_cardinality": est.cardinality,
                    "true_selectivity": truth.selectivity,
                    "true_cardinality": truth.qualifying,
                    "q_error": q_error(true_card, max(est.cardinality, 1.0)),
                    "elapsed": est.elapsed,
                }
            )
        return rows, None

    items = list(enumerate(ordered))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(score, items))
    else:
        results = [score(item) for item in items]
    records, skipped = [], []
    for rows, skip in results:
        records.extend(rows)
        if skip is not None:
            skipped.append(skip)
    return records, skipped


PER_QUERY_COLUMNS = (
    "query_id", "query", "joins", "filters", "method",
    "est_selectivity", "est_cardinality", "true_selectivity",
    "true_cardinality", "q_error",
)


def emit_report(
    stats: QErrorStats,
    records: list[dict],
    path: str | Path,
    skipped: list[dict] | None = None,
    build_info: dict | None = None,
    figures: bool = True,
) -> list[Path]:
    """Write the report files and return their paths.

    Per-query rows exclude timing so repeated runs with identical seeds are
    byte-identical; timing appears aggregated in the bucket table and the
    JSON summary.
    """
    outdir = Path(path)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    per_query = outdir / "per_query.csv"
    with open(per_query, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=PER_QUERY_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(records)
    written.append(per_query)

    aggregate = outdir / "aggregate.csv"
    with open(aggregate, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "median", "p90", "p95", "p99", "max", "mean"])
        for method, row in sorted(stats.per_method.items()):
            writer.writerow(
                [method] + [f"{row[c]:.6g}" for c in ("median", "p90", "p95", "p99", "max", "mean")]
            )
    written.append(aggregate)

    sorted_q = outdir / "sorted_q.csv"
    with open(sorted_q, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "rank", "q_error"])
        for method in sorted(stats.per_method):
            qs = sorted(r["q_error"] for r in records if r["method"] == method)
            for rank, q in enumerate(qs, start=1):
                writer.writerow([method, rank, f"{q:.6g}"])
    written.append(sorted_q)

    timing = outdir / "timing_buckets.csv"
    with open(timing, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "join_bucket", "count", "mean_ms", "std_ms"])
        for method in sorted(stats.per_method):
            for bucket in JOIN_BUCKETS:
                times = [
                    r["elapsed"] * 1000.0
                    for r in records
                    if r["method"] == method and join_bucket(r["joins"]) == bucket
                ]
                if not times:
                    continue
                mean = sum(times) / len(times)
                std = math.sqrt(sum((t - mean) ** 2 for t in times) / len(times))
                writer.writerow([method, bucket, len(times), f"{mean:.4f}", f"{std:.4f}"])
    written.append(timing)

    summary = outdir / "summary.json"
    summary.write_text(
        json.dumps(
            {
                "methods": stats.per_method,
                "join_spread": stats.join_spread,
                "filter_spread": stats.filter_spread,
                "queries": len({r["query_id"] for r in records}),
                "skipped": skipped or [],
                "build_info": build_info or {},
            },
            indent=2,
            sort_keys=True,
        )
    )
    written.append(summary)

    if figures:
        from .figures import render_sorted_q, render_timing_buckets

        written.append(render_sorted_q(records, outdir / "sorted_q.png"))
        written.append(render_timing_buckets(records, outdir / "timing_buckets.png"))
    return written
