"""Command-line entry point: build / estimate / oracle / workload / bench."""
from __future__ import annotations

import functools
import json
import logging
import os
import re
import sys
import time
from pathlib import Path

import click

from .baselines import (
    CORRELATED,
    UNIFORM,
    BaselineError,
    avi_estimate,
    draw_samples,
    sampling_estimate,
)
from .catalog import Catalog, CatalogError, load_schema
from .factor import FactorError
from .inference import InferenceError, estimate
from .linker import LinkerError, build_linked, load_model, save_model
from .oracle import OracleError, exact
from .query import QueryError, canonical_json, parse_query, to_dict
from .structure import StructureError
from .workload import (
    WorkloadError,
    compute_stats,
    emit_report,
    expand_workload,
    load_workload,
    run_bench,
)

_ERRORS = (
    CatalogError,
    FactorError,
    StructureError,
    LinkerError,
    QueryError,
    InferenceError,
    OracleError,
    BaselineError,
    WorkloadError,
)

log = logging.getLogger("linkedbn")


def _setup_logging() -> None:
    level = os.environ.get("LBN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _fail_cleanly(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _ERRORS as exc:
            message = " ".join(str(exc).split())
            click.echo(f"error: {type(exc).__name__}: {message}", err=True)
            sys.exit(1)

    return wrapper


def _read_query(source: str, schema):
    path = Path(source)
    if path.exists():
        return parse_query(path.read_text(), schema)
    return parse_query(source, schema)


@click.group()
def main() -> None:
    """Selectivity estimation with linked tree-shaped Bayesian networks."""
    _setup_logging()


@main.command()
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--k", "k", default=1, type=click.IntRange(min=0), show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--max-bins", default=32, type=click.IntRange(min=1), show_default=True)
@_fail_cleanly
def build(schema_path: str, k: int, out_path: str, max_bins: int) -> None:
    """Build a linked model from a schema + CSV data and write it to a file."""
    start = time.perf_counter()
    catalog = Catalog.load(schema_path, max_bins=max_bins)
    timings: dict[str, float] = {}
    model = build_linked(catalog, k, timings=timings)
    save_model(model, out_path)
    report = {
        "model": out_path,
        "k": k,
        "relations": {name: round(t, 6) for name, t in timings.items()},
        "construction_seconds": round(time.perf_counter() - start, 6),
        "model_bytes": Path(out_path).stat().st_size,
    }
    click.echo(json.dumps(report, sort_keys=True))


@main.command("estimate")
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_path", type=click.Path(exists=True))
@click.option("--query", "query_source", required=True)
@click.option("--method", default="linked", show_default=True,
              type=click.Choice(["linked", "avi", "sampling", "correlated"]))
@click.option("--rate", default=0.01, type=click.FloatRange(min=0, min_open=True, max=1),
              show_default=True, help="Sampling rate for the sampling methods.")
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--clamp/--no-clamp", default=True, show_default=True)
@_fail_cleanly
def cmd_estimate(schema_path, model_path, query_source, method, rate, seed, clamp):
    """Print a selectivity/cardinality estimate as one JSON line."""
    schema = load_schema(schema_path)
    query = _read_query(query_source, schema)
    if method == "linked":
        if model_path is None:
            raise InferenceError("--model is required for the linked method")
        model = load_model(model_path)
        est = estimate(model, query, clamp=clamp)
    else:
        catalog = Catalog.load(schema_path)
        if method == "avi":
            est = avi_estimate(catalog, query, clamp=clamp)
        else:
            mode = UNIFORM if method == "sampling" else CORRELATED
            samples = draw_samples(catalog, rate, seed, mode)
            est = sampling_estimate(samples, query, clamp=clamp)
    click.echo(
        json.dumps(
            {
                "selectivity": est.selectivity,
                "cardinality": est.cardinality,
                "join_size": est.join_size,
                "method": est.method,
                "elapsed": est.elapsed,
                "clamped": est.clamped,
            },
            sort_keys=True,
        )
    )


@main.command("oracle")
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--query", "query_source", required=True)
@_fail_cleanly
def cmd_oracle(schema_path, query_source):
    """Print the exact selectivity/cardinality as one JSON line."""
    schema = load_schema(schema_path)
    catalog = Catalog.load(schema_path)
    query = _read_query(query_source, schema)
    truth = exact(catalog, query)
    click.echo(
        json.dumps(
            {
                "selectivity": truth.selectivity,
                "qualifying": truth.qualifying,
                "join_rows": truth.join_rows,
                "elapsed": truth.elapsed,
            },
            sort_keys=True,
        )
    )


@main.group()
def workload() -> None:
    """Workload utilities."""


@workload.command("expand")
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--workload", "workload_path", required=True, type=click.Path(exists=True))
@click.option("--expand-cap", default=None, type=click.IntRange(min=1))
@click.option("--out", "out_path", type=click.Path())
@_fail_cleanly
def cmd_expand(schema_path, workload_path, expand_cap, out_path):
    """Expand seed queries; write one canonical query JSON per line."""
    schema = load_schema(schema_path)
    spec = load_workload(workload_path, schema)
    if expand_cap is not None:
        spec.expand_cap = expand_cap
    queries = expand_workload(spec, schema)
    if out_path:
        with open(out_path, "w") as fh:
            for q in queries:
                fh.write(canonical_json(q) + "\n")
    else:
        for q in queries:
            click.echo(canonical_json(q))
    click.echo(json.dumps({"expanded": len(queries)}), err=True)


_K_METHOD = re.compile(r"^k(\d+)$")
DEFAULT_METHODS = "avi,sampling,correlated,k0,k1,k2"


@main.command("bench")
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--workload", "workload_path", required=True, type=click.Path(exists=True))
@click.option("--methods", default=DEFAULT_METHODS, show_default=True,
              help="Comma list drawn from avi, sampling, correlated, k<N>.")
@click.option("--rate", default=0.01, type=click.FloatRange(min=0, min_open=True, max=1),
              show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--clamp/--no-clamp", default=True, show_default=True)
@click.option("--expand-cap", default=None, type=click.IntRange(min=1))
@click.option("--jobs", default=1, type=click.IntRange(min=1), show_default=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@_fail_cleanly
def cmd_bench(schema_path, workload_path, methods, rate, seed, clamp,
              expand_cap, jobs, figures, out_dir):
    """Expand a workload, score every method against the oracle, emit reports."""
    schema = load_schema(schema_path)
    catalog = Catalog.load(schema_path)
    spec = load_workload(workload_path, schema)
    if expand_cap is not None:
        spec.expand_cap = expand_cap
    spec.seed = seed
    queries = expand_workload(spec, schema)
    log.info("expanded workload to %d queries", len(queries))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    estimators: dict[str, object] = {}
    build_info: dict[str, dict] = {}
    for name in [m.strip() for m in methods.split(",") if m.strip()]:
        km = _K_METHOD.match(name)
        if km:
            k = int(km.group(1))
            started = time.perf_counter()
            model = build_linked(catalog, k)
            model_path = out / f"model_{name}.json"
            save_model(model, model_path)
            build_info[name] = {
                "construction_seconds": round(time.perf_counter() - started, 6),
                "model_bytes": model_path.stat().st_size,
            }
            estimators[name] = functools.partial(estimate, model, clamp=clamp)
        elif name == "avi":
            estimators[name] = functools.partial(avi_estimate, catalog, clamp=clamp)
        elif name in ("sampling", "correlated"):
            mode = UNIFORM if name == "sampling" else CORRELATED
            started = time.perf_counter()
            samples = draw_samples(catalog, rate, seed, mode)
            build_info[name] = {
                "construction_seconds": round(time.perf_counter() - started, 6),
                "rate": rate,
            }
            estimators[name] = functools.partial(sampling_estimate, samples, clamp=clamp)
        else:
            raise WorkloadError(f"unknown method {name!r}")
    records, skipped = run_bench(catalog, estimators, queries, jobs=jobs)
    stats = compute_stats(records)
    written = emit_report(
        stats, records, out, skipped=skipped, build_info=build_info, figures=figures
    )
    click.echo(json.dumps({"queries": len(queries), "skipped": len(skipped),
                           "files": [str(p) for p in written]}, sort_keys=True))


if __name__ == "__main__":
    main()
