"""Benchmark runner, report aggregation, and artifact files (paths, reports, CSV).

Every (sampler, scenario, repeat) cell runs with a seed derived from the base
seed, so reports are reproducible; wall-clock fields are the only
machine-dependent values, which is why iteration and projection-call counts are
reported alongside them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import jsonio
from .errors import ContractError, SchemaError
from .planner import Path, PlannerParams, derive_params, plan
from .sampler import make_sampler
from .scenario import Scenario, derive_seed, query_context

REPORT_FORMAT = "cmplan-report/1"
PATH_FORMAT = "cmplan-path/1"

CSV_FIELDS = [
    "sampler",
    "scenario_id",
    "repeat",
    "seed",
    "success",
    "iterations",
    "nodes",
    "projection_calls",
    "wall_time_ms",
    "path_length",
]

METRICS = ("iterations", "nodes", "projection_calls", "wall_time_ms")


@dataclass
class BenchRecord:
    sampler: str
    scenario_id: str
    repeat: int
    seed: int
    success: bool
    iterations: int
    nodes: int
    projection_calls: int
    wall_time_ms: float
    path_length: float | None


def run_benchmark(
    scenarios,
    sampler_kinds,
    params: PlannerParams,
    base_seed: int,
    repeats: int = 1,
    net=None,
    split: str | None = "test",
    exploit_budget: float = 50,
) -> list:
    """Run every requested sampler on every (filtered) scenario ``repeats``
    times and return the raw records."""
    if repeats < 1:
        raise ContractError("repeats must be >= 1")
    needs_net = [k for k in sampler_kinds if k in ("neural", "hybrid")]
    if needs_net and net is None:
        raise ContractError(f"sampler(s) {needs_net} need trained weights")
    chosen = [s for s in scenarios if split in (None, "all") or s.split == split]
    records = []
    for kind in sampler_kinds:
        for scn in chosen:
            for rep in range(repeats):
                run_seed = derive_seed(base_seed, kind, scn.id, rep)
                run_params = derive_params(params, run_seed)
                sampler = make_sampler(kind, net=net, exploit_budget=exploit_budget)
                ctx = query_context(scn, run_seed)
                result = plan(
                    scn.constraint,
                    scn.chain,
                    scn.world,
                    sampler,
                    scn.c_init,
                    scn.c_goal,
                    run_params,
                    ctx,
                )
                records.append(
                    BenchRecord(
                        sampler=kind,
                        scenario_id=scn.id,
                        repeat=rep,
                        seed=run_seed,
                        success=result.success,
                        iterations=result.iterations,
                        nodes=result.nodes_expanded,
                        projection_calls=result.projection_calls,
                        wall_time_ms=result.wall_time_ms,
                        path_length=result.path.length() if result.success else None,
                    )
                )
    return records


def quantile(values, p: float) -> float:
    """Linear-interpolation quantile on sorted data: index h = (n-1)p."""
    xs = sorted(float(v) for v in values)
    if not xs:
        raise ContractError("quantile of empty data")
    h = (len(xs) - 1) * p
    lo = math.floor(h)
    hi = math.ceil(h)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


def stat_block(values) -> dict:
    """mean / population stddev / median / quartiles / iqr / min / max."""
    xs = [float(v) for v in values]
    n = len(xs)
    if n == 0:
        raise ContractError("stat_block of empty data")
    mean = sum(xs) / n
    var = sum((x - mean) ** 2 for x in xs) / n
    q25 = quantile(xs, 0.25)
    q75 = quantile(xs, 0.75)
    return {
        "count": n,
        "mean": mean,
        "stddev": math.sqrt(var),
        "median": quantile(xs, 0.5),
        "q25": q25,
        "q75": q75,
        "iqr": q75 - q25,
        "min": min(xs),
        "max": max(xs),
    }


def aggregate(records) -> dict:
    """Per-sampler aggregates over all records; path_length aggregates cover
    only successful runs (None when there were none)."""
    out = {}
    for kind in sorted({r.sampler for r in records}):
        rs = [r for r in records if r.sampler == kind]
        entry = {
            "runs": len(rs),
            "success_rate": sum(1 for r in rs if r.success) / len(rs),
        }
        for metric in METRICS:
            entry[metric] = stat_block([getattr(r, metric) for r in rs])
        lengths = [r.path_length for r in rs if r.path_length is not None]
        entry["path_length"] = stat_block(lengths) if lengths else None
        out[kind] = entry
    return out


def format_table(aggregates: dict) -> str:
    lines = [
        f"{'sampler':<10} {'success':>8} {'iters med':>10} {'iters iqr':>10} "
        f"{'iters mean±sd':>18} {'wall ms med':>12}"
    ]
    for kind, agg in aggregates.items():
        it = agg["iterations"]
        lines.append(
            f"{kind:<10} {agg['success_rate']:>8.1%} {it['median']:>10.1f} {it['iqr']:>10.1f} "
            f"{it['mean']:>10.1f}±{it['stddev']:<6.1f} {agg['wall_time_ms']['median']:>12.1f}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Artifact files


def save_report(path, records, base_seed: int) -> None:
    doc = {
        "format": REPORT_FORMAT,
        "seed": base_seed,
        "records": [asdict(r) for r in records],
        "aggregates": aggregate(records),
    }
    jsonio.dump(path, doc)


def load_report(path, verify: bool = True):
    """Load a report; with ``verify`` the stored aggregates are recomputed from
    the raw records and must match exactly."""
    doc = jsonio.load(path)
    jsonio.check_format(doc, REPORT_FORMAT, str(path))
    records = []
    for i, entry in enumerate(jsonio.require(doc, "records", "$")):
        where = f"$.records[{i}]"
        kwargs = {key: jsonio.require(entry, key, where) for key in CSV_FIELDS}
        records.append(BenchRecord(**kwargs))
    aggregates = jsonio.require(doc, "aggregates", "$")
    if verify and aggregates != aggregate(records):
        raise SchemaError("stored aggregates do not match the raw records", path="$.aggregates")
    return records, aggregates, jsonio.require(doc, "seed", "$")


def write_records_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for r in records:
            row = asdict(r)
            row["success"] = int(r.success)
            row["wall_time_ms"] = repr(r.wall_time_ms)
            row["path_length"] = "" if r.path_length is None else repr(r.path_length)
            writer.writerow(row)


def read_records_csv(path) -> list:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                BenchRecord(
                    sampler=row["sampler"],
                    scenario_id=row["scenario_id"],
                    repeat=int(row["repeat"]),
                    seed=int(row["seed"]),
                    success=bool(int(row["success"])),
                    iterations=int(row["iterations"]),
                    nodes=int(row["nodes"]),
                    projection_calls=int(row["projection_calls"]),
                    wall_time_ms=float(row["wall_time_ms"]),
                    path_length=float(row["path_length"]) if row["path_length"] else None,
                )
            )
    return records


def save_path_file(path, plan_path: Path, scenario_id: str, sampler: str, seed: int) -> None:
    doc = {
        "format": PATH_FORMAT,
        "scenario_id": scenario_id,
        "sampler": sampler,
        "seed": seed,
        "waypoints": np.asarray(plan_path.waypoints).tolist(),
        "metadata": plan_path.metadata,
    }
    jsonio.dump(path, doc)


def load_path_file(path):
    doc = jsonio.load(path)
    jsonio.check_format(doc, PATH_FORMAT, str(path))
    waypoints = np.array(jsonio.require(doc, "waypoints", "$"), dtype=float)
    plan_path = Path(waypoints, dict(jsonio.require(doc, "metadata", "$")))
    return plan_path, jsonio.require(doc, "scenario_id", "$")
