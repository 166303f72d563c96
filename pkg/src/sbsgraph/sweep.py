"""Parameter sweeps over a family of surfaces.

Every sample is a full, independent run in its own process.  Rows come back
in parameter order regardless of completion order, and a failing sample is
recorded with its diagnostics instead of stopping the sweep.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .pipeline import PipelineError, RunConfig, render_to, run, write_json

FAMILIES = ("sheared-decagon",)


def parse_range(text: str) -> list[float]:
    """``"A:B:N"`` -> N evenly spaced values; ``"C"`` -> ``[C]``.

    >>> parse_range("0:0.4:5")
    [0.0, 0.1, 0.2, 0.30000000000000004, 0.4]
    >>> parse_range("1.1")
    [1.1]
    """
    parts = text.split(":")
    if len(parts) == 1:
        return [float(parts[0])]
    if len(parts) != 3:
        raise ValueError(f"range must be A:B:N or a single value, got {text!r}")
    a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    if n < 1:
        raise ValueError("sample count must be >= 1")
    if n == 1:
        return [a]
    return [float(x) for x in np.linspace(a, b, n)]


def family_surface_spec(family: str, s: float, t: float) -> str:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")
    return f"builtin:{family}(s={s!r},t={t!r})"


def sample_dirname(index: int, s: float, t: float) -> str:
    return f"{index:03d}_s{s:.6f}_t{t:.6f}"


def run_sample(task) -> dict:
    """Worker entry point; never raises."""
    index, s, t, config_dict, out_dir = task
    t0 = time.perf_counter()
    row = {"index": index, "s": s, "t": t}
    try:
        config = RunConfig.from_dict(config_dict)
        outcome = run(config)
        res = outcome.results
        counts = res["critical_points"]["counts"]
        row.update(
            status="ok",
            minima=counts["minimum"],
            saddles=counts["saddle"],
            stratum=res["surface"]["stratum"],
            euler=res["graph"]["euler_characteristic"],
            a_sbs=res["a_sbs"],
            checks={k: v["passed"] for k, v in res["checks"].items()},
            passed=res["passed"],
            unresolved=res["trajectories"]["summary"]["unresolved"],
        )
        if out_dir is not None:
            d = os.path.join(out_dir, "samples", sample_dirname(index, s, t))
            os.makedirs(d, exist_ok=True)
            write_json(os.path.join(d, "results.json"), res)
            write_json(os.path.join(d, "manifest.json"), outcome.manifest)
            render_to(res, os.path.join(d, "plot.svg"))
    except PipelineError as exc:
        row.update(status="error", passed=False, error={"stage": exc.stage, "message": str(exc)})
    except Exception as exc:  # noqa: BLE001 - isolation: record and continue
        row.update(status="error", passed=False, error={"stage": "sample", "message": f"{type(exc).__name__}: {exc}"})
    row["wall_time"] = time.perf_counter() - t0
    return row


def _diffs(rows):
    a = [complex(*r["a_sbs"]) if r.get("status") == "ok" else None for r in rows]
    out = []
    for x, y in zip(a, a[1:]):
        out.append(None if x is None or y is None else abs(y - x))
    return a, out


def _line_report(rows, axis: str) -> dict:
    a, diffs = _diffs(rows)
    valid = [d for d in diffs if d is not None]
    coarse_rows = rows[::2]
    _, coarse = _diffs(coarse_rows)
    coarse_valid = [d for d in coarse if d is not None]
    max_fine = max(valid) if valid else None
    max_coarse = max(coarse_valid) if coarse_valid else None
    candidates = []
    for k in range(len(a) - 1):
        x, y = a[k], a[k + 1]
        if x is None or y is None:
            continue
        if x.real * y.real < 0 or x.imag * y.imag < 0:
            candidates.append({"between": [rows[k][axis], rows[k + 1][axis]], "reason": "sign change"})
    for k in range(1, len(a) - 1):
        x, y, z = a[k - 1], a[k], a[k + 1]
        if None in (x, y, z):
            continue
        if abs(y) < abs(x) and abs(y) < abs(z):
            candidates.append({"at": rows[k][axis], "reason": "local minimum of |A_SBS|", "abs": abs(y)})
    return {
        "axis": axis,
        "values": [r[axis] for r in rows],
        "differences": diffs,
        "max_difference": max_fine,
        "max_difference_half_density": max_coarse,
        "density_ratio": (max_fine / max_coarse) if max_fine and max_coarse else None,
        "zero_set_candidates": candidates,
    }


def continuity_report(rows, s_values, t_values) -> dict:
    """Discrete differences of A_SBS along each grid line of the sweep."""
    grid = {(r["s"], r["t"]): r for r in rows}
    lines = []
    if len(s_values) > 1:
        for t in t_values:
            lines.append({"fixed": {"t": t}, **_line_report([grid[(s, t)] for s in s_values], "s")})
    if len(t_values) > 1:
        for s in s_values:
            lines.append({"fixed": {"s": s}, **_line_report([grid[(s, t)] for t in t_values], "t")})
    maxima = [ln["max_difference"] for ln in lines if ln["max_difference"] is not None]
    return {"lines": lines, "max_difference": max(maxima) if maxima else None}


def sweep(
    family: str,
    s_values,
    t_values,
    base: RunConfig | None = None,
    out_dir: str | None = None,
    workers: int | None = None,
) -> dict:
    """Run every (s, t) sample and return the sweep table with its reports."""
    base = base or RunConfig()
    tasks = []
    for s in s_values:
        for t in t_values:
            cfg = replace(base, surface=family_surface_spec(family, s, t), refine=0, out=None)
            tasks.append((len(tasks), float(s), float(t), cfg.to_dict(), out_dir))
    workers = workers or os.cpu_count() or 1
    t0 = time.perf_counter()
    if workers <= 1 or len(tasks) <= 1:
        rows = [run_sample(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            rows = list(pool.map(run_sample, tasks))
    wall = time.perf_counter() - t0
    n_fail = sum(not r.get("passed") for r in rows)
    return {
        "format": "sbsgraph-sweep/1",
        "family": family,
        "s": list(s_values),
        "t": list(t_values),
        "config": {k: v for k, v in base.to_dict().items() if k not in ("surface", "refine")},
        "rows": rows,
        "continuity": continuity_report(rows, [float(x) for x in s_values], [float(x) for x in t_values]),
        "summary": {
            "samples": len(rows),
            "passed": len(rows) - n_fail,
            "failed": n_fail,
            "errors": sum(r["status"] == "error" for r in rows),
            "unresolved_trajectories": sum(r.get("unresolved", 0) for r in rows),
            "wall_time": wall,
            "workers": workers,
        },
        "passed": n_fail == 0,
    }
