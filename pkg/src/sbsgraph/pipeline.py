"""End-to-end pipeline: surface -> mesh -> solve -> critical points -> separatrices -> graph.

:func:`analyze` runs the numerical stages on one surface and keeps every
intermediate object; :func:`results_document` turns an analysis into the
plain, deterministic results document written by ``sbs run``.  Wall-clock
data never enters that document (it goes to the manifest), so identical
configurations produce byte-identical results.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from importlib import metadata

import numpy as np

from . import flow as flow_mod
from .flow import ASCENDING, CONE, CRITICAL, DESCENDING, FlowParams, UNRESOLVED
from .graph import SBSGraph, assemble, edges_have_marked_points, homotopy_check
from .liouville import flux_check, solve, total_area
from .mesh import Mesh, refine, triangulate
from .morse import MAXIMUM, MINIMUM, SADDLE, morse_check, search_critical_points, watershed_counts
from .surface import (
    TranslationSurface,
    builtin_surface,
    dump_surface,
    load_surface,
    parse_builtin_spec,
    rotation_order,
    scale,
    validate,
)

FORMAT = "sbsgraph-results/1"
DEFAULT_H_REL = 0.025  # default mesh size as a fraction of the diameter

AREA_TOL = 0.01
FLUX_TOL = 0.02
SYMMETRY_TOL = 1e-2  # times the diameter


class PipelineError(RuntimeError):
    """A stage of the pipeline raised; ``stage`` names it."""

    def __init__(self, stage: str, error: BaseException):
        self.stage = stage
        self.error = error
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")


@contextlib.contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is attributed
        raise PipelineError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run.  ``out`` does not affect results."""

    surface: str = "builtin:octagon"
    h: float | None = None  # None: DEFAULT_H_REL * diameter
    beta: float = 0.6
    h_min: float | None = None  # None: h / 50
    tol: float = 1e-8
    max_newton: int = 50
    seed_density: float = 1.0
    eps_deg: float | None = None
    flow_rtol: float = 1e-6
    flow_max_steps: int = 1_000_000
    flow_max_length: float = 50.0
    orientation: str = "inc"
    scale: tuple = (1.0, 0.0)
    refine: int = 0
    out: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "scale", tuple(float(x) for x in self.scale))
        positive = {
            "beta": self.beta,
            "tol": self.tol,
            "max_newton": self.max_newton,
            "seed_density": self.seed_density,
            "flow_rtol": self.flow_rtol,
            "flow_max_steps": self.flow_max_steps,
            "flow_max_length": self.flow_max_length,
        }
        for opt in ("h", "h_min", "eps_deg"):
            if getattr(self, opt) is not None:
                positive[opt] = getattr(self, opt)
        for key, val in positive.items():
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ValueError(f"{key} must be positive, got {val!r}")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.orientation not in ("inc", "dec"):
            raise ValueError(f"orientation must be 'inc' or 'dec', got {self.orientation!r}")
        if self.refine < 0:
            raise ValueError("refine must be >= 0")
        if complex(*self.scale) == 0:
            raise ValueError("scale must be nonzero")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d["scale"] = list(self.scale)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


def load_config_surface(spec: str) -> TranslationSurface:
    """``builtin:NAME`` / ``builtin:NAME(k=v,...)`` or a path to a surface file."""
    if spec.startswith("builtin:"):
        name, params = parse_builtin_spec(spec[len("builtin:"):])
        return builtin_surface(name, **params)
    return load_surface(spec)


# ---------------------------------------------------------------------------
# JSON helpers


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (complex, np.complexfloating)):
        return [_clean(x.real), _clean(x.imag)]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def canonical_json(doc) -> str:
    return json.dumps(_clean(doc), sort_keys=True, indent=1, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# analysis


@dataclass
class Analysis:
    surface: TranslationSurface
    config: RunConfig
    mesh: Mesh
    field: object
    area: float
    fluxes: list
    search: object
    watershed: dict
    morse: object
    params: FlowParams
    trajectories: list
    connections: list
    crossings: list
    monotonicity_tolerance: float
    graph: SBSGraph
    homotopy: object
    checks: dict
    timings: dict = field(default_factory=dict)

    @property
    def critical_points(self):
        return list(self.search.points)

    @property
    def passed(self) -> bool:
        return all(c["passed"] is not False for c in self.checks.values())


def default_h(surface: TranslationSurface, config: RunConfig) -> float:
    return config.h if config.h is not None else DEFAULT_H_REL * surface.diameter


def build_surface(config: RunConfig) -> TranslationSurface:
    surface = load_config_surface(config.surface)
    c = complex(*config.scale)
    if c != 1:
        surface = scale(surface, c)
    return surface


def analyze(surface: TranslationSurface, config: RunConfig, mesh: Mesh | None = None) -> Analysis:
    """Run every numerical stage; failures raise :class:`PipelineError`."""
    timings: dict = {}
    g, m = surface.genus, surface.n_zeros
    if mesh is None:
        with _stage("mesh", timings):
            mesh = triangulate(surface, default_h(surface, config), config.beta, config.h_min)
    with _stage("liouville", timings):
        fld = solve(mesh, tol=config.tol, max_newton=config.max_newton)
        area = total_area(fld)
        fluxes = [flux_check(fld, c) for c in surface.cone_classes]
    with _stage("morse", timings):
        search = search_critical_points(fld, config.seed_density, eps_deg=config.eps_deg)
        ws = watershed_counts(fld)
        morse = morse_check(search.counts(), g, m)
    cps = list(search.points)
    with _stage("flow", timings):
        base = FlowParams(
            rtol=config.flow_rtol, max_steps=config.flow_max_steps, max_length=config.flow_max_length
        )
        params = flow_mod.resolve_params(fld, cps, base)
        trajs = flow_mod.trace_all(fld, cps, params)
        conns = flow_mod.saddle_connections(trajs, cps)
        cross = flow_mod.crossings(surface, trajs, cps, 4.0 * mesh.h_min)
        mono_tol = flow_mod.monotonicity_tolerance(fld, params)
    with _stage("graph", timings):
        unresolved = any(t.end.kind == UNRESOLVED for t in trajs)
        graph = assemble(cps, trajs, config.orientation, waive_unresolved=unresolved)
        hom = homotopy_check(graph, g, m)
    an = Analysis(
        surface, config, mesh, fld, area, fluxes, search, ws, morse, params, trajs, conns, cross,
        mono_tol, graph, hom, {}, timings,
    )
    an.checks = _checks(an)
    return an


def _check(passed, value=None, limit=None, note=""):
    out = {"passed": None if passed is None else bool(passed)}
    if value is not None:
        out["value"] = value
    if limit is not None:
        out["limit"] = limit
    if note:
        out["note"] = note
    return out


def _checks(an: Analysis) -> dict:
    s = an.surface
    g, m = s.genus, s.n_zeros
    counts = an.search.counts()
    checks = {}
    expected_area = 2 * g - 2
    area_err = abs(an.area - expected_area) / expected_area
    checks["area"] = _check(area_err <= AREA_TOL, area_err, AREA_TOL)
    for rep in an.fluxes:
        checks[f"flux_cone_{rep.cone}"] = _check(rep.passed(FLUX_TOL), rep.rel_error, FLUX_TOL)
    checks["no_maxima"] = _check(counts[MAXIMUM] == 0, counts[MAXIMUM], 0)
    checks["has_minimum"] = _check(counts[MINIMUM] >= 1, counts[MINIMUM])
    checks["count_identity"] = _check(
        an.morse.passed, counts[SADDLE] - counts[MINIMUM], 2 * g - 2 + m, an.morse.note
    )
    ws = an.watershed
    ws_ok = ws[MINIMUM] == counts[MINIMUM] and ws[SADDLE] == counts[SADDLE] and ws[MAXIMUM] == 0
    checks["watershed_agrees"] = _check(
        ws_ok, [ws[MINIMUM], ws[SADDLE], ws[MAXIMUM]], [counts[MINIMUM], counts[SADDLE], 0]
    )
    desc = [t for t in an.trajectories if t.direction == DESCENDING]
    checks["descending_finite"] = _check(
        all(t.end.kind == CRITICAL for t in desc), sum(t.end.kind == CRITICAL for t in desc), len(desc)
    )
    n_unres = sum(t.end.kind == UNRESOLVED for t in an.trajectories)
    checks["no_unresolved"] = _check(n_unres == 0, n_unres, 0)
    worst = max((t.monotonicity_violation() for t in an.trajectories), default=0.0)
    checks["monotone_trajectories"] = _check(worst <= an.monotonicity_tolerance, worst, an.monotonicity_tolerance)
    checks["no_crossings"] = _check(not an.crossings, len(an.crossings), 0)
    hom = an.homotopy
    checks["graph_connected"] = _check(an.graph.connected, an.graph.n_components, 1)
    checks["graph_euler"] = _check(hom.euler_characteristic == hom.expected, hom.euler_characteristic, hom.expected)
    checks["edges_marked"] = _check(edges_have_marked_points(an.graph))
    k = rotation_order(s)
    if k >= 2:
        a = abs(an.graph.a_sbs)
        lim = SYMMETRY_TOL * s.diameter
        checks["symmetry_a_sbs"] = _check(a <= lim, a, lim, f"rotation order {k}")
    return checks


# ---------------------------------------------------------------------------
# document


def _probe_points(surface: TranslationSurface):
    """Fixed evaluation points: each polygon's centroid and halfway to each corner."""
    out = []
    for p, poly in enumerate(surface.polygons):
        c = complex(np.mean(poly))
        out.append((p, c))
        out.extend((p, c + 0.5 * (complex(v) - c)) for v in poly)
    return out


def _trajectory_entry(t, surface) -> dict:
    d = t.to_dict()
    d["pieces"] = [[int(p), z0.real, z0.imag, z1.real, z1.imag] for p, z0, z1 in t.pieces(surface)]
    d["monotonicity_violation"] = t.monotonicity_violation()
    return d


def surface_report(surface: TranslationSurface) -> dict:
    rep = validate(surface)
    return {
        "name": surface.name,
        "definition": json.loads(dump_surface(surface)),
        "genus": rep.genus,
        "stratum": list(rep.stratum),
        "n_zeros": surface.n_zeros,
        "cone_classes": [
            {
                "class": c,
                "order": surface.class_orders[c],
                "corners": [list(pk) for pk in surface.vertex_classes[c]],
            }
            for c in surface.cone_classes
        ],
        "diameter": surface.diameter,
        "flat_area": surface.area,
        "rotation_order": rotation_order(surface),
        "generic": rep.generic,
        "violations": list(rep.violations),
    }


def results_document(an: Analysis, convergence: dict | None = None) -> dict:
    fld, mesh = an.field, an.mesh
    lo, hi = fld.u_range()
    g = an.surface.genus
    trajs = an.trajectories
    by_class = {"finite": 0, "infinite": 0, "unresolved": 0}
    for t in trajs:
        by_class[flow_mod.classify_trajectory(t)] += 1
    doc = {
        "format": FORMAT,
        "config": an.config.to_dict(),
        "surface": surface_report(an.surface),
        "mesh": {
            "h": mesh.h,
            "beta": mesh.beta,
            "h_min": mesh.h_min,
            "level": mesh.level,
            "nodes": mesh.n_nodes,
            "dofs": mesh.n_dofs,
            "triangles": len(mesh.triangles),
        },
        "solver": {
            "newton_iterations": fld.newton_iterations,
            "residual": fld.residual,
            "residual_history": list(fld.residual_history),
            "u_range": [lo, hi],
            "total_area": an.area,
            "expected_area": 2 * g - 2,
            "flux": [
                {
                    "cone": r.cone,
                    "order": r.order,
                    "radius": r.radius,
                    "net_flux": r.net_flux,
                    "expected": r.expected,
                    "rel_error": r.rel_error,
                }
                for r in an.fluxes
            ],
            "probes": [
                {"poly": p, "position": [z.real, z.imag], "u": float(fld.u(p, z, strict=False)[0])}
                for p, z in _probe_points(an.surface)
            ],
        },
        "critical_points": an.search.to_dict(),
        "watershed": dict(an.watershed),
        "morse": an.morse.to_dict(),
        "trajectories": {
            "params": {
                "eps_launch": an.params.eps_launch,
                "r_cp": an.params.r_cp,
                "r_cone": an.params.r_cone,
                "u_escape": an.params.u_escape,
                "rtol": an.params.rtol,
                "max_steps": an.params.max_steps,
                "max_length": an.params.max_length,
            },
            "summary": {
                **by_class,
                "ascending": sum(t.direction == ASCENDING for t in trajs),
                "descending": sum(t.direction == DESCENDING for t in trajs),
                "cone_escapes": sum(t.end.kind == CONE for t in trajs),
                "saddle_connections": [[c.source, c.target, c.sign] for c in an.connections],
                "crossings": [list(c) for c in an.crossings],
                "max_monotonicity_violation": max((t.monotonicity_violation() for t in trajs), default=0.0),
                "monotonicity_tolerance": an.monotonicity_tolerance,
            },
            "items": [_trajectory_entry(t, an.surface) for t in trajs],
        },
        "graph": an.graph.to_dict(an.critical_points),
        "homotopy": an.homotopy.to_dict(),
        "a_sbs": [an.graph.a_sbs.real, an.graph.a_sbs.imag],
        "a_sbs_abs": abs(an.graph.a_sbs),
        "checks": an.checks,
        "passed": an.passed,
    }
    if convergence is not None:
        doc["convergence"] = convergence
        doc["passed"] = doc["passed"] and all(
            c["passed"] is not False for c in convergence.get("checks", {}).values()
        )
    return _clean(doc)


# ---------------------------------------------------------------------------
# convergence mode


def _orders(errors):
    out = []
    for a, b in zip(errors, errors[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else None)
    return out


def _richardson(values):
    """Observed orders from consecutive differences of a sequence (needs 3+ values)."""
    diffs = [float(np.max(np.abs(np.asarray(b) - np.asarray(a)))) for a, b in zip(values, values[1:])]
    return diffs, _orders(diffs)


def convergence_report(levels: list) -> dict:
    """Observed orders across nested refinements (``levels[0]`` is the coarsest)."""
    s = levels[0].surface
    expected_area = 2 * s.genus - 2
    area = [an.area for an in levels]
    a = [an.graph.a_sbs for an in levels]
    probes = _probe_points(s)
    u = [np.array([float(an.field.u(p, z, strict=False)[0]) for p, z in probes]) for an in levels]
    area_err = [abs(x - expected_area) for x in area]
    rep = {
        "levels": [
            {
                "level": an.mesh.level,
                "h": an.mesh.h,
                "dofs": an.mesh.n_dofs,
                "total_area": an.area,
                "a_sbs": [an.graph.a_sbs.real, an.graph.a_sbs.imag],
                "counts": an.search.counts(),
                "passed": an.passed,
            }
            for an in levels
        ],
        "area": {"errors": area_err, "orders": _orders(area_err)},
    }
    u_diffs, u_orders = _richardson(u)
    rep["u_probes"] = {"differences": u_diffs, "orders": u_orders}
    if rotation_order(s) >= 2:
        errs = [abs(x) for x in a]
        rep["a_sbs"] = {"reference": "zero by symmetry", "errors": errs, "orders": _orders(errs)}
    else:
        diffs, orders = _richardson([[x.real, x.imag] for x in a])
        rep["a_sbs"] = {"reference": "successive differences", "differences": diffs, "orders": orders}
    base = levels[0].search.counts()
    stable = all(an.search.counts() == base for an in levels[1:])
    improving = all(b <= a for a, b in zip(area_err, area_err[1:]))
    rep["checks"] = {
        "counts_stable": _check(stable, [an.search.counts() for an in levels]),
        "levels_pass": _check(all(an.passed for an in levels)),
    }
    rep["area"]["improving"] = improving
    return rep


# ---------------------------------------------------------------------------
# run


@dataclass
class RunOutcome:
    results: dict
    manifest: dict
    analysis: Analysis | None

    @property
    def passed(self) -> bool:
        return bool(self.results.get("passed"))

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 2


def versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("sbsgraph", "numpy", "scipy", "triangle"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def run(config: RunConfig, surface: TranslationSurface | None = None) -> RunOutcome:
    """Execute a configured run.  Raises :class:`PipelineError` on stage failures."""
    t0 = time.perf_counter()
    started = datetime.now(timezone.utc)
    timings: dict = {}
    if surface is None:
        with _stage("surface", timings):
            surface = build_surface(config)
    an = analyze(surface, config)
    for k, v in an.timings.items():
        timings[k] = timings.get(k, 0.0) + v
    convergence = None
    if config.refine > 0:
        levels = [an]
        mesh = an.mesh
        for _ in range(config.refine):
            with _stage("mesh", timings):
                mesh = refine(mesh)
            lev = analyze(surface, config, mesh)
            for k, v in lev.timings.items():
                timings[f"refine_{mesh.level}_{k}"] = v
            levels.append(lev)
        convergence = convergence_report(levels)
    results = results_document(an, convergence)
    manifest = {
        "format": "sbsgraph-manifest/1",
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "wall_time": time.perf_counter() - t0,
        "timings": timings,
        "config_hash": config.digest(),
        "results_sha256": hashlib.sha256(canonical_json(results).encode()).hexdigest(),
        "versions": versions(),
        "argv": list(sys.argv),
        "pid": os.getpid(),
    }
    return RunOutcome(results, manifest, an)


def write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(doc))


def render_to(results: dict, path) -> None:
    from .render import render_svg

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_svg(results))


def write_run(out_dir, outcome: RunOutcome, svg: bool = True) -> dict:
    """Write ``results.json``, ``manifest.json`` and (optionally) ``plot.svg``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "results": os.path.join(out_dir, "results.json"),
        "manifest": os.path.join(out_dir, "manifest.json"),
    }
    write_json(paths["results"], outcome.results)
    write_json(paths["manifest"], outcome.manifest)
    if svg:
        paths["plot"] = os.path.join(out_dir, "plot.svg")
        render_to(outcome.results, paths["plot"])
    return paths
