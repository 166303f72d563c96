"""Acceptance suite: one test per criterion, each reporting a single PASS/FAIL line.

The verdict lines are printed as the tests run (visible with ``-s``) and are
repeated in the terminal summary under "acceptance criteria".
"""

import cmath
import functools
import math
import time

from sbsgraph.liouville import manufactured_disk_problem
from sbsgraph.mesh import refine
from sbsgraph.morse import MAXIMUM, MINIMUM, SADDLE
from sbsgraph.pipeline import RunConfig, analyze, canonical_json, run
from sbsgraph.surface import scale
from sbsgraph.sweep import parse_range, sweep

from conftest import VERDICTS, analysis

# area errors below this are treated as converged to roundoff
AREA_FLOOR = 1e-9


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


@functools.lru_cache(maxsize=None)
def refined(key: str):
    """The same fixture analysed on the once-refined (nested) mesh."""
    an = analysis(key)
    return analyze(an.surface, an.config, refine(an.mesh))


def _counts(an):
    c = an.search.counts()
    return c[MINIMUM], c[SADDLE], c[MAXIMUM]


def test_criterion_01_manufactured_disk():
    t0 = time.perf_counter()
    rep = manufactured_disk_problem()
    elapsed = time.perf_counter() - t0
    ok = rep.linf[0] <= 1e-3 and abs(rep.order_linf - 2.0) <= 0.3 and elapsed < 60.0
    verdict(
        1, ok,
        f"Linf {rep.linf[0]:.3e} at h={rep.h[0]:.4f} (limit 1e-3), "
        f"order {rep.order_linf:.2f} (2 +- 0.3), {elapsed:.1f}s (limit 60s)",
    )


def test_criterion_02_total_area():
    parts, ok = [], True
    for key in ("octagon", "decagon"):
        coarse, fine = analysis(key), refined(key)
        target = 2 * coarse.surface.genus - 2
        e0 = abs(coarse.area - target) / target
        e1 = abs(fine.area - target) / target
        improving = e1 < e0 or max(e0, e1) <= AREA_FLOOR
        ok &= e0 <= 1e-2 and e1 <= 1e-2 and improving
        parts.append(f"{key} rel err {e0:.2e} -> {e1:.2e}")
    verdict(2, ok, "; ".join(parts) + " (limit 1e-2, must not grow)")


def test_criterion_03_cone_flux():
    worst, n = 0.0, 0
    for key in ("octagon", "decagon", "sheared"):
        for rep in analysis(key).fluxes:
            worst = max(worst, rep.rel_error)
            n += 1
    verdict(3, worst <= 0.02, f"worst relative flux error {worst:.2e} over {n} cones (limit 2e-2)")


def test_criterion_04_extrema_and_stability():
    parts, ok = [], True
    for key in ("octagon", "decagon", "sheared"):
        c0, c1 = _counts(analysis(key)), _counts(refined(key))
        ok &= c0[2] == 0 and c1[2] == 0 and c0[0] >= 1 and c0 == c1
        parts.append(f"{key} (min,sad,max) {c0} -> {c1}")
    verdict(4, ok, "; ".join(parts))


def test_criterion_05_count_identity():
    parts, ok = [], True
    for key, expected in (("octagon", 3), ("decagon", 4)):
        an = analysis(key)
        n_min, n_sad, _ = _counts(an)
        ws = an.watershed
        agree = (ws[MINIMUM], ws[SADDLE], ws[MAXIMUM]) == (n_min, n_sad, 0)
        ok &= n_sad - n_min == expected and agree
        parts.append(
            f"{key} #saddle-#min={n_sad - n_min} (want {expected}), "
            f"watershed {ws[MINIMUM]}/{ws[SADDLE]} {'agrees' if agree else 'DISAGREES'}"
        )
    verdict(5, ok, "; ".join(parts))


def test_criterion_06_graph_topology():
    parts, ok = [], True
    for key in ("octagon", "decagon", "sheared"):
        an = analysis(key)
        s, ch = an.surface, an.checks
        want = 2 - 2 * s.genus - s.n_zeros
        good = all(
            ch[k]["passed"] for k in ("graph_connected", "graph_euler", "edges_marked", "descending_finite")
        )
        ok &= good
        parts.append(
            f"{key} components={an.graph.n_components} chi={an.graph.euler_characteristic} "
            f"(want {want}) marked={ch['edges_marked']['passed']} finite={ch['descending_finite']['passed']}"
        )
    verdict(6, ok, "; ".join(parts))


def test_criterion_07_a_sbs_vanishes_by_symmetry():
    parts, ok = [], True
    for key in ("octagon", "decagon"):
        an = analysis(key)
        ratio = abs(an.graph.a_sbs) / an.surface.diameter
        ok &= ratio <= 1e-2
        parts.append(f"{key} |A|/diam={ratio:.2e}")
    verdict(7, ok, "; ".join(parts) + " (limit 1e-2)")


def _combinatorics(an):
    kinds = tuple((cp.id, cp.kind, cp.poly) for cp in an.critical_points)
    return kinds, an.graph.edges, tuple((g.tail, g.head) for g in an.graph.segments)


def test_criterion_08_similarity_equivariance():
    base = analysis("sheared")
    s, a0 = base.surface, base.graph.a_sbs
    parts, ok = [], True
    for label, c in (("2", 2.0), ("i", 1j), ("2e^{i pi/3}", 2 * cmath.exp(1j * math.pi / 3))):
        an = analyze(scale(s, c), RunConfig())
        same = _combinatorics(an) == _combinatorics(base)
        rel = abs(an.graph.a_sbs - c * a0) / (abs(c) * s.diameter)
        ok &= same and rel <= 1e-3
        parts.append(f"c={label} combinatorics {'identical' if same else 'DIFFER'}, err/(|c|diam)={rel:.1e}")
    verdict(8, ok, "; ".join(parts) + " (limit 1e-3)")


def test_criterion_09_shear_sweep(tmp_path):
    t0 = time.perf_counter()
    table = sweep("sheared-decagon", parse_range("0:0.4:21"), [1.1], RunConfig(), str(tmp_path), workers=1)
    elapsed = time.perf_counter() - t0
    summ = table["summary"]
    rows = table["rows"]
    failing = [f"s={r['s']:.2f}" for r in rows if not r.get("passed")]
    cont = table.get("continuity") or {}
    ok = (
        len(rows) == 21
        and summ["unresolved_trajectories"] == 0
        and not failing
        and bool(cont.get("lines"))
        and elapsed < 1800.0
    )
    jump = max((ln["max_difference"] or 0.0) for ln in cont.get("lines", [{"max_difference": None}]))
    verdict(
        9, ok,
        f"{len(rows)} samples, {summ['unresolved_trajectories']} unresolved, "
        f"failing [{', '.join(failing)}], max |dA| between neighbours {jump:.3e}, {elapsed:.0f}s (limit 1800s)",
    )


def test_criterion_10_reproducible_results():
    cfg = RunConfig(surface="builtin:decagon")
    a = canonical_json(run(cfg).results)
    b = canonical_json(run(cfg).results)
    same = a.encode() == b.encode()
    verdict(10, same, f"two runs byte-identical: {same}, {len(a)} bytes")
