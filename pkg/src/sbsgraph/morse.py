"""Critical points of the conformal factor and the Morse count identity.

Critical points are zeros of the recovered gradient field ``G`` (P1
interpolant of nodal recovered gradients plus the exact singular part).
They are found by Newton's method seeded from triangles where the nodal
gradient directions disagree, plus a coarse uniform grid, and are
classified by the eigenvalues of the recovered Hessian.

An independent discrete oracle (:func:`watershed_counts`) counts minima and
saddles of the piecewise linear interpolant of nodal values from the
combinatorics of lower links, with no derivatives involved.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .liouville import ConeExclusionError, MetricField
from .surface import SurfaceError, move

log = logging.getLogger(__name__)

MINIMUM, SADDLE, DEGENERATE, MAXIMUM = "minimum", "saddle", "degenerate", "maximum"


@dataclass(frozen=True)
class CriticalPoint:
    """A zero of the recovered gradient with its Hessian eigendata."""

    id: int
    poly: int
    z: complex
    kind: str
    u: float
    eigenvalues: tuple  # (lam1, lam2), ascending
    eigenvectors: tuple  # ((x1, y1), (x2, y2)), unit, matching eigenvalues
    grad_norm: float
    jacobian_det: float

    @property
    def point(self) -> tuple[int, complex]:
        return self.poly, self.z

    def eigenvector(self, k: int) -> complex:
        x, y = self.eigenvectors[k]
        return complex(x, y)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "poly": self.poly,
            "position": [self.z.real, self.z.imag],
            "kind": self.kind,
            "u": self.u,
            "eigenvalues": list(self.eigenvalues),
            "eigenvectors": [list(v) for v in self.eigenvectors],
            "grad_norm": self.grad_norm,
        }


@dataclass(frozen=True)
class Thresholds:
    grad_tol: float
    eps_deg: float
    r_merge: float
    r_exclude: float


@dataclass(frozen=True)
class CriticalSearch:
    """Outcome of :func:`search_critical_points`."""

    points: tuple
    thresholds: Thresholds
    n_seeds: int
    n_converged: int
    n_unconverged: int
    n_escaped: int  # seeds that ran into a cone exclusion zone

    def counts(self) -> dict:
        out = {MINIMUM: 0, SADDLE: 0, DEGENERATE: 0, MAXIMUM: 0}
        for cp in self.points:
            out[cp.kind] += 1
        return out

    def to_dict(self) -> dict:
        return {
            "points": [cp.to_dict() for cp in self.points],
            "counts": self.counts(),
            "seeds": self.n_seeds,
            "unconverged": self.n_unconverged,
            "escaped": self.n_escaped,
            "thresholds": {
                "grad_tol": self.thresholds.grad_tol,
                "eps_deg": self.thresholds.eps_deg,
                "r_merge": self.thresholds.r_merge,
                "r_exclude": self.thresholds.r_exclude,
            },
        }


def classify(eigenvalues, eps_deg: float) -> str:
    """Morse type from ascending Hessian eigenvalues.

    >>> classify((0.5, 2.0), 1e-6)
    'minimum'
    >>> classify((-1.0, 3.0), 1e-6)
    'saddle'
    """
    l1, l2 = sorted(float(x) for x in eigenvalues)
    if abs(l1) <= eps_deg or abs(l2) <= eps_deg:
        return DEGENERATE
    if l1 > eps_deg:
        return MINIMUM
    if l2 > eps_deg:
        return SADDLE
    return MAXIMUM


# ---------------------------------------------------------------------------
# seeding and Newton refinement


def _nodal_full_gradient(field: MetricField) -> np.ndarray:
    """Recovered gradient of u at every node copy (NaN at cone nodes)."""
    mesh = field.mesh
    g = field.rec_grad.copy()
    z = mesh.nodes[:, 0] + 1j * mesh.nodes[:, 1]
    for p in range(len(field.surface.polygons)):
        m = np.flatnonzero((mesh.node_poly == p) & ~mesh.cone_node)
        _, sg, _ = field.profile.derivs(p, z[m])
        g[m] += sg
    g[mesh.cone_node] = np.nan
    return g


def _seeds(field: MetricField, seed_density: float, r_exclude: float):
    mesh = field.mesh
    surface = field.surface
    g = _nodal_full_gradient(field)
    tri = mesh.triangles
    gt = g[tri]  # (T, 3, 2)
    ok = ~mesh.cone_node[tri].any(axis=1)
    dots = np.stack(
        [np.einsum("ta,ta->t", gt[:, i], gt[:, j]) for i, j in ((0, 1), (1, 2), (2, 0))], axis=1
    )
    flagged = np.flatnonzero(ok & (np.nan_to_num(dots, nan=1.0) < 0).any(axis=1))
    cent = mesh.nodes[tri[flagged]].mean(axis=1)
    seeds = [(int(mesh.tri_poly[t]), complex(*c)) for t, c in zip(flagged, cent)]

    spacing = surface.diameter / (16.0 * seed_density)
    for p, poly in enumerate(surface.polygons):
        xs = np.arange(poly.real.min() + spacing / 2, poly.real.max(), spacing)
        ys = np.arange(poly.imag.min() + spacing / 2, poly.imag.max(), spacing)
        X, Y = np.meshgrid(xs, ys)
        pts = (X + 1j * Y).ravel()
        ids, _ = field.locate(p, pts)
        pts = pts[(ids >= 0) & (field.cone_distance(p, pts) > 2 * r_exclude)]
        seeds.extend((p, complex(w)) for w in pts)
    return seeds


def _newton(field: MetricField, p: int, z: complex, grad_tol: float, r_exclude: float, max_iter=60):
    """Damped Newton on G = 0 with chart wrapping.

    Returns ``(status, p, z, |G|)`` where status is 'ok', 'escaped' or
    'unconverged'.
    """
    surface = field.surface
    step_max = field.mesh.h
    g, J = field.grad_jacobian(p, z)
    g, J = g[0], J[0]
    gn = float(np.hypot(*g))
    for _ in range(max_iter):
        if gn <= grad_tol:
            return "ok", p, z, gn
        try:
            d = -np.linalg.solve(J, g)
        except np.linalg.LinAlgError:
            d = -g
        dz = complex(d[0], d[1])
        if abs(dz) > step_max:
            dz *= step_max / abs(dz)
        accepted = False
        for _ in range(30):
            try:
                q, w = move(surface, (p, z), dz)
            except SurfaceError:
                return "escaped", p, z, gn
            if field.cone_distance(q, w) < r_exclude:
                return "escaped", p, z, gn
            g2, J2 = field.grad_jacobian(q, w)
            gn2 = float(np.hypot(*g2[0]))
            if gn2 < gn or gn2 <= grad_tol:
                accepted = True
                break
            dz *= 0.5
            if abs(dz) < 1e-15 * surface.diameter:
                break
        if not accepted:
            return "unconverged", p, z, gn
        p, z, g, J, gn = q, w, g2[0], J2[0], gn2
    return ("ok" if gn <= grad_tol else "unconverged"), p, z, gn


def _ghosts(surface, p: int, z: complex, radius: float):
    """Representations of (p, z) in neighbouring charts within ``radius``."""
    out = [(p, z)]
    for e in range(surface.n_edges(p)):
        a, b = surface.edge_endpoints((p, e))
        ab = b - a
        t = ((z - a) * ab.conjugate()).real / abs(ab) ** 2
        foot = a + min(max(t, 0.0), 1.0) * ab
        if abs(z - foot) <= radius:
            q, _ = surface.partner((p, e))
            out.append((q, z + surface.translation((p, e))))
    return out


def search_critical_points(
    field: MetricField,
    seed_density: float = 1.0,
    eps_deg: float | None = None,
    grad_tol: float | None = None,
    r_merge: float | None = None,
    unconverged_warn: float = 0.05,
) -> CriticalSearch:
    """Locate, deduplicate and classify critical points of u.

    Parameters
    ----------
    field
        Solved metric field.
    seed_density
        Multiplier on the uniform seed grid (triangle seeds are always used).
    eps_deg
        Degeneracy threshold; default ``1e-6 * max |lambda|`` over the
        points found.
    grad_tol
        Newton stopping tolerance on ``|grad u|``; default
        ``1e-9 * (u range) / diameter``.
    r_merge
        Deduplication radius; default ``1e-4 * h``.
    """
    surface = field.surface
    mesh = field.mesh
    umin, umax = field.u_range()
    diam = surface.diameter
    if grad_tol is None:
        grad_tol = 1e-9 * (umax - umin) / diam
    if r_merge is None:
        r_merge = 1e-4 * mesh.h
    r_exclude = field.r_exclude

    seeds = _seeds(field, seed_density, r_exclude)
    found, n_unc, n_esc = [], 0, 0
    for p, z in seeds:
        status, q, w, gn = _newton(field, p, z, grad_tol, r_exclude)
        if status == "ok":
            found.append((q, w, gn))
        elif status == "escaped":
            n_esc += 1
        else:
            n_unc += 1
    if seeds and n_unc > unconverged_warn * len(seeds):
        log.warning("%d of %d critical point seeds did not converge", n_unc, len(seeds))

    # deterministic merge: sort by position, keep the best-converged member
    found.sort(key=lambda t: (t[0], round(t[1].real, 9), round(t[1].imag, 9)))
    clusters: list[list] = []
    for q, w, gn in found:
        for cl in clusters:
            if any(a == q and abs(b - w) <= r_merge for a, b in cl[0]):
                if gn < cl[1][2]:
                    cl[1] = (q, w, gn)
                break
        else:
            clusters.append([_ghosts(surface, q, w, r_merge), (q, w, gn)])

    # canonical chart: the lexicographically smallest nearby representation
    raw = []
    for ghosts, (q, w, gn) in clusters:
        reps = [r for r in _ghosts(surface, q, w, 10 * r_merge) if field.locate(*r)[0][0] >= 0]
        q, w = min(reps, key=lambda r: (r[0], r[1].real, r[1].imag))
        u, g, H = field.derivatives(q, w, strict=False)
        _, J = field.grad_jacobian(q, w)
        lam, vec = np.linalg.eigh(0.5 * (H[0] + H[0].T))
        raw.append((q, w, float(u[0]), lam, vec, float(np.hypot(*g[0])), float(np.linalg.det(J[0]))))

    if eps_deg is None:
        scale = max((float(np.max(np.abs(r[3]))) for r in raw), default=0.0)
        eps_deg = 1e-6 * scale
    raw.sort(key=lambda r: (r[2], r[0], r[1].real, r[1].imag))
    points = []
    for i, (q, w, u, lam, vec, gn, det) in enumerate(raw):
        vecs = []
        for k in range(2):
            x, y = vec[:, k]
            # fix the eigenvector sign so output is deterministic
            if x < 0 or (x == 0 and y < 0):
                x, y = -x, -y
            vecs.append((float(x), float(y)))
        kind = classify(lam, eps_deg)
        points.append(
            CriticalPoint(i, q, complex(w), kind, u, (float(lam[0]), float(lam[1])), tuple(vecs), gn, det)
        )
    th = Thresholds(float(grad_tol), float(eps_deg), float(r_merge), float(r_exclude))
    return CriticalSearch(tuple(points), th, len(seeds), len(found), n_unc, n_esc)


def find_critical_points(field: MetricField, seed_density: float = 1.0, **kw) -> list[CriticalPoint]:
    """Deduplicated, classified critical points of u (see :func:`search_critical_points`)."""
    return list(search_critical_points(field, seed_density, **kw).points)


# ---------------------------------------------------------------------------
# count identity


@dataclass(frozen=True)
class MorseReport:
    n_min: int
    n_saddle: int
    n_degenerate: int
    n_max: int
    genus: int
    n_zeros: int
    expected: int  # expected #saddle - #min
    passed: bool | None  # None when skipped
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "minima": self.n_min,
            "saddles": self.n_saddle,
            "degenerate": self.n_degenerate,
            "maxima": self.n_max,
            "expected_saddle_minus_min": self.expected,
            "passed": self.passed,
            "note": self.note,
        }


def morse_check(counts, g: int, m: int) -> MorseReport:
    """Check ``#saddle - #min = 2g - 2 + m``.

    ``counts`` is a mapping with keys ``minimum``, ``saddle`` and optionally
    ``degenerate`` / ``maximum``, or a sequence of critical points.
    """
    if not isinstance(counts, dict):
        c = {MINIMUM: 0, SADDLE: 0, DEGENERATE: 0, MAXIMUM: 0}
        for cp in counts:
            c[cp.kind] += 1
        counts = c
    n_min = int(counts.get(MINIMUM, 0))
    n_sad = int(counts.get(SADDLE, 0))
    n_deg = int(counts.get(DEGENERATE, 0))
    n_max = int(counts.get(MAXIMUM, 0))
    expected = 2 * g - 2 + m
    if n_deg:
        return MorseReport(n_min, n_sad, n_deg, n_max, g, m, expected, None,
                           f"skipped: {n_deg} degenerate critical point(s)")
    ok = n_max == 0 and n_min >= 1 and n_sad - n_min == expected
    note = "" if ok else f"#saddle - #min = {n_sad - n_min}, #max = {n_max}"
    return MorseReport(n_min, n_sad, 0, n_max, g, m, expected, ok, note)


# ---------------------------------------------------------------------------
# discrete oracle


def watershed_counts(field: MetricField, puncture: float = 0.125, simplify: bool = True) -> dict:
    """Critical vertices of the nodal P1 interpolant, counted from lower links.

    Values are compared lexicographically with the dof index so ties are
    broken consistently.  Nodes closer to a cone than ``puncture`` times its
    cutoff radius are set to ``+inf`` along with the cone itself (otherwise
    an obtuse mesh corner at a cone can fake a local maximum next to it);
    removing a disk does not change the topology of the punctured surface.
    The returned ``euler`` entry is ``#min - #saddle + #max``, which equals
    the Euler characteristic of the punctured surface.

    With ``simplify`` (the default) minimum/saddle pairs whose persistence is
    below the P1 interpolation error bound ``tau`` are cancelled.  A vertex
    that sits exactly on a saddle with a narrow descending sector can have no
    neighbour inside that sector and so looks like a minimum; such artefacts
    have persistence far below ``tau`` and never refine away, because
    refinement is self-similar.  ``tau = max_T l_T^2 |H|_T / 2`` over
    triangles outside the punctures (``l_T`` longest edge, ``|H|`` the
    largest recovered Hessian norm at the corners).  The raw counts are
    returned as ``raw_*``.
    """
    mesh = field.mesh
    n = mesh.n_dofs
    u_node = field.nodal_u()
    z = mesh.nodes[:, 0] + 1j * mesh.nodes[:, 1]
    for p, items in enumerate(field.profile.cones):
        m = mesh.node_poly == p
        for vtx, _, radius, _ in items:
            u_node[m & (np.abs(z - vtx) < puncture * radius)] = np.inf
    u = np.full(n, np.nan)
    u[mesh.dof] = u_node
    order = np.lexsort((np.arange(n), u))
    rank = np.empty(n, int)
    rank[order] = np.arange(n)

    tdof = mesh.dof[mesh.triangles]
    links: list[list] = [[] for _ in range(n)]
    for a, b, c in tdof:
        links[a].append((b, c))
        links[b].append((c, a))
        links[c].append((a, b))

    cone = set(np.flatnonzero(~np.isfinite(u)).tolist())
    out = {MINIMUM: 0, SADDLE: 0, MAXIMUM: 0, "irregular": 0}
    for d in range(n):
        if d in cone:
            continue
        edges = links[d]
        verts = {x for e in edges for x in e}
        lower = {x for x in verts if rank[x] < rank[d]}
        if not lower:
            out[MINIMUM] += 1
            continue
        if len(lower) == len(verts):
            out[MAXIMUM] += 1
            continue
        parent = {x: x for x in lower}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for x, y in edges:
            if x in lower and y in lower:
                parent[find(x)] = find(y)
        k = len({find(x) for x in lower})
        if k >= 2:
            out[SADDLE] += k - 1
        deg = {}
        for x, y in edges:
            deg[x] = deg.get(x, 0) + 1
            deg[y] = deg.get(y, 0) + 1
        if any(v != 2 for v in deg.values()):
            out["irregular"] += 1
    for key in (MINIMUM, SADDLE, MAXIMUM):
        out[f"raw_{key}"] = out[key]
    tau = _interpolation_error_bound(field, u_node)
    pers = _min_saddle_persistence(u, rank, links)
    cancelled = sum(p < tau for p in pers) if simplify else 0
    out[MINIMUM] -= cancelled
    out[SADDLE] -= cancelled
    out["cancelled_pairs"] = int(cancelled)
    out["threshold"] = float(tau)
    out["min_kept_persistence"] = min((p for p in pers if p >= tau), default=None)
    out["max_cancelled_persistence"] = max((p for p in pers if p < tau), default=None) if simplify else None
    out["euler"] = out[MINIMUM] - out[SADDLE] + out[MAXIMUM]
    return out


def _interpolation_error_bound(field: MetricField, u_node) -> float:
    mesh = field.mesh
    ok = np.isfinite(u_node)[mesh.triangles].all(axis=1)
    if not ok.any():
        return 0.0
    z = mesh.nodes[:, 0] + 1j * mesh.nodes[:, 1]
    tri = mesh.triangles[ok]
    P = z[tri]
    longest = np.max(np.abs(P - np.roll(P, 1, axis=1)), axis=1)
    hn = np.linalg.norm(field.rec_hess, ord=2, axis=(1, 2))
    return float(0.5 * np.max(longest**2 * hn[tri].max(axis=1)))


def _min_saddle_persistence(u, rank, links) -> list:
    """Persistence of the 0-dimensional pairs of the lower-star filtration."""
    n = len(u)
    parent = list(range(n))
    birth = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    seen = np.zeros(n, bool)
    out = []
    for d in np.argsort(rank):
        if not np.isfinite(u[d]):
            break
        nbrs = {x for e in links[d] for x in e}
        roots = {find(x) for x in nbrs if seen[x]}
        seen[d] = True
        if not roots:
            birth[d] = u[d]
            continue
        # the elder component (lowest birth) survives
        ordered = sorted(roots, key=lambda r: (birth[r], r))
        for r in ordered[1:]:
            out.append(float(u[d] - birth[r]))
        for r in ordered:
            parent[r] = d
        birth[d] = birth[ordered[0]]
    return out
