"""Separatrices of the gradient flow of u, traced through the flat charts.

The trajectories are integrated at unit speed along ``grad u / |grad u|``
(descending uses the opposite sign).  The gradient of the hyperbolic metric
is a positive multiple ``exp(-2u) grad u`` of the flat one, so the
unparametrized curves coincide with those of the hyperbolic gradient flow.

Every Runge-Kutta stage is placed with :func:`sbsgraph.surface.move`, so a
step that crosses an identified edge continues in the neighbouring chart.
Because ``rho = dz`` in every chart, the developed displacement of a curve is
the sum of its flat increments; endpoints are snapped to the critical point
they reach, which makes the displacement the exact developed difference of
the two endpoint positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .liouville import MetricField
from .morse import SADDLE, CriticalPoint
from .surface import SurfaceError, move

ASCENDING, DESCENDING = "ascending", "descending"
CRITICAL, CONE, UNRESOLVED = "critical", "cone", "unresolved"
FINITE, INFINITE = "finite", "infinite"

# Dormand-Prince 5(4)
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)


@dataclass(frozen=True)
class FlowParams:
    """Tracing parameters; ``None`` entries are derived from the mesh.

    Defaults: ``eps_launch = 5 h_min``, ``r_cp = 2 h_min``, ``r_cone`` the
    field's cone exclusion radius, ``u_escape`` the largest critical value.
    ``rtol`` is the relative integrator tolerance: the local step error is
    held below ``rtol * diameter``, and u may fail to be monotone along a
    traced curve by at most ``10 * rtol * (u range)``.
    """

    eps_launch: float | None = None
    r_cp: float | None = None
    r_cone: float | None = None
    u_escape: float | None = None
    rtol: float = 1e-6
    max_steps: int = 1_000_000
    max_length: float = 50.0  # in units of the surface diameter


@dataclass(frozen=True)
class End:
    kind: str  # critical | cone | unresolved
    ref: int | None = None  # critical point id or cone class id
    reason: str = ""


@dataclass(frozen=True)
class Trajectory:
    saddle: int
    sign: int
    direction: str
    charts: tuple  # chart of every sample
    points: tuple  # complex sample positions
    steps: tuple  # developed increment from sample i to sample i + 1
    u: tuple
    end: End
    displacement: complex
    n_steps: int = 0

    @property
    def polyline(self) -> list[tuple[int, complex]]:
        return list(zip(self.charts, self.points))

    def pieces(self, surface) -> list[tuple[int, complex, complex]]:
        """Straight chart-clipped pieces ``(poly, z0, z1)`` of the polyline."""
        out = []
        for p, z, dz in zip(self.charts, self.points, self.steps):
            rest = dz
            for _ in range(64):
                hit = surface.first_exit(p, z, z + rest)
                if hit is None:
                    out.append((p, z, z + rest))
                    break
                e, t = hit
                x = z + t * rest
                if t > 0:
                    out.append((p, z, x))
                q, _ = surface.partner((p, e))
                p, z = q, x + surface.translation((p, e))
                rest = (1.0 - t) * rest
                if rest == 0:
                    break
        return out

    def monotonicity_violation(self) -> float:
        """Largest step against the expected direction of u (0 if monotone)."""
        u = np.asarray(self.u)
        if len(u) < 2:
            return 0.0
        du = np.diff(u) * (1.0 if self.direction == ASCENDING else -1.0)
        return float(max(0.0, -du.min()))

    def to_dict(self) -> dict:
        return {
            "saddle": self.saddle,
            "sign": self.sign,
            "direction": self.direction,
            "end": {"kind": self.end.kind, "ref": self.end.ref, "reason": self.end.reason},
            "class": classify_trajectory(self),
            "displacement": [self.displacement.real, self.displacement.imag],
            "n_steps": self.n_steps,
            "polyline": [[int(p), z.real, z.imag] for p, z in zip(self.charts, self.points)],
        }


def monotonicity_tolerance(field: MetricField, params: FlowParams | None = None) -> float:
    """Allowed monotonicity violation of u along a traced curve."""
    lo, hi = field.u_range()
    return 10.0 * (params or FlowParams()).rtol * (hi - lo)


def classify_trajectory(t: Trajectory) -> str:
    """finite (ends at a critical point), infinite (runs into a cone) or unresolved."""
    if t.end.kind == CRITICAL:
        return FINITE
    if t.end.kind == CONE:
        return INFINITE
    return UNRESOLVED


class _Targets:
    """Critical point representations per chart, including one-edge neighbours."""

    def __init__(self, surface, cps):
        n = len(surface.polygons)
        self.reps = [[] for _ in range(n)]
        for cp in cps:
            self.reps[cp.poly].append((cp.id, cp.z))
            for p in range(n):
                for e in range(surface.n_edges(p)):
                    q, _ = surface.partner((p, e))
                    if q == cp.poly:
                        # chart-p coordinates of a point of chart q across edge e
                        self.reps[p].append((cp.id, cp.z - surface.translation((p, e))))
        self.ids = [np.array([i for i, _ in r], int) for r in self.reps]
        self.pos = [np.array([z for _, z in r], complex) for r in self.reps]

    def nearest(self, p: int, z: complex):
        if not len(self.ids[p]):
            return None, math.inf, 0j
        d = np.abs(self.pos[p] - z)
        k = int(np.argmin(d))
        return int(self.ids[p][k]), float(d[k]), complex(self.pos[p][k] - z)


def resolve_params(field: MetricField, cps, params: FlowParams) -> FlowParams:
    h_min = field.mesh.h_min
    u_escape = params.u_escape
    if u_escape is None:
        u_escape = max((cp.u for cp in cps), default=-math.inf)
    return FlowParams(
        eps_launch=params.eps_launch if params.eps_launch is not None else 5.0 * h_min,
        r_cp=params.r_cp if params.r_cp is not None else 2.0 * h_min,
        r_cone=params.r_cone if params.r_cone is not None else field.r_exclude,
        u_escape=u_escape,
        rtol=params.rtol,
        max_steps=params.max_steps,
        max_length=params.max_length,
    )


def _direction(field, p, z, sign):
    u, g, _, _ = field.evaluate(p, z, strict=False)
    gx, gy = g[0]
    n = math.hypot(gx, gy)
    if n == 0.0:
        return 0j, float(u[0]), 0.0
    return sign * complex(gx, gy) / n, float(u[0]), n


def _integrate(field, p, z, sign, saddle_id, targets, prm, start_disp):
    """Integrate one trajectory from the launch point ``(p, z)``."""
    surface = field.surface
    diam = surface.diameter
    h_cap = 0.5 * field.mesh.h
    atol = prm.rtol * diam
    charts, points, steps, us = [], [], [], []
    disp = start_disp
    length = 0.0
    k1, u0, gn = _direction(field, p, z, sign)
    prev_gn = gn
    dt = min(h_cap, prm.eps_launch)
    n_steps = 0
    end = None
    while end is None:
        charts.append(p)
        points.append(z)
        us.append(u0)
        # termination tests at the current sample
        cid, dcp, to_cp = targets.nearest(p, z)
        if cid is not None and dcp <= prm.r_cp and gn <= prev_gn and cid != saddle_id:
            steps.append(to_cp)
            disp += to_cp
            end = End(CRITICAL, cid)
            break
        dcone = float(field.cone_distance(p, z))
        if dcone <= prm.r_cone:
            steps.append(0j)
            if sign > 0 and u0 > prm.u_escape:
                end = End(CONE, int(field.nearest_cone(p, z)[1]))
            else:
                end = End(UNRESOLVED, None, "entered a cone exclusion disk below the escape level")
            break
        if n_steps >= prm.max_steps or length > prm.max_length * diam:
            steps.append(0j)
            end = End(UNRESOLVED, None, "step budget exhausted")
            break
        if k1 == 0:
            steps.append(0j)
            end = End(UNRESOLVED, None, "stalled at a zero of the gradient")
            break
        # step size limits: never jump across a target or cone disk
        limit = h_cap
        if cid is not None and cid != saddle_id:
            limit = min(limit, max(0.5 * dcp, 0.5 * prm.r_cp))
        limit = min(limit, max(0.5 * dcone, 0.5 * prm.r_cone))
        dt = min(dt, limit)
        while True:
            ks = [k1]
            ok = True
            for i in range(1, 7):
                dz = dt * sum(a * k for a, k in zip(_A[i], ks))
                try:
                    q, w = move(surface, (p, z), dz)
                    ki, _, _ = _direction(field, q, w, sign)
                except (SurfaceError, ValueError):
                    ok = False
                    break
                ks.append(ki)
            if ok:
                dz5 = dt * sum(b * k for b, k in zip(_B5, ks))
                dz4 = dt * sum(b * k for b, k in zip(_B4, ks))
                err = abs(dz5 - dz4)
                if err <= atol:
                    break
                fac = 0.9 * (atol / err) ** 0.2
                dt *= min(0.5, max(0.1, fac))
            else:
                dt *= 0.5
            if dt < 1e-14 * diam:
                end = End(UNRESOLVED, None, "step size underflow")
                break
        if end is not None:
            steps.append(0j)
            break
        q, w = move(surface, (p, z), dz5)
        steps.append(dz5)
        disp += dz5
        length += abs(dz5)
        n_steps += 1
        p, z = q, w
        prev_gn = gn
        k1, u0, gn = _direction(field, p, z, sign)
        grow = 0.9 * (atol / max(err, 1e-300)) ** 0.2
        dt = min(h_cap, dt * min(5.0, max(1.0, grow)))
    return charts, points, steps, us, end, disp, n_steps


def trace_separatrices(field: MetricField, saddle: CriticalPoint, critical_points, params=None):
    """The four separatrices of ``saddle``.

    Order: descending along ``+e_neg`` and ``-e_neg``, then ascending along
    ``+e_pos`` and ``-e_pos`` (eigenvectors of the recovered Hessian).
    """
    if saddle.kind != SADDLE:
        raise ValueError(f"critical point {saddle.id} is a {saddle.kind}, not a saddle")
    prm = resolve_params(field, critical_points, params or FlowParams())
    if float(field.cone_distance(saddle.poly, saddle.z)) <= prm.r_cone + prm.eps_launch:
        raise ValueError(f"saddle {saddle.id} lies too close to a cone point to launch")
    targets = _Targets(field.surface, critical_points)
    out = []
    for direction, vec, fsign in (
        (DESCENDING, saddle.eigenvector(0), -1),
        (ASCENDING, saddle.eigenvector(1), 1),
    ):
        for s in (1, -1):
            d0 = s * prm.eps_launch * vec
            p, z = move(field.surface, (saddle.poly, saddle.z), d0)
            charts, points, steps, us, end, disp, n = _integrate(
                field, p, z, fsign, saddle.id, targets, prm, d0
            )
            charts = [saddle.poly] + charts
            points = [saddle.z] + points
            steps = [d0] + steps
            us = [saddle.u] + us
            if end.kind == CRITICAL:
                us.append(next(cp.u for cp in critical_points if cp.id == end.ref))
            out.append(
                Trajectory(
                    saddle.id, s, direction, tuple(charts), tuple(complex(x) for x in points),
                    tuple(complex(x) for x in steps), tuple(us), end, complex(disp), n,
                )
            )
    return out


def trace_all(field: MetricField, critical_points, params=None) -> list[Trajectory]:
    """Separatrices of every saddle, ordered by saddle id and launch sign."""
    out = []
    for cp in sorted(critical_points, key=lambda c: c.id):
        if cp.kind == SADDLE:
            out.extend(trace_separatrices(field, cp, critical_points, params))
    return out


@dataclass(frozen=True)
class SaddleConnection:
    source: int
    target: int
    sign: int


def saddle_connections(trajectories, critical_points) -> list[SaddleConnection]:
    """Descending separatrices that end at another saddle (non-generic)."""
    kinds = {cp.id: cp.kind for cp in critical_points}
    out = []
    for t in trajectories:
        if t.direction == DESCENDING and t.end.kind == CRITICAL and kinds.get(t.end.ref) == SADDLE:
            out.append(SaddleConnection(t.saddle, t.end.ref, t.sign))
    return out


def _segments_cross(a, b, c, d) -> bool:
    def orient(x, y, z):
        return ((y - x).conjugate() * (z - x)).imag

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return (o1 * o2 < 0) and (o3 * o4 < 0)


def crossings(surface, trajectories, critical_points, exclude: float) -> list[tuple[int, int]]:
    """Pairs of trajectories whose polylines cross transversally.

    Pieces within ``exclude`` of a critical point or a polygon vertex are
    ignored, since separatrices legitimately meet there.
    """
    targets = _Targets(surface, critical_points)
    pieces = []
    for i, t in enumerate(trajectories):
        for p, z0, z1 in t.pieces(surface):
            near = False
            for z in (z0, z1):
                _, d, _ = targets.nearest(p, z)
                dv = np.min(np.abs(surface.polygons[p] - z))
                if d < exclude or dv < exclude:
                    near = True
            if not near:
                pieces.append((i, p, z0, z1))
    out = set()
    by_poly = {}
    for piece in pieces:
        by_poly.setdefault(piece[1], []).append(piece)
    for items in by_poly.values():
        for a in range(len(items)):
            i, _, z0, z1 = items[a]
            for b in range(a + 1, len(items)):
                j, _, w0, w1 = items[b]
                if i != j and _segments_cross(z0, z1, w0, w1):
                    out.add((min(i, j), max(i, j)))
    return sorted(out)
