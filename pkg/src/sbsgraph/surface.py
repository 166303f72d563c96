"""Translation surfaces: polygons in C glued along edges by translations.

A surface is given by a list of polygons (vertex loops, counter-clockwise) and
a list of edge pairings.  Edge ``e`` of polygon ``p`` runs from vertex ``e`` to
vertex ``e + 1``.  Two paired edges must be parallel, of equal length and
traversed in opposite directions, so that a single translation carries one
onto the other.  In every polygon chart the holomorphic differential is
``dz``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * math.pi
ANGLE_TOL = 1e-9
SNAP_REL = 1e-9


class SurfaceError(ValueError):
    """Base class for invalid surface input."""


class SurfaceParseError(SurfaceError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        loc = f" ({', '.join(where)})" if where else ""
        super().__init__(message + loc)


class SurfaceValidationError(SurfaceError):
    def __init__(self, report):
        self.report = report
        super().__init__("invalid surface: " + "; ".join(report.violations))


class ConePointError(SurfaceError):
    """Raised when a chart transition is requested at a polygon vertex."""


Edge = tuple[int, int]


@dataclass(frozen=True)
class ChartTransition:
    from_edge: Edge
    to_edge: Edge
    translation: complex


@dataclass(frozen=True)
class ValidationReport:
    genus: int | None
    stratum: tuple[int, ...]
    generic: bool
    violations: tuple[str, ...]

    @property
    def valid(self) -> bool:
        return not self.violations


def _as_complex_loop(poly) -> np.ndarray:
    arr = np.asarray(poly)
    if np.iscomplexobj(arr):
        out = arr.astype(complex).ravel()
    else:
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise SurfaceError("polygon vertices must be [re, im] pairs")
        out = arr[:, 0] + 1j * arr[:, 1]
    out = np.array(out, dtype=complex)
    out.setflags(write=False)
    return out


def _segments_intersect(a, b, c, d) -> bool:
    def cross(u, v):
        return u.real * v.imag - u.imag * v.real

    d1 = cross(b - a, c - a)
    d2 = cross(b - a, d - a)
    d3 = cross(d - c, a - c)
    d4 = cross(d - c, b - c)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def point_segment_distance(z, a, b) -> float:
    ab = b - a
    t = ((z - a) * ab.conjugate()).real / (abs(ab) ** 2)
    t = min(1.0, max(0.0, t))
    return abs(z - (a + t * ab))


@dataclass(frozen=True, eq=False)
class TranslationSurface:
    """Immutable translation surface.

    Construction does not validate; call :func:`validate` (or use the parser
    and builtins, which validate for you).
    """

    polygons: tuple[np.ndarray, ...]
    pairings: tuple[tuple[Edge, Edge], ...]
    name: str = ""
    _partner: dict = field(init=False, repr=False, compare=False)

    def __init__(self, polygons, pairings, name=""):
        polys = tuple(_as_complex_loop(p) for p in polygons)
        pairs = tuple(
            (tuple(int(i) for i in a), tuple(int(i) for i in b)) for a, b in pairings
        )
        object.__setattr__(self, "polygons", polys)
        object.__setattr__(self, "pairings", pairs)
        object.__setattr__(self, "name", name)
        partner = {}
        for a, b in pairs:
            partner.setdefault(a, b)
            partner.setdefault(b, a)
        object.__setattr__(self, "_partner", partner)

    # -- basic geometry ---------------------------------------------------
    def n_edges(self, p: int) -> int:
        return len(self.polygons[p])

    def edge_endpoints(self, edge: Edge) -> tuple[complex, complex]:
        p, e = edge
        poly = self.polygons[p]
        return complex(poly[e]), complex(poly[(e + 1) % len(poly)])

    def edge_vector(self, edge: Edge) -> complex:
        a, b = self.edge_endpoints(edge)
        return b - a

    def partner(self, edge: Edge) -> Edge:
        try:
            return self._partner[edge]
        except KeyError:
            raise SurfaceError(f"edge {edge} is not paired") from None

    def translation(self, edge: Edge) -> complex:
        """Translation carrying ``edge`` onto its partner."""
        q, f = self.partner(edge)
        start = self.edge_endpoints(edge)[0]
        return complex(self.polygons[q][(f + 1) % len(self.polygons[q])]) - start

    @cached_property
    def diameter(self) -> float:
        best = 0.0
        for poly in self.polygons:
            d = np.abs(poly[:, None] - poly[None, :])
            best = max(best, float(d.max()))
        return best

    @property
    def snap_tol(self) -> float:
        return SNAP_REL * self.diameter

    def interior_angles(self, p: int) -> np.ndarray:
        poly = self.polygons[p]
        prev = np.roll(poly, 1) - poly
        nxt = np.roll(poly, -1) - poly
        # angle swept counter-clockwise from the outgoing to the incoming edge
        ang = np.angle(prev / nxt)
        return np.mod(ang, TWO_PI)

    def signed_area(self, p: int) -> float:
        z = self.polygons[p]
        return 0.5 * float(np.sum((z.conjugate() * np.roll(z, -1)).imag))

    @cached_property
    def area(self) -> float:
        return sum(self.signed_area(p) for p in range(len(self.polygons)))

    # -- combinatorics ----------------------------------------------------
    @cached_property
    def vertex_classes(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Corner identification classes, ordered by their smallest corner."""
        corners = [(p, k) for p, poly in enumerate(self.polygons) for k in range(len(poly))]
        index = {c: i for i, c in enumerate(corners)}
        parent = list(range(len(corners)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        def union(i, j):
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)

        for (p, e), (q, f) in self.pairings:
            if (p, e) not in index or (q, f) not in index:
                continue
            n_p, n_q = len(self.polygons[p]), len(self.polygons[q])
            union(index[(p, e)], index[(q, (f + 1) % n_q)])
            union(index[(p, (e + 1) % n_p)], index[(q, f)])
        groups: dict[int, list] = {}
        for c in corners:
            groups.setdefault(find(index[c]), []).append(c)
        return tuple(tuple(sorted(g)) for _, g in sorted(groups.items()))

    @cached_property
    def corner_class(self) -> dict[tuple[int, int], int]:
        return {c: i for i, cls in enumerate(self.vertex_classes) for c in cls}

    @cached_property
    def class_angles(self) -> tuple[float, ...]:
        angles = [self.interior_angles(p) for p in range(len(self.polygons))]
        return tuple(float(sum(angles[p][k] for p, k in cls)) for cls in self.vertex_classes)

    @cached_property
    def class_orders(self) -> tuple[int, ...]:
        """Zero order ``d`` of each vertex class (total angle ``2 pi (d + 1)``)."""
        return tuple(int(round(a / TWO_PI)) - 1 for a in self.class_angles)

    @property
    def cone_classes(self) -> tuple[int, ...]:
        return tuple(i for i, d in enumerate(self.class_orders) if d >= 1)

    @property
    def stratum(self) -> tuple[int, ...]:
        return tuple(self.class_orders[i] for i in self.cone_classes)

    @property
    def n_zeros(self) -> int:
        return len(self.cone_classes)

    @cached_property
    def euler_characteristic(self) -> int:
        return len(self.vertex_classes) - len(self.pairings) + len(self.polygons)

    @property
    def genus(self) -> int:
        chi = self.euler_characteristic
        return (2 - chi) // 2

    def corner_order(self, p: int, k: int) -> int:
        return self.class_orders[self.corner_class[(p, k)]]

    # -- charts -----------------------------------------------------------
    def contains(self, p: int, z: complex, tol: float | None = None) -> bool:
        """Point-in-polygon test with an outward tolerance."""
        tol = self.snap_tol if tol is None else tol
        poly = self.polygons[p]
        a = poly
        b = np.roll(poly, -1)
        ab = b - a
        cross = (ab.conjugate() * (z - a)).imag / np.abs(ab)
        if np.all(cross >= -tol):
            return True
        return _winding_inside(poly, z) or bool(np.min(_dist_to_edges(poly, z)) <= tol)

    def first_exit(self, p: int, z0: complex, z1: complex):
        """First boundary crossing of segment ``z0 -> z1`` leaving polygon ``p``.

        Returns ``(edge_index, t)`` with the crossing at ``z0 + t (z1 - z0)``
        or ``None`` if the segment stays inside.
        """
        poly = self.polygons[p]
        n = len(poly)
        d = z1 - z0
        best = None
        for e in range(n):
            a = complex(poly[e])
            b = complex(poly[(e + 1) % n])
            ab = b - a
            # only edges crossed from inside to outside
            if (ab.conjugate() * d).imag >= 0.0:
                continue
            w = a - z0
            t = (w.conjugate() * ab).imag / (d.conjugate() * ab).imag
            s = (w.conjugate() * d).imag / (d.conjugate() * ab).imag
            if -1e-12 <= s <= 1 + 1e-12 and t <= 1.0 + 1e-12 and t >= -1e-9:
                if best is None or t < best[1]:
                    best = (e, max(t, 0.0))
        return best


def _winding_inside(poly, z) -> bool:
    ang = np.angle((np.roll(poly, -1) - z) / (poly - z))
    return abs(ang.sum()) > math.pi


def _dist_to_edges(poly, z) -> np.ndarray:
    n = len(poly)
    return np.array(
        [point_segment_distance(z, complex(poly[k]), complex(poly[(k + 1) % n])) for k in range(n)]
    )


def validate(surface: TranslationSurface) -> ValidationReport:
    """Check every structural invariant; violations are returned, not raised."""
    violations: list[str] = []
    tol = surface.snap_tol if surface.diameter > 0 else 1e-12

    for p, poly in enumerate(surface.polygons):
        n = len(poly)
        if n < 3:
            violations.append(f"polygon {p} has fewer than 3 vertices")
            continue
        if surface.signed_area(p) <= 0:
            violations.append(f"polygon {p} is not positively oriented")
        if np.any(np.abs(np.roll(poly, -1) - poly) <= tol):
            violations.append(f"polygon {p} has a zero-length edge")
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]):
                    violations.append(f"polygon {p} is not simple (edges {i}, {j} cross)")

    seen: dict[Edge, int] = {}
    for k, (a, b) in enumerate(surface.pairings):
        for edge in (a, b):
            p, e = edge
            if not (0 <= p < len(surface.polygons)) or not (0 <= e < len(surface.polygons[p])):
                violations.append(f"pairing {k} refers to nonexistent edge {edge}")
                continue
            if edge in seen:
                violations.append(f"edge {edge} is paired more than once")
            seen[edge] = k
        if a == b:
            violations.append(f"pairing {k} glues edge {a} to itself")
    if any(v.startswith("pairing") and "nonexistent" in v for v in violations):
        return ValidationReport(None, (), False, tuple(violations))

    for p, poly in enumerate(surface.polygons):
        for e in range(len(poly)):
            if (p, e) not in seen:
                violations.append(f"edge {(p, e)} is unpaired")

    for a, b in surface.pairings:
        if abs(surface.edge_vector(a) + surface.edge_vector(b)) > tol:
            violations.append(f"pairing {a}-{b} not a translation match")

    genus = None
    stratum: tuple[int, ...] = ()
    if not violations:
        for cls, angle in zip(surface.vertex_classes, surface.class_angles):
            d = int(round(angle / TWO_PI)) - 1
            if abs(angle - TWO_PI * (d + 1)) > ANGLE_TOL or d < 0:
                violations.append(
                    f"vertex class {cls[0]} has angle {angle:.12g}, not a multiple of 2pi"
                )
        genus = surface.genus
        stratum = surface.stratum
        if surface.euler_characteristic % 2:
            violations.append("odd Euler characteristic: surface is not orientable-closed")
        if sum(stratum) != 2 * genus - 2:
            violations.append(f"sum of zero orders {sum(stratum)} != 2g-2 = {2 * genus - 2}")
        if genus < 2:
            violations.append(f"genus {genus} violates g >= 2")
    generic = genus is not None and len(stratum) == 2 * genus - 2
    return ValidationReport(genus, stratum, bool(generic), tuple(violations))


def _checked(surface: TranslationSurface) -> TranslationSurface:
    report = validate(surface)
    if not report.valid:
        raise SurfaceValidationError(report)
    return surface


# -- document format -------------------------------------------------------

_ALLOWED_KEYS = {"name", "polygons", "pairings"}


def _field_line(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    if m is None:
        return None
    return text.count("\n", 0, m.start()) + 1


def parse_surface(text: str) -> TranslationSurface:
    """Parse and validate a surface-definition document (JSON)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SurfaceParseError(f"malformed document: {exc.msg}", line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise SurfaceParseError("top level must be an object", line=1)
    unknown = sorted(set(doc) - _ALLOWED_KEYS)
    if unknown:
        raise SurfaceParseError(
            f"unknown key {unknown[0]!r}", line=_field_line(text, unknown[0]), field=unknown[0]
        )
    for key in ("polygons", "pairings"):
        if key not in doc:
            raise SurfaceParseError(f"missing key {key!r}", field=key)
    name = doc.get("name", "")
    if not isinstance(name, str):
        raise SurfaceParseError("name must be a string", line=_field_line(text, "name"), field="name")

    polys = doc["polygons"]
    pline = _field_line(text, "polygons")
    if not isinstance(polys, list) or not polys:
        raise SurfaceParseError("polygons must be a non-empty list", line=pline, field="polygons")
    loops = []
    for i, poly in enumerate(polys):
        if not isinstance(poly, list):
            raise SurfaceParseError("polygon must be a list", line=pline, field=f"polygons[{i}]")
        loop = []
        for j, pt in enumerate(poly):
            if (
                not isinstance(pt, list)
                or len(pt) != 2
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in pt)
            ):
                raise SurfaceParseError(
                    "vertex must be [re, im]", line=pline, field=f"polygons[{i}][{j}]"
                )
            loop.append(complex(pt[0], pt[1]))
        loops.append(loop)

    pairs = doc["pairings"]
    qline = _field_line(text, "pairings")
    if not isinstance(pairs, list):
        raise SurfaceParseError("pairings must be a list", line=qline, field="pairings")
    edges = []
    for k, pair in enumerate(pairs):
        ok = isinstance(pair, list) and len(pair) == 2
        ok = ok and all(
            isinstance(e, list) and len(e) == 2 and all(type(x) is int for x in e) for e in pair
        )
        if not ok:
            raise SurfaceParseError(
                "pairing must be [[poly, edge], [poly, edge]]", line=qline, field=f"pairings[{k}]"
            )
        for m, (p, e) in enumerate(pair):
            if not (0 <= p < len(loops)) or not (0 <= e < len(loops[p])):
                raise SurfaceParseError(
                    f"pairing refers to nonexistent edge [{p}, {e}]",
                    line=qline,
                    field=f"pairings[{k}][{m}]",
                )
        edges.append((tuple(pair[0]), tuple(pair[1])))
    return _checked(TranslationSurface(loops, edges, name=name))


def dump_surface(surface: TranslationSurface) -> str:
    doc = {
        "name": surface.name,
        "polygons": [[[z.real, z.imag] for z in poly] for poly in surface.polygons],
        "pairings": [[list(a), list(b)] for a, b in surface.pairings],
    }
    return json.dumps(doc, indent=1)


def load_surface(path) -> TranslationSurface:
    with open(path, encoding="utf-8") as fh:
        return parse_surface(fh.read())


# -- builtins and transformations -----------------------------------------

def regular_polygon_surface(n: int) -> TranslationSurface:
    """Regular 2n-gon (circumradius 1) with opposite sides glued."""
    if n < 4:
        raise SurfaceError("regular-2n-gon needs n >= 4 (n <= 3 gives genus <= 1)")
    k = np.arange(2 * n)
    verts = np.exp(1j * np.pi * (2 * k - 1) / (2 * n))
    pairs = [((0, e), (0, e + n)) for e in range(n)]
    return TranslationSurface([verts], pairs, name=f"regular-{2 * n}-gon")


def sheared_decagon(s: float = 0.0, t: float = 1.0) -> TranslationSurface:
    """Regular decagon pushed through the real-linear map (x, y) -> (x + s y, t y)."""
    if not (t > 0) or not math.isfinite(s) or not math.isfinite(t):
        raise SurfaceError(f"sheared-decagon needs finite s and t > 0 (got s={s}, t={t})")
    base = regular_polygon_surface(5)
    z = base.polygons[0]
    w = (z.real + s * z.imag) + 1j * (t * z.imag)
    return _checked(TranslationSurface([w], base.pairings, name=f"sheared-decagon({s:g},{t:g})"))


BUILTINS = ("regular-2n-gon", "octagon", "decagon", "sheared-decagon")


def builtin_surface(name: str, **params) -> TranslationSurface:
    if name == "octagon":
        return _checked(regular_polygon_surface(4))
    if name == "decagon":
        return _checked(regular_polygon_surface(5))
    if name == "regular-2n-gon":
        return _checked(regular_polygon_surface(int(params.get("n", 4))))
    if name == "sheared-decagon":
        return sheared_decagon(float(params.get("s", 0.0)), float(params.get("t", 1.0)))
    raise SurfaceError(f"unknown builtin surface {name!r}; choose from {', '.join(BUILTINS)}")


def parse_builtin_spec(spec: str) -> tuple[str, dict]:
    """``sheared-decagon(s=0.3,t=1.1)`` -> ``("sheared-decagon", {"s": 0.3, "t": 1.1})``."""
    m = re.fullmatch(r"\s*([A-Za-z0-9\-]+)\s*(?:\((.*)\))?\s*", spec)
    if m is None:
        raise SurfaceError(f"cannot parse builtin spec {spec!r}")
    params = {}
    if m.group(2):
        for item in m.group(2).split(","):
            key, _, val = item.partition("=")
            if not _:
                raise SurfaceError(f"builtin parameter {item!r} must be key=value")
            params[key.strip()] = float(val)
    return m.group(1), params


def scale(surface: TranslationSurface, c: complex) -> TranslationSurface:
    """Realize rho -> c rho: multiply every chart by ``c``."""
    c = complex(c)
    if c == 0:
        raise SurfaceError("scale factor must be nonzero")
    return TranslationSurface(
        [c * poly for poly in surface.polygons], surface.pairings, name=surface.name
    )


def rotation_order(surface: TranslationSurface, tol: float = 1e-9) -> int:
    """Largest ``k`` such that rotating by ``2 pi / k`` about the centroid is an automorphism.

    Only single-polygon surfaces are examined (others return 1).  The rotation
    must carry the vertex loop onto itself by a cyclic shift ``s`` and carry
    every pairing ``(e, f)`` to the pairing ``(e + s, f + s)``.  Such a
    rotation multiplies ``rho`` by ``exp(2 pi i / k)``; ``k = 2`` is the
    central symmetry ``z -> -z``.
    """
    if len(surface.polygons) != 1:
        return 1
    poly = surface.polygons[0]
    n = len(poly)
    c = complex(np.mean(poly))
    scale_ = tol * surface.diameter
    partner = {a[1]: b[1] for a, b in surface.pairings}
    partner.update({b[1]: a[1] for a, b in surface.pairings})
    best = 1
    for s in range(1, n):
        if n % s:
            continue
        k = n // s
        rot = np.exp(2j * math.pi / k)
        if np.max(np.abs(rot * (poly - c) + c - np.roll(poly, -s))) > scale_:
            continue
        if all(partner[(e + s) % n] == (partner[e] + s) % n for e in partner):
            best = max(best, k)
    return best


def transition(surface: TranslationSurface, point, direction: complex):
    """Carry a boundary point of polygon ``p`` across its edge.

    ``point`` is ``(p, z)``.  Returns ``((q, z'), direction, ChartTransition)``.
    """
    p, z = point
    z = complex(z)
    direction = complex(direction)
    tol = surface.snap_tol
    poly = surface.polygons[p]
    n = len(poly)
    for k in range(n):
        if abs(z - poly[k]) <= tol:
            d = surface.corner_order(p, k)
            what = "cone point" if d >= 1 else "polygon vertex"
            raise ConePointError(f"{what}: ({p}, vertex {k}) has no unique chart transition")
    dists = _dist_to_edges(poly, z)
    e = int(np.argmin(dists))
    if dists[e] > tol:
        raise SurfaceError(f"point {z} is not on the boundary of polygon {p}")
    edge = (p, e)
    partner = surface.partner(edge)
    vec = surface.edge_vector(edge)
    outward = -1j * vec
    if (direction * outward.conjugate()).real <= 0:
        raise SurfaceError("direction does not point out of the polygon")
    shift = surface.translation(edge)
    return (partner[0], z + shift), direction, ChartTransition(edge, partner, shift)


def move(surface: TranslationSurface, point, dz: complex, max_crossings: int = 64):
    """Translate ``point = (p, z)`` by the flat vector ``dz``, wrapping charts.

    The straight path is followed through as many edge identifications as it
    crosses.  Returns ``(q, w)``; the developed displacement is ``dz`` itself.
    Raises :class:`ConePointError` if the path runs into a polygon vertex.
    """
    p, z = point
    z = complex(z)
    rest = complex(dz)
    for _ in range(max_crossings):
        hit = surface.first_exit(p, z, z + rest)
        if hit is None:
            return p, z + rest
        e, t = hit
        x = z + t * rest
        a, b = surface.edge_endpoints((p, e))
        if min(abs(x - a), abs(x - b)) <= surface.snap_tol:
            raise ConePointError(f"path through a vertex of polygon {p}")
        (p, z), _, _ = transition(surface, (p, x), rest)
        rest = (1.0 - t) * rest
        if abs(rest) == 0.0:
            return p, z
    raise SurfaceError("too many chart crossings in one move")
