"""Conforming triangulations of translation surfaces.

Boundary subdivisions are generated once per edge pairing and copied to the
partner edge by translation, so identified boundary nodes match exactly and
become shared degrees of freedom.  Element size is graded toward cone points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import triangle

from .surface import TranslationSurface, point_segment_distance

MIN_ANGLE_DEG = 20.0
_EQ_AREA = math.sqrt(3.0) / 4.0


class MeshError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    surface: TranslationSurface
    nodes: np.ndarray  # (N, 2)
    node_poly: np.ndarray  # (N,)
    triangles: np.ndarray  # (T, 3), counter-clockwise
    tri_poly: np.ndarray  # (T,)
    dof: np.ndarray  # (N,) node -> degree of freedom
    node_corner: np.ndarray  # (N,) vertex class of a polygon corner, -1 elsewhere
    edge_nodes: dict = field(repr=False)  # (p, e) -> node ids from start to end corner
    h: float = 0.0
    beta: float = 0.0
    h_min: float = 0.0
    cone_radius: tuple = ()
    level: int = 0

    @property
    def n_dofs(self) -> int:
        return int(self.dof.max()) + 1

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def cone_node(self) -> np.ndarray:
        orders = np.array(self.surface.class_orders + (0,))
        return orders[self.node_corner] >= 1

    @property
    def cone_dofs(self) -> np.ndarray:
        return np.unique(self.dof[self.cone_node])

    def triangle_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        a, b, c = p[:, 0], p[:, 1], p[:, 2]
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    def min_angles(self) -> np.ndarray:
        return _min_angles(self.nodes[self.triangles])

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "node_poly": self.node_poly.tolist(),
            "triangles": self.triangles.tolist(),
            "dof_classes": self.dof.tolist(),
            "cone_nodes": np.flatnonzero(self.cone_node).tolist(),
            "h": self.h,
            "beta": self.beta,
            "h_min": self.h_min,
        }


def _min_angles(tri_pts: np.ndarray) -> np.ndarray:
    a, b, c = tri_pts[:, 0], tri_pts[:, 1], tri_pts[:, 2]
    la = np.linalg.norm(b - c, axis=1)
    lb = np.linalg.norm(c - a, axis=1)
    lc = np.linalg.norm(a - b, axis=1)

    def ang(x, y, z):
        return np.degrees(np.arccos(np.clip((y**2 + z**2 - x**2) / (2 * y * z), -1.0, 1.0)))

    return np.minimum(np.minimum(ang(la, lb, lc), ang(lb, lc, la)), ang(lc, la, lb))


def cone_radii(surface: TranslationSurface) -> tuple[float, ...]:
    """Cutoff radius per vertex class (NaN for regular vertices).

    Half the distance from any copy of the cone to the nearest other polygon
    vertex or non-adjacent edge, so singular supports stay disjoint sectors.
    """
    radii = []
    for cls, d in zip(surface.vertex_classes, surface.class_orders):
        if d < 1:
            radii.append(float("nan"))
            continue
        best = math.inf
        for p, k in cls:
            poly = surface.polygons[p]
            n = len(poly)
            v = complex(poly[k])
            for j in range(n):
                if j != k:
                    best = min(best, abs(complex(poly[j]) - v))
                if j not in (k, (k - 1) % n):
                    best = min(best, point_segment_distance(v, complex(poly[j]), complex(poly[(j + 1) % n])))
        radii.append(0.5 * best)
    return tuple(radii)


class _Sizer:
    """Target edge length ``h (r / R)^beta`` clamped to ``[h_min, h]``."""

    def __init__(self, cones_by_poly, h, beta, h_min):
        self.cones_by_poly = cones_by_poly
        self.h, self.beta, self.h_min = h, beta, h_min

    def __call__(self, p: int, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        size = np.full(z.shape, self.h)
        for v, radius in self.cones_by_poly[p]:
            r = np.abs(z - v) / radius
            local = self.h * np.power(np.minimum(r, 1.0), self.beta)
            size = np.minimum(size, local)
        return np.maximum(size, self.h_min)


def _edge_params(sizer, p, a, b, q, qa, qb) -> np.ndarray:
    """Interior parameters in (0, 1) along edge a->b, graded by both sides."""
    s = np.linspace(0.0, 1.0, 4001)
    size = np.minimum(sizer(p, a + s * (b - a)), sizer(q, qb + s * (qa - qb)))
    length = abs(b - a)
    density = length / size
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(s))])
    n_seg = max(2, int(math.ceil(cum[-1])))
    targets = np.linspace(0.0, cum[-1], n_seg + 1)[1:-1]
    return np.interp(targets, cum, s)


def triangulate(surface: TranslationSurface, h: float, beta: float = 0.6, h_min: float | None = None) -> Mesh:
    """Graded conforming triangulation of ``surface``.

    Parameters
    ----------
    surface : TranslationSurface
        A valid surface.
    h : float
        Target element size away from cone points.
    beta : float
        Grading exponent in ``[0, 1]``; edge length near a cone at flat
        distance ``r`` is about ``h (r / R)^beta``.
    h_min : float, optional
        Lower clamp on the element size, default ``h / 50``.

    Meshing happens in a canonical frame (first edge of polygon 0 mapped to
    ``[0, 1]``) so the result is equivariant under similarities of the
    surface.
    """
    if h_min is None:
        h_min = h / 50.0
    if not h > 0:
        raise ValueError("h must be positive")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if not 0.0 < h_min < h:
        raise ValueError("need 0 < h_min < h")

    origin = complex(surface.polygons[0][0])
    unit = surface.edge_vector((0, 0))
    mod = abs(unit)

    def to_canon(z):
        w = (np.asarray(z) - origin) / unit
        return np.round(w.real, 12) + 1j * np.round(w.imag, 12)

    canon = [to_canon(poly) for poly in surface.polygons]
    radii = cone_radii(surface)
    cones_by_poly = []
    for p, poly in enumerate(canon):
        items = []
        for k in range(len(poly)):
            cls = surface.corner_class[(p, k)]
            if surface.class_orders[cls] >= 1:
                items.append((complex(poly[k]), radii[cls] / mod))
        cones_by_poly.append(items)
    sizer = _Sizer(cones_by_poly, h / mod, beta, h_min / mod)

    # boundary parameters per directed edge
    params: dict = {}
    for ea, eb in surface.pairings:
        (p, e), (q, f) = ea, eb
        np_, nq = len(canon[p]), len(canon[q])
        t = _edge_params(
            sizer, p, complex(canon[p][e]), complex(canon[p][(e + 1) % np_]),
            q, complex(canon[q][f]), complex(canon[q][(f + 1) % nq]),
        )
        params[ea] = t
        params[eb] = (1.0 - t)[::-1]

    nodes: list[complex] = []
    node_poly: list[int] = []
    node_corner: list[int] = []
    tris: list[np.ndarray] = []
    tri_poly: list[int] = []
    edge_nodes: dict = {}
    for p, poly in enumerate(surface.polygons):
        n = len(poly)
        cpoly = canon[p]
        pts_c: list[complex] = []
        pts_o: list[complex] = []
        corner_idx = []
        local_edges = []
        for e in range(n):
            a, b = complex(poly[e]), complex(poly[(e + 1) % n])
            ca, cb = complex(cpoly[e]), complex(cpoly[(e + 1) % n])
            corner_idx.append(len(pts_c))
            pts_c.append(ca)
            pts_o.append(a)
            ids = [len(pts_c) - 1]
            for t in params[(p, e)]:
                pts_c.append(ca + t * (cb - ca))
                pts_o.append(a + t * (b - a))
                ids.append(len(pts_c) - 1)
            local_edges.append(ids)
        m = len(pts_c)
        for e in range(n):
            local_edges[e] = local_edges[e] + [corner_idx[(e + 1) % n]]
        verts = np.column_stack([np.real(pts_c), np.imag(pts_c)])
        segs = np.column_stack([np.arange(m), (np.arange(m) + 1) % m])
        try:
            out = triangle.triangulate(
                {"vertices": verts, "segments": segs},
                f"pq{MIN_ANGLE_DEG:g}YQa{_EQ_AREA * (h / mod) ** 2:.17g}",
            )
            for _ in range(40):
                tv = out["vertices"]
                tt = out["triangles"]
                cent = tv[tt].mean(axis=1)
                target = _EQ_AREA * sizer(p, cent[:, 0] + 1j * cent[:, 1]) ** 2
                pts = tv[tt]
                area = 0.5 * np.abs(
                    (pts[:, 1, 0] - pts[:, 0, 0]) * (pts[:, 2, 1] - pts[:, 0, 1])
                    - (pts[:, 1, 1] - pts[:, 0, 1]) * (pts[:, 2, 0] - pts[:, 0, 0])
                )
                if np.all(area <= 1.2 * target):
                    break
                out = triangle.triangulate(
                    {"vertices": tv, "segments": out["segments"], "triangles": tt,
                     "triangle_max_area": target},
                    f"rpq{MIN_ANGLE_DEG:g}YQa",
                )
            else:
                raise MeshError(f"size refinement did not settle on polygon {p}")
        except MeshError:
            raise
        except Exception as exc:  # triangle raises bare RuntimeErrors
            raise MeshError(f"unmeshable polygon {p}: {exc}") from exc
        tv = out["vertices"]
        if len(tv) < m or not np.allclose(tv[:m], verts, rtol=0, atol=1e-12):
            raise MeshError(f"boundary of polygon {p} was modified by the mesher")
        base = len(nodes)
        inner = tv[m:, 0] + 1j * tv[m:, 1]
        nodes.extend(pts_o)
        nodes.extend((origin + unit * inner).tolist())
        node_poly.extend([p] * len(tv))
        corners = [-1] * len(tv)
        for k, ci in enumerate(corner_idx):
            corners[ci] = surface.corner_class[(p, k)]
        node_corner.extend(corners)
        tris.append(out["triangles"] + base)
        tri_poly.extend([p] * len(out["triangles"]))
        for e in range(n):
            edge_nodes[(p, e)] = np.array(local_edges[e]) + base

    z = np.array(nodes)
    mesh = Mesh(
        surface=surface,
        nodes=np.column_stack([z.real, z.imag]),
        node_poly=np.array(node_poly),
        triangles=np.vstack(tris).astype(np.int64),
        tri_poly=np.array(tri_poly),
        dof=_dof_classes(surface, len(z), edge_nodes),
        node_corner=np.array(node_corner),
        edge_nodes=edge_nodes,
        h=h,
        beta=beta,
        h_min=h_min,
        cone_radius=radii,
    )
    check_mesh(mesh)
    return mesh


def _dof_classes(surface, n_nodes, edge_nodes) -> np.ndarray:
    parent = np.arange(n_nodes)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for ea, eb in surface.pairings:
        sa, sb = edge_nodes[ea], edge_nodes[eb][::-1]
        if len(sa) != len(sb):
            raise MeshError(f"paired edges {ea}, {eb} have different node counts")
        for i, j in zip(sa, sb):
            ri, rj = find(int(i)), find(int(j))
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(n_nodes)])
    _, dof = np.unique(roots, return_inverse=True)
    return dof.astype(np.int64)


def check_mesh(mesh: Mesh) -> None:
    """Raise :class:`MeshError` if a structural invariant fails."""
    areas = mesh.triangle_areas()
    if np.any(areas <= 0):
        raise MeshError(f"inverted or degenerate triangle {int(np.argmin(areas))}")
    ang = mesh.min_angles()
    if ang.min() < MIN_ANGLE_DEG - 1e-6:
        raise MeshError(f"triangle {int(np.argmin(ang))} has minimum angle {ang.min():.3f} deg")
    surf = mesh.surface
    tol = 1e-9 * surf.diameter
    z = mesh.nodes[:, 0] + 1j * mesh.nodes[:, 1]
    for ea, eb in surf.pairings:
        sa, sb = mesh.edge_nodes[ea], mesh.edge_nodes[eb][::-1]
        shift = surf.translation(ea)
        if np.max(np.abs(z[sa] + shift - z[sb])) > tol:
            raise MeshError(f"paired edges {ea}, {eb} carry mismatched nodes")
        if np.any(mesh.dof[sa] != mesh.dof[sb]):
            raise MeshError(f"paired edges {ea}, {eb} carry mismatched dof classes")
    total = float(areas.sum())
    if abs(total - surf.area) > 1e-10 * surf.area:
        raise MeshError(f"mesh area {total} differs from surface area {surf.area}")


def refine(mesh: Mesh) -> Mesh:
    """Split every triangle into four through its edge midpoints."""
    nodes = [mesh.nodes]
    node_poly = [mesh.node_poly]
    n = mesh.n_nodes
    tri = mesh.triangles
    edges = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    mids = 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])
    nodes.append(mids)
    node_poly.append(mesh.node_poly[uniq[:, 0]])
    mid_id = n + inverse
    nt = len(tri)
    mab, mbc, mca = mid_id[:nt], mid_id[nt : 2 * nt], mid_id[2 * nt :]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    new_tri = np.concatenate(
        [
            np.column_stack([a, mab, mca]),
            np.column_stack([mab, b, mbc]),
            np.column_stack([mca, mbc, c]),
            np.column_stack([mab, mbc, mca]),
        ]
    )
    new_tri_poly = np.tile(mesh.tri_poly, 4)
    lookup = {tuple(e): n + i for i, e in enumerate(uniq.tolist())}
    edge_nodes = {}
    for key, seq in mesh.edge_nodes.items():
        out = [int(seq[0])]
        for i, j in zip(seq[:-1], seq[1:]):
            out.append(lookup[(min(i, j), max(i, j))])
            out.append(int(j))
        edge_nodes[key] = np.array(out)
    all_nodes = np.vstack(nodes)
    node_corner = np.concatenate([mesh.node_corner, np.full(len(uniq), -1)])
    refined = Mesh(
        surface=mesh.surface,
        nodes=all_nodes,
        node_poly=np.concatenate(node_poly),
        triangles=new_tri,
        tri_poly=new_tri_poly,
        dof=_dof_classes(mesh.surface, len(all_nodes), edge_nodes),
        node_corner=node_corner,
        edge_nodes=edge_nodes,
        h=mesh.h / 2,
        beta=mesh.beta,
        h_min=mesh.h_min / 2,
        cone_radius=mesh.cone_radius,
        level=mesh.level + 1,
    )
    check_mesh(refined)
    return refined
