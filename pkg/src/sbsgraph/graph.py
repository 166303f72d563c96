"""The SBS graph: minima, saddles and the finite descending separatrices.

Each saddle's two descending separatrices form one smooth path through it.
The graph's segments are these separatrices, delimited by consecutive
critical points; each segment is oriented towards increasing u (the default
``"inc"`` convention) and carries the integral of ``rho = dz`` along it in that
orientation.  ``A_SBS`` is the sum over non-degenerate segments.
"""

from __future__ import annotations

from dataclasses import dataclass

from .flow import CRITICAL, DESCENDING, Trajectory
from .morse import DEGENERATE, MINIMUM, SADDLE

ORIENTATIONS = ("inc", "dec")


class GraphError(ValueError):
    """Inconsistent input to :func:`assemble`."""


@dataclass(frozen=True)
class Segment:
    tail: int  # critical point id with the lower u (for "inc")
    head: int
    integral: complex  # integral of rho from tail to head
    du: float  # u(head) - u(tail)
    degenerate: bool
    saddle: int  # saddle whose separatrix this is
    sign: int

    def reversed(self) -> "Segment":
        return Segment(self.head, self.tail, -self.integral, -self.du, self.degenerate, self.saddle, self.sign)

    def to_dict(self) -> dict:
        return {
            "tail": self.tail,
            "head": self.head,
            "integral": [self.integral.real, self.integral.imag],
            "du": self.du,
            "degenerate": self.degenerate,
            "separatrix": [self.saddle, self.sign],
        }


@dataclass(frozen=True)
class SBSGraph:
    minima: tuple  # ids
    saddles: tuple  # ids (marked points)
    segments: tuple
    edges: tuple  # chains of critical point ids between graph vertices
    branch_saddles: tuple  # saddles of degree != 2, promoted to vertices
    n_components: int
    isolated_minima: tuple
    orientation: str
    a_sbs: complex
    n_degenerate: int

    @property
    def euler_characteristic(self) -> int:
        return len(self.minima) - len(self.saddles)

    @property
    def connected(self) -> bool:
        return self.n_components == 1

    def to_dict(self, critical_points=None) -> dict:
        pos = {}
        if critical_points is not None:
            pos = {cp.id: cp for cp in critical_points}

        def node(i):
            cp = pos.get(i)
            if cp is None:
                return {"id": i}
            return {"id": i, "poly": cp.poly, "position": [cp.z.real, cp.z.imag], "u": cp.u}

        return {
            "vertices": [node(i) for i in self.minima],
            "marked_points": [node(i) for i in self.saddles],
            "branch_saddles": list(self.branch_saddles),
            "segments": [s.to_dict() for s in self.segments],
            "edges": [list(e) for e in self.edges],
            "euler_characteristic": self.euler_characteristic,
            "components": self.n_components,
            "isolated_minima": list(self.isolated_minima),
            "orientation": self.orientation,
            "degenerate_segments": self.n_degenerate,
            "a_sbs": [self.a_sbs.real, self.a_sbs.imag],
        }


def _segment(t: Trajectory, values: dict, eps_flat: float, degenerate: set) -> Segment:
    u_start, u_end = values[t.saddle], values[t.end.ref]
    # the separatrix runs saddle -> end; orient it towards increasing u
    if u_end <= u_start:
        tail, head, integral = t.end.ref, t.saddle, -t.displacement
    else:
        tail, head, integral = t.saddle, t.end.ref, t.displacement
    du = abs(u_end - u_start)
    flat = du < eps_flat or t.saddle in degenerate or t.end.ref in degenerate
    return Segment(tail, head, complex(integral), float(du), bool(flat), t.saddle, t.sign)


def _chains(vertex_set, adjacency):
    """Maximal chains between vertices through degree-2 nodes."""
    seen_edges = set()
    chains = []
    for v in sorted(vertex_set):
        for w, seg_id in adjacency.get(v, ()):
            if seg_id in seen_edges:
                continue
            chain = [v]
            prev_seg = seg_id
            seen_edges.add(seg_id)
            cur = w
            while cur not in vertex_set:
                chain.append(cur)
                nxt = [(x, s) for x, s in adjacency[cur] if s != prev_seg]
                x, s = nxt[0]
                seen_edges.add(s)
                prev_seg = s
                cur = x
            chain.append(cur)
            chains.append(tuple(chain))
    return chains


def assemble(
    critical_points,
    trajectories,
    orientation: str = "inc",
    eps_flat: float | None = None,
    waive_unresolved: bool = False,
) -> SBSGraph:
    """Build the SBS graph from classified critical points and traced separatrices.

    Parameters
    ----------
    orientation
        ``"inc"`` orients segments towards increasing u, ``"dec"`` the other
        way (which flips the sign of ``A_SBS``).
    eps_flat
        Segments whose endpoint values differ by less are degenerate and are
        skipped in ``A_SBS``; default ``1e-8 * (u range of the critical points)``.
    waive_unresolved
        Skip unresolved descending separatrices instead of raising.
    """
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}")
    cps = {cp.id: cp for cp in critical_points}
    values = {i: cp.u for i, cp in cps.items()}
    if eps_flat is None:
        span = max(values.values()) - min(values.values()) if values else 0.0
        eps_flat = 1e-8 * span
    degenerate = {i for i, cp in cps.items() if cp.kind == DEGENERATE}
    minima = sorted(i for i, cp in cps.items() if cp.kind == MINIMUM)
    saddles = sorted(i for i, cp in cps.items() if cp.kind == SADDLE)

    per_saddle = {s: [] for s in saddles}
    for t in trajectories:
        if t.direction != DESCENDING:
            continue
        if t.saddle not in per_saddle:
            raise GraphError(f"separatrix from unknown saddle {t.saddle}")
        if t.end.kind != CRITICAL:
            if waive_unresolved:
                continue
            raise GraphError(
                f"descending separatrix of saddle {t.saddle} ({t.sign:+d}) did not reach a critical point"
            )
        if t.end.ref not in cps:
            raise GraphError(f"separatrix ends at unknown critical point {t.end.ref}")
        per_saddle[t.saddle].append(t)
    for s, ts in per_saddle.items():
        if len(ts) != 2 and not waive_unresolved:
            raise GraphError(f"saddle {s} has {len(ts)} finite descending separatrices, expected 2")

    segments = []
    for s in saddles:
        for t in sorted(per_saddle[s], key=lambda t: -t.sign):
            seg = _segment(t, values, eps_flat, degenerate)
            if orientation == "dec":
                seg = seg.reversed()
            segments.append(seg)

    adjacency: dict = {}
    for k, seg in enumerate(segments):
        adjacency.setdefault(seg.tail, []).append((seg.head, k))
        adjacency.setdefault(seg.head, []).append((seg.tail, k))
    branch = sorted(s for s in saddles if len(adjacency.get(s, ())) != 2)
    vertex_set = set(minima) | set(branch)
    edges = _chains(vertex_set, adjacency)

    # connected components over minima, saddles and any other segment endpoint
    parent = {i: i for i in minima + saddles}
    for seg in segments:
        parent.setdefault(seg.tail, seg.tail)
        parent.setdefault(seg.head, seg.head)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for seg in segments:
        parent[find(seg.tail)] = find(seg.head)
    n_comp = len({find(i) for i in parent})
    isolated = tuple(m for m in minima if m not in adjacency)
    a = sum((seg.integral for seg in segments if not seg.degenerate), 0j)
    n_deg = sum(seg.degenerate for seg in segments)
    return SBSGraph(
        tuple(minima), tuple(saddles), tuple(segments), tuple(edges), tuple(branch),
        n_comp, isolated, orientation, complex(a), int(n_deg),
    )


@dataclass(frozen=True)
class HomotopyReport:
    euler_characteristic: int
    expected: int
    components: int
    first_betti: int
    passed: bool

    def to_dict(self) -> dict:
        return {
            "euler_characteristic": self.euler_characteristic,
            "expected": self.expected,
            "components": self.components,
            "first_betti": self.first_betti,
            "passed": self.passed,
        }


def homotopy_check(graph: SBSGraph, g: int, m: int) -> HomotopyReport:
    """The graph must be connected with Euler characteristic ``2 - 2g - m``."""
    chi = graph.euler_characteristic
    expected = 2 - 2 * g - m
    b1 = graph.n_components - chi
    return HomotopyReport(chi, expected, graph.n_components, b1, graph.connected and chi == expected)


def a_sbs(graph: SBSGraph) -> complex:
    """Sum of the segment integrals of ``rho`` over non-degenerate segments."""
    return graph.a_sbs


def edges_have_marked_points(graph: SBSGraph) -> bool:
    saddles = set(graph.saddles)
    return all(any(n in saddles for n in edge) for edge in graph.edges)
