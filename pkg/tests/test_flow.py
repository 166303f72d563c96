import math

import numpy as np
import pytest

from sbsgraph import flow
from sbsgraph.flow import (
    ASCENDING,
    CONE,
    CRITICAL,
    DESCENDING,
    FINITE,
    INFINITE,
    UNRESOLVED,
    End,
    Trajectory,
    classify_trajectory,
    trace_separatrices,
)
from sbsgraph.morse import MINIMUM, SADDLE

from conftest import analysis

KEYS = ["octagon", "decagon", "sheared"]


def test_dormand_prince_tableau_is_consistent():
    for c, row in zip(flow._C, flow._A):
        assert sum(row) == pytest.approx(c)
    assert sum(flow._B5) == pytest.approx(1.0)
    assert sum(flow._B4) == pytest.approx(1.0)
    # fifth-order weights: sum b_i c_i^k = 1/(k+1) for k <= 4
    for k in range(5):
        assert sum(b * c**k for b, c in zip(flow._B5, flow._C)) == pytest.approx(1 / (k + 1))


def test_classify_trajectory():
    def t(kind):
        return Trajectory(0, 1, DESCENDING, (), (), (), (), End(kind), 0j)

    assert classify_trajectory(t(CRITICAL)) == FINITE
    assert classify_trajectory(t(CONE)) == INFINITE
    assert classify_trajectory(t(UNRESOLVED)) == UNRESOLVED


@pytest.mark.parametrize("key", KEYS)
def test_four_separatrices_per_saddle_in_order(key):
    an = analysis(key)
    saddles = [cp.id for cp in an.critical_points if cp.kind == SADDLE]
    expect = [(s, d, sg) for s in saddles for d in (DESCENDING, ASCENDING) for sg in (1, -1)]
    got = [(t.saddle, t.direction, t.sign) for t in an.trajectories]
    assert got == expect


@pytest.mark.parametrize("key", KEYS)
def test_descending_reach_minima_and_ascending_reach_cones(key):
    an = analysis(key)
    kinds = {cp.id: cp.kind for cp in an.critical_points}
    for t in an.trajectories:
        if t.direction == DESCENDING:
            assert t.end.kind == CRITICAL
            assert kinds[t.end.ref] == MINIMUM
        else:
            assert t.end.kind == CONE
            assert t.end.ref in an.surface.cone_classes


@pytest.mark.parametrize("key", KEYS)
def test_u_is_monotone_along_trajectories(key):
    an = analysis(key)
    for t in an.trajectories:
        assert t.monotonicity_violation() <= an.monotonicity_tolerance
        # the net change has the right sign and is not small
        du = t.u[-1] - t.u[0]
        assert (du > 0) == (t.direction == ASCENDING)


@pytest.mark.parametrize("key", KEYS)
def test_displacement_is_the_developed_sum_of_steps(key):
    an = analysis(key)
    for t in an.trajectories:
        assert abs(sum(t.steps) - t.displacement) < 1e-9
        assert t.points[0] == next(cp.z for cp in an.critical_points if cp.id == t.saddle)


@pytest.mark.parametrize("key", KEYS)
def test_separatrices_do_not_cross(key):
    assert analysis(key).crossings == []


def test_octagon_descending_pairs_cancel():
    """Each saddle of the regular octagon sits midway between two copies of the
    central minimum, so its two descending displacements are opposite."""
    an = analysis("octagon")
    by_saddle = {}
    for t in an.trajectories:
        if t.direction == DESCENDING:
            by_saddle.setdefault(t.saddle, []).append(t.displacement)
    for a, b in by_saddle.values():
        assert abs(a + b) < 5e-3
        # and each has the length of the apothem cos(pi/8)
        assert abs(a) == pytest.approx(math.cos(math.pi / 8), abs=5e-3)


def test_trace_refuses_non_saddles():
    an = analysis("octagon")
    m = next(cp for cp in an.critical_points if cp.kind == MINIMUM)
    with pytest.raises(ValueError):
        trace_separatrices(an.field, m, an.critical_points)


def test_pieces_stay_inside_their_charts():
    an = analysis("sheared")
    s = an.surface
    tol = 1e-9 * s.diameter
    for t in an.trajectories:
        pieces = t.pieces(s)
        total = sum(z1 - z0 for _, z0, z1 in pieces)
        assert abs(total - sum(t.steps)) < 1e-9
        for p, z0, z1 in pieces:
            assert s.contains(p, z0, tol) and s.contains(p, z1, tol)


def test_monotonicity_violation_helper():
    t = Trajectory(0, 1, ASCENDING, (), (), (), (0.0, 1.0, 0.9, 2.0), End(CONE), 0j)
    assert t.monotonicity_violation() == pytest.approx(0.1)
    t = Trajectory(0, 1, DESCENDING, (), (), (), (2.0, 1.0, 0.0), End(CRITICAL), 0j)
    assert t.monotonicity_violation() == 0.0
    assert np.isfinite(flow.monotonicity_tolerance(analysis("octagon").field))
