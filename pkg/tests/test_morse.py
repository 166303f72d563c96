import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbsgraph.morse import (
    DEGENERATE,
    MAXIMUM,
    MINIMUM,
    SADDLE,
    classify,
    morse_check,
    search_critical_points,
    watershed_counts,
)

from conftest import analysis

nonzero = st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3)


@settings(max_examples=200, deadline=None)
@given(a=nonzero, b=nonzero)
def test_classify_by_eigenvalue_signs(a, b):
    lam = tuple(sorted((a, b)))
    # the generated magnitudes differ by at most 1e6, so this threshold never bites
    kind = classify(lam, 1e-8 * max(abs(a), abs(b)))
    if a > 0 and b > 0:
        assert kind == MINIMUM
    elif a < 0 and b < 0:
        assert kind == MAXIMUM
    else:
        assert kind == SADDLE


def test_classify_flags_small_eigenvalues():
    assert classify((1e-12, 1.0), 1e-6) == DEGENERATE
    assert classify((-1.0, -1e-9), 1e-6) == DEGENERATE


def test_morse_check_identity():
    ok = morse_check({MINIMUM: 1, SADDLE: 5}, 2, 2)
    assert ok.passed and ok.expected == 4
    bad = morse_check({MINIMUM: 1, SADDLE: 4}, 2, 2)
    assert bad.passed is False
    assert morse_check({MINIMUM: 1, SADDLE: 3, MAXIMUM: 1}, 2, 0).passed is False
    skipped = morse_check({MINIMUM: 1, SADDLE: 5, DEGENERATE: 1}, 2, 2)
    assert skipped.passed is None and "degenerate" in skipped.note


@pytest.mark.parametrize("key, saddles", [("octagon", 4), ("decagon", 5), ("sheared", 5)])
def test_fixture_counts(key, saddles):
    an = analysis(key)
    c = an.search.counts()
    assert c[MAXIMUM] == 0 and c[DEGENERATE] == 0
    assert c[MINIMUM] == 1 and c[SADDLE] == saddles


@pytest.mark.parametrize("key", ["octagon", "decagon", "sheared"])
def test_watershed_agrees(key):
    an = analysis(key)
    ws = watershed_counts(an.field)
    c = an.search.counts()
    assert (ws[MINIMUM], ws[SADDLE], ws[MAXIMUM]) == (c[MINIMUM], c[SADDLE], 0)
    # Euler characteristic of the surface punctured at the cone points
    s = an.surface
    assert ws["euler"] == 2 - 2 * s.genus - s.n_zeros


@pytest.mark.parametrize("key", ["octagon", "decagon", "sheared"])
def test_critical_points_are_critical(key):
    an = analysis(key)
    for cp in an.critical_points:
        assert cp.grad_norm <= an.search.thresholds.grad_tol
        v = np.array(cp.eigenvectors)
        assert np.allclose(v @ v.T, np.eye(2), atol=1e-12)
        if cp.kind == SADDLE:
            assert cp.eigenvalues[0] < 0 < cp.eigenvalues[1]
            assert cp.jacobian_det < 0
        else:
            assert cp.eigenvalues[0] > 0
    us = [cp.u for cp in an.critical_points]
    assert us == sorted(us)
    assert [cp.id for cp in an.critical_points] == list(range(len(us)))


def test_minimum_sits_at_the_symmetry_centre():
    an = analysis("octagon")
    (m,) = [cp for cp in an.critical_points if cp.kind == MINIMUM]
    h = an.mesh.h
    assert abs(m.z) < h**2


def test_saddles_of_the_regular_decagon_are_equivalent():
    """The rotation symmetry permutes the saddles, so they share one critical value."""
    an = analysis("decagon")
    us = [cp.u for cp in an.critical_points if cp.kind == SADDLE]
    assert max(us) - min(us) < 1e-3


def test_search_is_deterministic():
    an = analysis("sheared")
    again = search_critical_points(an.field)
    assert again.to_dict() == an.search.to_dict()


def test_watershed_cancels_vertex_on_saddle_artefact():
    """At s = 0.04 a mesh vertex sits exactly on a saddle whose descending
    sector contains no neighbour, so the raw lower-link count sees an extra
    minimum/saddle pair.  Its persistence is far below the interpolation
    error bound, and simplification removes it."""
    from sbsgraph.liouville import solve
    from sbsgraph.mesh import triangulate
    from sbsgraph.surface import builtin_surface

    s = builtin_surface("sheared-decagon", s=0.04, t=1.1)
    f = solve(triangulate(s, 0.025 * s.diameter))
    raw = watershed_counts(f, simplify=False)
    ws = watershed_counts(f)
    assert (raw[MINIMUM], raw[SADDLE]) == (2, 6)
    assert (ws[MINIMUM], ws[SADDLE]) == (1, 5)
    assert ws["cancelled_pairs"] == 1
    assert ws["max_cancelled_persistence"] < 0.2 * ws["threshold"]
    assert raw["euler"] == ws["euler"] == -4
