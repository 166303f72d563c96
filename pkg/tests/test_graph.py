import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbsgraph.flow import ASCENDING, CONE, CRITICAL, DESCENDING, UNRESOLVED, End, Trajectory
from sbsgraph.graph import GraphError, a_sbs, assemble, edges_have_marked_points, homotopy_check
from sbsgraph.morse import DEGENERATE, MINIMUM, SADDLE, CriticalPoint

from conftest import analysis


def cp(i, kind, u, z=0j):
    lam = (1.0, 2.0) if kind == MINIMUM else (-1.0, 2.0)
    return CriticalPoint(i, 0, complex(z), kind, float(u), lam, ((1.0, 0.0), (0.0, 1.0)), 0.0, 1.0)


def sep(saddle, sign, end, disp, direction=DESCENDING, kind=CRITICAL):
    return Trajectory(saddle, sign, direction, (0,), (0j,), (disp,), (0.0,), End(kind, end), complex(disp))


def two_saddle_setup():
    # minima 0, 1; saddles 2, 3; each saddle joins the two minima
    cps = [cp(0, MINIMUM, 0.0), cp(1, MINIMUM, 0.1), cp(2, SADDLE, 1.0), cp(3, SADDLE, 1.2)]
    trajs = [
        sep(2, 1, 0, -1 + 0j), sep(2, -1, 1, 2 + 0j),
        sep(3, 1, 0, 0.5j), sep(3, -1, 1, -0.25j),
        sep(2, 1, 0, 0j, ASCENDING, CONE),
    ]
    return cps, trajs


def test_each_saddle_gives_one_edge():
    cps, trajs = two_saddle_setup()
    g = assemble(cps, trajs)
    assert g.minima == (0, 1) and g.saddles == (2, 3)
    assert len(g.edges) == 2
    assert {frozenset(e) for e in g.edges} == {frozenset((0, 2, 1)), frozenset((0, 3, 1))}
    assert g.euler_characteristic == 0
    assert g.connected and edges_have_marked_points(g)


def test_segments_point_towards_increasing_u():
    cps, trajs = two_saddle_setup()
    g = assemble(cps, trajs)
    u = {c.id: c.u for c in cps}
    for s in g.segments:
        assert u[s.head] > u[s.tail]
    # a descending displacement runs saddle -> minimum; the segment runs back
    assert g.a_sbs == pytest.approx(-((-1) + 2 + 0.5j - 0.25j))
    assert a_sbs(g) == g.a_sbs


def test_dec_orientation_flips_the_sign():
    cps, trajs = two_saddle_setup()
    inc = assemble(cps, trajs, "inc")
    dec = assemble(cps, trajs, "dec")
    assert dec.a_sbs == pytest.approx(-inc.a_sbs)
    for a, b in zip(inc.segments, dec.segments):
        assert (b.tail, b.head) == (a.head, a.tail)
        assert b.integral == -a.integral


def test_saddle_connection_makes_a_multi_marked_edge():
    # saddle 3 descends into saddle 2 on one side: 0 - 2 - 1 with 3 hanging off 2
    cps = [cp(0, MINIMUM, 0.0), cp(1, MINIMUM, 0.1), cp(2, SADDLE, 1.0), cp(3, SADDLE, 1.5)]
    trajs = [sep(2, 1, 0, 1), sep(2, -1, 1, -1), sep(3, 1, 2, 1j), sep(3, -1, 0, -1j)]
    g = assemble(cps, trajs)
    assert 2 in g.branch_saddles
    assert edges_have_marked_points(g)
    chains = {tuple(e) for e in g.edges}
    assert any(e[0] == 2 or e[-1] == 2 for e in chains)
    assert g.euler_characteristic == 0


def test_wrong_number_of_descending_separatrices_is_an_error():
    cps, trajs = two_saddle_setup()
    with pytest.raises(GraphError, match="saddle 3"):
        assemble(cps, trajs[:3])


def test_unresolved_is_an_error_unless_waived():
    cps, trajs = two_saddle_setup()
    trajs[0] = sep(2, 1, None, 0j, kind=UNRESOLVED)
    with pytest.raises(GraphError):
        assemble(cps, trajs)
    g = assemble(cps, trajs, waive_unresolved=True)
    assert len(g.segments) == 3


def test_dangling_endpoint_is_an_error():
    cps, trajs = two_saddle_setup()
    trajs[0] = sep(2, 1, 99, 0j)
    with pytest.raises(GraphError, match="unknown"):
        assemble(cps, trajs)


def test_isolated_minimum_is_reported_and_disconnects():
    cps, trajs = two_saddle_setup()
    cps.append(cp(4, MINIMUM, 0.5))
    g = assemble(cps, trajs)
    assert g.isolated_minima == (4,)
    rep = homotopy_check(g, 1, 0)
    assert rep.components == 2 and not rep.passed


def test_flat_segments_are_degenerate_and_skipped():
    cps = [cp(0, MINIMUM, 0.0), cp(1, SADDLE, 1.0), cp(2, SADDLE, 1.0)]
    trajs = [sep(1, 1, 0, 1), sep(1, -1, 2, 5), sep(2, 1, 0, 1j), sep(2, -1, 0, -2j)]
    g = assemble(cps, trajs)
    assert g.n_degenerate == 1
    assert g.a_sbs == pytest.approx(-(1 + 1j - 2j))


def test_degenerate_critical_points_taint_their_segments():
    cps = [cp(0, DEGENERATE, 0.0), cp(1, SADDLE, 1.0)]
    trajs = [sep(1, 1, 0, 1), sep(1, -1, 0, -1)]
    g = assemble(cps, trajs)
    assert g.n_degenerate == 2 and g.a_sbs == 0


@settings(max_examples=100, deadline=None)
@given(
    n_min=st.integers(1, 4),
    data=st.data(),
)
def test_random_graphs_satisfy_the_count_identity(n_min, data):
    n_sad = data.draw(st.integers(0, 6))
    cps = [cp(i, MINIMUM, 0.01 * i) for i in range(n_min)]
    cps += [cp(n_min + j, SADDLE, 1.0 + 0.01 * j) for j in range(n_sad)]
    trajs = []
    for j in range(n_sad):
        for sign in (1, -1):
            end = data.draw(st.integers(0, n_min - 1))
            d = complex(data.draw(st.floats(-2, 2)), data.draw(st.floats(-2, 2)))
            trajs.append(sep(n_min + j, sign, end, d))
    g = assemble(cps, trajs)
    assert g.euler_characteristic == n_min - n_sad
    assert len(g.segments) == 2 * n_sad
    assert edges_have_marked_points(g)
    # reversal of every segment flips A exactly
    assert assemble(cps, trajs, "dec").a_sbs == -g.a_sbs
    # components plus independent cycles: h1 - h0 = -chi
    rep = homotopy_check(g, 0, 0)
    assert rep.first_betti - rep.components == -g.euler_characteristic


@pytest.mark.parametrize("key, chi", [("octagon", -3), ("decagon", -4), ("sheared", -4)])
def test_fixture_graphs(key, chi):
    an = analysis(key)
    g = an.graph
    assert g.euler_characteristic == chi
    assert g.connected and edges_have_marked_points(g)
    assert len(g.edges) == len(g.saddles)  # no saddle connections on these fixtures
    assert an.homotopy.passed
    d = g.to_dict(an.critical_points)
    assert d["a_sbs"] == [g.a_sbs.real, g.a_sbs.imag]
    assert len(d["segments"]) == 2 * len(g.saddles)


def test_segment_integrals_are_developed_endpoint_differences():
    an = analysis("decagon")
    disp = {(t.saddle, t.sign): t.displacement for t in an.trajectories if t.direction == DESCENDING}
    for s in an.graph.segments:
        assert s.integral == -disp[(s.saddle, s.sign)]
