import cmath
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbsgraph.surface import (
    ConePointError,
    SurfaceError,
    SurfaceParseError,
    SurfaceValidationError,
    TranslationSurface,
    builtin_surface,
    dump_surface,
    move,
    parse_builtin_spec,
    parse_surface,
    regular_polygon_surface,
    rotation_order,
    scale,
    sheared_decagon,
    validate,
)


@pytest.mark.parametrize(
    "name, params, genus, stratum",
    [
        ("octagon", {}, 2, (2,)),
        ("decagon", {}, 2, (1, 1)),
        ("sheared-decagon", {"s": 0.3, "t": 1.1}, 2, (1, 1)),
        ("regular-2n-gon", {"n": 6}, 3, (4,)),
        ("regular-2n-gon", {"n": 7}, 3, (2, 2)),
    ],
)
def test_builtin_topology(name, params, genus, stratum):
    s = builtin_surface(name, **params)
    rep = validate(s)
    assert rep.valid
    assert rep.genus == genus
    assert tuple(sorted(rep.stratum)) == stratum
    # Gauss-Bonnet for flat cone metrics: total cone excess is 2 pi (2g - 2)
    excess = sum(a - 2 * math.pi for a in s.class_angles)
    assert excess == pytest.approx(2 * math.pi * (2 * genus - 2))


def test_regular_polygons_have_diameter_two():
    assert builtin_surface("octagon").diameter == pytest.approx(2.0)
    assert builtin_surface("decagon").diameter == pytest.approx(2.0)


def test_translation_carries_edge_onto_partner():
    s = builtin_surface("decagon")
    for a, b in s.pairings:
        za0, za1 = s.edge_endpoints(a)
        zb0, zb1 = s.edge_endpoints(b)
        T = s.translation(a)
        assert za0 + T == pytest.approx(zb1)
        assert za1 + T == pytest.approx(zb0)


def test_parse_round_trip():
    s = builtin_surface("sheared-decagon", s=0.2, t=0.9)
    again = parse_surface(dump_surface(s))
    assert np.allclose(again.polygons[0], s.polygons[0])
    assert again.pairings == s.pairings


def test_parse_reports_field_and_line():
    text = '{\n "polygons": [[[0, 0], [1, 0], [1, 1]]],\n "pairings": [[[0, 0], [0, 7]]]\n}'
    with pytest.raises(SurfaceParseError) as err:
        parse_surface(text)
    assert err.value.line == 3
    assert "pairings[0]" in str(err.value)


def test_parse_rejects_unknown_key():
    with pytest.raises(SurfaceParseError, match="unknown key"):
        parse_surface('{"polygons": [], "pairings": [], "color": 1}')


def test_unpaired_edges_fail_validation():
    with pytest.raises(SurfaceValidationError, match="unpaired"):
        parse_surface(json.dumps({"polygons": [[[0, 0], [1, 0], [0, 1]]], "pairings": []}))


def test_torus_is_rejected_for_low_genus():
    sq = [[0, 0], [1, 0], [1, 1], [0, 1]]
    doc = {"polygons": [sq], "pairings": [[[0, 0], [0, 2]], [[0, 1], [0, 3]]]}
    with pytest.raises(SurfaceValidationError, match="genus"):
        parse_surface(json.dumps(doc))


def test_builtin_spec_parser():
    assert parse_builtin_spec("sheared-decagon(s=0.3,t=1.1)") == ("sheared-decagon", {"s": 0.3, "t": 1.1})
    assert parse_builtin_spec("octagon") == ("octagon", {})
    with pytest.raises(SurfaceError):
        builtin_surface("dodecahedron")


def test_rotation_order():
    assert rotation_order(builtin_surface("octagon")) == 8
    assert rotation_order(builtin_surface("decagon")) == 10
    # central symmetry survives any real-linear shear
    assert rotation_order(sheared_decagon(0.3, 1.1)) == 2


def test_scale_preserves_combinatorics():
    s = builtin_surface("decagon")
    c = 2 * cmath.exp(1j * math.pi / 3)
    t = scale(s, c)
    assert validate(t).valid
    assert t.vertex_classes == s.vertex_classes
    assert t.area == pytest.approx(abs(c) ** 2 * s.area)


def test_move_through_vertex_raises():
    s = builtin_surface("octagon")
    v = complex(s.polygons[0][0])
    with pytest.raises(ConePointError):
        move(s, (0, 0j), v * 1.5)


OCT = builtin_surface("octagon")
DEC = sheared_decagon(0.3, 1.1)


@settings(max_examples=60, deadline=None)
@given(
    x=st.floats(-0.5, 0.5),
    y=st.floats(-0.5, 0.5),
    r=st.floats(0.05, 3.0),
    th=st.floats(0, 2 * math.pi),
    which=st.sampled_from([OCT, DEC]),
)
def test_move_there_and_back(x, y, r, th, which):
    """Moving by dz and then by -dz returns to the starting point."""
    s = which
    z0 = complex(x, y)
    dz = r * cmath.exp(1j * th)
    try:
        p, z = move(s, (0, z0), dz)
        q, w = move(s, (p, z), -dz)
    except ConePointError:
        return  # path hit a cone point; legitimately undefined
    assert q == 0
    assert abs(w - z0) < 1e-9


@settings(max_examples=40, deadline=None)
@given(s=st.floats(-0.6, 0.6), t=st.floats(0.5, 2.0))
def test_sheared_family_is_valid(s, t):
    surf = sheared_decagon(s, t)
    rep = validate(surf)
    assert rep.valid and rep.genus == 2 and rep.stratum == (1, 1)
    # the shear is area-scaling by t
    assert surf.area == pytest.approx(t * regular_polygon_surface(5).area)


def test_translation_surface_rejects_bad_partner_lookup():
    s = TranslationSurface([[0, 1, 1j]], [], name="bare")
    with pytest.raises(SurfaceError):
        s.partner((0, 0))
