import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from absim.errors import ClassMismatch, ConfigError, Degenerate
from absim.geometry import (BallComponent, LineClassification, MagnetAssembly, OrientedLine,
                            TorusComponent, classify_line, classify_lines, gauss_linking,
                            in_region_C, line_core_distance, linking_number, region_mask,
                            same_class)

Z = (0.0, 0.0, 1.0)


@pytest.fixture
def torus():
    return TorusComponent((0, 0, 0), Z, 2.0, 0.5)


@pytest.fixture
def magnet(torus):
    return MagnetAssembly([torus], 3.0)


def test_threading_line_is_hole(magnet):
    assert classify_line(OrientedLine((0, 0, -10), Z), magnet) == LineClassification.hole([1])


def test_far_line_is_out(magnet):
    assert classify_line(OrientedLine((10, 0, -10), Z), magnet).kind == "out"


def test_line_through_core_is_hit(magnet):
    assert classify_line(OrientedLine((2, 0, -10), Z), magnet).is_hit


def test_grazing_lines(magnet):
    assert classify_line(OrientedLine((2.49, 0, -10), Z), magnet).is_hit
    assert classify_line(OrientedLine((2.51, 0, -10), Z), magnet).kind == "out"
    assert classify_line(OrientedLine((1.51, 0, -10), Z), magnet).is_hit
    assert classify_line(OrientedLine((1.49, 0, -10), Z), magnet).kind == "hole"


def test_oblique_grazing_distance(torus):
    # line in the x-z plane tangent to the tube from outside, offset found by hand:
    # the closest core point is (2,0,0); a line along (1,0,1)/sqrt2 through (2+d*sqrt2,0,0)
    # sits at distance d from it
    d = 0.3
    base = np.array([2 + d * np.sqrt(2), 0.0, 0.0])
    dist = line_core_distance(base, (1, 0, 1), torus)
    assert dist[0] == pytest.approx(d, abs=1e-10)


def test_linking_matches_gauss_integral(torus):
    line = OrientedLine((0.3, 0.2, -10), (0.1, 0.05, 1.0))
    g = gauss_linking(line, torus, 3.0)
    assert abs(g - 1) < 1e-3
    assert linking_number(line, torus) == 1
    assert abs(gauss_linking(line.reversed(), torus, 3.0) + 1) < 1e-3


def test_gauss_integral_for_out_line(torus):
    line = OrientedLine((2.8, 0.2, -10), Z)
    assert abs(gauss_linking(line, torus, 3.0)) < 1e-3


def test_line_outside_ball_has_zero_linking(torus):
    assert linking_number(OrientedLine((10, 0, 0), Z), torus) == 0


def test_reversed_line_flips_sign(torus):
    line = OrientedLine((0, 0, -10), Z)
    assert linking_number(line.reversed(), torus) == -1


def test_orientation_flips_sign():
    t = TorusComponent((0, 0, 0), Z, 2.0, 0.5, orientation=-1)
    assert linking_number(OrientedLine((0, 0, -10), Z), t) == -1


def test_in_plane_line_is_degenerate(torus):
    with pytest.raises(Degenerate):
        linking_number(OrientedLine((0, 0, 0), (1, 0, 0)), torus)
    # parallel but offset from the plane is unambiguous
    assert linking_number(OrientedLine((0, 0, 1), (1, 0, 0)), torus) == 0


def test_same_class(magnet):
    a = OrientedLine((0, 0, -10), Z)
    b = OrientedLine((0.1, 0, -10), Z)
    assert same_class(a, b, magnet)
    assert not same_class(a, a.reversed(), magnet)
    assert not same_class(a, OrientedLine((10, 0, -10), Z), magnet)
    with pytest.raises(ClassMismatch):
        same_class(a, OrientedLine((2, 0, -10), Z), magnet)


def test_region_membership(magnet):
    h = LineClassification.hole([1])
    out = LineClassification.out(1)
    assert in_region_C((0, 0, -5), h, Z, magnet)
    assert not in_region_C((5, 0, 0), h, Z, magnet)
    assert in_region_C((5, 0, 0), out, Z, magnet)
    assert in_region_C((0, 0, 0.5), h, Z, magnet)
    assert not in_region_C((0, 0, 0.5), out, Z, magnet)
    assert not in_region_C((2, 0, 0.5), h, Z, magnet)


def test_rejects_non_finite(magnet):
    with pytest.raises(ValueError):
        classify_line(OrientedLine((np.nan, 0, 0), Z), magnet)


def test_assembly_validation(torus):
    with pytest.raises(ConfigError):
        MagnetAssembly([torus], 2.4)
    with pytest.raises(ConfigError):
        MagnetAssembly([torus, BallComponent((2, 0, 0), 0.3)], 5.0)
    with pytest.raises(ConfigError):
        TorusComponent((0, 0, 0), Z, 1.0, 1.5)
    MagnetAssembly([torus, BallComponent((0, 0, 0), 1.0)], 3.0)


def test_ball_component_hits():
    m = MagnetAssembly([BallComponent((0, 0, 0), 1.0)], 2.0)
    assert classify_line(OrientedLine((0.9, 0, -5), Z), m).is_hit
    assert classify_line(OrientedLine((1.1, 0, -5), Z), m).kind == "out"


def test_two_tori_signature():
    t1 = TorusComponent((-3, 0, 0), Z, 1.0, 0.2)
    t2 = TorusComponent((3, 0, 0), Z, 1.0, 0.2, orientation=-1)
    m = MagnetAssembly([t1, t2], 5.0)
    assert classify_line(OrientedLine((-3, 0, -9), Z), m).signature == (1, 0)
    assert classify_line(OrientedLine((3, 0, -9), Z), m).signature == (0, -1)


def test_stacked_tori_signature():
    t1 = TorusComponent((0, 0, -2), Z, 1.0, 0.2)
    t2 = TorusComponent((0, 0, 2), Z, 1.0, 0.2, orientation=-1)
    m = MagnetAssembly([t1, t2], 4.0)
    assert classify_line(OrientedLine((0.1, 0, -9), Z), m).signature == (1, -1)
    assert classify_line(OrientedLine((-3.5, 0, -9), (0.5, 0, 1)), m).signature == (1, 0)


def test_label_round_trip():
    for c in (LineClassification.hole([1, -1]), LineClassification.out(2)):
        assert LineClassification.from_label(c.label(), 2) == c


finite = st.floats(-2.9, 2.9, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(finite, finite, st.floats(-50, 50))
def test_shift_invariance(x, y, tau):
    m = MagnetAssembly([TorusComponent((0, 0, 0), Z, 2.0, 0.5)], 3.0)
    d = np.array([0.2, -0.1, 1.0])
    a = classify_line(OrientedLine((x, y, 0.0), d), m)
    b = classify_line(OrientedLine(np.array([x, y, 0.0]) + tau * d, d), m)
    assert a == b


@settings(max_examples=40, deadline=None)
@given(finite, finite, st.floats(3.5, 20))
def test_enclosing_radius_does_not_change_class(x, y, R):
    t = TorusComponent((0, 0, 0), Z, 2.0, 0.5)
    line = OrientedLine((x, y, -1.0), (0.3, 0.0, 1.0))
    assert classify_line(line, MagnetAssembly([t], 3.0)) == classify_line(line, MagnetAssembly([t], R))


@settings(max_examples=40, deadline=None)
@given(finite, finite)
def test_missed_ball_leaves_signature(x, y):
    t = TorusComponent((0, 0, 0), Z, 2.0, 0.5)
    line = OrientedLine((x, y, -1.0), Z)
    plain = classify_line(line, MagnetAssembly([t], 5.0))
    with_ball = classify_line(line, MagnetAssembly([t, BallComponent((3.8, 3.8, 0), 0.2)], 6.0))
    if not with_ball.is_hit:
        assert plain == with_ball


def test_disjoint_cover(magnet):
    rng = np.random.default_rng(7)
    pts = rng.uniform(-3, 3, (2000, 3))
    pts = pts[np.linalg.norm(pts, axis=1) <= 3]
    hit, _ = classify_lines(pts, Z, magnet)
    pts = pts[~hit]
    classes = [LineClassification.hole([1]), LineClassification.hole([-1]), LineClassification.out(1)]
    count = sum(region_mask(pts, c, Z, magnet).astype(int) for c in classes)
    assert np.all(count == 1)


def test_local_stability(magnet):
    rng = np.random.default_rng(3)
    for base in [(0.5, 0.2, -4), (2.9, 0.1, -4)]:
        c = classify_line(OrientedLine(base, Z), magnet)
        for _ in range(20):
            shifted = np.array(base) + 1e-6 * rng.normal(size=3)
            assert classify_line(OrientedLine(shifted, Z), magnet) == c
