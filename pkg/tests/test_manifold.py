import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import acosh_hp, central_diff, great_circle, hyperboloid_hp, rel_err
from rgg_safebayes.manifold import (
    DomainError,
    GeometryKind,
    chart_dim,
    distance_gradient_chart,
    embed_chart,
    geodesic_distance,
    lorentz_inner,
    pairwise_distance,
    pairwise_distance_grad,
    stable_acosh,
)

E, S, H = GeometryKind.EUCLIDEAN, GeometryKind.SPHERICAL, GeometryKind.HYPERBOLOID

coord = st.floats(-3.0, 3.0, allow_nan=False)


def chart_points(g):
    return st.lists(coord, min_size=chart_dim(g), max_size=chart_dim(g)).map(np.array)


def sphere_chart():
    return chart_points(S).filter(lambda p: np.linalg.norm(p) > 1e-3)


def points_for(g):
    return sphere_chart() if g is S else chart_points(g)


# ---------------------------------------------------------------------------
# embedding


def test_embed_examples():
    np.testing.assert_array_equal(embed_chart([1.5, -2.0], E), [1.5, -2.0])
    np.testing.assert_array_equal(embed_chart([0, 0, 2], S), [0, 0, 1])
    np.testing.assert_array_equal(embed_chart([0, 0], H), [1, 0, 0])


def test_geometry_parse_and_dims():
    assert GeometryKind.parse("Hyperboloid") is H
    assert [chart_dim(g) for g in (E, S, H)] == [2, 3, 2]
    assert sorted(g.code for g in GeometryKind) == [0, 1, 2]
    with pytest.raises(DomainError):
        GeometryKind.parse("poincare-ball")


@pytest.mark.parametrize(
    "p, g",
    [([0, 0, 0], S), ([1.0], E), ([np.nan, 0.0], E), ([np.inf, 0.0], H), ([1, 2, 3], H)],
)
def test_embed_rejects_bad_charts(p, g):
    with pytest.raises(DomainError):
        embed_chart(p, g)


@given(sphere_chart())
def test_sphere_embedding_unit_norm(p):
    z = embed_chart(p, S)
    assert abs(np.linalg.norm(z) - 1.0) <= 1e-12


@given(chart_points(H))
def test_hyperboloid_embedding_on_sheet(p):
    z = embed_chart(p, H)
    assert z[0] >= 1.0
    assert abs(lorentz_inner(z, z) + 1.0) <= 1e-9 * max(1.0, z[0] ** 2)


# ---------------------------------------------------------------------------
# distances


def test_distance_examples():
    assert geodesic_distance([0, 0], [3, 4], E) == pytest.approx(5.0, abs=1e-15)
    assert geodesic_distance([0, 0, 1], [1, 0, 0], S) == pytest.approx(math.pi / 2, abs=1e-15)
    r2 = math.sqrt(2.0)
    assert geodesic_distance([r2, 1, 0], [r2, -1, 0], H) == pytest.approx(acosh_hp(3), abs=1e-12)
    assert acosh_hp(3) == pytest.approx(1.7627472, abs=1e-7)


def test_distance_rejects_off_manifold():
    with pytest.raises(DomainError):
        geodesic_distance([0, 0, 1.1], [1, 0, 0], S)
    with pytest.raises(DomainError):
        geodesic_distance([0.5, 0, 0], [1, 0, 0], H)


@pytest.mark.parametrize("g", [E, S, H])
@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_metric_axioms(g, data):
    a, b, c = (embed_chart(data.draw(points_for(g)), g) for _ in range(3))
    dab = geodesic_distance(a, b, g)
    assert dab >= 0
    assert geodesic_distance(a, a, g) == pytest.approx(0.0, abs=1e-7)
    assert dab == pytest.approx(geodesic_distance(b, a, g), rel=1e-12, abs=1e-12)
    dac = geodesic_distance(a, c, g)
    dcb = geodesic_distance(c, b, g)
    assert dab <= dac + dcb + 1e-9 * (1 + dab)


@settings(max_examples=40, deadline=None)
@given(sphere_chart(), sphere_chart())
def test_sphere_distance_matches_high_precision(p, q):
    d = geodesic_distance(embed_chart(p, S), embed_chart(q, S), S)
    assert d == pytest.approx(great_circle(p, q), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(chart_points(H), chart_points(H))
def test_hyperboloid_distance_matches_high_precision(p, q):
    a, b = embed_chart(p, H), embed_chart(q, H)
    ref = hyperboloid_hp(p, q)
    assert geodesic_distance(a, b, H) == pytest.approx(ref, rel=1e-9, abs=1e-9)


def test_hyperboloid_close_points_no_cancellation():
    # points 1e-9 apart: the naive -<a,b>_L route would lose all digits
    p = np.array([2.0, -1.0])
    q = p + np.array([1e-9, 0.0])
    d = geodesic_distance(embed_chart(p, H), embed_chart(q, H), H)
    # metric factor along x0 at p: sqrt(1 + x1^2) / sqrt(1 + |x|^2)
    expected = 1e-9 * math.sqrt((1 + 1.0) / (1 + 5.0))
    assert d == pytest.approx(expected, rel=1e-6)


# ---------------------------------------------------------------------------
# stable_acosh


def test_stable_acosh_examples():
    assert stable_acosh(1.0) == 0.0
    expected = math.sqrt(2e-8) * (1 - 1e-8 / 12)
    # the float argument 1 + 1e-8 is not exactly representable
    s = 1.0 + 1e-8
    assert stable_acosh(s) == pytest.approx(acosh_hp(s), rel=1e-12)
    assert stable_acosh(s) == pytest.approx(expected, rel=1e-7)
    assert stable_acosh(s) == pytest.approx(1.41421356e-4, rel=1e-8)
    assert stable_acosh(3.0) == pytest.approx(1.7627472, abs=1e-7)


def test_stable_acosh_domain():
    assert stable_acosh(1.0 - 5e-10) == 0.0
    with pytest.raises(DomainError):
        stable_acosh(1.0 - 1e-8)
    with pytest.raises(DomainError):
        stable_acosh(float("nan"))


def test_stable_acosh_continuous_at_switch():
    lo = stable_acosh(1.0 + 1e-7 * (1 - 1e-12))
    hi = stable_acosh(1.0 + 1e-7 * (1 + 1e-12))
    assert abs(hi - lo) < 1e-12


@given(st.floats(1.0, 1e6))
def test_stable_acosh_matches_high_precision(s):
    assert stable_acosh(s) == pytest.approx(acosh_hp(s), rel=1e-9, abs=1e-15)


@given(st.floats(1.0, 100.0), st.floats(1.0, 100.0))
def test_stable_acosh_monotone(s, t):
    if s < t:
        assert stable_acosh(s) <= stable_acosh(t)


# ---------------------------------------------------------------------------
# gradients


def test_gradient_examples():
    ga, gb = distance_gradient_chart([0, 0], [3, 4], E)
    np.testing.assert_allclose(ga, [-0.6, -0.8], atol=1e-15)
    np.testing.assert_allclose(gb, [0.6, 0.8], atol=1e-15)
    ga, gb = distance_gradient_chart([0.3, -0.7], [0.3, -0.7], H)
    assert np.all(np.isfinite(ga)) and np.all(np.isfinite(gb))


def _fd_check(a, b, g):
    ga, gb = distance_gradient_chart(a, b, g)

    def fa(x):
        return pairwise_distance(x[None, :], np.asarray(b, float)[None, :], g)[0]

    def fb(x):
        return pairwise_distance(np.asarray(a, float)[None, :], x[None, :], g)[0]

    assert rel_err(ga, central_diff(fa, a)) < 1e-5
    assert rel_err(gb, central_diff(fb, b)) < 1e-5


def test_gradient_sphere_example_fd():
    _fd_check(np.array([0.0, 0.0, 2.0]), np.array([1.0, 1.0, 0.0]), S)


@pytest.mark.parametrize("g", [E, S, H])
@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_gradient_matches_finite_differences(g, data):
    a = data.draw(points_for(g))
    b = data.draw(points_for(g))
    d = pairwise_distance(a[None, :], b[None, :], g)[0]
    # keep away from the kinks at d = 0 and at antipodes
    if d < 1e-2 or (g is S and d > math.pi - 1e-2):
        return
    _fd_check(a, b, g)


@pytest.mark.parametrize("g", [E, S, H])
def test_pairwise_matches_pointwise(g):
    rng = np.random.default_rng(3)
    xa = rng.standard_normal((20, chart_dim(g)))
    xb = rng.standard_normal((20, chart_dim(g)))
    d, ga, gb = pairwise_distance_grad(xa, xb, g)
    for k in range(20):
        ref = geodesic_distance(embed_chart(xa[k], g), embed_chart(xb[k], g), g)
        assert d[k] == pytest.approx(ref, rel=1e-12, abs=1e-14)
        ra, rb = distance_gradient_chart(xa[k], xb[k], g)
        np.testing.assert_allclose(ga[k], ra, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(gb[k], rb, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("g", [E, S, H])
def test_coincident_points_zero_gradient(g):
    p = np.array([0.4, -1.2, 0.5])[: chart_dim(g)]
    ga, gb = distance_gradient_chart(p, p, g)
    np.testing.assert_array_equal(ga, 0.0)
    np.testing.assert_array_equal(gb, 0.0)
