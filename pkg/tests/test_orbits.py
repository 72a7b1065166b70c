from __future__ import annotations

import math

import numpy as np
import pytest

from saddleflow.errors import NoOrbit
from saddleflow.model import build_global_model
from saddleflow.orbits import (escape_census, find_fixed_points, floquet, loop_maps, manifold_curve,
                               newton_fixed_point, planar_periodic_orbit, return_map_jacobian,
                               stage_jacobians, tangent_angle)

H = -1e-3
EPS = 0.01


@pytest.fixture(scope="module")
def fq(global_model):
    return floquet(global_model, H)


@pytest.fixture(scope="module")
def maps(global_model):
    return loop_maps(global_model, H, EPS)


@pytest.fixture(scope="module")
def curves(global_model, fq, maps):
    return (manifold_curve(global_model, H, fq, "Stable", maps=maps),
            manifold_curve(global_model, H, fq, "Unstable", maps=maps))


def test_no_orbit_for_positive_h(global_model):
    with pytest.raises(NoOrbit):
        planar_periodic_orbit(global_model, 1e-3)


def test_orbit_closes_on_level(global_model):
    rec = planar_periodic_orbit(global_model, H)
    assert rec.closure <= 1e-9
    assert rec.h_error <= 1e-9
    assert [v[1] for v in rec.itinerary] == ["In", "Out", "In"]
    assert '"period"' in rec.to_json()


def test_period_grows_toward_loop(global_model):
    p3 = planar_periodic_orbit(global_model, -1e-3).period
    p4 = planar_periodic_orbit(global_model, -1e-4).period
    assert p4 > p3
    # logarithmic blow-up: the increment is close to log(10) / lambda (two passages share it)
    assert 0.5 * math.log(10) < p4 - p3 < 4 * math.log(10)


def test_newton_from_nearby_guess(global_model):
    pt, it = newton_fixed_point(global_model, H, (1e-4, 1e-4))
    assert np.max(np.abs(pt.chart)) <= 1e-10
    assert it >= 1


def test_newton_zero_iterations_at_origin(global_model):
    pt, it = newton_fixed_point(global_model, H, (0.0, 0.0))
    assert it == 0 and np.max(np.abs(pt.chart)) == 0.0


def test_symmetric_coupling_keeps_fixed_point():
    m = build_global_model("Equal", 1.0, 1.0, {"kappa1": 0.1, "kappa2": 0.5, "kappa3": -0.7})
    pt, _ = newton_fixed_point(m, H, (2e-4, -1e-4))
    assert np.max(np.abs(pt.chart)) <= 1e-10


def test_floquet_saddle(fq):
    assert fq.real_pair and fq.saddle
    assert fq.product_error <= 1e-6
    assert abs(fq.det - 1.0) <= 1e-6
    assert fq.alpha == pytest.approx(-0.0089578, rel=1e-3)
    assert fq.beta == pytest.approx(-111.634, rel=1e-3)


def test_chain_rule(global_model, fq):
    DL, DG = stage_jacobians(global_model, H)
    DT = fq.jacobian
    assert np.allclose(DG @ DL, DT, rtol=1e-4, atol=0)
    w = np.sort(np.abs(np.linalg.eigvals(DG @ DL)))
    assert w[0] == pytest.approx(abs(fq.alpha), rel=1e-4)
    assert w[1] == pytest.approx(abs(fq.beta), rel=1e-4)


def test_unstable_tangency(curves, fq):
    _, unst = curves
    assert tangent_angle(unst, fq.eigenvector("beta"), 1e-4) <= 1e-3


def test_unstable_invariance(curves, maps):
    _, unst = curves
    fwd = maps[0]
    pts = [p for p in unst.points if 0 < np.linalg.norm(p) and np.max(np.abs(p)) < EPS / abs(112)]
    imgs = [fwd(p) for p in pts]
    imgs = np.array([q for q in imgs if q is not None and np.max(np.abs(q)) <= EPS])
    assert len(imgs) > 5
    assert np.max(unst.distance_to(imgs)) <= 1e-6


def test_stable_angle_decreases_toward_zero_level():
    m = build_global_model("Equal", 1.0, 1.0, delta_scale=0.35)
    angles = []
    for h in (-1e-2, -1e-3, -1e-4):
        f = floquet(m, h, eps=0.035)
        s = manifold_curve(m, h, f, "Stable", eps=0.035)
        angles.append(tangent_angle(s, (1.0, 0.0), 1e-4))
    assert angles[0] > angles[1] > angles[2]


def test_backward_iterates_on_unstable_curve(curves, maps, fq):
    _, unst = curves
    bwd = maps[1]
    p = unst.points[np.argmin(np.abs(np.linalg.norm(unst.points, axis=1) - 5e-3))]
    beta = abs(fq.beta)
    # roundoff is amplified by |beta| per backward step; check up to that horizon
    horizon = max(1, int(math.log(np.linalg.norm(p) / 1e-14) / (2 * math.log(beta))))
    norms = [np.linalg.norm(p)]
    q = p
    for _ in range(horizon):
        q = bwd(q)
        assert q is not None
        norms.append(np.linalg.norm(q))
    assert all(b < a for a, b in zip(norms, norms[1:]))


@pytest.fixture(scope="module")
def census(global_model, curves, maps):
    s, u = curves
    return escape_census(global_model, H, EPS, grid_n=16, max_iters=50, stable=s, unstable=u, maps=maps)


def test_escape_census_tubes(census):
    s = census.summary()
    assert s["forward_outside_stable_tube"] == 0
    assert s["backward_outside_unstable_tube"] == 0
    assert census.retained_forward[-1] and census.retained_backward[-1]


def test_escape_census_symmetry(census):
    n = census.grid_n
    f = census.fwd[:n * n].reshape(n, n)
    b = census.bwd[:n * n].reshape(n, n)
    assert np.array_equal(f, f[::-1, ::-1]) and np.array_equal(b, b[::-1, ::-1])


def test_escape_monotone_in_max_iters(global_model, maps, census):
    short = escape_census(global_model, H, EPS, grid_n=16, max_iters=10, maps=maps)
    escaped_short = ~short.retained_forward
    assert not np.any(escaped_short & census.retained_forward)


def test_retained_sorted_by_cones(census):
    m = 10.0
    for k in np.flatnonzero(census.retained_backward):
        u, v = census.u1[k], census.v1[k]
        assert (u == 0 and v == 0) or abs(v) >= abs(u) / m
    for k in np.flatnonzero(census.retained_forward):
        u, v = census.u1[k], census.v1[k]
        assert (u == 0 and v == 0) or abs(v) < abs(u) / m


def test_only_origin_fixed(global_model, maps):
    for power in (1, 2):
        pts = find_fixed_points(global_model, H, EPS, grid_n=24, power=power, map_fn=maps[0])
        assert len(pts) == 1 and np.max(np.abs(pts[0])) <= 1e-10


def test_positive_h_all_escape(global_model, tmp_path):
    rep = escape_census(global_model, 1e-3, EPS, grid_n=16)
    assert rep.summary()["all_escape"]
    rep.write_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().startswith("u1,v1,fwd_escape_iters,bwd_escape_iters,label")


def test_jacobian_matches_floquet(global_model, fq):
    Jm = return_map_jacobian(global_model, H)
    assert np.array_equal(Jm, fq.jacobian)
