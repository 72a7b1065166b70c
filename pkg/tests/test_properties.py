from __future__ import annotations

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from saddleflow.flow import SectionDescriptor
from saddleflow.model import (S_DIAG, build_figure_eight_model, build_global_model, build_local_normal_form,
                              linear_model)
from saddleflow.poincare import angle_between_slopes, census_grid, cone_of, lift_to_section, reverse_time_view
from saddleflow.shilnikov import BvpProblem, solve_bvp

from conftest import LOCAL_CASES

GLOBAL = build_global_model("Equal", 1.0, 1.0)
EIGHT = build_figure_eight_model(1.0, 1.0, {"kappa1": 0.4, "kappa2": 0.2, "kappa3": -1.2, "asym": 0.3})
LOCALS = [build_local_normal_form(c, l1, l2, co) for c, (l1, l2, co) in LOCAL_CASES.items()]
MODELS = [GLOBAL, EIGHT] + LOCALS
CONSERVATIVE = [GLOBAL, EIGHT]

coord = st.floats(-0.3, 0.3, allow_nan=False)
state = st.tuples(coord, coord, coord, coord).map(np.array)
small = st.floats(-0.01, 0.01, allow_nan=False)
level = st.floats(-1e-3, 1e-3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(x=state, k=st.integers(0, len(MODELS) - 1))
def test_equivariance(x, k):
    m = MODELS[k]
    assert np.max(np.abs(m.field(S_DIAG * x) - S_DIAG * m.field(x))) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(u2=coord, v2=coord, k=st.integers(0, len(MODELS) - 1))
def test_invariant_plane(u2, v2, k):
    f = MODELS[k].field(np.array([0.0, u2, 0.0, v2]))
    assert f[0] == 0.0 and f[2] == 0.0


@settings(max_examples=60, deadline=None)
@given(x=state, k=st.integers(0, len(CONSERVATIVE) - 1))
def test_first_integral_conserved(x, k):
    m = CONSERVATIVE[k]
    assert abs(m.grad_first_integral(x) @ m.field(x)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(x=state, k=st.integers(0, len(MODELS) - 1))
def test_reverse_involution(x, k):
    m = MODELS[k]
    rr = reverse_time_view(reverse_time_view(m))
    assert np.max(np.abs(rr.field(x) - m.field(x))) <= 1e-14


@settings(max_examples=60, deadline=None)
@given(u1=small, v1=small, h=level, which=st.sampled_from(["In", "Out"]), sigma=st.sampled_from([1, -1]))
def test_chart_round_trip(u1, v1, h, which, sigma):
    desc = SectionDescriptor(which, sigma, 0.1)
    pt = lift_to_section(EIGHT, h, desc, u1, v1)
    assert abs(pt.lifted[0] - u1) <= 1e-12 and abs(pt.lifted[2] - v1) <= 1e-12
    assert pt.lifted[desc.index] == desc.value
    assert abs(EIGHT.first_integral(pt.lifted) - h) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(data=st.tuples(*[st.floats(-0.1, 0.1, allow_nan=False)] * 4), tau=st.floats(0.5, 8.0))
def test_linear_bvp_exact(data, tau):
    p = BvpProblem(linear_model(1.0, 1.5), tau, *data, 0.1)
    sol = solve_bvp(p)
    t = sol.grid
    assert np.allclose(sol.states[:, 0], data[0] * np.exp(-t), atol=1e-15)
    assert np.allclose(sol.states[:, 3], data[3] * np.exp(-1.5 * (tau - t)), atol=1e-15)


@given(p=st.tuples(coord, coord), q=st.tuples(coord, coord), s=st.floats(0.1, 10))
def test_angle_metric(p, q, s):
    if math.hypot(*p) < 1e-6 or math.hypot(*q) < 1e-6:
        return
    a = angle_between_slopes(p, q)
    assert 0.0 <= a <= math.pi / 2 + 1e-15
    assert math.isclose(a, angle_between_slopes(q, p), abs_tol=1e-12)
    assert math.isclose(a, angle_between_slopes((-s * p[0], -s * p[1]), q), abs_tol=1e-9)


@given(u=coord, v=coord, m=st.floats(1.5, 50))
def test_cone_sign_invariance(u, v, m):
    assert cone_of(u, v, m) == cone_of(-u, -v, m) == cone_of(-u, v, m)


@given(n=st.integers(2, 40), eps=st.floats(1e-4, 1.0))
def test_census_grid_symmetric(n, eps):
    U, V = census_grid(eps, n)
    assert np.allclose(U.reshape(n, n)[::-1, ::-1], -U.reshape(n, n))
    assert np.max(np.abs(U)) < eps and np.max(np.abs(V)) < eps
