from __future__ import annotations

import numpy as np
import pytest

from saddleflow.errors import NotContracting
from saddleflow.shilnikov import (TERMS, BvpProblem, SamplePlan, bound_templates, bvp_residual,
                                  contraction_threshold,
                                  extra_sweep_change, shooting_solve, solve_bvp, verify_estimates)


def test_zero_data_gives_zero(local_models):
    sol = solve_bvp(BvpProblem(local_models["Equal"], 4.0, 0, 0, 0, 0, 0.1))
    assert sol.iterations == 1
    assert np.max(np.abs(sol.states)) == 0.0
    defect, bnd = bvp_residual(local_models["Equal"], sol)
    assert defect == 0.0 and max(bnd.values()) == 0.0


def test_linear_model_exact(linear):
    p = BvpProblem(linear, 3.0, 0.05, -0.02, 0.07, 0.01, 0.1)
    sol = solve_bvp(p)
    t = sol.grid
    assert np.allclose(sol.states[:, 0], 0.05 * np.exp(-t), atol=1e-15)
    assert np.allclose(sol.states[:, 2], 0.07 * np.exp(-(3.0 - t)), atol=1e-15)
    assert np.max(np.abs([sol.xi1, sol.xi2, sol.zeta1, sol.zeta2])) == 0.0


@pytest.mark.parametrize("case", ["Equal", "Between", "Beyond2"])
def test_matches_shooting(local_models, case):
    p = BvpProblem(local_models[case], 6.0, 0.1, -0.08, 0.05, 0.1, 0.1)
    sol = solve_bvp(p, tol=1e-13)
    ref = shooting_solve(p, sol.grid)
    assert np.max(np.abs(ref - sol.states)) <= 1e-8
    assert sol.contraction_ratio < 0.9
    assert sol.in_box()


def test_residual_and_boundary(local_models):
    m = local_models["Between"]
    p = BvpProblem(m, 5.0, 0.1, 0.1, -0.1, 0.05, 0.1)
    sol = solve_bvp(p, tol=1e-10, n_panels=300)
    defect, bnd = bvp_residual(m, sol)
    assert defect <= 1e-6
    assert max(bnd.values()) <= 1e-10
    # the shooting solution on the same grid has a defect of the same size
    ref = shooting_solve(p, sol.grid)
    ref_sol = type(sol)(p, sol.grid, ref, *(ref - ref).T, 0, 0.0)
    d2, _ = bvp_residual(m, ref_sol)
    assert d2 <= 10 * defect + 1e-9


def test_fixed_point_and_uniqueness(local_models):
    p = BvpProblem(local_models["Equal"], 4.0, 0.1, -0.1, 0.1, 0.1, 0.1)
    tol = 1e-12
    a = solve_bvp(p, tol=tol)
    b = solve_bvp(p, tol=tol, seed="linear")
    assert extra_sweep_change(a) <= 2 * tol
    assert np.max(np.abs(a.states - b.states)) <= 10 * tol


def test_not_contracting_for_large_delta(local_models):
    p = BvpProblem(local_models["Between"], 8.0, 3.0, 3.0, 3.0, 3.0, 3.0)
    with pytest.raises(NotContracting):
        solve_bvp(p)
    assert 0.1 < contraction_threshold(local_models["Between"], 8.0) < 3.0


def test_box_precondition(linear):
    with pytest.raises(ValueError):
        BvpProblem(linear, 1.0, 0.2, 0, 0, 0, 0.1)


def test_smooth_dependence_on_u10(local_models):
    m = local_models["Between"]
    taus = np.linspace(2.0, 6.0, 9)
    h = 1e-6
    ders = []
    for tau in taus:
        vals = []
        for s in (-1, 1):
            sol = solve_bvp(BvpProblem(m, tau, 0.05 + s * h, 0.05, 0.05, 0.05, 0.1), tol=1e-14)
            k = len(sol.grid) // 2
            vals.append(sol.states[k, 0])
        ders.append((vals[1] - vals[0]) / (2 * h))
    ders = np.array(ders)
    jumps = np.abs(np.diff(ders))
    assert np.all(jumps <= 10 * np.median(jumps) + 1e-12)


def test_equal_case_compact_form(local_models):
    m = local_models["Equal"]
    ratios = []
    for d in (0.1, 0.05, 0.025):
        sol = solve_bvp(BvpProblem(m, 4.0, d, d, d, d, d), tol=1e-14)
        dev = np.max(np.abs(sol.states[:, 1] * np.exp(sol.grid) - d))
        ratios.append(dev / d ** 2)
    assert max(ratios) / min(ratios) <= 1.25


def test_templates_positive_and_ablation():
    t = np.linspace(0, 4, 9)
    full = bound_templates("Resonant2", 1.0, 2.0, t, 4.0, 0.1, 0.1, 0.1)
    abl = bound_templates("Resonant2", 1.0, 2.0, t, 4.0, 0.1, 0.1, 0.1, ablate=("resonant",))
    for k in TERMS:
        assert np.all(full[k] > 0)
    assert np.all(abl["xi2"] <= full["xi2"]) and np.any(abl["xi2"] < full["xi2"])


def test_estimates_linear_zero(linear):
    rep = verify_estimates("Equal", linear, SamplePlan(taus=(2.0,)))
    assert all(v == 0 for k in TERMS for v in rep.mhat[k])


def test_estimates_equal_stable(local_models, tmp_path):
    rep = verify_estimates("Equal", local_models["Equal"], SamplePlan(), record_profiles=True)
    assert rep.stable(0.25)
    rep.write_csv(tmp_path / "est.csv")
    assert (tmp_path / "est.csv").stat().st_size > 0
    assert '"Mhat"' in rep.to_json()
