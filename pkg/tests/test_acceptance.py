"""Acceptance criteria 1-10, one test each, each at its stated tolerance."""
from __future__ import annotations

import time

import numpy as np

from saddleflow.cli import main
from saddleflow.figure8 import figure_eight_census
from saddleflow.model import (build_cnlse_model, build_conservative_local_model, build_global_model,
                              check_structure)
from saddleflow.orbits import (escape_census, find_fixed_points, floquet, loop_maps, manifold_curve,
                               newton_fixed_point, stage_jacobians)
from saddleflow.poincare import (classify_domain, cone_check, flight_time_check, global_map_coeffs,
                                 reverse_time_view)
from saddleflow.shilnikov import TERMS, BvpProblem, plan_for_case, shooting_solve, solve_bvp, verify_estimates

from conftest import CONFIGS_DIR, record_criterion

EPS = 0.01


def test_criterion_01_structure(global_model, figure_eight, figure_eight_asym, local_models):
    t0 = time.perf_counter()
    models = [global_model, figure_eight, figure_eight_asym, *local_models.values(),
              build_conservative_local_model("Equal", 1.0, 1.0, a=0.5, b=0.5, c=0.5),
              build_conservative_local_model("Between", 1.0, 1.5, a=0.5, b=0.5),
              build_cnlse_model(1.0, 0.5, 1.0, 1.5)]
    worst = 0.0
    ok = True
    for m in models:
        rep = check_structure(m, n_samples=1000, tol=1e-10, seed=0)
        ok &= rep.passed(1e-10)
        worst = max(worst, rep.max_violation())
    dt = time.perf_counter() - t0
    ok &= dt < 10
    record_criterion(1, ok, f"{len(models)} models, max violation {worst:.2e}, {dt:.1f} s")
    assert ok


def test_criterion_02_bvp_vs_shooting(local_models):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    worst_ratio = 0.0
    for case in ("Equal", "Between"):
        for tau in (2.0, 4.0, 8.0):
            for _ in range(20):
                p = BvpProblem(local_models[case], tau, *rng.uniform(-0.1, 0.1, 4), 0.1)
                sol = solve_bvp(p, tol=1e-13)
                worst = max(worst, float(np.max(np.abs(shooting_solve(p, sol.grid) - sol.states))))
                worst_ratio = max(worst_ratio, sol.contraction_ratio)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and worst_ratio < 0.9 and dt < 60
    record_criterion(2, ok, f"sup diff {worst:.2e}, contraction {worst_ratio:.3f}, {dt:.1f} s")
    assert ok


def test_criterion_03_estimates(local_models):
    t0 = time.perf_counter()
    ok = True
    parts = []
    for case, m in local_models.items():
        rep = verify_estimates(case, m, plan_for_case(case))
        ok &= rep.stable(0.25)
        parts.append(f"{case} {max(rep.spread(k) for k in TERMS):.3f}")
        if case == "Resonant2":
            growth = max(rep.ablation_growth().values())
            ok &= growth >= 4.0
            parts.append(f"ablation x{growth:.2f}")
    dt = time.perf_counter() - t0
    ok &= dt < 300
    record_criterion(3, ok, "max spread " + ", ".join(parts) + f", {dt:.1f} s")
    assert ok


def test_criterion_04_flight_time(global_model):
    t0 = time.perf_counter()
    samples = [(0.0, 0.0), (0.02, 0.03), (0.05, 0.01), (0.0, 0.04), (-0.03, -0.02)]
    ok = True
    parts = []
    for h in (-1e-4, -1e-3):
        rep = flight_time_check(global_model, h, samples, deltas=(0.1, 0.05))
        e1, e2 = rep.max_error(0.1), rep.max_error(0.05)
        ok &= all(len(rep.rel_errors[d]) > 0 for d in rep.deltas)
        ok &= e1 <= 0.2 and e2 < e1
        parts.append(f"h={h:g}: {e1:.3f} -> {e2:.3f}")
    dt = time.perf_counter() - t0
    ok &= dt < 60
    record_criterion(4, ok, "; ".join(parts) + f", {dt:.1f} s")
    assert ok


def test_criterion_05_cone_dichotomy(global_model):
    t0 = time.perf_counter()
    h = -1e-3
    census = classify_domain(global_model, h, EPS, m=10, grid_n=128)
    rep = cone_check(census, global_map_coeffs(global_model, h), n_smallest=100)
    rev = reverse_time_view(global_model)
    census_r = classify_domain(rev, h, EPS, m=10, grid_n=128)
    rep_r = cone_check(census_r, global_map_coeffs(rev, h), n_smallest=100)
    dt = time.perf_counter() - t0
    ok = (rep.n_d2 > 0 and rep.n_violations == 0 and rep.max_slope_error <= 0.05
          and rep_r.n_d2 > 0 and rep_r.n_violations == 0 and rep_r.max_slope_error <= 0.05 and dt < 300)
    record_criterion(5, ok, f"D2 {rep.n_d2} (in-ball {rep.n_in_ball}) violations {rep.n_violations}, "
                            f"slope err {rep.max_slope_error:.4f}; reversed D2 {rep_r.n_d2} violations "
                            f"{rep_r.n_violations}, slope err {rep_r.max_slope_error:.4f}, {dt:.1f} s")
    assert ok


def test_criterion_06_negative_level(global_model):
    ok = True
    parts = []
    for h in (-1e-3, -1e-4):
        t0 = time.perf_counter()
        pt, _ = newton_fixed_point(global_model, h, (1e-4, 1e-4), eps=EPS)
        fq = floquet(global_model, h, pt, eps=EPS)
        maps = loop_maps(global_model, h, EPS)
        cs = manifold_curve(global_model, h, fq, "Stable", eps=EPS, maps=maps)
        cu = manifold_curve(global_model, h, fq, "Unstable", eps=EPS, maps=maps)
        esc = escape_census(global_model, h, EPS, grid_n=64, max_iters=50, stable=cs, unstable=cu, maps=maps)
        s = esc.summary()
        fps = [p for k in (1, 2) for p in find_fixed_points(global_model, h, EPS, 32, k, map_fn=maps[0])]
        others = sum(1 for p in fps if np.max(np.abs(p)) > 1e-8)
        dt = time.perf_counter() - t0
        ok &= (np.max(np.abs(pt.chart)) <= 1e-10 and fq.saddle and fq.product_error <= 1e-6
               and s["forward_outside_stable_tube"] == 0 and s["backward_outside_unstable_tube"] == 0
               and others == 0 and dt < 300)
        parts.append(f"h={h:g}: alpha {fq.alpha:.4g} beta {fq.beta:.4g}, retained {s['retained_forward']}/"
                     f"{s['retained_backward']}, other fixed points {others}, {dt:.1f} s")
    record_criterion(6, ok, "; ".join(parts))
    assert ok


def test_criterion_07_positive_level(global_model):
    t0 = time.perf_counter()
    ok = True
    parts = []
    for h in (1e-4, 1e-3):
        c = classify_domain(global_model, h, EPS, grid_n=64)
        ok &= c.domain_empty()
        parts.append(f"Equal h={h:g} D empty {c.domain_empty()}")
    for case, l2 in (("Between", 1.5), ("Resonant2", 2.0), ("Beyond2", 2.5)):
        m = build_global_model(case, 1.0, l2)
        for h in (1e-4, 1e-3):
            e = escape_census(m, h, EPS, grid_n=32, max_iters=50)
            ok &= e.summary()["all_escape"]
        parts.append(f"{case} all escape")
    dt = time.perf_counter() - t0
    ok &= dt < 300
    record_criterion(7, ok, ", ".join(parts) + f", {dt:.1f} s")
    assert ok


def test_criterion_08_figure_eight(figure_eight, figure_eight_asym):
    t0 = time.perf_counter()
    ok = True
    parts = []
    for label, model, levels in (("symmetric", figure_eight, (-1e-3, 1e-3)),
                                 ("asymmetric", figure_eight_asym, (-1e-4, 1e-4))):
        for h in levels:
            rep = figure_eight_census(model, h, EPS, m_values=(5, 10, 20), grid_n=32)
            ok &= rep.passed
            slope = max(s.slope_angle_error for s in rep.saddles)
            extra = f" push-forward {rep.pushforward_angle_error:.4f}" if rep.pushforward_angle_error else ""
            parts.append(f"{label} h={h:g}: {len(rep.saddles)} saddle(s), slope {slope:.4f}{extra}, "
                         f"{'ok' if rep.passed else 'failed'}")
    dt = time.perf_counter() - t0
    ok &= dt < 600
    record_criterion(8, ok, "; ".join(parts) + f", {dt:.1f} s")
    assert ok


def test_criterion_09_chain_rule(global_model):
    t0 = time.perf_counter()
    ok = True
    worst = 0.0
    for h in (-1e-3, -1e-4):
        DT = floquet(global_model, h, eps=EPS).jacobian
        DL, DG = stage_jacobians(global_model, h)
        rel = np.max(np.abs(DG @ DL - DT) / np.abs(DT))
        worst = max(worst, float(rel))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-4 and dt < 30
    record_criterion(9, ok, f"max entrywise relative difference {worst:.2e}, {dt:.1f} s")
    assert ok


def _reports(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def test_criterion_10_determinism(tmp_path):
    t0 = time.perf_counter()
    runs = [("verify-structure", "default.ini", []), ("bvp", "bvp_between.ini", []),
            ("poincare", "default.ini", []), ("domain", "default.ini", ["--grid-n", "16"]),
            ("orbit", "default.ini", []), ("manifolds", "default.ini", ["--grid-n", "16"]),
            ("figure8", "figure8.ini", ["--grid-n", "8"]), ("sweep", "sweep.ini", ["--grid-n", "8"])]
    ok = True
    bad = []
    for cmd, cfg, extra in runs:
        outs = []
        for k in range(2):
            out = tmp_path / f"{cmd}_{k}"
            code = main([cmd, "--config", str(CONFIGS_DIR / cfg), "--out", str(out), *extra])
            ok &= code in (0, 1)
            outs.append(_reports(out))
        if not outs[0] or outs[0] != outs[1]:
            ok = False
            bad.append(cmd)
    dt = time.perf_counter() - t0
    record_criterion(10, ok, f"{len(runs)} commands rerun, byte-identical reports"
                             + (f" except {bad}" if bad else "") + f", {dt:.1f} s")
    assert ok
