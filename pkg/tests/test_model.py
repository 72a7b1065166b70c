from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from saddleflow.errors import ModelError
from saddleflow.model import (S_DIAG, Eigendata, PhaseState, build_cnlse_model,
                              build_conservative_local_model, build_figure_eight_model,
                              build_global_model, build_local_normal_form, check_structure,
                              classify_case, model_from_mapping, model_to_mapping,
                              planar_homoclinic)
from saddleflow.polynomial import Poly

var = Poly.var


def test_classify_case():
    assert classify_case(1, 1) == "Equal"
    assert classify_case(1, 1.5) == "Between"
    assert classify_case(1, 2) == "Resonant2"
    assert classify_case(1, 3) == "Beyond2"
    with pytest.raises(ModelError):
        Eigendata(1.0, 0.5, "Equal")
    with pytest.raises(ModelError):
        Eigendata(1.0, 1.5, "Equal")
    assert Eigendata.from_rates(1.0, 2.0).gamma == 0.5


def test_phase_state_rejects_nonfinite():
    with pytest.raises(ValueError):
        PhaseState(0.0, float("nan"), 0.0, 0.0)


def test_zero_coupling_field_on_plane():
    m = build_global_model("Equal", 1.0, 1.0, {"kappa1": 0, "kappa2": 0, "kappa3": 0})
    f = m.field([0.0, 0.1, 0.0, 0.0])
    # u2' = H_v2 = -u2 + (u2+v2)^2/(2 sqrt2),  v2' = -H_u2 = -(u2+v2)^2/(2 sqrt2)
    q = 0.01 / (2 * math.sqrt(2))
    assert f[0] == 0.0 and f[2] == 0.0
    assert f[1] == pytest.approx(-0.1 + q, abs=1e-15)
    assert f[3] == pytest.approx(-q, abs=1e-15)


def test_equivariance_at_spec_point(global_model):
    x = np.array([0.1, 0.2, -0.3, 0.4])
    assert np.max(np.abs(global_model.field(S_DIAG * x) - S_DIAG * global_model.field(x))) <= 1e-15


def test_planar_homoclinic_on_zero_level(global_model):
    pts = planar_homoclinic(global_model, [-5.0, 0.0, 5.0])
    assert np.max(np.abs(global_model.first_integral_batch(pts))) <= 1e-12


def test_planar_homoclinic_solves_ode(global_model, figure_eight):
    t = np.linspace(-20, 20, 4001)
    for model, sig in ((global_model, 1), (figure_eight, 1), (figure_eight, -1)):
        x = planar_homoclinic(model, t, sig)
        dt = 1e-5
        dx = (planar_homoclinic(model, t + dt, sig) - planar_homoclinic(model, t - dt, sig)) / (2 * dt)
        assert np.max(np.abs(dx - model.field_batch(x))) <= 1e-9


def test_odd_coupling_rejected():
    with pytest.raises(ModelError, match="odd"):
        build_global_model("Equal", 1, 1, {"term.u1*v2": 0.1})


def test_unknown_coupling_rejected():
    with pytest.raises(ModelError):
        build_global_model("Equal", 1, 1, {"kappa9": 0.1})


def test_linear_normal_form_is_diagonal():
    m = build_local_normal_form("Between", 1.0, 1.5, {})
    x = np.array([0.1, -0.2, 0.3, 0.05])
    assert np.allclose(m.field(x), [-0.1, 0.3, 0.3, 0.075], atol=1e-15)
    assert not m.conservative


def test_f12_constant_term_rejected():
    with pytest.raises(ModelError, match=r"f12\(0, u2, 0, v2\) = 0"):
        build_local_normal_form("Equal", 1, 1, {"f12": {"u2": 0.1}})


def test_beyond2_rejects_f21():
    with pytest.raises(ModelError, match="f21"):
        build_local_normal_form("Beyond2", 1, 2.5, {"f21": {"u1": 0.1}})


def test_parity_rejected():
    with pytest.raises(ModelError, match="symmetry"):
        build_local_normal_form("Equal", 1, 1, {"g21": {"u1*v1": 0.1}})


def test_between_identity_rejected():
    # f11(0, v) = 0 fails for a pure v2 term in non-Equal cases
    with pytest.raises(ModelError):
        build_local_normal_form("Between", 1, 1.5, {"f11": {"v2": 0.1}})


def test_figure_eight_levels(figure_eight):
    r = 1 / math.sqrt(2)
    for xc in (1.0, -1.0):
        # lobe centre x = +-1, y = 0 in the planar (x, y) coordinates
        assert figure_eight.first_integral([0, xc * r, 0, xc * r]) == pytest.approx(-0.25, abs=1e-14)
    assert figure_eight.first_integral([0, 2 * r, 0, 2 * r]) > 0


def test_figure_eight_sigma_swap(figure_eight):
    rng = np.random.default_rng(3)
    P = np.array([1.0, -1.0, 1.0, -1.0])
    for x in rng.uniform(-0.5, 0.5, (50, 4)):
        assert np.allclose(figure_eight.field(P * x), P * figure_eight.field(x), atol=1e-15)
    t = np.linspace(-3, 3, 7)
    assert np.allclose(planar_homoclinic(figure_eight, t, -1), -planar_homoclinic(figure_eight, t, 1))


@pytest.mark.parametrize("name", ["global", "figure_eight", "cnlse", "conservative_local"])
def test_structure_conservative(name):
    model = {
        "global": lambda: build_global_model("Between", 1.0, 1.5),
        "figure_eight": lambda: build_figure_eight_model(1.0, 1.0),
        "cnlse": lambda: build_cnlse_model(1.0, 1.0, 1.0, 1.5),
        "conservative_local": lambda: build_conservative_local_model("Equal", 1, 1, 0.3, 0.2, 0.4),
    }[name]()
    rep = check_structure(model, 1000)
    assert rep.passed(1e-10), rep.to_dict()
    assert rep.dH_dot_X <= 1e-12


def test_structure_local_identities(local_models):
    for case, m in local_models.items():
        rep = check_structure(m, 500)
        assert rep.identities, case
        assert all(v == 0.0 for v in rep.identities.values()), (case, rep.identities)
        assert rep.passed()


def test_corrupted_model_report(global_model):
    comps = list(global_model.components)
    comps[0] = comps[0] + 0.01 * var("u2")
    bad = global_model.with_components(comps)
    rep = check_structure(bad, 1000, radius=0.1)
    rng = np.random.default_rng(0)
    umax = np.max(np.abs(rng.uniform(-0.1, 0.1, (1000, 4))[:, 1]))
    assert rep.invariant_plane == pytest.approx(0.01 * umax, rel=1e-9)
    # u2 is S-even while u1' must be S-odd, so equivariance breaks by 2 * 0.01|u2|
    assert rep.equivariance == pytest.approx(0.02 * umax, rel=1e-9)
    assert not rep.passed()


def test_mapping_round_trip(global_model, local_models):
    for m in [global_model, build_figure_eight_model(1, 1), *local_models.values(),
              build_conservative_local_model("Equal", 1, 1, 0.3, 0.2, 0.1)]:
        back = model_from_mapping(model_to_mapping(m))
        assert back.model_id == m.model_id


def test_mapping_missing_lambda2():
    with pytest.raises(ModelError, match="lambda2"):
        model_from_mapping({"kind": "GlobalHamiltonian", "lambda1": "1"})


def test_loop_extent(global_model, figure_eight):
    assert global_model.loop_extent() == pytest.approx(1.5, abs=1e-12)
    assert figure_eight.loop_extent(1) == pytest.approx(math.sqrt(2), abs=1e-12)
    assert figure_eight.loop_extent(-1) == pytest.approx(math.sqrt(2), abs=1e-12)


def test_cubic_root_oracle_for_lift():
    # independent of the package: the In-section lift at h = 0 for zero coupling
    root = brentq(lambda v: -0.1 * v + (0.1 + v) ** 3 / (6 * math.sqrt(2)), 0.0, 0.01, xtol=1e-18)
    assert root == pytest.approx(1.2222e-3, rel=1e-3)


def test_polynomial_basics():
    u1, v1 = var("u1"), var("v1")
    p = (u1 + v1) ** 2
    assert p.diff(0) == 2 * u1 + 2 * v1
    assert p([1.0, 0.0, 2.0, 0.0]) == 9.0
    assert isinstance(p, Poly)
