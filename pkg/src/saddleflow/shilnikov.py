"""Boundary-value problem near the saddle and its correction estimates.

Given ``u(0) = (u10, u20)`` and ``v(tau) = (v1tau, v2tau)``, the solution is
the fixed point of the integral operator

    u_i(t) = e^{-l_i t} u_i0 + int_0^t e^{-l_i (t - s)} F_i(x(s)) ds
    v_i(t) = e^{-l_i (tau - t)} v_itau - int_t^tau e^{-l_i (s - t)} G_i(x(s)) ds

where ``F, G`` are the nonlinear parts of the field.  The integrals are
discretized on composite Gauss-Lobatto panels: inside a panel the integrand
is replaced by its Lagrange interpolant and the exponentially weighted
integrals of the cardinal functions are precomputed.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial import legendre
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .errors import MaxIterExceeded, NewtonDiverged, NotContracting
from .model import ModelSpec


@dataclass(frozen=True)
class BvpProblem:
    model: ModelSpec
    tau: float
    u10: float
    u20: float
    v1tau: float
    v2tau: float
    delta: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if max(abs(self.u10), abs(self.u20), abs(self.v1tau), abs(self.v2tau)) > self.delta * (1 + 1e-12):
            raise ValueError("boundary data must lie in the delta box")

    @property
    def rates(self) -> np.ndarray:
        e = self.model.eigen
        return np.array([e.lambda1, e.lambda2, e.lambda1, e.lambda2])


@dataclass
class BvpSolution:
    problem: BvpProblem
    grid: np.ndarray
    states: np.ndarray
    xi1: np.ndarray
    xi2: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray
    iterations: int
    contraction_ratio: float
    history: list = field(default_factory=list)

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.states)))

    def in_box(self) -> bool:
        return self.max_abs <= self.problem.delta * (1 + 1e-12)


# ---------------------------------------------------------------------------
# quadrature


def lobatto_nodes(p: int) -> np.ndarray:
    """Gauss-Lobatto nodes on [-1, 1] (p nodes including endpoints)."""
    inner = legendre.Legendre.basis(p - 1).deriv().roots()
    return np.concatenate(([-1.0], np.sort(inner.real), [1.0]))


def _cardinal_values(nodes: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Lagrange cardinal functions of ``nodes`` at points ``s``: shape (len(s), p)."""
    V = legendre.legvander(nodes, len(nodes) - 1)
    Vs = legendre.legvander(s, len(nodes) - 1)
    return np.linalg.solve(V.T, Vs.T).T


class PanelQuadrature:
    """Exponentially weighted running integrals on one reference panel."""

    def __init__(self, h: float, p: int, rate: float, n_gauss: int = 40):
        self.h, self.p, self.rate = h, p, rate
        ref = lobatto_nodes(p)
        self.offsets = 0.5 * h * (ref + 1.0)
        gx, gw = legendre.leggauss(n_gauss)
        fwd = np.zeros((p, p))
        bwd = np.zeros((p, p))
        for j, tj in enumerate(self.offsets):
            if tj > 0:
                s = 0.5 * tj * (gx + 1.0)
                w = 0.5 * tj * gw * np.exp(-rate * (tj - s))
                fwd[j] = w @ _cardinal_values(ref, 2.0 * s / h - 1.0)
            if tj < h:
                s = tj + 0.5 * (h - tj) * (gx + 1.0)
                w = 0.5 * (h - tj) * gw * np.exp(-rate * (s - tj))
                bwd[j] = w @ _cardinal_values(ref, 2.0 * s / h - 1.0)
        self.fwd = fwd
        self.bwd = bwd
        self.decay_fwd = np.exp(-rate * (self.offsets))
        self.decay_bwd = np.exp(-rate * (h - self.offsets))


class Discretization:
    def __init__(self, tau: float, rates: np.ndarray, panel_h: float, p: int):
        self.n_panels = max(1, int(math.ceil(tau / panel_h - 1e-12)))
        self.h = tau / self.n_panels
        self.p = p
        self.quads = {}
        for r in np.unique(rates):
            self.quads[float(r)] = PanelQuadrature(self.h, p, float(r))
        q0 = next(iter(self.quads.values()))
        starts = self.h * np.arange(self.n_panels)
        nodes = (starts[:, None] + q0.offsets[None, :]).ravel()
        keep = np.ones(nodes.size, bool)
        keep[p::p] = False  # drop duplicated panel endpoints
        self.panel_nodes = nodes
        self.keep = keep
        self.grid = nodes[keep]
        self.grid[-1] = tau
        # index map grid -> panel-node layout
        idx = np.empty(self.n_panels * p, dtype=int)
        for k in range(self.n_panels):
            idx[k * p:(k + 1) * p] = np.arange(k * (p - 1), k * (p - 1) + p)
        self.layout = idx

    def forward(self, rate: float, F: np.ndarray) -> np.ndarray:
        """int_0^t e^{-rate (t - s)} F(s) ds on the grid."""
        q = self.quads[rate]
        P = F[self.layout].reshape(self.n_panels, self.p)
        local = P @ q.fwd.T
        out = np.empty_like(F)
        acc = 0.0
        p1 = self.p - 1
        for k in range(self.n_panels):
            seg = q.decay_fwd * acc + local[k]
            out[k * p1:k * p1 + self.p] = seg
            acc = seg[-1]
        return out

    def backward(self, rate: float, G: np.ndarray) -> np.ndarray:
        """int_t^tau e^{-rate (s - t)} G(s) ds on the grid."""
        q = self.quads[rate]
        P = G[self.layout].reshape(self.n_panels, self.p)
        local = P @ q.bwd.T
        out = np.empty_like(G)
        acc = 0.0
        p1 = self.p - 1
        for k in range(self.n_panels - 1, -1, -1):
            seg = q.decay_bwd * acc + local[k]
            out[k * p1:k * p1 + self.p] = seg
            acc = seg[0]
        return out


# ---------------------------------------------------------------------------
# solver


def linear_part(problem: BvpProblem, t: np.ndarray) -> np.ndarray:
    lam = problem.rates
    tau = problem.tau
    out = np.empty((t.size, 4))
    out[:, 0] = np.exp(-lam[0] * t) * problem.u10
    out[:, 1] = np.exp(-lam[1] * t) * problem.u20
    out[:, 2] = np.exp(-lam[2] * (tau - t)) * problem.v1tau
    out[:, 3] = np.exp(-lam[3] * (tau - t)) * problem.v2tau
    return out


def _nonlinear(model: ModelSpec, X: np.ndarray, lam: np.ndarray) -> np.ndarray:
    lin = X * np.array([-lam[0], -lam[1], lam[2], lam[3]])
    return model.field_batch(X) - lin


def apply_operator(problem: BvpProblem, disc: Discretization, X: np.ndarray,
                   base: np.ndarray | None = None) -> np.ndarray:
    """One sweep of the integral operator on grid values X."""
    lam = problem.rates
    base = linear_part(problem, disc.grid) if base is None else base
    N = _nonlinear(problem.model, X, lam)
    out = base.copy()
    out[:, 0] += disc.forward(float(lam[0]), N[:, 0])
    out[:, 1] += disc.forward(float(lam[1]), N[:, 1])
    out[:, 2] -= disc.backward(float(lam[2]), N[:, 2])
    out[:, 3] -= disc.backward(float(lam[3]), N[:, 3])
    return out


def solve_bvp(problem: BvpProblem, tol: float = 1e-12, max_iter: int = 200,
              panel_h: float = 0.25, order: int = 8, seed: str = "zero",
              n_panels: int | None = None) -> BvpSolution:
    """Picard iteration of the integral operator from the zero function.

    ``seed="linear"`` starts from the linear solution instead.  Raises
    NotContracting when successive differences stop shrinking.
    """
    if n_panels is not None:
        panel_h = problem.tau / n_panels
    disc = Discretization(problem.tau, problem.rates, panel_h, order)
    base = linear_part(problem, disc.grid)
    X = np.zeros_like(base) if seed == "zero" else base.copy()
    history = []
    ratios = []
    it = 0
    converged = False
    while it < max_iter:
        Xn = apply_operator(problem, disc, X, base)
        it += 1
        diff = float(np.max(np.abs(Xn - X)))
        if not np.isfinite(diff):
            raise NotContracting(float("inf"))
        if history and history[-1] > 1e3 * tol:
            ratios.append(diff / history[-1])
        history.append(diff)
        X = Xn
        if diff <= tol:
            converged = True
            break
        if len(ratios) >= 3 and min(ratios[-3:]) >= 1.0:
            raise NotContracting(ratios[-1])
    if not converged:
        if ratios and max(ratios[-3:]) >= 1.0:
            raise NotContracting(max(ratios[-3:]))
        raise MaxIterExceeded(f"no convergence in {max_iter} sweeps (last change {history[-1]:.3g})")
    ratio = max(ratios) if ratios else 0.0
    if ratio >= 1.0:
        raise NotContracting(ratio)
    corr = X - base
    return BvpSolution(problem, disc.grid.copy(), X, corr[:, 0], corr[:, 1], corr[:, 2], corr[:, 3],
                       it, ratio, history)


def extra_sweep_change(solution: BvpSolution, panel_h: float | None = None, order: int = 8) -> float:
    """Sup-norm change produced by one more operator sweep."""
    prob = solution.problem
    n_panels = len(solution.grid) // (order - 1)
    disc = Discretization(prob.tau, prob.rates, prob.tau / n_panels, order)
    if disc.grid.size != solution.grid.size:
        raise ValueError("solution grid does not match the requested discretization")
    Xn = apply_operator(prob, disc, solution.states)
    return float(np.max(np.abs(Xn - solution.states)))


def contraction_threshold(model: ModelSpec, tau: float, unit=(1.0, 1.0, 1.0, 1.0),
                          lo: float = 1e-3, hi: float = 2.0, limit: float = 0.9, steps: int = 20) -> float:
    """Largest delta (bisection) at which the empirical contraction ratio stays below ``limit``."""

    def ok(d):
        try:
            p = BvpProblem(model, tau, unit[0] * d, unit[1] * d, unit[2] * d, unit[3] * d, d)
            return solve_bvp(p, tol=1e-10, max_iter=80).contraction_ratio < limit
        except (NotContracting, MaxIterExceeded, FloatingPointError):
            return False

    if not ok(lo):
        return 0.0
    if ok(hi):
        return hi
    for _ in range(steps):
        mid = math.sqrt(lo * hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


# ---------------------------------------------------------------------------
# shooting oracle


def shooting_solve(problem: BvpProblem, t_eval: np.ndarray, rtol: float = 1e-13,
                   atol: float = 1e-16, max_newton: int = 20) -> np.ndarray:
    """Independent solution by Newton on ``v(0)`` with DOP853 and variational equations."""
    model = problem.model
    lam = problem.rates
    tau = problem.tau
    target = np.array([problem.v1tau, problem.v2tau])

    def rhs(t, z):
        x = z[:4]
        J = model.jacobian(x)
        S = z[4:].reshape(4, 2)
        return np.concatenate((model.field(x), (J @ S).ravel()))

    S0 = np.zeros((4, 2))
    S0[2, 0] = S0[3, 1] = 1.0
    v0 = target * np.exp(-lam[2:] * tau)
    for _ in range(max_newton):
        z0 = np.concatenate(([problem.u10, problem.u20], v0, S0.ravel()))
        sol = solve_ivp(rhs, (0.0, tau), z0, method="DOP853", rtol=rtol, atol=atol)
        zT = sol.y[:, -1]
        res = zT[2:4] - target
        Jv = zT[4:].reshape(4, 2)[2:4]
        step = np.linalg.solve(Jv, res)
        v0 = v0 - step
        if np.max(np.abs(step)) <= 1e-15 + 1e-13 * np.max(np.abs(v0)):
            break
    else:
        raise NewtonDiverged("shooting Newton did not converge")
    x0 = np.array([problem.u10, problem.u20, v0[0], v0[1]])
    sol = solve_ivp(lambda t, x: model.field(x), (0.0, tau), x0, method="DOP853",
                    rtol=rtol, atol=atol, t_eval=t_eval, dense_output=False)
    return sol.y.T


def bvp_residual(model: ModelSpec, solution: BvpSolution) -> tuple[float, dict]:
    """Max defect of ``x' = field(x)`` from spline differentiation, plus boundary defects."""
    t = solution.grid
    X = solution.states
    if not np.any(X):
        dX = np.zeros_like(X)
    else:
        dX = CubicSpline(t, X, axis=0)(t, 1)
    defect = float(np.max(np.abs(dX - model.field_batch(X))))
    p = solution.problem
    bnd = {
        "u10": float(abs(X[0, 0] - p.u10)),
        "u20": float(abs(X[0, 1] - p.u20)),
        "v1tau": float(abs(X[-1, 2] - p.v1tau)),
        "v2tau": float(abs(X[-1, 3] - p.v2tau)),
    }
    return defect, bnd


# ---------------------------------------------------------------------------
# estimate templates


TERMS = ("xi1", "xi2", "zeta1", "zeta2")


def bound_templates(case_tag: str, lambda1: float, lambda2: float, t: np.ndarray, tau: float,
                    delta: float, u10: float, v1tau: float, ablate: Sequence[str] = ()) -> dict:
    """Right-hand sides (without the constant M) of the per-case correction bounds.

    ``ablate`` may contain ``"resonant"`` to drop the linear-in-t resonant
    terms of the ``lambda2 = 2 lambda1`` case.
    """
    a, b = abs(u10), abs(v1tau)
    d = delta
    s = tau - t
    E = np.exp
    if case_tag == "Equal":
        lam = lambda1
        return {
            "xi1": E(-lam * t) * a * d + E(-lam * tau) * b * d,
            "xi2": E(-lam * t) * d * d,
            "zeta1": E(-lam * s) * b * d + E(-lam * tau) * a * d,
            "zeta2": E(-lam * s) * d * d,
        }
    if case_tag == "Between":
        l1, l2 = lambda1, lambda2
        return {
            "xi1": E(-l1 * t) * d * a + E(-l1 * s - l2 * t) * d * b,
            "xi2": E(-l2 * t) * d * d,
            "zeta1": E(-l1 * s) * d * b + E(-l2 * s - l1 * t) * d * a,
            "zeta2": E(-l2 * s) * d * d,
        }
    if case_tag == "Resonant2":
        lam = lambda1
        res = 0.0 if "resonant" in ablate else 1.0
        return {
            "xi1": E(-lam * t) * a * d + t * E(-lam * (tau + t)) * b * d,
            "xi2": res * t * E(-2 * lam * t) * a * a + E(-2 * lam * t) * d * d,
            "zeta1": E(-lam * s) * b * d + s * E(-lam * (2 * tau - t)) * a * d,
            "zeta2": res * s * E(-2 * lam * s) * b * b + E(-2 * lam * s) * d * d,
        }
    if case_tag == "Beyond2":
        l1, l2 = lambda1, lambda2
        return {
            "xi1": E(-l1 * t) * d * a + E(-l1 * (tau + t)) * d * b,
            "xi2": E(-l2 * t) * d * d,
            "zeta1": E(-l1 * s) * d * b + E(-l1 * (2 * tau - t)) * d * a,
            "zeta2": E(-l2 * s) * d * d,
        }
    raise ValueError(f"unknown case tag {case_tag!r}")


@dataclass(frozen=True)
class SamplePlan:
    """Boundary data are ``delta * unit``; ``tau`` grows like ``(delta_ref/delta)**tau_power``."""

    deltas: tuple = (0.1, 0.05, 0.025)
    taus: tuple = (2.0, 4.0, 8.0)
    units: tuple = ((1.0, 1.0, 1.0, 1.0), (1.0, -1.0, 0.5, 1.0), (-0.5, 1.0, -1.0, 0.5), (1.0, 0.5, -1.0, -1.0))
    tau_power: float = 0.0
    floor: float = 1e-14
    tol: float = 1e-13
    panel_h: float = 0.25

    def __post_init__(self):
        if len(self.deltas) < 3:
            raise ValueError("a sample plan needs at least three delta values")

    def tau_values(self, delta: float) -> list[float]:
        scale = (max(self.deltas) / delta) ** self.tau_power
        return [tau * scale for tau in self.taus]


# unit tuples with one zero entry isolate the subdominant template terms
EXTENDED_UNITS = ((1.0, 1.0, 1.0, 1.0), (1.0, -1.0, 0.5, 1.0), (-0.5, 1.0, -1.0, 0.5), (1.0, 0.5, -1.0, -1.0),
                  (0.0, 1.0, 1.0, 1.0), (1.0, 1.0, 0.0, 1.0), (1.0, 1.0, 1.0, 0.0), (1.0, 0.0, 1.0, 1.0))


def plan_for_case(case_tag: str) -> SamplePlan:
    """Sample plan used by the estimate suite.

    For Resonant2 the flight time grows as delta shrinks, which is the regime
    where the ``t e^{-2 lambda t}`` factor matters.
    """
    return SamplePlan(units=EXTENDED_UNITS, tau_power=1.5 if case_tag == "Resonant2" else 0.0)


@dataclass
class EstimateReport:
    case_tag: str
    deltas: list
    mhat: dict          # term -> list of sup ratios per delta
    ablation: dict      # term -> list of sup ratios with resonant terms dropped (Resonant2 only)
    samples: list       # rows for the CSV export

    def spread(self, term: str) -> float:
        """Relative variation max/min - 1 of the supremum across deltas."""
        vals = np.array(self.mhat[term])
        if np.all(vals == 0):
            return 0.0
        return float(vals.max() / vals.min() - 1.0) if vals.min() > 0 else float("inf")

    def stable(self, limit: float = 0.25) -> bool:
        return all(np.all(np.isfinite(self.mhat[k])) and self.spread(k) <= limit for k in TERMS)

    def ablation_growth(self) -> dict:
        return {k: float(v[-1] / v[0]) if v[0] > 0 else float("inf") for k, v in self.ablation.items()}

    def to_json(self) -> str:
        body = {
            "case_tag": self.case_tag,
            "terms": {
                k: {"delta": self.deltas, "Mhat": self.mhat[k], "spread": self.spread(k)} for k in TERMS
            },
        }
        if self.ablation:
            body["ablation"] = {k: {"delta": self.deltas, "Mhat": v} for k, v in self.ablation.items()}
        return json.dumps(body, indent=2, sort_keys=True, default=_json_float)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delta", "tau", "sample", "term", "t", "ratio"])
            for row in self.samples:
                w.writerow([_fmt(v) for v in row])


def _fmt(v):
    return f"{v:.17g}" if isinstance(v, float) else v


def _json_float(v):
    return float(v)


def _sup_ratio(value: np.ndarray, template: np.ndarray, floor: float) -> tuple[float, int]:
    mask = template > floor
    if not np.any(mask):
        return 0.0, -1
    r = np.where(mask, np.abs(value) / np.where(mask, template, 1.0), 0.0)
    k = int(np.argmax(r))
    return float(r[k]), k


def verify_estimates(case_tag: str, model: ModelSpec, sample_plan: SamplePlan | None = None,
                     record_profiles: bool = False) -> EstimateReport:
    """Empirical constants ``sup |correction| / template`` for each delta of the plan."""
    plan = sample_plan or SamplePlan()
    l1, l2 = model.eigen.lambda1, model.eigen.lambda2
    mhat = {k: [] for k in TERMS}
    abl = {k: [] for k in ("xi2", "zeta2")} if case_tag == "Resonant2" else {}
    rows = []
    for d in plan.deltas:
        sup = {k: 0.0 for k in TERMS}
        sup_abl = {k: 0.0 for k in abl}
        for tau in plan.tau_values(d):
            for j, unit in enumerate(plan.units):
                prob = BvpProblem(model, tau, *(d * np.asarray(unit, float)), d)
                sol = solve_bvp(prob, tol=plan.tol, panel_h=plan.panel_h)
                tmpl = bound_templates(case_tag, l1, l2, sol.grid, tau, d, prob.u10, prob.v1tau)
                vals = {"xi1": sol.xi1, "xi2": sol.xi2, "zeta1": sol.zeta1, "zeta2": sol.zeta2}
                for k in TERMS:
                    r, i = _sup_ratio(vals[k], tmpl[k], plan.floor)
                    sup[k] = max(sup[k], r)
                    if record_profiles:
                        mask = tmpl[k] > plan.floor
                        ratio = np.where(mask, np.abs(vals[k]) / np.where(mask, tmpl[k], 1.0), 0.0)
                        rows.extend((d, tau, j, k, float(tt), float(rr)) for tt, rr in zip(sol.grid, ratio))
                if abl:
                    tmpl_a = bound_templates(case_tag, l1, l2, sol.grid, tau, d, prob.u10, prob.v1tau,
                                             ablate=("resonant",))
                    for k in abl:
                        sup_abl[k] = max(sup_abl[k], _sup_ratio(vals[k], tmpl_a[k], plan.floor)[0])
        for k in TERMS:
            mhat[k].append(sup[k])
        for k in abl:
            abl[k].append(sup_abl[k])
    return EstimateReport(case_tag, list(plan.deltas), mhat, abl, rows)
