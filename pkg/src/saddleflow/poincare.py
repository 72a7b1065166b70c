"""Section charts, local and global passage maps, and the return map.

Sections are ``Sigma_in = {u2 = sigma delta}`` and ``Sigma_out = {v2 = sigma delta}``;
on each level set ``H = h`` they are charted by ``(u1, v1)``.  The local map
runs from an In-section to the next Out-section near the saddle, the global
map follows the loop from Out back to In, and the return map is their
composition.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ChartSingular, DegenerateJacobian, Escaped, ModelError, NewtonDiverged
from .flow import (STATUS_END, STATUS_ESCAPED, STATUS_EVENT, STATUS_MAXSTEPS, STATUS_TANGENT,
                   STATUS_UNDERFLOW, SectionDescriptor, run_flow)
from .model import ModelSpec

SWAP = np.array([2, 3, 0, 1])
J2 = np.array([[0.0, 1.0], [1.0, 0.0]])


@dataclass(frozen=True)
class SectionPoint:
    h: float
    desc: SectionDescriptor
    u1: float
    v1: float
    lifted: np.ndarray = field(compare=False)

    @property
    def chart(self) -> np.ndarray:
        return np.array([self.u1, self.v1])


@dataclass
class ReturnOutcome:
    tag: str                      # Hit, EscapedLocal, EscapedGlobal, WrongSide
    point: SectionPoint | None = None
    tau: float = float("nan")
    reason: str = ""
    itinerary: list = field(default_factory=list)
    exit_point: SectionPoint | None = None

    @property
    def hit(self) -> bool:
        return self.tag == "Hit"

    def __post_init__(self):
        if self.tag == "Hit" and not self.tau > 0:
            raise ValueError("a Hit must carry a positive flight time")


@dataclass(frozen=True)
class GlobalCoeffs:
    h: float
    a: float
    b: float
    c: float
    d: float
    sigma: int = 1

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    @property
    def slope(self) -> float:
        """Slope d/b of the expanded direction (as an angle-safe quotient)."""
        return self.d / self.b if self.b != 0 else math.copysign(math.inf, self.d)

    @property
    def hypotheses_ok(self) -> bool:
        return all(abs(v) > 1e-12 for v in (self.a, self.b, self.c, self.d))


# ---------------------------------------------------------------------------
# charts


def lift_to_section(model: ModelSpec, h: float, desc: SectionDescriptor, u1: float, v1: float,
                    tol: float = 1e-15, threshold: float = 1e-9, max_iter: int = 50) -> SectionPoint:
    """Solve ``H = h`` on the section for the free coordinate (v2 on In, u2 on Out)."""
    if not model.conservative:
        raise ModelError("section charts need a first integral")
    fixed, free = (1, 3) if desc.which == "In" else (3, 1)
    x = np.zeros(4)
    x[0], x[2], x[fixed] = u1, v1, desc.value
    g = model.grad_first_integral(x)
    if abs(g[free]) < threshold:
        raise ChartSingular(f"dH/d{'v2' if free == 3 else 'u2'} vanishes at the seed")
    x[free] = -(model.first_integral(x) - h) / g[free]
    for _ in range(max_iter):
        r = model.first_integral(x) - h
        g = model.grad_first_integral(x)
        if abs(g[free]) < threshold:
            raise ChartSingular(f"section chart is singular at {x}")
        step = r / g[free]
        x[free] -= step
        if abs(step) <= tol * max(1.0, abs(x[free])) and abs(model.first_integral(x) - h) <= 1e-15 + 1e-13 * abs(h):
            break
    else:
        raise NewtonDiverged("section lift did not converge")
    if abs(x[free]) > 10 * desc.delta + 1.0:
        raise NewtonDiverged("section lift wandered away from the chart")
    return SectionPoint(float(h), desc, float(u1), float(v1), x)


def read_chart(h: float, desc: SectionDescriptor, x) -> SectionPoint:
    x = np.asarray(x, dtype=float).copy()
    x[desc.index] = desc.value
    return SectionPoint(float(h), desc, float(x[0]), float(x[2]), x)


# ---------------------------------------------------------------------------
# maps


@dataclass(frozen=True)
class MapSettings:
    """Numerical knobs shared by the maps."""

    tol: float = 1e-12
    t_max_local: float = 200.0
    t_max_global: float = 200.0
    box_factor: float = 3.0          # local neighbourhood bound = box_factor * delta
    tube_fraction: float = 0.5       # loop tube radius = tube_fraction * loop extent


DEFAULT_SETTINGS = MapSettings()


def _status_reason(status: int) -> str:
    return {STATUS_END: "time limit", STATUS_ESCAPED: "left the neighbourhood",
            STATUS_UNDERFLOW: "step size underflow", STATUS_MAXSTEPS: "step budget",
            STATUS_TANGENT: "tangential crossing"}.get(status, "unknown")


def local_map(model: ModelSpec, point_in: SectionPoint, eps: float, t_max: float | None = None,
              settings: MapSettings = DEFAULT_SETTINGS, out_sigma: int | None = None) -> ReturnOutcome:
    """Passage near O from an In-section point to the first Out-section crossing.

    Both Out-sections ``v2 = +-delta`` are watched; a crossing on a side the
    model has no loop on counts as an escape, and ``out_sigma`` (if given)
    marks other sides as WrongSide.
    """
    delta = point_in.desc.delta
    t_max = settings.t_max_local if t_max is None else t_max
    outs = (SectionDescriptor("Out", 1, delta), SectionDescriptor("Out", -1, delta))
    bound = settings.box_factor * delta
    res = run_flow(model, point_in.lifted, 0.0, t_max, settings.tol, bound, outs)
    if res.status != STATUS_EVENT:
        return ReturnOutcome("EscapedLocal", reason=_status_reason(res.status))
    sig = outs[res.event].sigma
    exit_pt = read_chart(point_in.h, outs[res.event], res.x)
    itin = [(point_in.desc.sigma, "In", 0.0), (sig, "Out", res.t)]
    if sig not in model.sigmas:
        return ReturnOutcome("EscapedLocal", tau=res.t, reason="exit on the side without a loop",
                             itinerary=itin, exit_point=exit_pt)
    if out_sigma is not None and sig != out_sigma:
        return ReturnOutcome("WrongSide", tau=res.t, reason=f"exit through side {sig:+d}",
                             itinerary=itin, exit_point=exit_pt)
    if max(abs(exit_pt.u1), abs(exit_pt.v1)) > eps:
        return ReturnOutcome("EscapedLocal", tau=res.t, reason="exit outside the eps-ball",
                             itinerary=itin, exit_point=exit_pt)
    return ReturnOutcome("Hit", exit_pt, res.t, itinerary=itin, exit_point=exit_pt)


def _tube_bounds(model: ModelSpec, sigma: int, settings: MapSettings) -> np.ndarray:
    ext = model.loop_extent(sigma)
    r = settings.tube_fraction * ext
    return np.array([r, ext + r, r, ext + r])


def global_map(model: ModelSpec, point_out: SectionPoint, settings: MapSettings = DEFAULT_SETTINGS,
               t_max: float | None = None) -> tuple[SectionPoint, float]:
    """Follow the loop from an Out-section point to the first In-section crossing on the same side."""
    sigma = point_out.desc.sigma
    delta = point_out.desc.delta
    target = SectionDescriptor("In", sigma, delta)
    t_max = settings.t_max_global if t_max is None else t_max
    bound = _tube_bounds(model, sigma, settings)
    res = run_flow(model, point_out.lifted, 0.0, t_max, settings.tol, bound, (target,))
    if res.status != STATUS_EVENT:
        raise Escaped(float(bound[0]), res.t, "left the loop tube: " + _status_reason(res.status))
    return read_chart(point_out.h, target, res.x), res.t


def return_map(model: ModelSpec, h: float, point, eps: float, sigma: int = 1, delta: float | None = None,
               settings: MapSettings = DEFAULT_SETTINGS) -> ReturnOutcome:
    """``T = T_glo o T_loc`` on ``Pi_in(h)``; ``point`` is a SectionPoint or chart pair."""
    if not isinstance(point, SectionPoint):
        delta = model.delta_scale if delta is None else delta
        desc = SectionDescriptor("In", sigma, delta)
        try:
            point = lift_to_section(model, h, desc, float(point[0]), float(point[1]))
        except (ChartSingular, NewtonDiverged) as exc:
            return ReturnOutcome("EscapedLocal", reason=f"chart: {exc}")
    loc = local_map(model, point, eps, settings=settings, out_sigma=point.desc.sigma)
    if not loc.hit:
        return loc
    try:
        img, tg = global_map(model, loc.point, settings)
    except Escaped as exc:
        return ReturnOutcome("EscapedGlobal", reason=exc.reason, tau=loc.tau, itinerary=loc.itinerary,
                             exit_point=loc.point)
    itin = loc.itinerary + [(img.desc.sigma, "In", loc.tau + tg)]
    return ReturnOutcome("Hit", img, loc.tau, itinerary=itin, exit_point=loc.point)


# ---------------------------------------------------------------------------
# time reversal


def reverse_time_view(model: ModelSpec) -> ModelSpec:
    """``t -> -t`` followed by exchanging stable and unstable coordinates.

    The new field is ``-P f(P y)`` with ``P(u1, u2, v1, v2) = (v1, v2, u1, u2)``
    and the first integral is ``H(P y)``.  Applying it twice gives back the
    original field.
    """
    comps = tuple(-(model.components[SWAP[i]].swap_uv()) for i in range(4))
    ham = model.hamiltonian.swap_uv() if model.hamiltonian is not None else None
    slots = ()
    return ModelSpec(model.eigen, model.kind, comps, ham, model.coupling, model.delta_scale,
                     slots, model.sigmas, not model.reversed)


def backward_map(model: ModelSpec, h: float, point, eps: float, sigma: int = 1,
                 delta: float | None = None, reversed_model: ModelSpec | None = None,
                 settings: MapSettings = DEFAULT_SETTINGS) -> ReturnOutcome:
    """``T^{-1}`` on ``Pi_in(h)`` computed forward in the reversed model.

    In reversed coordinates the In-section becomes an Out-section, so the
    inverse is ``J o loc_R o glo_R o J`` with ``J`` swapping ``(u1, v1)``.
    """
    rev = reversed_model or reverse_time_view(model)
    delta = model.delta_scale if delta is None else delta
    u1, v1 = (point.u1, point.v1) if isinstance(point, SectionPoint) else (float(point[0]), float(point[1]))
    try:
        start = lift_to_section(rev, h, SectionDescriptor("Out", sigma, delta), v1, u1)
    except (ChartSingular, NewtonDiverged) as exc:
        return ReturnOutcome("EscapedLocal", reason=f"chart: {exc}")
    try:
        mid, tg = global_map(rev, start, settings)
    except Escaped as exc:
        return ReturnOutcome("EscapedGlobal", reason=exc.reason)
    if max(abs(mid.u1), abs(mid.v1)) > eps:
        # the preimage on the original Out-section is outside the eps-ball
        return ReturnOutcome("EscapedGlobal", reason="preimage outside the eps-ball on Out")
    loc = local_map(rev, mid, eps, settings=settings, out_sigma=sigma)
    if not loc.hit:
        return loc
    x = loc.point.lifted[SWAP]
    img = SectionPoint(h, SectionDescriptor("In", sigma, delta), float(x[0]), float(x[2]), x)
    return ReturnOutcome("Hit", img, loc.tau, itinerary=[(sigma, "In", 0.0), (sigma, "Out", -tg),
                                                         (sigma, "In", -tg - loc.tau)])


# ---------------------------------------------------------------------------
# differentials


def _fd_jacobian(fun, p0, step: float) -> np.ndarray:
    Jm = np.empty((2, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        Jm[:, k] = (fun(p0 + e) - fun(p0 - e)) / (2 * step)
    return Jm


def richardson_jacobian(fun, p0, step: float) -> np.ndarray:
    """Central differences at ``step`` and ``step/2`` combined to fourth order."""
    J1 = _fd_jacobian(fun, p0, step)
    J2_ = _fd_jacobian(fun, p0, step / 2)
    return (4 * J2_ - J1) / 3


def global_map_chart(model: ModelSpec, h: float, sigma: int = 1, delta: float | None = None,
                     settings: MapSettings = DEFAULT_SETTINGS):
    delta = model.delta_scale if delta is None else delta
    desc = SectionDescriptor("Out", sigma, delta)

    def fun(p):
        pt = lift_to_section(model, h, desc, p[0], p[1])
        img, _ = global_map(model, pt, settings)
        return img.chart

    return fun


def global_map_coeffs(model: ModelSpec, h: float, sigma: int = 1, fd_step: float = 1e-5,
                      delta: float | None = None, settings: MapSettings = DEFAULT_SETTINGS) -> GlobalCoeffs:
    """Richardson-extrapolated Jacobian of the global map at ``M_out(h)``."""
    if not (1e-7 <= fd_step <= 1e-3):
        raise ValueError("fd_step must lie in [1e-7, 1e-3]")
    fun = global_map_chart(model, h, sigma, delta, settings)
    p0 = np.zeros(2)
    Jm = richardson_jacobian(fun, p0, fd_step)
    gc = GlobalCoeffs(float(h), float(Jm[0, 0]), float(Jm[0, 1]), float(Jm[1, 0]), float(Jm[1, 1]), sigma)
    scale = np.max(np.abs(Jm))
    if abs(gc.det) <= 1e-10 * max(1.0, scale ** 2):
        raise DegenerateJacobian(f"global map differential is singular (det {gc.det:.3g})")
    if abs(gc.d) <= 1e-12 * max(1.0, scale):
        raise DegenerateJacobian("d(h) vanishes: the loop is not transverse")
    return gc


def return_map_chart(model: ModelSpec, h: float, eps: float, sigma: int = 1, delta: float | None = None,
                     settings: MapSettings = DEFAULT_SETTINGS):
    def fun(p):
        out = return_map(model, h, p, eps, sigma, delta, settings)
        if not out.hit:
            raise Escaped(eps, float("nan"), f"return map undefined: {out.tag} {out.reason}")
        return out.point.chart

    return fun


# ---------------------------------------------------------------------------
# censuses


LABELS = ("D1", "D2", "EscapedLocal", "EscapedGlobal")


def cone_of(u1: float, v1: float, m: float) -> str:
    return "Y1" if abs(v1) < abs(u1) / m else "Y2"


@dataclass
class DomainCensus:
    h: float
    eps: float
    m: float
    grid_n: int
    delta: float
    u1: np.ndarray
    v1: np.ndarray
    labels: list
    tau: np.ndarray
    image: np.ndarray

    @property
    def in_domain(self) -> np.ndarray:
        return np.array([lab in ("D1", "D2") for lab in self.labels])

    def counts(self) -> dict:
        return {lab: int(sum(1 for x in self.labels if x == lab)) for lab in LABELS}

    def center_index(self) -> int:
        return int(np.argmin(self.u1 ** 2 + self.v1 ** 2))

    def neighbourhood_in_domain(self) -> bool:
        """The grid point nearest the origin and its eight neighbours lie in D."""
        n = self.grid_n
        k = self.center_index()
        i, j = divmod(k, n)
        dom = self.in_domain.reshape(n, n)
        sub = dom[max(0, i - 1):i + 2, max(0, j - 1):j + 2]
        return bool(sub.all()) and sub.size == 9

    def domain_empty(self) -> bool:
        return not self.in_domain.any()

    def symmetric(self) -> bool:
        """Labels are invariant under (u1, v1) -> (-u1, -v1) on the symmetric grid."""
        n = self.grid_n
        lab = np.array(self.labels).reshape(n, n)
        return bool(np.all(lab == lab[::-1, ::-1]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["u1", "v1", "label", "tau", "image_u1", "image_v1"])
            for k in range(len(self.labels)):
                w.writerow([f"{self.u1[k]:.17g}", f"{self.v1[k]:.17g}", self.labels[k],
                            f"{self.tau[k]:.17g}", f"{self.image[k, 0]:.17g}", f"{self.image[k, 1]:.17g}"])

    def summary(self) -> dict:
        return {"h": self.h, "eps": self.eps, "m": self.m, "grid_n": self.grid_n, "delta": self.delta,
                "counts": self.counts(), "D_empty": self.domain_empty()}


def census_grid(eps: float, grid_n: int) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric cell-centred grid on the square ``[-eps, eps]^2`` (row index = v1)."""
    s = eps * (2 * np.arange(grid_n) + 1 - grid_n) / grid_n
    V, U = np.meshgrid(s, s, indexing="ij")
    return U.ravel(), V.ravel()


def classify_domain(model: ModelSpec, h: float, eps: float, m: float = 10.0, grid_n: int = 64,
                    sigma: int = 1, delta: float | None = None,
                    settings: MapSettings = DEFAULT_SETTINGS) -> DomainCensus:
    """Evaluate the return map on a grid of ``B_eps`` and label every point."""
    if not m > 1:
        raise ValueError("m must exceed 1")
    if grid_n < 2:
        raise ValueError("grid_n too small")
    delta = model.delta_scale if delta is None else delta
    U, V = census_grid(eps, grid_n)
    labels = []
    tau = np.full(U.size, np.nan)
    image = np.full((U.size, 2), np.nan)
    for k in range(U.size):
        out = return_map(model, h, (U[k], V[k]), eps, sigma, delta, settings)
        if out.tag == "Hit":
            labels.append("D1" if cone_of(U[k], V[k], m) == "Y1" else "D2")
            tau[k] = out.tau
            image[k] = out.point.chart
        elif out.tag == "EscapedGlobal":
            labels.append("EscapedGlobal")
            tau[k] = out.tau
        else:
            labels.append("EscapedLocal")
    return DomainCensus(float(h), float(eps), float(m), grid_n, delta, U, V, labels, tau, image)


def angle_between_slopes(p, q) -> float:
    """Angle in [0, pi/2] between the lines spanned by vectors p and q."""
    a = math.atan2(p[1], p[0]) - math.atan2(q[1], q[0])
    a = abs((a + math.pi / 2) % math.pi - math.pi / 2)
    return a


@dataclass
class ConeReport:
    n_d2: int
    n_in_ball: int
    n_violations: int
    slope_errors: np.ndarray
    max_slope_error: float
    expansion_min: float
    coeffs: GlobalCoeffs | None

    def to_dict(self) -> dict:
        return {"n_d2": self.n_d2, "n_in_ball": self.n_in_ball, "n_violations": self.n_violations,
                "max_slope_error": self.max_slope_error, "expansion_min": self.expansion_min}


def cone_check(census: DomainCensus, coeffs: GlobalCoeffs, n_smallest: int = 100) -> ConeReport:
    """Images of D2 points that stay in the ball must lie in Y2 and align with (b, d)."""
    eps, m = census.eps, census.m
    idx = [k for k, lab in enumerate(census.labels) if lab == "D2"]
    in_ball = [k for k in idx if np.max(np.abs(census.image[k])) <= eps]
    viol = sum(1 for k in in_ball if cone_of(*census.image[k], m) != "Y2")
    norms = np.array([math.hypot(census.u1[k], census.v1[k]) for k in idx])
    order = [idx[i] for i in np.argsort(norms, kind="stable")[:n_smallest]]
    direction = (coeffs.b, coeffs.d)
    errs = np.array([angle_between_slopes(census.image[k], direction) for k in order])
    exp_ratio = [math.hypot(*census.image[k]) / math.hypot(census.u1[k], census.v1[k]) for k in idx
                 if math.hypot(census.u1[k], census.v1[k]) > 0]
    return ConeReport(len(idx), len(in_ball), viol, errs, float(errs.max()) if errs.size else float("nan"),
                      float(min(exp_ratio)) if exp_ratio else float("nan"), coeffs)


# ---------------------------------------------------------------------------
# flight-time asymptotics


def level_scale(model: ModelSpec) -> float:
    """Factor turning H into its normalized form ``gamma u1 v1 - u2 v2 + ...``."""
    return -model.hamiltonian.terms.get((0, 1, 0, 1), 0.0)


def predicted_exp_tau(model: ModelSpec, h: float, delta: float, u10: float, v10: float) -> float:
    """Leading-order ``e^{lambda2 tau} = delta^2 / (gamma u10 v10 - h)`` in normalized units."""
    hn = h / level_scale(model)
    den = model.eigen.gamma * u10 * v10 - hn
    return delta ** 2 / den if den > 0 else math.inf


@dataclass
class AsymptoticsReport:
    h: float
    deltas: list
    rel_errors: dict          # delta -> list of relative errors in e^{lambda2 tau}
    v1_ratio_errors: dict     # delta -> list of |v1tau e^{-lambda1 tau} / v10 - 1|

    def max_error(self, delta: float) -> float:
        e = self.rel_errors[delta]
        return float(max(e)) if e else float("nan")

    def improving(self) -> bool:
        m = [self.max_error(d) for d in sorted(self.deltas, reverse=True)]
        return all(b < a for a, b in zip(m, m[1:]))

    def to_json(self) -> str:
        body = {"h": self.h, "rows": [
            {"delta": d, "max_rel_error": self.max_error(d), "n": len(self.rel_errors[d]),
             "max_v1_ratio_error": float(max(self.v1_ratio_errors[d])) if self.v1_ratio_errors[d] else None}
            for d in self.deltas], "improving": self.improving()}
        return json.dumps(body, indent=2, sort_keys=True)


def flight_time_check(model: ModelSpec, h: float, samples, deltas=(0.1, 0.05),
                      settings: MapSettings = DEFAULT_SETTINGS, scale_samples: bool = True) -> AsymptoticsReport:
    """Compare measured local flight times with the leading-order predictor.

    ``samples`` are chart points; with ``scale_samples`` they are given in
    units of delta (so the same relative configuration is used per delta).
    """
    rel = {}
    v1r = {}
    l1, l2 = model.eigen.lambda1, model.eigen.lambda2
    for d in deltas:
        rel[d] = []
        v1r[d] = []
        for s in samples:
            u10, v10 = (s[0] * d, s[1] * d) if scale_samples else (s[0], s[1])
            pt = lift_to_section(model, h, SectionDescriptor("In", 1, d), u10, v10)
            out = local_map(model, pt, eps=d, settings=settings, out_sigma=1)
            if not out.hit:
                continue
            pred = predicted_exp_tau(model, h, d, u10, v10)
            meas = math.exp(l2 * out.tau)
            rel[d].append(abs(meas / pred - 1.0))
            if v10 != 0.0:
                v1r[d].append(abs(out.point.v1 * math.exp(-l1 * out.tau) / v10 - 1.0))
    return AsymptoticsReport(float(h), list(deltas), rel, v1r)


def exit_ratios(model: ModelSpec, census: DomainCensus, settings: MapSettings = DEFAULT_SETTINGS):
    """For D2 points: (|u1tau| / |v1tau|, tau) at the Out-section."""
    rows = []
    for k, lab in enumerate(census.labels):
        if lab != "D2":
            continue
        pt = lift_to_section(model, census.h, SectionDescriptor("In", 1, census.delta), census.u1[k], census.v1[k])
        out = local_map(model, pt, census.eps, settings=settings, out_sigma=1)
        if out.hit and out.point.v1 != 0:
            rows.append((abs(out.point.u1) / abs(out.point.v1), out.tau, census.u1[k], census.v1[k]))
    return rows
