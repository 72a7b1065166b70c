"""Trajectory integration with dense output and section events.

The integrator is the Dormand-Prince 5(4) pair with Hairer's continuous
extension, compiled with numba and evaluating the model's polynomial field
from flat arrays.  Events are coordinate crossings ``x[i] = value`` with a
prescribed sign of ``dx[i]/dt``; they are bracketed on the dense output and
then polished with exact Runge-Kutta substeps plus Newton.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._kernels import eval_poly_arrays
from .errors import Escaped, NoCrossing, StepSizeUnderflow, TangentialCrossing
from .model import ModelSpec, PhaseState

STATUS_END, STATUS_EVENT, STATUS_ESCAPED, STATUS_UNDERFLOW, STATUS_MAXSTEPS, STATUS_TANGENT = range(6)

# Dormand-Prince tableau
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_A71, _A73, _A74, _A75, _A76 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40
_D1, _D3, _D4 = -12715105075 / 11282082432, 87487479700 / 32700410799, -10690763975 / 1880347072
_D5, _D6, _D7 = 701980252875 / 199316789632, -1453857185 / 822651844, 69997945 / 29380423


@njit(cache=True)
def _stages(comp, coef, exps, maxdeg, x, h, k1, k2, k3, k4, k5, k6, k7, y, tmp):
    for i in range(4):
        tmp[i] = x[i] + h * _A21 * k1[i]
    eval_poly_arrays(comp, coef, exps, maxdeg, tmp, k2)
    for i in range(4):
        tmp[i] = x[i] + h * (_A31 * k1[i] + _A32 * k2[i])
    eval_poly_arrays(comp, coef, exps, maxdeg, tmp, k3)
    for i in range(4):
        tmp[i] = x[i] + h * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
    eval_poly_arrays(comp, coef, exps, maxdeg, tmp, k4)
    for i in range(4):
        tmp[i] = x[i] + h * (_A51 * k1[i] + _A52 * k2[i] + _A53 * k3[i] + _A54 * k4[i])
    eval_poly_arrays(comp, coef, exps, maxdeg, tmp, k5)
    for i in range(4):
        tmp[i] = x[i] + h * (_A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i] + _A64 * k4[i] + _A65 * k5[i])
    eval_poly_arrays(comp, coef, exps, maxdeg, tmp, k6)
    for i in range(4):
        y[i] = x[i] + h * (_A71 * k1[i] + _A73 * k3[i] + _A74 * k4[i] + _A75 * k5[i] + _A76 * k6[i])
    eval_poly_arrays(comp, coef, exps, maxdeg, y, k7)


@njit(cache=True)
def _dense_coeffs(x, y, h, k1, k3, k4, k5, k6, k7, r):
    for i in range(4):
        ydiff = y[i] - x[i]
        bspl = h * k1[i] - ydiff
        r[0, i] = x[i]
        r[1, i] = ydiff
        r[2, i] = bspl
        r[3, i] = ydiff - h * k7[i] - bspl
        r[4, i] = h * (_D1 * k1[i] + _D3 * k3[i] + _D4 * k4[i] + _D5 * k5[i] + _D6 * k6[i] + _D7 * k7[i])


@njit(cache=True)
def _dense_eval(r, th, i):
    th1 = 1.0 - th
    return r[0, i] + th * (r[1, i] + th1 * (r[2, i] + th * (r[3, i] + th1 * r[4, i])))


@njit(cache=True)
def _single_step(comp, coef, exps, maxdeg, x, h, out):
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    k5 = np.empty(4)
    k6 = np.empty(4)
    k7 = np.empty(4)
    tmp = np.empty(4)
    eval_poly_arrays(comp, coef, exps, maxdeg, x, k1)
    _stages(comp, coef, exps, maxdeg, x, h, k1, k2, k3, k4, k5, k6, k7, out, tmp)
    return k7


@njit(cache=True)
def _root_theta(r, idx, val, g0, g1):
    """Illinois regula falsi for the dense-output crossing in theta in [0, 1]."""
    a, b = 0.0, 1.0
    fa, fb = g0, g1
    side = 0
    th = 0.5
    for _ in range(100):
        th = (a * fb - b * fa) / (fb - fa)
        f = _dense_eval(r, th, idx) - val
        if abs(f) < 1e-16 or (b - a) < 1e-15:
            break
        if f * fb > 0:
            b, fb = th, f
            if side == -1:
                fa *= 0.5
            side = -1
        else:
            a, fa = th, f
            if side == 1:
                fb *= 0.5
            side = 1
    return th


@njit(cache=True)
def _push(rec_t, rec_x, nrec, t, x):
    if nrec >= rec_t.shape[0]:
        nt = np.empty(2 * rec_t.shape[0])
        nx = np.empty((2 * rec_t.shape[0], 4))
        nt[:nrec] = rec_t[:nrec]
        nx[:nrec] = rec_x[:nrec]
        rec_t, rec_x = nt, nx
    rec_t[nrec] = t
    for i in range(4):
        rec_x[nrec, i] = x[i]
    return rec_t, rec_x, nrec + 1


@njit(cache=True)
def dopri_core(comp, coef, exps, maxdeg, x0, t0, t1, rtol, atol, fixed_h, bound,
               ev_idx, ev_val, ev_dir, tang_tol, record, sample_dt, max_steps):
    """Integrate from t0 toward t1; stop at t1, the first event, or an escape.

    Returns (status, t, x, event_id, rec_t, rec_x, nrec, n_accepted, n_rejected).
    """
    direction = 1.0 if t1 >= t0 else -1.0
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    k5 = np.empty(4)
    k6 = np.empty(4)
    k7 = np.empty(4)
    y = np.empty(4)
    tmp = np.empty(4)
    r = np.empty((5, 4))
    x = x0.copy()
    t = t0
    cap = 256 if record else 1
    rec_t = np.empty(cap)
    rec_x = np.empty((cap, 4))
    nrec = 0
    if record:
        rec_t, rec_x, nrec = _push(rec_t, rec_x, nrec, t, x)
    eval_poly_arrays(comp, coef, exps, maxdeg, x, k1)
    n_ev = ev_idx.shape[0]

    if fixed_h > 0:
        h = direction * fixed_h
    else:
        d0 = 0.0
        d1 = 0.0
        for i in range(4):
            sc = atol + rtol * abs(x[i])
            d0 += (x[i] / sc) ** 2
            d1 += (k1[i] / sc) ** 2
        d0 = math.sqrt(d0 / 4)
        d1 = math.sqrt(d1 / 4)
        if d0 < 1e-5 or d1 < 1e-5:
            h = 1e-6
        else:
            h = 0.01 * d0 / d1
        h = min(h, abs(t1 - t0), 0.1) * direction
        if h == 0.0:
            h = direction * 1e-6
    nacc = 0
    nrej = 0
    fac_old = 1e-4
    status = STATUS_END
    event_id = -1
    while True:
        if (t - t1) * direction >= 0.0:
            status = STATUS_END
            break
        if nacc + nrej >= max_steps:
            status = STATUS_MAXSTEPS
            break
        if abs(h) < 1e-13 * max(1.0, abs(t)):
            status = STATUS_UNDERFLOW
            break
        last = False
        if (t + h - t1) * direction >= 0.0:
            h = t1 - t
            last = True
        _stages(comp, coef, exps, maxdeg, x, h, k1, k2, k3, k4, k5, k6, k7, y, tmp)
        err = 0.0
        for i in range(4):
            sc = atol + rtol * max(abs(x[i]), abs(y[i]))
            e = h * (_E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i] + _E5 * k5[i] + _E6 * k6[i] + _E7 * k7[i])
            err += (e / sc) ** 2
        err = math.sqrt(err / 4)
        if fixed_h > 0 or err <= 1.0:
            nacc += 1
            # events: earliest valid crossing inside this step
            best_th = 2.0
            best_e = -1
            have_dense = False
            for e in range(n_ev):
                idx = ev_idx[e]
                g0 = x[idx] - ev_val[e]
                g1 = y[idx] - ev_val[e]
                if g0 == 0.0 or g0 * g1 > 0.0:
                    continue
                if not have_dense:
                    _dense_coeffs(x, y, h, k1, k3, k4, k5, k6, k7, r)
                    have_dense = True
                th = _root_theta(r, idx, ev_val[e], g0, g1) if g1 != 0.0 else 1.0
                # orientation in physical time: sign of dx[idx]/dt at the root
                for i in range(4):
                    tmp[i] = _dense_eval(r, th, i)
                eval_poly_arrays(comp, coef, exps, maxdeg, tmp, k2)
                slope = k2[idx]
                if ev_dir[e] != 0 and slope * ev_dir[e] <= 0.0 and abs(slope) > tang_tol:
                    continue
                if th < best_th:
                    best_th = th
                    best_e = e
            if best_e >= 0:
                idx = ev_idx[best_e]
                val = ev_val[best_e]
                hs = h * best_th
                yr = np.empty(4)
                slope = 0.0
                for _ in range(12):
                    fr = _single_step(comp, coef, exps, maxdeg, x, hs, yr)
                    g = yr[idx] - val
                    slope = fr[idx]
                    if abs(g) <= 1e-13 or slope == 0.0:
                        break
                    hs -= g / slope
                if record:
                    if sample_dt > 0.0:
                        nsub = int(abs(hs) / sample_dt)
                        for j in range(1, nsub + 1):
                            thj = j * sample_dt / abs(h)
                            for i in range(4):
                                tmp[i] = _dense_eval(r, thj, i)
                            rec_t, rec_x, nrec = _push(rec_t, rec_x, nrec, t + direction * j * sample_dt, tmp)
                    rec_t, rec_x, nrec = _push(rec_t, rec_x, nrec, t + hs, yr)
                t = t + hs
                for i in range(4):
                    x[i] = yr[i]
                event_id = best_e
                status = STATUS_TANGENT if abs(slope) <= tang_tol else STATUS_EVENT
                break
            if record:
                if sample_dt > 0.0 and abs(h) > sample_dt:
                    if not have_dense:
                        _dense_coeffs(x, y, h, k1, k3, k4, k5, k6, k7, r)
                        have_dense = True
                    nsub = int(math.ceil(abs(h) / sample_dt))
                    for j in range(1, nsub):
                        thj = j / nsub
                        for i in range(4):
                            tmp[i] = _dense_eval(r, thj, i)
                        rec_t, rec_x, nrec = _push(rec_t, rec_x, nrec, t + thj * h, tmp)
                rec_t, rec_x, nrec = _push(rec_t, rec_x, nrec, t + h, y)
            t = t1 if last else t + h
            for i in range(4):
                x[i] = y[i]
                k1[i] = k7[i]
            escaped = False
            for i in range(4):
                if abs(x[i]) > bound[i]:
                    escaped = True
            if escaped:
                status = STATUS_ESCAPED
                break
            if fixed_h > 0:
                h = direction * fixed_h
            else:
                # Lund-stabilized step control as in Hairer's DOPRI5
                fac11 = max(err, 1e-10) ** 0.17
                fac = fac11 / fac_old ** 0.04 / 0.9
                fac = min(5.0, max(0.1, fac))
                h = h / fac
                fac_old = max(err, 1e-4)
        else:
            nrej += 1
            fac = 0.9 * err ** -0.2
            h = h * max(0.2, fac)
    return status, t, x, event_id, rec_t, rec_x, nrec, nacc, nrej


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SectionDescriptor:
    """``In``: ``{u2 = sigma delta}`` crossed with ``u2`` moving toward O.
    ``Out``: ``{v2 = sigma delta}`` crossed with ``v2`` moving away from O."""

    which: str
    sigma: int
    delta: float
    direction: int | None = None

    def __post_init__(self):
        if self.which not in ("In", "Out"):
            raise ValueError(f"section kind must be In or Out, got {self.which!r}")
        if self.sigma not in (1, -1):
            raise ValueError("sigma must be +1 or -1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @property
    def index(self) -> int:
        return 1 if self.which == "In" else 3

    @property
    def value(self) -> float:
        return self.sigma * self.delta

    @property
    def orientation(self) -> int:
        if self.direction is not None:
            return int(self.direction)
        return -self.sigma if self.which == "In" else self.sigma


@dataclass
class FlowResult:
    status: int
    t: float
    x: np.ndarray
    event: int
    n_accepted: int
    n_rejected: int


def _bound_array(bound) -> np.ndarray:
    if bound is None:
        return np.full(4, np.inf)
    b = np.asarray(bound, dtype=float)
    return np.full(4, float(b)) if b.ndim == 0 else b.copy()


_NO_EVENTS = (np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64))


def run_flow(model: ModelSpec, x0, t0: float, t1: float, tol: float = 1e-12,
             bound=None, sections=(), fixed_step: float = 0.0, max_steps: int = 2_000_000,
             tang_tol: float = 1e-10, record: bool = False, sample_dt: float = 0.0):
    """Low-level call returning a FlowResult (and record arrays if requested)."""
    cf = model.compiled_field
    if sections:
        ev = (np.array([s.index for s in sections], np.int64),
              np.array([s.value for s in sections], float),
              np.array([s.orientation for s in sections], np.int64))
    else:
        ev = _NO_EVENTS
    out = dopri_core(cf.comp, cf.coef, cf.exps, cf.maxdeg, np.asarray(x0, dtype=float).copy(),
                     float(t0), float(t1), float(tol), float(tol), float(fixed_step),
                     _bound_array(bound), ev[0], ev[1], ev[2], float(tang_tol),
                     bool(record), float(sample_dt), int(max_steps))
    status, t, x, event, rec_t, rec_x, nrec, nacc, nrej = out
    res = FlowResult(int(status), float(t), x, int(event), int(nacc), int(nrej))
    if record:
        return res, rec_t[:nrec].copy(), rec_x[:nrec].copy()
    return res


@dataclass
class Trajectory:
    model_id: str
    t: np.ndarray
    x: np.ndarray
    h_drift: float | None
    n_accepted: int = 0
    n_rejected: int = 0

    @property
    def samples(self) -> list[PhaseState]:
        return [PhaseState.from_array(xi, float(ti)) for ti, xi in zip(self.t, self.x)]

    @property
    def end(self) -> np.ndarray:
        return self.x[-1]

    def to_csv(self, path, model: ModelSpec | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "u1", "u2", "v1", "v2", "H"])
            for ti, xi in zip(self.t, self.x):
                hv = model.first_integral(xi) if model is not None and model.conservative else float("nan")
                w.writerow([f"{v:.17g}" for v in (ti, *xi, hv)])


def _check_tol(tol: float) -> None:
    if not (1e-14 <= tol <= 1e-6):
        raise ValueError(f"tol must lie in [1e-14, 1e-6], got {tol}")


def integrate(model: ModelSpec, x0, t_span, tol: float = 1e-12, bound=None,
              sample_dt: float = 0.0, fixed_step: float = 0.0, max_steps: int = 2_000_000) -> Trajectory:
    """Adaptive DOPRI5 trajectory over ``t_span = (t0, t1)``; ``t1 < t0`` runs backward.

    ``bound`` is a per-coordinate absolute bound (scalar or length 4); leaving
    it raises Escaped.  ``sample_dt`` adds dense-output samples so that no gap
    between stored samples exceeds it.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (4,) or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be four finite numbers")
    if fixed_step <= 0:
        _check_tol(tol)
    t0, t1 = float(t_span[0]), float(t_span[1])
    res, ts, xs = run_flow(model, x0, t0, t1, tol, bound, (), fixed_step, max_steps,
                           record=True, sample_dt=sample_dt)
    drift = None
    if model.conservative:
        hv = model.first_integral_batch(xs)
        drift = float(np.max(np.abs(hv - hv[0])))
    traj = Trajectory(model.model_id, ts, xs, drift, res.n_accepted, res.n_rejected)
    if res.status == STATUS_ESCAPED:
        b = _bound_array(bound)
        raise Escaped(float(np.min(b)), res.t, "left the neighbourhood bound")
    if res.status == STATUS_UNDERFLOW:
        raise StepSizeUnderflow(f"step size underflow at t = {res.t:.17g}")
    if res.status == STATUS_MAXSTEPS:
        raise StepSizeUnderflow(f"step budget exhausted at t = {res.t:.17g}")
    return traj


def cross_section(model: ModelSpec, x0, section: SectionDescriptor, t_max: float = 100.0,
                  tol: float = 1e-12, bound=None, backward: bool = False) -> tuple[PhaseState, float]:
    """First oriented crossing of the section; returns (state, elapsed time).

    With ``backward`` the flow runs in negative time and the returned time is
    negative; orientation always refers to forward time.
    """
    _check_tol(tol)
    x0 = np.asarray(x0, dtype=float)
    t1 = -t_max if backward else t_max
    res = run_flow(model, x0, 0.0, t1, tol, bound, (section,))
    if res.status in (STATUS_EVENT, STATUS_TANGENT):
        if res.status == STATUS_TANGENT:
            raise TangentialCrossing(f"tangential crossing at t = {res.t:.17g}")
        return PhaseState.from_array(res.x, res.t), res.t
    if res.status == STATUS_ESCAPED:
        raise Escaped(float(np.min(_bound_array(bound))), res.t, "left the neighbourhood bound")
    if res.status == STATUS_UNDERFLOW:
        raise StepSizeUnderflow(f"step size underflow at t = {res.t:.17g}")
    raise NoCrossing(t_max)
