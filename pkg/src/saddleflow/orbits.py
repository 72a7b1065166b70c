"""Periodic orbits in the invariant plane, their Floquet pair and manifolds.

For ``h`` on the admissible side the point ``(u1, v1) = (0, 0)`` of the
In-section lies on a periodic orbit inside ``{u1 = v1 = 0}`` and is a fixed
point of the return map.  Its stable and unstable curves are grown by
iterating the return map (or its inverse, computed in the time-reversed
model) on a fundamental domain.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (ClosureFailure, DegenerateJacobian, Escaped, LeftDomain, NewtonDiverged,
                     NoOrbit)
from .flow import STATUS_EVENT, SectionDescriptor, run_flow
from .model import ModelSpec
from .poincare import (DEFAULT_SETTINGS, MapSettings, SectionPoint, backward_map, census_grid,
                       global_map_chart, lift_to_section, local_map,
                       return_map, reverse_time_view, richardson_jacobian)


@dataclass
class FloquetData:
    alpha: complex
    beta: complex
    jacobian: np.ndarray
    det: float

    @property
    def real_pair(self) -> bool:
        return abs(np.imag(self.alpha)) == 0.0 and abs(np.imag(self.beta)) == 0.0

    @property
    def saddle(self) -> bool:
        return self.real_pair and abs(self.alpha) < 1.0 < abs(self.beta)

    @property
    def product_error(self) -> float:
        """Relative mismatch between alpha * beta and det DT."""
        return float(abs(self.alpha * self.beta - self.det) / abs(self.det))

    @property
    def note(self) -> str:
        return "" if self.real_pair else "complex pair: outside the saddle hypotheses"

    def eigenvector(self, which: str) -> np.ndarray:
        w, V = np.linalg.eig(self.jacobian)
        k = int(np.argmin(np.abs(w))) if which == "alpha" else int(np.argmax(np.abs(w)))
        v = np.real(V[:, k])
        return v / np.linalg.norm(v)


@dataclass
class PeriodicOrbitRecord:
    h: float
    sigma: int
    fixed_point: SectionPoint
    period: float
    closure: float
    h_error: float
    floquet: FloquetData | None = None
    manifolds: dict = field(default_factory=dict)
    residual: float = 0.0
    itinerary: list = field(default_factory=list)

    def to_json(self) -> str:
        body = {
            "h": self.h, "sigma": self.sigma, "fixed_point": [self.fixed_point.u1, self.fixed_point.v1],
            "period": self.period, "closure": self.closure, "h_error": self.h_error,
            "residual": self.residual,
        }
        if self.floquet is not None:
            fq = self.floquet
            body["floquet"] = {
                "alpha": _cplx(fq.alpha), "beta": _cplx(fq.beta), "det": fq.det,
                "saddle": fq.saddle, "note": fq.note,
            }
        return json.dumps(body, indent=2, sort_keys=True)


def _cplx(z):
    z = complex(z)
    return z.real if z.imag == 0 else [z.real, z.imag]


# ---------------------------------------------------------------------------


def admissible(model: ModelSpec, h: float) -> bool:
    if model.kind == "FigureEight":
        return h != 0.0
    if model.kind in ("GlobalHamiltonian",):
        return h < 0.0
    return False


def planar_periodic_orbit(model: ModelSpec, h: float, sigma: int = 1, delta: float | None = None,
                          tol: float = 1e-12, t_max: float = 500.0) -> PeriodicOrbitRecord:
    """Periodic orbit through ``M_in(h)`` inside the invariant plane."""
    if not admissible(model, h):
        raise NoOrbit(f"no periodic orbit of {model.kind} on level h = {h:g}")
    delta = model.delta_scale if delta is None else delta
    desc = SectionDescriptor("In", sigma, delta)
    start = lift_to_section(model, h, desc, 0.0, 0.0)
    outs = tuple(SectionDescriptor("Out", s, delta) for s in (1, -1))
    ins = tuple(SectionDescriptor("In", s, delta) for s in (1, -1))
    ext = max(model.loop_extent(s) for s in model.sigmas)
    bound = np.array([1e-6, 3 * ext, 1e-6, 3 * ext])
    x = start.lifted.copy()
    t = 0.0
    itinerary = [(sigma, "In", 0.0)]
    hmax = 0.0
    # alternate between Out- and In-sections until the orbit is back on the start section
    for leg in range(16):
        watch = outs if leg % 2 == 0 else ins
        res, ts, xs = run_flow(model, x, 0.0, t_max, tol, bound, watch, record=True)
        if res.status != STATUS_EVENT:
            raise ClosureFailure(f"orbit did not return (status {res.status})")
        hmax = max(hmax, float(np.max(np.abs(model.first_integral_batch(xs) - h))))
        t += res.t
        x = res.x.copy()
        kind = watch[res.event]
        itinerary.append((kind.sigma, kind.which, t))
        if kind == desc:
            break
    else:
        raise ClosureFailure("too many section visits without closing")
    closure = float(np.max(np.abs(x - start.lifted)))
    if closure > 1e-9:
        raise ClosureFailure(f"orbit closes only to {closure:.3g}")
    return PeriodicOrbitRecord(float(h), sigma, start, t, closure, hmax, itinerary=itinerary)


# ---------------------------------------------------------------------------


MapFn = Callable[[np.ndarray], "np.ndarray | None"]


def loop_maps(model: ModelSpec, h: float, eps: float, sigma: int = 1, delta: float | None = None,
              settings: MapSettings = DEFAULT_SETTINGS) -> tuple[MapFn, MapFn]:
    """``(T, T^{-1})`` of one loop as chart functions returning None off the domain."""
    delta = model.delta_scale if delta is None else delta
    rev = reverse_time_view(model)

    def fwd(p):
        out = return_map(model, h, p, eps, sigma, delta, settings)
        return out.point.chart if out.hit else None

    def bwd(p):
        out = backward_map(model, h, p, eps, sigma, delta, reversed_model=rev, settings=settings)
        return out.point.chart if out.hit else None

    return fwd, bwd


def _strict(fn: MapFn) -> Callable[[np.ndarray], np.ndarray]:
    def fun(p):
        q = fn(p)
        if q is None:
            raise LeftDomain(f"map undefined at {p}")
        return q
    return fun


def _T(model, h, eps, sigma, delta, settings):
    return _strict(loop_maps(model, h, eps, sigma, delta, settings)[0])


def newton_fixed_point(model: ModelSpec, h: float, guess=(0.0, 0.0), tol: float = 1e-12,
                       eps: float | None = None, sigma: int = 1, delta: float | None = None,
                       fd_step: float = 1e-7, max_iter: int = 30,
                       settings: MapSettings = DEFAULT_SETTINGS, power: int = 1,
                       map_fn: MapFn | None = None) -> tuple[SectionPoint, int]:
    """Newton on ``T^power(p) - p`` with a finite-difference Jacobian; returns (point, iterations).

    ``map_fn`` replaces the loop return map by another chart map on the same section.
    """
    delta = model.delta_scale if delta is None else delta
    eps = delta / 10 if eps is None else eps
    T = _T(model, h, eps, sigma, delta, settings) if map_fn is None else _strict(map_fn)

    def F(p):
        q = np.asarray(p, float)
        for _ in range(power):
            q = T(q)
        return q - p

    p = np.asarray(guess, dtype=float)
    it = 0
    r = F(p)
    while np.max(np.abs(r)) > tol:
        if it >= max_iter:
            raise NewtonDiverged(f"no convergence after {max_iter} Newton steps (residual {np.max(np.abs(r)):.3g})")
        Jm = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = fd_step
            Jm[:, k] = (F(p + e) - F(p - e)) / (2 * fd_step)
        try:
            step = np.linalg.solve(Jm, -r)
        except np.linalg.LinAlgError:
            raise NewtonDiverged("singular Newton matrix") from None
        p = p + step
        it += 1
        if np.max(np.abs(p)) > eps:
            raise LeftDomain("Newton iterate left the eps-ball")
        r = F(p)
    pt = lift_to_section(model, h, SectionDescriptor("In", sigma, delta), p[0], p[1])
    return pt, it


def return_map_jacobian(model: ModelSpec, h: float, point=(0.0, 0.0), fd_step: float = 1e-6,
                        eps: float | None = None, sigma: int = 1, delta: float | None = None,
                        settings: MapSettings = DEFAULT_SETTINGS, map_fn: MapFn | None = None) -> np.ndarray:
    delta = model.delta_scale if delta is None else delta
    eps = delta / 10 if eps is None else eps
    T = _T(model, h, eps, sigma, delta, settings) if map_fn is None else _strict(map_fn)
    # strongly expanding maps push the probes out of the box; back off the step
    step = fd_step
    while True:
        try:
            return richardson_jacobian(T, np.asarray(point, float), step)
        except LeftDomain:
            step /= 10
            if step < 1e-11:
                raise


def stage_jacobians(model: ModelSpec, h: float, point=(0.0, 0.0), fd_step: float = 1e-6,
                    sigma: int = 1, delta: float | None = None,
                    settings: MapSettings = DEFAULT_SETTINGS) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference differentials of the local map (In -> Out) and the global map (Out -> In)."""
    delta = model.delta_scale if delta is None else delta
    desc = SectionDescriptor("In", sigma, delta)

    def loc(p):
        pt = lift_to_section(model, h, desc, p[0], p[1])
        out = local_map(model, pt, eps=1.0, settings=settings, out_sigma=sigma)
        if not out.hit:
            raise LeftDomain("local map undefined")
        return out.point.chart

    p = np.asarray(point, float)
    DL = richardson_jacobian(loc, p, fd_step)
    DG = richardson_jacobian(global_map_chart(model, h, sigma, delta, settings), loc(p), fd_step)
    return DL, DG


def floquet(model: ModelSpec, h: float, fixed_point=(0.0, 0.0), fd_step: float = 1e-6,
            eps: float | None = None, sigma: int = 1, delta: float | None = None,
            settings: MapSettings = DEFAULT_SETTINGS, map_fn: MapFn | None = None) -> FloquetData:
    """Eigenvalues of the Richardson finite-difference differential of T."""
    p = fixed_point.chart if isinstance(fixed_point, SectionPoint) else np.asarray(fixed_point, float)
    Jm = return_map_jacobian(model, h, p, fd_step, eps, sigma, delta, settings, map_fn)
    det = float(np.linalg.det(Jm))
    if abs(det) < 1e-14:
        raise DegenerateJacobian("return map differential is singular")
    w = np.linalg.eigvals(Jm)
    w = w[np.argsort(np.abs(w))]
    a, b = (complex(w[0]), complex(w[1]))
    if abs(a.imag) == 0 and abs(b.imag) == 0:
        a, b = a.real, b.real
    return FloquetData(a, b, Jm, det)


# ---------------------------------------------------------------------------
# invariant curves


@dataclass
class ManifoldCurve:
    side: str
    points: np.ndarray        # polyline in (u1, v1), ordered through the fixed point
    truncated: bool
    eigenvector: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["side", "u1", "v1"])
            for p in self.points:
                w.writerow([self.side, f"{p[0]:.17g}", f"{p[1]:.17g}"])

    def distance_to(self, pts) -> np.ndarray:
        """Distance from each point to the polyline."""
        pts = np.atleast_2d(pts)
        A = self.points[:-1]
        B = self.points[1:]
        AB = B - A
        L2 = np.maximum(np.sum(AB * AB, axis=1), 1e-300)
        out = np.empty(len(pts))
        for i, p in enumerate(pts):
            t = np.clip(np.sum((p - A) * AB, axis=1) / L2, 0.0, 1.0)
            proj = A + t[:, None] * AB
            out[i] = np.min(np.hypot(*(proj - p).T))
        return out


def _resample(points: np.ndarray, max_gap: float) -> np.ndarray:
    keep = [points[0]]
    for p in points[1:]:
        if np.hypot(*(p - keep[-1])) >= max_gap * 1e-3:
            keep.append(p)
    return np.array(keep)


def manifold_curve(model: ModelSpec, h: float, record_or_floquet, side: str = "Unstable",
                   n_points: int = 40, arc_budget: float = 1.0, eps: float | None = None,
                   sigma: int = 1, delta: float | None = None, seed_distance: float = 1e-5,
                   max_rounds: int = 40, settings: MapSettings = DEFAULT_SETTINGS,
                   maps: tuple[MapFn, MapFn] | None = None) -> ManifoldCurve:
    """Grow the unstable (or stable) curve of the fixed point at the chart origin.

    Seeds fill the fundamental domain between ``seed_distance / |mu|`` and
    ``seed_distance`` along the eigenvector of ``mu`` (``beta`` for Unstable,
    ``alpha`` for Stable); each round maps the previous segment by T (or by
    T^{-1} computed in the time-reversed model) and keeps what stays in the
    eps-box.  ``maps`` overrides the pair ``(T, T^{-1})``.
    """
    fq = record_or_floquet.floquet if isinstance(record_or_floquet, PeriodicOrbitRecord) else record_or_floquet
    if fq is None or not fq.saddle:
        raise DegenerateJacobian("manifold growth needs a saddle fixed point")
    delta = model.delta_scale if delta is None else delta
    eps = delta / 10 if eps is None else eps
    fwd, bwd = maps if maps is not None else loop_maps(model, h, eps, sigma, delta, settings)
    if side == "Unstable":
        mu, vec, step = abs(fq.beta), fq.eigenvector("beta"), fwd
    elif side == "Stable":
        mu, vec, step = 1.0 / abs(fq.alpha), fq.eigenvector("alpha"), bwd
    else:
        raise ValueError("side must be Stable or Unstable")
    radii = seed_distance * mu ** (np.arange(n_points + 1) / n_points - 1.0)
    branches = []
    truncated = False
    for sgn in (1.0, -1.0):
        seg = [sgn * r * vec for r in radii]
        pts = list(seg)
        arc = 0.0
        for _ in range(max_rounds):
            nxt = []
            for p in seg:
                q = step(p)
                if q is None or np.max(np.abs(q)) > eps:
                    truncated = truncated or q is None
                    break
                nxt.append(q)
            if not nxt:
                break
            for a, b in zip([pts[-1]] + nxt[:-1], nxt):
                arc += float(np.hypot(*(b - a)))
            pts.extend(nxt[1:] if np.allclose(nxt[0], pts[-1], atol=1e-14) else nxt)
            seg = nxt
            if arc >= arc_budget or len(nxt) < len(radii):
                break
        branches.append(np.array(pts))
    curve = np.vstack([branches[1][::-1], np.zeros((1, 2)), branches[0]])
    return ManifoldCurve(side, _resample(curve, eps / 1000), truncated, vec)


def tangent_angle(curve: ManifoldCurve, direction, radius: float) -> float:
    """Angle between the chord from the origin to the curve point at ``radius`` and ``direction``."""
    pts = curve.points
    r = np.hypot(pts[:, 0], pts[:, 1])
    k = int(np.argmin(np.abs(r - radius)))
    p = pts[k]
    a = math.atan2(p[1], p[0]) - math.atan2(direction[1], direction[0])
    return abs((a + math.pi / 2) % math.pi - math.pi / 2)


# ---------------------------------------------------------------------------
# escape census


@dataclass
class EscapeReport:
    h: float
    eps: float
    grid_n: int
    max_iters: int
    u1: np.ndarray
    v1: np.ndarray
    fwd: np.ndarray          # iterations until escape; max_iters means retained
    bwd: np.ndarray
    labels: list
    in_stable_tube: np.ndarray | None = None
    in_unstable_tube: np.ndarray | None = None

    @property
    def retained_forward(self) -> np.ndarray:
        return self.fwd >= self.max_iters

    @property
    def retained_backward(self) -> np.ndarray:
        return self.bwd >= self.max_iters

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["u1", "v1", "fwd_escape_iters", "bwd_escape_iters", "label"])
            for k in range(self.u1.size):
                w.writerow([f"{self.u1[k]:.17g}", f"{self.v1[k]:.17g}", int(self.fwd[k]), int(self.bwd[k]),
                            self.labels[k]])

    def summary(self) -> dict:
        out = {"h": self.h, "eps": self.eps, "grid_n": self.grid_n, "max_iters": self.max_iters,
               "retained_forward": int(self.retained_forward.sum()),
               "retained_backward": int(self.retained_backward.sum()),
               "all_escape": bool(not self.retained_forward.any() and not self.retained_backward.any())}
        if self.in_stable_tube is not None:
            out["forward_outside_stable_tube"] = int((self.retained_forward & ~self.in_stable_tube).sum())
        if self.in_unstable_tube is not None:
            out["backward_outside_unstable_tube"] = int((self.retained_backward & ~self.in_unstable_tube).sum())
        return out


def _orbit_length(step, p, eps, max_iters) -> int:
    q = np.asarray(p, float)
    for n in range(max_iters):
        q = step(q)
        if q is None or np.max(np.abs(q)) > eps:
            return n
    return max_iters


def escape_census(model: ModelSpec, h: float, eps: float, grid_n: int = 64, max_iters: int = 50,
                  sigma: int = 1, delta: float | None = None, extra_points=((0.0, 0.0),),
                  stable: ManifoldCurve | None = None, unstable: ManifoldCurve | None = None,
                  tube_width: float | None = None, settings: MapSettings = DEFAULT_SETTINGS,
                  maps: tuple[MapFn, MapFn] | None = None) -> EscapeReport:
    """Iterate T and T^{-1} from every grid point of the eps-box until escape.

    ``extra_points`` (by default the chart origin) are appended to the grid so
    the fixed point itself is part of the census.
    """
    fstep, bstep = maps if maps is not None else loop_maps(model, h, eps, sigma, delta, settings)
    U, V = census_grid(eps, grid_n)
    if extra_points:
        ex = np.asarray(extra_points, float)
        U = np.concatenate([U, ex[:, 0]])
        V = np.concatenate([V, ex[:, 1]])

    fwd = np.array([_orbit_length(fstep, (u, v), eps, max_iters) for u, v in zip(U, V)])
    bwd = np.array([_orbit_length(bstep, (u, v), eps, max_iters) for u, v in zip(U, V)])
    labels = []
    for k in range(U.size):
        if fwd[k] >= max_iters and bwd[k] >= max_iters:
            labels.append("retained_both")
        elif fwd[k] >= max_iters:
            labels.append("retained_forward")
        elif bwd[k] >= max_iters:
            labels.append("retained_backward")
        else:
            labels.append("escaped")
    width = 2 * (2 * eps / grid_n) if tube_width is None else tube_width
    pts = np.column_stack([U, V])
    ins = stable.distance_to(pts) <= width if stable is not None else None
    inu = unstable.distance_to(pts) <= width if unstable is not None else None
    return EscapeReport(float(h), float(eps), grid_n, max_iters, U, V, fwd, bwd, labels, ins, inu)


def find_fixed_points(model: ModelSpec, h: float, eps: float, grid_n: int = 64, power: int = 1,
                      sigma: int = 1, delta: float | None = None, threshold: float | None = None,
                      max_starts: int = 40, extra_starts=((0.0, 0.0),), settings: MapSettings = DEFAULT_SETTINGS,
                      map_fn: MapFn | None = None) -> list[np.ndarray]:
    """Fixed points of ``T^power`` in the eps-box.

    Newton is started from the ``max_starts`` smallest local minima of the
    grid residual ``|T^power(p) - p|``.
    """
    delta = model.delta_scale if delta is None else delta
    T = map_fn if map_fn is not None else loop_maps(model, h, eps, sigma, delta, settings)[0]
    U, V = census_grid(eps, grid_n)
    n = grid_n
    res = np.full(U.size, np.inf)
    for k in range(U.size):
        q = np.array([U[k], V[k]])
        for _ in range(power):
            q = T(q)
            if q is None:
                break
        if q is not None:
            res[k] = np.hypot(q[0] - U[k], q[1] - V[k])
    R = res.reshape(n, n)
    minima = []
    for i in range(n):
        for j in range(n):
            r = R[i, j]
            if not np.isfinite(r) or (threshold is not None and r > threshold):
                continue
            if r <= np.min(R[max(0, i - 1):i + 2, max(0, j - 1):j + 2]):
                minima.append((r, i * n + j))
    found: list[np.ndarray] = []
    starts = [np.asarray(q, float) for q in extra_starts]
    starts += [np.array([U[k], V[k]]) for _, k in sorted(minima)[:max_starts]]
    for q0 in starts:
        try:
            pt, _ = newton_fixed_point(model, h, q0, 1e-11, eps, sigma, delta,
                                       settings=settings, power=power, map_fn=map_fn)
        except (NewtonDiverged, LeftDomain, Escaped):
            continue
        p = pt.chart
        if not any(np.max(np.abs(p - f)) < 1e-8 for f in found):
            found.append(p)
    return found
