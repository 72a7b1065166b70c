"""Two-loop (figure-eight) dynamics: transitions between the four sections.

With loops on both sides of the invariant plane there are two In-sections
``u2 = +-delta`` and two Out-sections ``v2 = +-delta``.  A local transition
``(s1, s2)`` runs from In_{s1} to Out_{s2}; the global map along loop ``s``
runs from Out_s to In_s.  For ``h < 0`` each loop carries its own periodic
orbit; for ``h > 0`` a single outer orbit visits both loops in turn.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ChartSingular, Escaped, ModelError, NewtonDiverged, SaddleflowError
from .flow import SectionDescriptor
from .model import ModelSpec
from .orbits import (ManifoldCurve, escape_census,
                     find_fixed_points, floquet, manifold_curve, newton_fixed_point,
                     planar_periodic_orbit)
from .poincare import (DEFAULT_SETTINGS, MapSettings, ReturnOutcome, SectionPoint, SWAP,
                       angle_between_slopes, census_grid, classify_domain, cone_check, cone_of,
                       global_map, global_map_coeffs, lift_to_section, local_map,
                       reverse_time_view)


@dataclass(frozen=True)
class TransitionTag:
    from_sigma: int
    to_sigma: int

    def __post_init__(self):
        if self.from_sigma not in (1, -1) or self.to_sigma not in (1, -1):
            raise ValueError("transition sides must be +1 or -1")

    def __str__(self) -> str:
        return f"({_sgn(self.from_sigma)},{_sgn(self.to_sigma)})"


def _sgn(s: int) -> str:
    return "+" if s > 0 else "-"


@dataclass
class ItineraryRecord:
    start: SectionPoint
    visits: list            # (sigma, "In" | "Out", t, u1, v1)
    outcome: ReturnOutcome

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "sigma", "section", "t", "u1", "v1"])
            for k, (s, kind, t, u1, v1) in enumerate(self.visits):
                w.writerow([k, s, kind, f"{t:.17g}", f"{u1:.17g}", f"{v1:.17g}"])

    @property
    def sigma_sequence(self) -> list[int]:
        return [v[0] for v in self.visits if v[1] == "In"]


def _require_figure_eight(model: ModelSpec) -> None:
    if set(model.sigmas) != {1, -1}:
        raise ModelError("figure-eight maps need loops on both sides")


def transition_map(model: ModelSpec, h: float, tag: TransitionTag, point, eps: float,
                   delta: float | None = None, settings: MapSettings = DEFAULT_SETTINGS) -> ReturnOutcome:
    """Local transition from ``In_{from}`` to ``Out_{to}``; Hit only on the tagged side within eps."""
    _require_figure_eight(model)
    delta = model.delta_scale if delta is None else delta
    if not isinstance(point, SectionPoint):
        desc = SectionDescriptor("In", tag.from_sigma, delta)
        try:
            point = lift_to_section(model, h, desc, float(point[0]), float(point[1]))
        except (ChartSingular, NewtonDiverged) as exc:
            return ReturnOutcome("EscapedLocal", reason=f"chart: {exc}")
    return local_map(model, point, eps, settings=settings, out_sigma=tag.to_sigma)


def chain_map(model: ModelSpec, h: float, point, sides, eps: float, delta: float | None = None,
              settings: MapSettings = DEFAULT_SETTINGS) -> tuple[ReturnOutcome, ItineraryRecord | None]:
    """Compose ``glo_{s_k} o loc_{s_{k-1} s_k} o ... o glo_{s_1} o loc_{s_0 s_1}``.

    ``sides = (s_0, ..., s_k)`` lists the In-sections visited; intermediate
    In-points must stay in the eps-box.
    """
    _require_figure_eight(model)
    delta = model.delta_scale if delta is None else delta
    if not isinstance(point, SectionPoint):
        desc = SectionDescriptor("In", sides[0], delta)
        try:
            point = lift_to_section(model, h, desc, float(point[0]), float(point[1]))
        except (ChartSingular, NewtonDiverged) as exc:
            return ReturnOutcome("EscapedLocal", reason=f"chart: {exc}"), None
    start = point
    t = 0.0
    visits = [(sides[0], "In", 0.0, point.u1, point.v1)]
    itin = [(sides[0], "In", 0.0)]
    tau_total = 0.0
    exit_pt = None
    for k, s_next in enumerate(sides[1:]):
        loc = local_map(model, point, eps, settings=settings, out_sigma=s_next)
        if not loc.hit:
            return (ReturnOutcome(loc.tag, tau=loc.tau, reason=loc.reason, itinerary=itin,
                                  exit_point=loc.exit_point),
                    ItineraryRecord(start, visits, loc))
        t += loc.tau
        tau_total += loc.tau
        exit_pt = loc.point
        visits.append((s_next, "Out", t, exit_pt.u1, exit_pt.v1))
        itin.append((s_next, "Out", t))
        try:
            point, tg = global_map(model, exit_pt, settings)
        except Escaped as exc:
            out = ReturnOutcome("EscapedGlobal", tau=tau_total, reason=exc.reason, itinerary=itin,
                                exit_point=exit_pt)
            return out, ItineraryRecord(start, visits, out)
        t += tg
        visits.append((s_next, "In", t, point.u1, point.v1))
        itin.append((s_next, "In", t))
        if k < len(sides) - 2 and max(abs(point.u1), abs(point.v1)) > eps:
            out = ReturnOutcome("EscapedGlobal", tau=tau_total, reason="intermediate image outside the eps-ball",
                                itinerary=itin, exit_point=exit_pt)
            return out, ItineraryRecord(start, visits, out)
    out = ReturnOutcome("Hit", point, tau_total, itinerary=itin, exit_point=exit_pt)
    return out, ItineraryRecord(start, visits, out)


def chain_inverse(model: ModelSpec, h: float, point, sides, eps: float, delta: float | None = None,
                  reversed_model: ModelSpec | None = None,
                  settings: MapSettings = DEFAULT_SETTINGS) -> ReturnOutcome:
    """Inverse of :func:`chain_map`, run forward in the time-reversed model."""
    _require_figure_eight(model)
    rev = reversed_model or reverse_time_view(model)
    delta = model.delta_scale if delta is None else delta
    u1, v1 = (point.u1, point.v1) if isinstance(point, SectionPoint) else (float(point[0]), float(point[1]))
    seq = list(sides)[::-1]
    try:
        cur = lift_to_section(rev, h, SectionDescriptor("Out", seq[0], delta), v1, u1)
    except (ChartSingular, NewtonDiverged) as exc:
        return ReturnOutcome("EscapedLocal", reason=f"chart: {exc}")
    tau_total = 0.0
    for s_next in seq[1:]:
        try:
            mid, _ = global_map(rev, cur, settings)
        except Escaped as exc:
            return ReturnOutcome("EscapedGlobal", reason=exc.reason)
        if max(abs(mid.u1), abs(mid.v1)) > eps:
            return ReturnOutcome("EscapedGlobal", reason="preimage outside the eps-ball on Out")
        loc = local_map(rev, mid, eps, settings=settings, out_sigma=s_next)
        if not loc.hit:
            return ReturnOutcome(loc.tag, reason=loc.reason)
        tau_total += loc.tau
        cur = loc.point
    x = cur.lifted[SWAP]
    img = SectionPoint(h, SectionDescriptor("In", seq[-1], delta), float(x[0]), float(x[2]), x)
    return ReturnOutcome("Hit", img, tau_total)


OUTER_SIDES = (1, -1, 1)


def outer_return_map(model: ModelSpec, h: float, point, eps: float, delta: float | None = None,
                     settings: MapSettings = DEFAULT_SETTINGS) -> ReturnOutcome:
    """``glo_+ o loc_{-+} o glo_- o loc_{+-}`` on ``Pi_in_+(h)``."""
    out, _ = chain_map(model, h, point, OUTER_SIDES, eps, delta, settings)
    return out


def chain_maps(model: ModelSpec, h: float, sides, eps: float, delta: float | None = None,
               settings: MapSettings = DEFAULT_SETTINGS):
    """Chart functions ``(C, C^{-1})`` for a closed itinerary, None off the domain."""
    rev = reverse_time_view(model)

    def fwd(p):
        out, _ = chain_map(model, h, p, sides, eps, delta, settings)
        return out.point.chart if out.hit else None

    def bwd(p):
        out = chain_inverse(model, h, p, sides, eps, delta, rev, settings)
        return out.point.chart if out.hit else None

    return fwd, bwd


# ---------------------------------------------------------------------------
# census


@dataclass
class SaddleSummary:
    label: str
    sigma: int
    fixed_point: list
    period: float
    alpha: float
    beta: float
    saddle: bool
    slope_angle_error: float
    retained_forward: int
    retained_backward: int
    forward_outside_stable_tube: int
    backward_outside_unstable_tube: int
    other_fixed_points: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class FigureEightReport:
    h: float
    eps: float
    grid_n: int
    m_values: list
    saddles: list = field(default_factory=list)
    cross_lobe_fixed_points: int = 0
    cone_violations: dict = field(default_factory=dict)
    cross_cone_violations: int = 0
    cross_samples: int = 0
    pushforward_angle_error: float | None = None
    itinerary: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        expected = 2 if self.h < 0 else 1
        ok = len(self.saddles) == expected and all(s.saddle for s in self.saddles)
        ok &= all(s.forward_outside_stable_tube == 0 and s.backward_outside_unstable_tube == 0
                  and s.other_fixed_points == 0 and s.slope_angle_error < 0.05 for s in self.saddles)
        ok &= self.cross_lobe_fixed_points == 0 and self.cross_cone_violations == 0
        ok &= all(v == 0 for v in self.cone_violations.values())
        if self.pushforward_angle_error is not None:
            ok &= self.pushforward_angle_error < 0.05
        if self.h > 0:
            seq = [s for s, kind, *_ in self.itinerary if kind == "In"]
            ok &= seq == [1, -1, 1]
        return bool(ok)

    def to_json(self) -> str:
        body = {
            "h": self.h, "eps": self.eps, "grid_n": self.grid_n, "m_values": self.m_values,
            "saddles": [s.to_dict() for s in self.saddles],
            "cross_lobe_fixed_points": self.cross_lobe_fixed_points,
            "cone_violations": {str(k): v for k, v in self.cone_violations.items()},
            "cross_cone_violations": self.cross_cone_violations, "cross_samples": self.cross_samples,
            "pushforward_angle_error": self.pushforward_angle_error,
            "itinerary": [list(v) for v in self.itinerary], "passed": self.passed,
        }
        return json.dumps(body, indent=2, sort_keys=True)


def _unstable_slope_error(curve: ManifoldCurve, direction, radius: float) -> float:
    """Angle between the unstable curve near the origin and ``direction = (b, d)``."""
    pts = curve.points
    r = np.hypot(pts[:, 0], pts[:, 1])
    k = int(np.argmin(np.abs(r - radius)))
    return angle_between_slopes(pts[k], direction)


def _saddle_analysis(model, h, eps, grid_n, sigma, delta, settings, maps, label, direction,
                     max_iters=50) -> tuple[SaddleSummary, ManifoldCurve]:
    fwd, _ = maps
    pt, _ = newton_fixed_point(model, h, (0.0, 0.0), 1e-12, eps, sigma, delta, settings=settings, map_fn=fwd)
    fq = floquet(model, h, pt, eps=eps, sigma=sigma, delta=delta, settings=settings, map_fn=fwd)
    cu = manifold_curve(model, h, fq, "Unstable", eps=eps, sigma=sigma, delta=delta, settings=settings, maps=maps)
    cs = manifold_curve(model, h, fq, "Stable", eps=eps, sigma=sigma, delta=delta, settings=settings, maps=maps)
    esc = escape_census(model, h, eps, grid_n, max_iters, sigma, delta, stable=cs, unstable=cu,
                        settings=settings, maps=maps)
    fps = find_fixed_points(model, h, eps, grid_n, 1, sigma, delta, settings=settings, map_fn=fwd)
    fps2 = find_fixed_points(model, h, eps, grid_n, 2, sigma, delta, settings=settings, map_fn=fwd)
    others = sum(1 for p in fps + fps2 if np.max(np.abs(p)) > 1e-8)
    summ = esc.summary()
    period = float("nan")
    try:
        period = planar_periodic_orbit(model, h, sigma, delta).period
    except SaddleflowError:
        pass
    rec = SaddleSummary(label, sigma, [pt.u1, pt.v1], period, float(np.real(fq.alpha)), float(np.real(fq.beta)),
                        fq.saddle, _unstable_slope_error(cu, direction, min(eps / 10, 1e-3)),
                        summ["retained_forward"], summ["retained_backward"],
                        summ["forward_outside_stable_tube"], summ["backward_outside_unstable_tube"], others)
    return rec, cu


def figure_eight_census(model: ModelSpec, h: float, eps: float | None = None, m_values=(5, 10, 20),
                     grid_n: int = 32, delta: float | None = None,
                     settings: MapSettings = DEFAULT_SETTINGS) -> FigureEightReport:
    """Periodic-orbit, escape and cone analysis of a figure-eight model at level h."""
    _require_figure_eight(model)
    delta = model.delta_scale if delta is None else delta
    eps = delta / 10 if eps is None else eps
    if h == 0:
        raise ValueError("h must be nonzero")
    rep = FigureEightReport(float(h), float(eps), grid_n, list(m_values))
    coeffs = {s: global_map_coeffs(model, h, s, delta=delta, settings=settings) for s in (1, -1)}
    if h < 0:
        for s in (1, -1):
            maps = chain_maps(model, h, (s, s), eps, delta, settings)
            rec, _ = _saddle_analysis(model, h, eps, grid_n, s, delta, settings, maps,
                                      f"L_h{_sgn(s)}", (coeffs[s].b, coeffs[s].d))
            rep.saddles.append(rec)
        for sides in ((1, -1, 1), (1, 1, -1, 1), (1, -1, -1, 1)):
            fwd, _ = chain_maps(model, h, sides, eps, delta, settings)
            fps = find_fixed_points(model, h, eps, grid_n, 1, 1, delta, settings=settings, map_fn=fwd,
                                    extra_starts=())
            rep.cross_lobe_fixed_points += len(fps)
        for m in m_values:
            viol = 0
            for s in (1, -1):
                census = classify_domain(model, h, eps, m, grid_n, s, delta, settings)
                viol += cone_check(census, coeffs[s]).n_violations
            rep.cone_violations[m] = viol
    else:
        maps = chain_maps(model, h, OUTER_SIDES, eps, delta, settings)
        rec, cu = _saddle_analysis(model, h, eps, grid_n, 1, delta, settings, maps, "L_h", (coeffs[1].b, coeffs[1].d))
        rep.saddles.append(rec)
        orbit = planar_periodic_orbit(model, h, 1, delta)
        rep.itinerary = [list(v) for v in orbit.itinerary]
        # push the unstable curve to the other In-section
        half = []
        for p in cu.points:
            r = np.hypot(*p)
            if 0 < r <= eps / 10:
                out, _ = chain_map(model, h, p, (1, -1), eps, delta, settings)
                if out.hit:
                    half.append(out.point.chart)
        if half:
            q = max(half, key=lambda z: np.hypot(*z))
            rep.pushforward_angle_error = angle_between_slopes(q, (coeffs[-1].b, coeffs[-1].d))
        for m in m_values:
            rep.cone_violations[m] = _cross_cone_violations(model, h, eps, m, grid_n, delta, settings,
                                                            (1, -1))[0]
    viol, n = _cross_cone_violations(model, h, eps, max(m_values), grid_n, delta, settings, (1, -1))
    viol2, n2 = _cross_cone_violations(model, h, eps, max(m_values), grid_n, delta, settings, (-1, 1))
    rep.cross_cone_violations = viol + viol2
    rep.cross_samples = n + n2
    return rep


def _cross_cone_violations(model, h, eps, m, grid_n, delta, settings, sides) -> tuple[int, int]:
    """Images of Y2 grid points under one cross-lobe step that fall back in the ball but outside Y2."""
    U, V = census_grid(eps, grid_n)
    viol = n = 0
    for u, v in zip(U, V):
        if cone_of(u, v, m) != "Y2":
            continue
        out, _ = chain_map(model, h, (u, v), sides, eps, delta, settings)
        if not out.hit:
            continue
        q = out.point
        if max(abs(q.u1), abs(q.v1)) > eps:
            continue
        n += 1
        if cone_of(q.u1, q.v1, m) != "Y2":
            viol += 1
    return viol, n


def cross_exit_ratios(model: ModelSpec, h: float, eps: float, grid_n: int = 32, delta: float | None = None,
                   sides=(1, -1), settings: MapSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """``|u1_tau| / |v1_tau|`` at the Out exit of the cross transition for in-domain grid points."""
    delta = model.delta_scale if delta is None else delta
    U, V = census_grid(eps, grid_n)
    tag = TransitionTag(*sides)
    out = []
    for u, v in zip(U, V):
        r = transition_map(model, h, tag, (u, v), eps, delta, settings)
        if r.hit and r.point.v1 != 0:
            out.append(abs(r.point.u1) / abs(r.point.v1))
    return np.array(out)
