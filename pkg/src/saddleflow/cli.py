"""Command line harness: ``saddleflow <command> --config FILE [overrides]``.

The config is an INI file with ``[model]``, ``[numerics]`` and ``[output]``
sections.  Every command writes deterministic JSON/CSV reports into the
output directory plus a ``manifest.json`` listing them with timings.

Exit codes: 0 success, 1 a scientific check failed, 2 usage or config
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import contextlib
import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, ModelError, SaddleflowError

COMMANDS = ("verify-structure", "bvp", "poincare", "domain", "orbit", "manifolds", "figure8", "sweep")


# ---------------------------------------------------------------------------
# configuration


def _parse_float(section: str, key: str, raw: str) -> float:
    try:
        val = float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} is not a number: {raw!r}") from None
    if not math.isfinite(val):
        raise ConfigError(f"[{section}] {key} must be finite")
    return val


def _float_list(section: str, key: str, raw: str) -> list[float]:
    return [_parse_float(section, key, s.strip()) for s in raw.split(",") if s.strip()]


NUMERIC_DEFAULTS = {
    "tol": 1e-12, "t_max": 200.0, "fd_step": 1e-6, "grid_n": 64, "m": 10.0, "eps": None,
    "h": -1e-3, "h_list": None, "tau_list": "2, 4, 8", "n_tuples": 20, "seed": 0, "max_iters": 50,
    "n_samples": 1000, "estimates": False,
}

RANGES = {
    "tol": (1e-14, 1e-6), "t_max": (1.0, 1e4), "fd_step": (1e-9, 1e-3), "grid_n": (2, 1024),
    "m": (1.0 + 1e-12, 1e3), "max_iters": (1, 10000), "n_tuples": (1, 10000), "n_samples": (1, 10**6),
}


@dataclass
class ExperimentConfig:
    model: dict
    numerics: dict
    output_dir: Path
    formats: tuple
    text: str
    overrides: dict = field(default_factory=dict)

    @property
    def delta(self) -> float:
        return float(self.model.get("delta_scale", 0.1))

    @property
    def eps(self) -> float:
        e = self.numerics["eps"]
        return self.delta / 10 if e is None else e

    @property
    def h0(self) -> float:
        return self.delta ** 2 / 10

    def hash(self) -> str:
        # the output location does not change what is computed
        ov = {k: v for k, v in self.overrides.items() if k != "out"}
        body = json.dumps({"text": self.text, "overrides": ov}, sort_keys=True)
        return hashlib.sha256(body.encode()).hexdigest()


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    if "model" not in cp:
        raise ConfigError("config has no [model] section")
    model = dict(cp["model"])
    if "delta" in model:
        model["delta_scale"] = model.pop("delta")
    for key in ("lambda1", "lambda2"):
        if key not in model:
            raise ConfigError(f"[model] {key} is required")
    num = dict(NUMERIC_DEFAULTS)
    raw = dict(cp["numerics"]) if "numerics" in cp else {}
    unknown = set(raw) - set(num)
    if unknown:
        raise ConfigError(f"unknown [numerics] keys: {sorted(unknown)}")
    for key, val in raw.items():
        if key in ("h_list", "tau_list"):
            num[key] = val
        elif key == "estimates":
            num[key] = val.strip().lower() in ("1", "true", "yes")
        elif key in ("grid_n", "n_tuples", "seed", "max_iters", "n_samples"):
            try:
                num[key] = int(val)
            except ValueError:
                raise ConfigError(f"[numerics] {key} must be an integer: {val!r}") from None
        else:
            num[key] = _parse_float("numerics", key, val)
    for key, val in overrides.items():
        if key != "out":
            num[key] = int(val) if key == "grid_n" else float(val)
    num["tau_list"] = _float_list("numerics", "tau_list", num["tau_list"])
    num["h_list"] = _float_list("numerics", "h_list", num["h_list"]) if num["h_list"] else [num["h"]]
    for key, (lo, hi) in RANGES.items():
        if not lo <= num[key] <= hi:
            raise ConfigError(f"[numerics] {key} = {num[key]} outside [{lo:g}, {hi:g}]")
    if len(set(num["h_list"])) != len(num["h_list"]):
        raise ConfigError("[numerics] h_list values must be distinct")
    out = dict(cp["output"]) if "output" in cp else {}
    directory = Path(overrides.get("out") or out.get("directory", "saddleflow-out"))
    formats = tuple(s.strip() for s in out.get("formats", "json, csv").split(",") if s.strip())
    cfg = ExperimentConfig(model, num, directory, formats, text,
                           {k: (str(v) if k == "out" else v) for k, v in overrides.items()})
    if cfg.eps <= 0:
        raise ConfigError("eps must be positive")
    for h in num["h_list"]:
        if abs(h) > cfg.h0 * (1 + 1e-12):
            raise ConfigError(f"|h| = {abs(h):g} exceeds h0 = delta^2/10 = {cfg.h0:g}")
    return cfg


# ---------------------------------------------------------------------------
# output helpers


def _clean(obj):
    """Make a report JSON-safe: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


class Run:
    """Collects the files and stage timings of one command."""

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.files: list[str] = []
        self.stages: dict[str, float] = {}
        cfg.output_dir.mkdir(parents=True, exist_ok=True)

    def json(self, name: str, body) -> Path:
        path = self.cfg.output_dir / name
        path.write_text(json.dumps(_clean(body), indent=2, sort_keys=True) + "\n")
        self.files.append(name)
        return path

    def csv(self, name: str, header, rows) -> Path:
        path = self.cfg.output_dir / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.files.append(name)
        return path

    def register(self, name: str) -> None:
        self.files.append(name)

    @contextlib.contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = time.perf_counter() - t0

    def manifest(self, status: str) -> None:
        body = {"command": self.command, "config_hash": self.cfg.hash(), "version": __version__,
                "files": self.files, "stage_seconds": self.stages, "status": status}
        (self.cfg.output_dir / "manifest.json").write_text(json.dumps(_clean(body), indent=2, sort_keys=True) + "\n")


def _model(cfg: ExperimentConfig):
    from .model import model_from_mapping
    return model_from_mapping(cfg.model)


def _settings(cfg: ExperimentConfig):
    from .poincare import MapSettings
    return MapSettings(tol=cfg.numerics["tol"], t_max_local=cfg.numerics["t_max"],
                       t_max_global=cfg.numerics["t_max"])


# ---------------------------------------------------------------------------
# commands; each returns True when its scientific checks pass


def cmd_verify_structure(cfg: ExperimentConfig, run: Run) -> bool:
    from .model import check_structure
    with run.stage("build"):
        model = _model(cfg)
    with run.stage("check"):
        rep = check_structure(model, n_samples=cfg.numerics["n_samples"], seed=cfg.numerics["seed"])
    body = rep.to_dict()
    body["model_id"] = model.model_id
    body["passed"] = rep.passed()
    run.json("structure.json", body)
    print(f"structure max violation: {rep.max_violation():.3g} passed: {str(rep.passed()).lower()}")
    return rep.passed()


def cmd_bvp(cfg: ExperimentConfig, run: Run) -> bool:
    from .shilnikov import BvpProblem, plan_for_case, shooting_solve, solve_bvp, verify_estimates
    model = _model(cfg)
    delta = cfg.delta
    rng = np.random.default_rng(cfg.numerics["seed"])
    rows = []
    ok = True
    with run.stage("bvp"):
        for tau in cfg.numerics["tau_list"]:
            for _ in range(cfg.numerics["n_tuples"]):
                data = rng.uniform(-delta, delta, 4)
                prob = BvpProblem(model, tau, *data, delta)
                sol = solve_bvp(prob, tol=1e-13)
                ref = shooting_solve(prob, sol.grid)
                diff = float(np.max(np.abs(ref - sol.states)))
                ok &= diff <= 1e-8 and sol.contraction_ratio < 0.9
                rows.append([tau, *data, sol.iterations, sol.contraction_ratio, diff])
    run.csv("bvp.csv", ["tau", "u10", "u20", "v1tau", "v2tau", "iterations", "contraction_ratio",
                        "sup_diff_shooting"], rows)
    summary = {"n": len(rows), "max_sup_diff": max(r[-1] for r in rows),
               "max_contraction_ratio": max(r[-2] for r in rows), "passed": bool(ok)}
    if cfg.numerics["estimates"]:
        with run.stage("estimates"):
            rep = verify_estimates(model.eigen.case_tag, model, plan_for_case(model.eigen.case_tag))
        rep.write_csv(cfg.output_dir / "estimates.csv")
        run.register("estimates.csv")
        est = json.loads(rep.to_json())
        summary["estimates_stable"] = bool(rep.stable())
        ok &= rep.stable()
        run.json("estimates.json", est)
    run.json("bvp.json", summary)
    print(f"bvp max sup diff: {summary['max_sup_diff']:.3g} passed: {str(bool(ok)).lower()}")
    return bool(ok)


def cmd_poincare(cfg: ExperimentConfig, run: Run) -> bool:
    from .poincare import flight_time_check, global_map_coeffs
    model = _model(cfg)
    settings = _settings(cfg)
    rows = []
    with run.stage("coefficients"):
        for h in cfg.numerics["h_list"]:
            for s in model.sigmas:
                g = global_map_coeffs(model, h, s, delta=cfg.delta, settings=settings)
                rows.append([h, s, g.a, g.b, g.c, g.d, g.det])
    run.csv("global_coeffs.csv", ["h", "sigma", "a", "b", "c", "d", "det"], rows)
    ok = all(abs(r[-1] - 1.0) < 1e-6 for r in rows)
    with run.stage("flight_time"):
        h = cfg.numerics["h_list"][0]
        samples = [(0.05, 0.05), (0.02, 0.08), (0.08, 0.02), (-0.05, -0.05)]
        d0 = cfg.delta
        ft = flight_time_check(model, h, samples, deltas=(d0, d0 / 2), settings=settings)
    body = json.loads(ft.to_json())
    body["coefficients_area_preserving"] = ok
    run.json("poincare.json", body)
    print(f"global det max error: {max(abs(r[-1] - 1) for r in rows):.3g}")
    return ok


def cmd_domain(cfg: ExperimentConfig, run: Run) -> bool:
    from .poincare import classify_domain, cone_check, global_map_coeffs
    model = _model(cfg)
    settings = _settings(cfg)
    h = cfg.numerics["h_list"][0]
    with run.stage("census"):
        census = classify_domain(model, h, cfg.eps, cfg.numerics["m"], cfg.numerics["grid_n"], 1,
                                 cfg.delta, settings)
    census.write_csv(cfg.output_dir / "domain.csv")
    run.register("domain.csv")
    body = census.summary()
    ok = True
    if not census.domain_empty():
        with run.stage("cone"):
            coeffs = global_map_coeffs(model, h, 1, delta=cfg.delta, settings=settings)
            cone = cone_check(census, coeffs)
        body["cone"] = cone.to_dict()
        ok = cone.n_violations == 0
    if h > 0 and model.eigen.case_tag == "Equal":
        ok &= census.domain_empty()
    body["passed"] = bool(ok)
    run.json("domain.json", body)
    print(f"D empty: {str(census.domain_empty()).lower()}")
    return bool(ok)


def _orbit_record(model, cfg, h, settings):
    from .orbits import floquet, newton_fixed_point, planar_periodic_orbit
    rec = planar_periodic_orbit(model, h, 1, cfg.delta, tol=cfg.numerics["tol"])
    pt, it = newton_fixed_point(model, h, (0.0, 0.0), 1e-12, cfg.eps, 1, cfg.delta, settings=settings)
    rec.fixed_point = pt
    rec.floquet = floquet(model, h, pt, cfg.numerics["fd_step"], cfg.eps, 1, cfg.delta, settings)
    rec.residual = float(np.max(np.abs(pt.chart)))
    return rec


def cmd_orbit(cfg: ExperimentConfig, run: Run) -> bool:
    model = _model(cfg)
    settings = _settings(cfg)
    ok = True
    rows = []
    for h in cfg.numerics["h_list"]:
        with run.stage(f"orbit h={h:g}"):
            rec = _orbit_record(model, cfg, h, settings)
        ok &= rec.floquet.saddle
        rows.append(json.loads(rec.to_json()))
    run.json("orbit.json", {"orbits": rows, "passed": bool(ok)})
    print(f"saddle orbits: {str(bool(ok)).lower()}")
    return bool(ok)


def cmd_manifolds(cfg: ExperimentConfig, run: Run) -> bool:
    from .orbits import escape_census, manifold_curve
    model = _model(cfg)
    settings = _settings(cfg)
    h = cfg.numerics["h_list"][0]
    with run.stage("orbit"):
        rec = _orbit_record(model, cfg, h, settings)
    with run.stage("manifolds"):
        cu = manifold_curve(model, h, rec, "Unstable", eps=cfg.eps, delta=cfg.delta, settings=settings)
        cs = manifold_curve(model, h, rec, "Stable", eps=cfg.eps, delta=cfg.delta, settings=settings)
    cu.to_csv(cfg.output_dir / "manifold_unstable.csv")
    cs.to_csv(cfg.output_dir / "manifold_stable.csv")
    run.register("manifold_unstable.csv")
    run.register("manifold_stable.csv")
    with run.stage("escape"):
        esc = escape_census(model, h, cfg.eps, cfg.numerics["grid_n"], cfg.numerics["max_iters"], 1,
                            cfg.delta, stable=cs, unstable=cu, settings=settings)
    esc.write_csv(cfg.output_dir / "escape.csv")
    run.register("escape.csv")
    summ = esc.summary()
    ok = summ["forward_outside_stable_tube"] == 0 and summ["backward_outside_unstable_tube"] == 0
    summ["passed"] = bool(ok)
    run.json("escape.json", summ)
    print(f"retained forward {summ['retained_forward']} backward {summ['retained_backward']}")
    return bool(ok)


def cmd_figure8(cfg: ExperimentConfig, run: Run) -> bool:
    from .figure8 import OUTER_SIDES, chain_map, figure_eight_census
    model = _model(cfg)
    settings = _settings(cfg)
    ok = True
    reports = []
    for h in cfg.numerics["h_list"]:
        with run.stage(f"figure8 h={h:g}"):
            rep = figure_eight_census(model, h, cfg.eps, grid_n=cfg.numerics["grid_n"], delta=cfg.delta,
                                   settings=settings)
        ok &= rep.passed
        reports.append(json.loads(rep.to_json()))
        sides = OUTER_SIDES if h > 0 else (1, 1)
        _, itin = chain_map(model, h, (0.0, 0.0), sides, cfg.eps, cfg.delta, settings)
        name = f"itinerary_h{h:+.3e}.csv"
        itin.write_csv(cfg.output_dir / name)
        run.register(name)
    run.json("figure8.json", {"reports": reports, "passed": bool(ok)})
    print(f"figure-eight checks passed: {str(bool(ok)).lower()}")
    return bool(ok)


def cmd_sweep(cfg: ExperimentConfig, run: Run) -> bool:
    from .orbits import escape_census
    from .poincare import flight_time_check
    model = _model(cfg)
    settings = _settings(cfg)
    rows = []
    ok = True
    for h in cfg.numerics["h_list"]:
        with run.stage(f"sweep h={h:g}"):
            rec = _orbit_record(model, cfg, h, settings)
            fq = rec.floquet
            esc = escape_census(model, h, cfg.eps, cfg.numerics["grid_n"], cfg.numerics["max_iters"], 1,
                                cfg.delta, settings=settings)
            ft = flight_time_check(model, h, [(0.02, 0.001)], deltas=(cfg.delta,), settings=settings)
        ok &= fq.saddle
        rows.append([h, rec.fixed_point.u1, rec.fixed_point.v1, float(np.real(fq.alpha)), float(np.real(fq.beta)),
                     str(fq.saddle).lower(), int(esc.retained_forward.sum()), int(esc.retained_backward.sum()),
                     ft.max_error(cfg.delta)])
    run.csv("sweep.csv", ["h", "u1", "v1", "alpha", "beta", "saddle", "retained_forward", "retained_backward",
                          "flight_time_rel_error"], rows)
    print(f"sweep rows: {len(rows)} all saddle: {str(bool(ok)).lower()}")
    return bool(ok)


HANDLERS = {
    "verify-structure": cmd_verify_structure, "bvp": cmd_bvp, "poincare": cmd_poincare,
    "domain": cmd_domain, "orbit": cmd_orbit, "manifolds": cmd_manifolds, "figure8": cmd_figure8,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saddleflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="INI file with [model], [numerics], [output]")
    p.add_argument("--h", type=float, help="energy level (replaces h_list)")
    p.add_argument("--eps", type=float, help="radius of the section box")
    p.add_argument("--m", type=float, help="cone parameter")
    p.add_argument("--grid-n", type=int, dest="grid_n", help="census grid size per axis")
    p.add_argument("--out", help="output directory")
    return p


def _error_json(kind: str, message: str, code: int) -> None:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"eps": args.eps, "m": args.m, "grid_n": args.grid_n, "out": args.out}
    run = None
    try:
        cfg = load_config(args.config, overrides)
        if args.h is not None:
            if abs(args.h) > cfg.h0 * (1 + 1e-12):
                raise ConfigError(f"|h| = {abs(args.h):g} exceeds h0 = delta^2/10 = {cfg.h0:g}")
            cfg.numerics["h_list"] = [args.h]
            cfg.overrides["h"] = args.h
        run = Run(cfg, args.command)
        ok = HANDLERS[args.command](cfg, run)
    except (ConfigError, ModelError) as exc:
        _error_json(type(exc).__name__, str(exc), 2)
        if run is not None:
            run.manifest("config_error")
        return 2
    except SaddleflowError as exc:
        _error_json(type(exc).__name__, str(exc), exc.exit_code)
        if run is not None:
            run.manifest("numerical_failure")
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        _error_json(type(exc).__name__, str(exc), 3)
        if run is not None:
            run.manifest("numerical_failure")
        return 3
    except ValueError as exc:
        _error_json(type(exc).__name__, str(exc), 2)
        if run is not None:
            run.manifest("usage_error")
        return 2
    run.manifest("passed" if ok else "check_failed")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
