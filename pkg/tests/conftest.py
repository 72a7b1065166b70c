from __future__ import annotations

from pathlib import Path

import pytest

from saddleflow.model import (DEFAULT_COUPLING, build_figure_eight_model, build_global_model,
                              build_local_normal_form, linear_model)


CONFIGS_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def global_model():
    return build_global_model("Equal", 1.0, 1.0)


@pytest.fixture(scope="session")
def figure_eight():
    return build_figure_eight_model(1.0, 1.0)


@pytest.fixture(scope="session")
def figure_eight_asym():
    c = dict(DEFAULT_COUPLING)
    c["asym"] = 0.3
    return build_figure_eight_model(1.0, 1.0, c)


@pytest.fixture(scope="session")
def linear():
    return linear_model(1.0, 1.0)


# legal nonlinear coefficients per case (0.5 in a subset of slots)
_Q = {"f12": {"v1": 0.5}, "g12": {"u1": 0.5}}
LOCAL_CASES = {
    "Equal": (1.0, 1.0, {"f12": {"u1*v2": 0.5, "v1": 0.5}, "f11": {"u2": 0.5}, "f22": {"v2": 0.5},
                         "g22": {"u2": 0.5}, "f21": {"v1": 0.5}, "g12": {"u1": 0.5}, "g11": {"v2": 0.5}}),
    "Between": (1.0, 1.5, {"f11": {"u1*v1": 0.5}, "f21": {"u1": 0.5}, "f22": {"u1*u1": 0.5, "u2": 0.5},
                           "g11": {"u1*v1": 0.5}, "g21": {"v1": 0.5}, "g22": {"v2": 0.5}, **_Q}),
    "Resonant2": (0.25, 0.5, {"f21": {"u1": 0.5}, "g21": {"v1": 0.5}, "f22": {"u2": 0.3},
                              "g22": {"v2": 0.3}, **_Q}),
    "Beyond2": (1.0, 2.5, {"f11": {"u1*v1": 0.5}, "f22": {"u2": 0.5}, "g22": {"v2": 0.5}, **_Q}),
}


@pytest.fixture(scope="session")
def local_models():
    return {c: build_local_normal_form(c, l1, l2, co) for c, (l1, l2, co) in LOCAL_CASES.items()}


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
