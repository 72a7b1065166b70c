"""Polynomial four-dimensional vector fields with a saddle at the origin.

Coordinates are ordered ``(u1, u2, v1, v2)``: ``u`` spans the stable
directions, ``v`` the unstable ones, and the linear part at the origin is
``diag(-lambda1, -lambda2, lambda1, lambda2)``.  Every model is equivariant
under ``S = diag(-1, 1, -1, 1)``, so the plane ``{u1 = v1 = 0}`` is invariant.

Conservative models are generated from a polynomial ``H`` by

    u1' = -dH/dv1,  v1' = dH/du1,  u2' = dH/dv2,  v2' = -dH/du2,

which makes ``H`` an exact first integral.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field as dc_field
from typing import Mapping

import numpy as np
from scipy.optimize import brentq

from ._kernels import eval_poly_arrays, eval_poly_batch
from .errors import ModelError
from .polynomial import VARS, Poly, compile_polys, format_monomial, parse_monomial

CASE_TAGS = ("Equal", "Between", "Resonant2", "Beyond2")
KINDS = ("GlobalHamiltonian", "LocalNormalForm", "FigureEight", "CnlseReduction")
S_DIAG = np.array([-1.0, 1.0, -1.0, 1.0])
SLOTS = ("f11", "f12", "f21", "f22", "g11", "g12", "g21", "g22")
DEFAULT_COUPLING = {"kappa1": 0.4, "kappa2": 0.2, "kappa3": -1.2}

_REL = 1e-12


def classify_case(lambda1: float, lambda2: float) -> str:
    r = lambda2 / lambda1
    if abs(r - 1.0) <= _REL:
        return "Equal"
    if abs(r - 2.0) <= 2 * _REL:
        return "Resonant2"
    return "Between" if r < 2.0 else "Beyond2"


@dataclass(frozen=True)
class Eigendata:
    lambda1: float
    lambda2: float
    case_tag: str

    def __post_init__(self):
        l1, l2 = float(self.lambda1), float(self.lambda2)
        if not (math.isfinite(l1) and math.isfinite(l2)) or l1 <= 0:
            raise ModelError(f"eigenvalues must be finite and positive, got {l1}, {l2}")
        if l2 < l1 * (1 - _REL):
            raise ModelError(f"need lambda2 >= lambda1, got {l1}, {l2}")
        if self.case_tag not in CASE_TAGS:
            raise ModelError(f"unknown case tag {self.case_tag!r}")
        actual = classify_case(l1, l2)
        if actual != self.case_tag:
            raise ModelError(
                f"case tag {self.case_tag} inconsistent with lambda2/lambda1 = {l2 / l1:.6g} ({actual})"
            )

    @property
    def gamma(self) -> float:
        return self.lambda1 / self.lambda2

    @classmethod
    def from_rates(cls, lambda1: float, lambda2: float) -> "Eigendata":
        return cls(lambda1, lambda2, classify_case(lambda1, lambda2))


@dataclass(frozen=True)
class PhaseState:
    u1: float
    u2: float
    v1: float
    v2: float
    t: float | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.array())):
            raise ValueError("phase state has non-finite components")

    def array(self) -> np.ndarray:
        return np.array([self.u1, self.u2, self.v1, self.v2], dtype=float)

    @classmethod
    def from_array(cls, x, t: float | None = None) -> "PhaseState":
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]), t)


class _Compiled:
    """Flat-array form of a list of polynomials, evaluated by numba."""

    def __init__(self, polys):
        polys = list(polys)
        self.ncomp = len(polys)
        self.comp, self.coef, self.exps = compile_polys(polys)
        self.maxdeg = int(self.exps.max()) if self.exps.size else 0

    def __call__(self, x) -> np.ndarray:
        out = np.empty(self.ncomp)
        eval_poly_arrays(self.comp, self.coef, self.exps, self.maxdeg, np.asarray(x, dtype=float), out)
        return out

    def batch(self, xs) -> np.ndarray:
        xs = np.ascontiguousarray(np.atleast_2d(xs), dtype=float)
        return eval_poly_batch(self.comp, self.coef, self.exps, self.maxdeg, xs, self.ncomp)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """An immutable polynomial model; every other module consumes this."""

    eigen: Eigendata
    kind: str
    components: tuple
    hamiltonian: Poly | None
    coupling: tuple = ()
    delta_scale: float = 0.1
    slots: tuple = ()
    sigmas: tuple = (1,)
    reversed: bool = False
    _cache: dict = dc_field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        if len(self.components) != 4:
            raise ModelError("a model needs exactly four field components")
        self._cache["field"] = _Compiled(self.components)
        self._cache["jac"] = _Compiled([p.diff(k) for p in self.components for k in range(4)])
        if self.hamiltonian is not None:
            self._cache["H"] = _Compiled([self.hamiltonian])
            self._cache["gradH"] = _Compiled([self.hamiltonian.diff(k) for k in range(4)])

    # evaluation -----------------------------------------------------------
    @property
    def conservative(self) -> bool:
        return self.hamiltonian is not None

    @property
    def compiled_field(self) -> _Compiled:
        return self._cache["field"]

    def field(self, x) -> np.ndarray:
        return self._cache["field"](x)

    def field_batch(self, xs) -> np.ndarray:
        return self._cache["field"].batch(xs)

    def jacobian(self, x) -> np.ndarray:
        return self._cache["jac"](x).reshape(4, 4)

    def first_integral(self, x) -> float:
        if self.hamiltonian is None:
            raise ModelError(f"model kind {self.kind} has no first integral")
        return float(self._cache["H"](x)[0])

    def first_integral_batch(self, xs) -> np.ndarray:
        if self.hamiltonian is None:
            raise ModelError(f"model kind {self.kind} has no first integral")
        return self._cache["H"].batch(xs)[:, 0]

    def grad_first_integral(self, x) -> np.ndarray:
        if self.hamiltonian is None:
            raise ModelError(f"model kind {self.kind} has no first integral")
        return self._cache["gradH"](x)

    def grad_first_integral_batch(self, xs) -> np.ndarray:
        return self._cache["gradH"].batch(xs)

    # metadata -------------------------------------------------------------
    @property
    def coupling_dict(self) -> dict:
        return dict(self.coupling)

    @property
    def slot_dict(self) -> dict:
        return dict(self.slots)

    @property
    def model_id(self) -> str:
        if "id" not in self._cache:
            h = hashlib.sha256()
            h.update(f"{self.kind}|{self.eigen.lambda1!r}|{self.eigen.lambda2!r}|{self.reversed}".encode())
            for p in self.components:
                h.update(repr(sorted(p.terms.items())).encode())
            self._cache["id"] = h.hexdigest()[:16]
        return self._cache["id"]

    def with_components(self, components, hamiltonian="keep") -> "ModelSpec":
        """Copy with replaced field components (used to build corrupted test models)."""
        ham = self.hamiltonian if hamiltonian == "keep" else hamiltonian
        return ModelSpec(self.eigen, self.kind, tuple(components), ham, self.coupling,
                         self.delta_scale, self.slots, self.sigmas, self.reversed)

    def loop_extent(self, sigma: int = 1) -> float:
        """Largest distance from O reached by the planar loop on side sigma.

        Along the diagonal ``u2 = v2 = s/sqrt(2)`` the loop turns where H
        vanishes again; for non-conservative kinds this is meaningless.
        """
        key = ("extent", sigma)
        if key not in self._cache:
            if self.hamiltonian is None:
                raise ModelError("loop geometry requires a first integral")
            r = 1.0 / math.sqrt(2.0)

            def g(s):
                return self.first_integral([0.0, sigma * s * r, 0.0, sigma * s * r])

            grid = np.linspace(1e-3, 50.0, 50001)
            vals = np.array([g(s) for s in grid[::50]])
            sgn = np.sign(vals)
            idx = np.nonzero(sgn[1:] != sgn[:-1])[0]
            if idx.size == 0:
                raise ModelError(f"no planar loop on side {sigma}")
            lo, hi = grid[::50][idx[0]], grid[::50][idx[0] + 1]
            self._cache[key] = brentq(g, lo, hi, xtol=1e-15)
        return self._cache[key]


# ---------------------------------------------------------------------------
# helpers


def _field_from_hamiltonian(H: Poly) -> tuple:
    return (-H.diff("v1"), H.diff("v2"), H.diff("u1"), -H.diff("u2"))


def _is_even_in_u1v1(p: Poly) -> bool:
    return all((e[0] + e[2]) % 2 == 0 for e in p.terms)


def _coupling_terms(coupling: Mapping[str, float], known: Mapping[str, Poly]) -> tuple[Poly, list]:
    total = Poly()
    items = []
    for name in sorted(coupling):
        c = float(coupling[name])
        if not math.isfinite(c):
            raise ModelError(f"coupling {name} is not finite")
        if name in known:
            total = total + c * known[name]
        elif name.startswith("term."):
            try:
                e = parse_monomial(name[5:])
            except ValueError as exc:
                raise ModelError(str(exc)) from None
            if (e[0] + e[2]) % 2:
                raise ModelError(
                    f"coupling term {name[5:]} is odd in (u1, v1) and breaks the symmetry "
                    "(u1, v1) -> (-u1, -v1)"
                )
            if sum(e) < 3:
                raise ModelError(f"coupling term {name[5:]} must be at least cubic")
            total = total + Poly({e: c})
        else:
            raise ModelError(f"unknown coupling coefficient {name!r}")
        items.append((name, c))
    return total, items


def _eigen(case_tag: str, lambda1: float, lambda2: float) -> Eigendata:
    return Eigendata(float(lambda1), float(lambda2), case_tag)


U1, U2, V1, V2 = (Poly.var(v) for v in VARS)


# ---------------------------------------------------------------------------
# global single-loop model


def build_global_model(case_tag: str, lambda1: float, lambda2: float,
                       coupling: Mapping[str, float] | None = None,
                       delta_scale: float = 0.1) -> ModelSpec:
    """Single homoclinic loop built on the planar core ``x'' = l2^2 (x - x^2)``.

    ``H = l1 u1 v1 - l2 u2 v2 + l2 (u2 + v2)^3 / (6 sqrt 2) + couplings``
    with couplings ``kappa1 u1^2 v2 + kappa2 v1^2 u2 + kappa3 u1 v1 (u2 + v2)``
    and optional extra monomials given as ``term.<monomial>``.
    """
    eig = _eigen(case_tag, lambda1, lambda2)
    l1, l2 = eig.lambda1, eig.lambda2
    coupling = dict(DEFAULT_COUPLING if coupling is None else coupling)
    known = {"kappa1": U1 * U1 * V2, "kappa2": V1 * V1 * U2, "kappa3": U1 * V1 * (U2 + V2)}
    extra, items = _coupling_terms(coupling, known)
    H = l1 * U1 * V1 - l2 * U2 * V2 + (l2 / (6.0 * math.sqrt(2.0))) * (U2 + V2) ** 3 + extra
    return ModelSpec(eig, "GlobalHamiltonian", _field_from_hamiltonian(H), H,
                     tuple(items), float(delta_scale))


def build_figure_eight_model(lambda1: float, lambda2: float,
                             coupling: Mapping[str, float] | None = None,
                             delta_scale: float = 0.1) -> ModelSpec:
    """Two loops built on the Duffing core ``x'' = l2^2 (x - x^3)``.

    ``H = l1 u1 v1 - l2 u2 v2 + l2 (u2 + v2)^4 / 16 + couplings`` with
    couplings ``kappa1 u1^2 v2^2 + kappa2 v1^2 u2^2 + kappa3 u1 v1 (u2 + v2)^2``.
    ``asym`` adds ``l2 asym (u2 + v2)^3 / (6 sqrt 2)`` so the two loops differ.
    """
    eig = Eigendata.from_rates(float(lambda1), float(lambda2))
    l1, l2 = eig.lambda1, eig.lambda2
    coupling = dict(DEFAULT_COUPLING if coupling is None else coupling)
    s = U2 + V2
    known = {
        "kappa1": U1 * U1 * V2 * V2,
        "kappa2": V1 * V1 * U2 * U2,
        "kappa3": U1 * V1 * s * s,
        "asym": (l2 / (6.0 * math.sqrt(2.0))) * s ** 3,
    }
    extra, items = _coupling_terms(coupling, known)
    H = l1 * U1 * V1 - l2 * U2 * V2 + (l2 / 16.0) * s ** 4 + extra
    return ModelSpec(eig, "FigureEight", _field_from_hamiltonian(H), H,
                     tuple(items), float(delta_scale), sigmas=(1, -1))


def build_cnlse_model(alpha: float, beta: float, omega1: float, omega2: float,
                      delta_scale: float = 0.1) -> ModelSpec:
    """Steady-state reduction of a coupled cubic Schroedinger system.

    ``H = p^2/2 - w1^2 psi^2/2 + q^2/2 - w2^2 phi^2/2
          + (alpha psi^4 + 2 psi^2 phi^2 + beta phi^4)/2``
    written in eigen-coordinates of the saddle.  Exploratory only.
    """
    eig = Eigendata.from_rates(float(omega1), float(omega2))
    w1, w2 = eig.lambda1, eig.lambda2
    s1, s2 = math.sqrt(2 * w1), math.sqrt(2 * w2)
    psi, p = (V1 - U1) * (1 / s1), (V1 + U1) * (w1 / s1)
    phi, q = (U2 + V2) * (1 / s2), (V2 - U2) * (w2 / s2)
    H = (0.5 * p * p - 0.5 * w1 ** 2 * psi * psi + 0.5 * q * q - 0.5 * w2 ** 2 * phi * phi
         + 0.5 * (alpha * psi ** 4 + 2.0 * psi * psi * phi * phi + beta * phi ** 4))
    # drop roundoff residue of the quadratic cancellation
    H = Poly({e: c for e, c in H.terms.items() if abs(c) > 1e-14})
    items = (("alpha", float(alpha)), ("beta", float(beta)))
    return ModelSpec(eig, "CnlseReduction", _field_from_hamiltonian(H), H,
                     items, float(delta_scale), sigmas=(1, -1))


# ---------------------------------------------------------------------------
# local normal forms

# Each identity is (slot, coordinates set to zero, label); on that subspace
# the slot function must vanish.  Equivalently every monomial of the slot
# carries at least one of those coordinates.
_IDENTITIES_GENERIC = [
    ("f11", (0,), "f11(0, v) = 0"),
    ("f11", (2, 3), "f11(u1, 0) = 0"),
    ("f12", (2, 3), "f12(u, 0) = 0"),
    ("f21", (0,), "f21(0, v) = 0"),
    ("f22", (0, 1), "f22(0, v) = 0"),
    ("g11", (2,), "g11(u, 0) = 0"),
    ("g11", (0, 1), "g11(0, v1) = 0"),
    ("g12", (0, 1), "g12(0, v) = 0"),
    ("g21", (2,), "g21(u, 0) = 0"),
    ("g22", (2, 3), "g22(u, 0) = 0"),
]
_IDENTITIES_PLANE = [
    ("f12", (0, 2), "f12(0, u2, 0, v2) = 0"),
    ("g12", (0, 2), "g12(0, u2, 0, v2) = 0"),
]
# variables a slot may not depend on (non-Equal cases)
_FORBIDDEN_VARS = {"f11": (1,), "f21": (1,), "g11": (3,), "g21": (3,)}
_ODD_SLOTS = ("f12", "f21", "g12", "g21")


def normal_form_identities(case_tag: str) -> list[tuple[str, tuple, str]]:
    ids = list(_IDENTITIES_PLANE)
    if case_tag != "Equal":
        ids = _IDENTITIES_GENERIC + ids
    return ids


def _validate_slots(case_tag: str, slots: Mapping[str, Poly]) -> None:
    for name, p in slots.items():
        if name not in SLOTS:
            raise ModelError(f"unknown normal-form slot {name!r}")
        for e in p.terms:
            if sum(e) == 0:
                raise ModelError(f"{name} must vanish at the origin")
    # the invariant-plane identities come first so their violation is named
    for name, zeroed, label in _IDENTITIES_PLANE:
        for e in slots.get(name, Poly()).terms:
            if not any(e[k] for k in zeroed):
                raise ModelError(f"term {format_monomial(e)} violates identity {label}")
    for name, p in slots.items():
        for e in p.terms:
            odd = (e[0] + e[2]) % 2 == 1
            if odd != (name in _ODD_SLOTS):
                want = "odd" if name in _ODD_SLOTS else "even"
                raise ModelError(
                    f"{name} term {format_monomial(e)} breaks the symmetry: {name} must be {want} in (u1, v1)"
                )
    if case_tag == "Beyond2":
        for name in ("f21", "g21"):
            if name in slots and not slots[name].is_zero():
                raise ModelError(f"{name} must vanish for lambda2 > 2 lambda1 (no {name} term in this normal form)")
    if case_tag != "Equal":
        for name, banned in _FORBIDDEN_VARS.items():
            for e in slots.get(name, Poly()).terms:
                if any(e[k] for k in banned):
                    raise ModelError(f"{name} may not depend on {VARS[banned[0]]}")
    for name, zeroed, label in normal_form_identities(case_tag):
        for e in slots.get(name, Poly()).terms:
            if not any(e[k] for k in zeroed):
                raise ModelError(f"term {format_monomial(e)} violates identity {label}")


def _assemble_local(eig: Eigendata, slots: Mapping[str, Poly]) -> tuple:
    z = Poly()
    f = {k: slots.get(k, z) for k in SLOTS}
    l1, l2 = eig.lambda1, eig.lambda2
    return (
        -l1 * U1 + f["f11"] * U1 + f["f12"] * U2,
        -l2 * U2 + f["f21"] * U1 + f["f22"] * U2,
        l1 * V1 + f["g11"] * V1 + f["g12"] * V2,
        l2 * V2 + f["g21"] * V1 + f["g22"] * V2,
    )


def _coerce_slot(spec) -> Poly:
    if isinstance(spec, Poly):
        return spec
    terms = {}
    for key, c in dict(spec).items():
        e = parse_monomial(key) if isinstance(key, str) else tuple(key)
        terms[e] = terms.get(e, 0.0) + float(c)
    return Poly(terms)


def build_local_normal_form(case_tag: str, lambda1: float, lambda2: float,
                            nonlinear_coeffs: Mapping[str, Mapping] | None = None,
                            delta_scale: float = 0.1) -> ModelSpec:
    """Polynomial system in the near-saddle normal form of the given case.

    ``nonlinear_coeffs`` maps a slot name (``f11`` ... ``g22``) to a dict of
    monomial -> coefficient, e.g. ``{"f12": {"u1*v2": 0.5}}``.  The slot
    function multiplies ``u1`` (``f11``), ``u2`` (``f12``) and so on.
    """
    eig = _eigen(case_tag, lambda1, lambda2)
    slots = {k: _coerce_slot(v) for k, v in (nonlinear_coeffs or {}).items()}
    slots = {k: v for k, v in slots.items() if not v.is_zero()}
    _validate_slots(case_tag, slots)
    comps = _assemble_local(eig, slots)
    items = tuple(
        (f"{k}.{format_monomial(e)}", c)
        for k in SLOTS if k in slots
        for e, c in sorted(slots[k].terms.items())
    )
    return ModelSpec(eig, "LocalNormalForm", comps, None, items, float(delta_scale),
                     slots=tuple(sorted(slots.items())))


def build_conservative_local_model(case_tag: str, lambda1: float, lambda2: float,
                                   a: float = 0.0, b: float = 0.0, c: float = 0.0,
                                   delta_scale: float = 0.1) -> ModelSpec:
    """Normal-form system that keeps ``gamma u1 v1 - u2 v2`` exactly.

    The nonlinearity is a combination of fields tangent to the level sets:
    ``phi (-u1, 0, v1, 0) + psi (0, -u2, 0, v2)`` plus, when the rates are
    equal, ``chi (u2, u1, v2, v1)``.  Equal case: ``phi = a (u2 + v2)``,
    ``psi = b (u2 + v2)``, ``chi = c (u1 + v1)``; otherwise
    ``phi = a u1 v1`` and ``psi = b u2 v2``.
    """
    eig = _eigen(case_tag, lambda1, lambda2)
    if case_tag == "Equal":
        s = U2 + V2
        phi, psi, chi = a * s, b * s, c * (U1 + V1)
        slots = {"f11": -phi, "g11": phi, "f22": -psi, "g22": psi,
                 "f12": chi, "f21": chi, "g12": chi, "g21": chi}
    else:
        if c != 0.0:
            raise ModelError("the mixing coefficient c is only available for equal rates")
        phi, psi = a * U1 * V1, b * U2 * V2
        slots = {"f11": -phi, "g11": phi, "f22": -psi, "g22": psi}
    slots = {k: v for k, v in slots.items() if not v.is_zero()}
    _validate_slots(case_tag, slots)
    H = eig.gamma * U1 * V1 - U2 * V2
    items = (("a", float(a)), ("b", float(b)), ("c", float(c)))
    return ModelSpec(eig, "LocalNormalForm", _assemble_local(eig, slots), H, items,
                     float(delta_scale), slots=tuple(sorted(slots.items())))


def linear_model(lambda1: float, lambda2: float, delta_scale: float = 0.1) -> ModelSpec:
    eig = Eigendata.from_rates(lambda1, lambda2)
    return build_conservative_local_model(eig.case_tag, lambda1, lambda2, delta_scale=delta_scale)


# ---------------------------------------------------------------------------
# closed-form planar loops


def planar_homoclinic(model: ModelSpec, t, sigma: int = 1) -> np.ndarray:
    """Closed-form loop in the invariant plane, shape (len(t), 4).

    Available for the single-loop model (``x = 1.5 sech^2(l2 t / 2)``) and
    the symmetric figure-eight (``x = sqrt2 sech(l2 t)``), where
    ``u2 = (x - y)/sqrt2``, ``v2 = (x + y)/sqrt2`` and ``y = x'/l2``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    l2 = model.eigen.lambda2
    cd = model.coupling_dict
    if model.kind == "GlobalHamiltonian" and not model.reversed:
        sech = 1.0 / np.cosh(0.5 * l2 * t)
        x = 1.5 * sech ** 2
        y = -1.5 * sech ** 2 * np.tanh(0.5 * l2 * t)
    elif model.kind == "FigureEight" and cd.get("asym", 0.0) == 0.0 and not model.reversed:
        sech = 1.0 / np.cosh(l2 * t)
        x = sigma * math.sqrt(2.0) * sech
        y = -sigma * math.sqrt(2.0) * sech * np.tanh(l2 * t)
    else:
        raise ModelError(f"no closed-form loop for {model.kind}")
    r = 1.0 / math.sqrt(2.0)
    out = np.zeros((t.size, 4))
    out[:, 1] = (x - y) * r
    out[:, 3] = (x + y) * r
    return out


# ---------------------------------------------------------------------------
# structure checks


@dataclass
class StructureReport:
    kind: str
    case_tag: str
    n_samples: int
    radius: float
    jacobian_error: float
    origin_residual: float
    invariant_plane: float
    equivariance: float
    identities: dict
    dH_dot_X: float | None
    quadratic_normalization: float | None

    def max_violation(self) -> float:
        vals = [self.jacobian_error, self.origin_residual, self.invariant_plane, self.equivariance]
        vals += list(self.identities.values())
        if self.dH_dot_X is not None:
            vals.append(self.dH_dot_X)
        if self.quadratic_normalization is not None:
            vals.append(self.quadratic_normalization)
        return max(vals)

    def passed(self, tol: float = 1e-10) -> bool:
        return self.max_violation() <= tol

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "case_tag": self.case_tag,
            "n_samples": self.n_samples,
            "radius": self.radius,
            "jacobian_error": self.jacobian_error,
            "origin_residual": self.origin_residual,
            "invariant_plane": self.invariant_plane,
            "equivariance": self.equivariance,
            "identities": dict(sorted(self.identities.items())),
            "dH_dot_X": self.dH_dot_X,
            "quadratic_normalization": self.quadratic_normalization,
            "max_violation": self.max_violation(),
        }


def _quadratic_normalization_error(model: ModelSpec) -> float:
    """Distance of the normalized quadratic part of H from gamma u1 v1 - u2 v2."""
    H = model.hamiltonian
    quad = {e: c for e, c in H.terms.items() if sum(e) == 2}
    lin = [c for e, c in H.terms.items() if sum(e) == 1]
    scale = -quad.get((0, 1, 0, 1), 0.0)
    if scale == 0.0:
        return float("inf")
    target = {(1, 0, 1, 0): model.eigen.gamma, (0, 1, 0, 1): -1.0}
    keys = set(quad) | set(target)
    err = max(abs(quad.get(k, 0.0) / scale - target.get(k, 0.0)) for k in keys)
    const = abs(H.terms.get((0, 0, 0, 0), 0.0))
    return max([err, const] + [abs(c) for c in lin])


def check_structure(model: ModelSpec, n_samples: int = 1000, tol: float = 1e-10,
                    radius: float | None = None, seed: int = 0) -> StructureReport:
    """Sample the box of the given radius and measure every structural defect."""
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    radius = model.delta_scale if radius is None else float(radius)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-radius, radius, size=(n_samples, 4))
    lam = model.eigen
    target = np.diag([-lam.lambda1, -lam.lambda2, lam.lambda1, lam.lambda2])
    jac_err = float(np.max(np.abs(model.jacobian(np.zeros(4)) - target)))
    origin = float(np.max(np.abs(model.field(np.zeros(4)))))

    plane = xs.copy()
    plane[:, [0, 2]] = 0.0
    fp = model.field_batch(plane)
    inv_plane = float(np.max(np.abs(fp[:, [0, 2]])))

    f = model.field_batch(xs)
    fs = model.field_batch(xs * S_DIAG)
    equiv = float(np.max(np.abs(fs - f * S_DIAG)))

    identities: dict[str, float] = {}
    if model.slots:
        slots = model.slot_dict
        for name, zeroed, label in normal_form_identities(lam.case_tag):
            p = slots.get(name)
            if p is None:
                identities[label] = 0.0
                continue
            ys = xs.copy()
            ys[:, list(zeroed)] = 0.0
            identities[label] = float(max(abs(p(y)) for y in ys))
        if lam.case_tag != "Equal":
            for name, banned in _FORBIDDEN_VARS.items():
                p = slots.get(name)
                label = f"{name} independent of {VARS[banned[0]]}"
                if p is None:
                    identities[label] = 0.0
                    continue
                ys = xs.copy()
                ys[:, banned[0]] = 0.0
                identities[label] = float(max(abs(p(x) - p(y)) for x, y in zip(xs, ys)))
        if lam.case_tag == "Beyond2":
            for name in ("f21", "g21"):
                p = slots.get(name)
                identities[f"{name} = 0"] = 0.0 if p is None else float(max(abs(p(x)) for x in xs))

    dhx = quad = None
    if model.conservative:
        g = model.grad_first_integral_batch(xs)
        w = 1.0 + np.sum(xs * xs, axis=1)
        dhx = float(np.max(np.abs(np.sum(g * f, axis=1)) / w))
        quad = _quadratic_normalization_error(model)
    return StructureReport(model.kind, lam.case_tag, n_samples, radius, jac_err, origin,
                           inv_plane, equiv, identities, dhx, quad)


# ---------------------------------------------------------------------------
# declarative description


def model_to_mapping(model: ModelSpec) -> dict:
    """Flat key/value description that `model_from_mapping` inverts."""
    if model.reversed:
        raise ModelError("time-reversed views are derived objects and are not serialized")
    out = {
        "kind": model.kind,
        "case_tag": model.eigen.case_tag,
        "lambda1": repr(model.eigen.lambda1),
        "lambda2": repr(model.eigen.lambda2),
        "delta_scale": repr(model.delta_scale),
    }
    if model.kind == "LocalNormalForm" and model.conservative:
        out["conservative"] = "true"
    for name, c in model.coupling:
        out[f"coupling.{name}"] = repr(c)
    return out


def _float(d: Mapping[str, str], key: str, default=None) -> float:
    if key not in d:
        if default is None:
            raise ModelError(f"missing required model key {key!r}")
        return default
    try:
        val = float(d[key])
    except ValueError:
        raise ModelError(f"model key {key!r} is not a number: {d[key]!r}") from None
    if not math.isfinite(val):
        raise ModelError(f"model key {key!r} is not finite")
    return val


def model_from_mapping(d: Mapping[str, str]) -> ModelSpec:
    kind = d.get("kind", "GlobalHamiltonian")
    l1 = _float(d, "lambda1")
    l2 = _float(d, "lambda2")
    case_tag = d.get("case_tag") or classify_case(l1, l2)
    delta = _float(d, "delta_scale", 0.1)
    coupling = {k[len("coupling."):]: _float(d, k) for k in d if k.startswith("coupling.")}
    if kind == "GlobalHamiltonian":
        return build_global_model(case_tag, l1, l2, coupling or None, delta)
    if kind == "FigureEight":
        Eigendata(l1, l2, case_tag)
        return build_figure_eight_model(l1, l2, coupling or None, delta)
    if kind == "CnlseReduction":
        Eigendata(l1, l2, case_tag)
        return build_cnlse_model(coupling.get("alpha", 1.0), coupling.get("beta", 1.0), l1, l2, delta)
    if kind == "LocalNormalForm":
        if str(d.get("conservative", "false")).lower() in ("1", "true", "yes"):
            return build_conservative_local_model(case_tag, l1, l2, coupling.get("a", 0.0),
                                                  coupling.get("b", 0.0), coupling.get("c", 0.0), delta)
        slots: dict[str, dict] = {}
        for name, c in coupling.items():
            slot, _, mono = name.partition(".")
            if not mono:
                raise ModelError(f"normal-form coefficient {name!r} must look like f12.u1*v2")
            try:
                e = parse_monomial(mono)
            except ValueError as exc:
                raise ModelError(str(exc)) from None
            slots.setdefault(slot, {})[e] = c
        return build_local_normal_form(case_tag, l1, l2, slots, delta)
    raise ModelError(f"unknown model kind {kind!r}")
