"""Sparse polynomials in the phase variables (u1, u2, v1, v2).

Every vector field and first integral in the package is polynomial, so a
tiny exponent-tuple dictionary is enough; models compile it into flat arrays
for the integrator.
"""
from __future__ import annotations

import re
from typing import Iterable, Mapping

import numpy as np

VARS = ("u1", "u2", "v1", "v2")
Exps = tuple[int, int, int, int]


class Poly:
    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[Exps, float] | None = None):
        self.terms: dict[Exps, float] = {}
        for e, c in (terms or {}).items():
            if c != 0.0:
                self.terms[tuple(int(k) for k in e)] = float(c)

    @classmethod
    def var(cls, name: str) -> "Poly":
        e = [0, 0, 0, 0]
        e[VARS.index(name)] = 1
        return cls({tuple(e): 1.0})

    @classmethod
    def const(cls, c: float) -> "Poly":
        return cls({(0, 0, 0, 0): c})

    @classmethod
    def monomial(cls, spec: str, coef: float = 1.0) -> "Poly":
        return cls({parse_monomial(spec): coef})

    def __add__(self, other):
        other = _lift(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0.0) + c
        return Poly(out)

    __radd__ = __add__

    def __neg__(self):
        return Poly({e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) - self

    def __mul__(self, other):
        other = _lift(other)
        out: dict[Exps, float] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Poly(out)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = Poly.const(1.0)
        for _ in range(n):
            out = out * self
        return out

    def diff(self, var: str | int) -> "Poly":
        k = VARS.index(var) if isinstance(var, str) else var
        out = {}
        for e, c in self.terms.items():
            if e[k] > 0:
                ne = list(e)
                ne[k] -= 1
                out[tuple(ne)] = c * e[k]
        return Poly(out)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        total = 0.0
        for e, c in self.terms.items():
            total += c * x[0] ** e[0] * x[1] ** e[1] * x[2] ** e[2] * x[3] ** e[3]
        return total

    def swap_uv(self) -> "Poly":
        """Relabel (u1, u2, v1, v2) -> (v1, v2, u1, u2)."""
        return Poly({(e[2], e[3], e[0], e[1]): c for e, c in self.terms.items()})

    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=-1)

    def min_degree(self) -> int:
        return min((sum(e) for e in self.terms), default=-1)

    def is_zero(self) -> bool:
        return not self.terms

    def __eq__(self, other):
        return isinstance(other, Poly) and self.terms == other.terms

    def __repr__(self):
        if not self.terms:
            return "Poly(0)"
        parts = [f"{c:+.6g}*{format_monomial(e)}" for e, c in sorted(self.terms.items())]
        return "Poly(" + " ".join(parts) + ")"


def _lift(p) -> Poly:
    return p if isinstance(p, Poly) else Poly.const(float(p))


_TOKEN = re.compile(r"^(u1|u2|v1|v2)(?:\^(\d+))?$")


def parse_monomial(spec: str) -> Exps:
    """Parse ``"u1^2*v2"`` style monomials; ``"1"`` is the constant."""
    e = [0, 0, 0, 0]
    spec = spec.replace(" ", "")
    if spec in ("", "1"):
        return (0, 0, 0, 0)
    for tok in spec.split("*"):
        m = _TOKEN.match(tok)
        if m is None:
            raise ValueError(f"cannot parse monomial factor {tok!r} in {spec!r}")
        e[VARS.index(m.group(1))] += int(m.group(2) or 1)
    return tuple(e)


def format_monomial(e: Iterable[int]) -> str:
    parts = []
    for name, k in zip(VARS, e):
        if k == 1:
            parts.append(name)
        elif k > 1:
            parts.append(f"{name}^{k}")
    return "*".join(parts) or "1"


def compile_polys(polys: Iterable[Poly]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flatten a list of component polynomials into (comp, coef, exps) arrays."""
    comp, coef, exps = [], [], []
    for i, p in enumerate(polys):
        for e, c in sorted(p.terms.items()):
            comp.append(i)
            coef.append(c)
            exps.append(e)
    return (
        np.asarray(comp, dtype=np.int64),
        np.asarray(coef, dtype=np.float64),
        np.asarray(exps, dtype=np.int64).reshape(-1, 4),
    )
