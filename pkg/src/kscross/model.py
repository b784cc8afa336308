"""Parameter arithmetic for the cross-diffusion Keller-Segel system.

The system evolved by this package is

    rho_t       = div(grad(rho^m) - rho grad(c))
    alpha c_t   = lap(c) + delta lap(rho^n) + rho - c

with no-flux boundary conditions.  Everything in this module is a pure
function of the exponents ``m``, ``n``, the cross-diffusion strength
``delta``, the switch ``alpha`` and the space dimension ``d``.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

import numpy as np


class ModelError(ValueError):
    """Raised for parameter values outside the domain of a formula."""


@dataclass(frozen=True)
class ModelParams:
    m: float
    n: float
    delta: float = 0.0
    alpha: int = 1
    dim: int = 2

    def __post_init__(self):
        if not self.m > 0:
            raise ModelError(f"m must be positive, got {self.m}")
        if not self.n > 1:
            raise ModelError(f"n must exceed 1, got {self.n}")
        if not self.delta >= 0:
            raise ModelError(f"delta must be nonnegative, got {self.delta}")
        if self.alpha not in (0, 1):
            raise ModelError(f"alpha must be 0 or 1, got {self.alpha}")
        if self.dim not in (1, 2, 3):
            raise ModelError(f"dim must be 1, 2 or 3, got {self.dim}")

    @property
    def p(self) -> float:
        return (float(self.m) + float(self.n) - 1.0) / 2.0


@dataclass(frozen=True)
class DerivedExponents:
    p: float
    Q: float
    s1: float
    s2: float
    s3: float


@dataclass(frozen=True)
class Check:
    name: str
    satisfied: bool
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        """Distance from the boundary, positive on the satisfied side."""
        if "<" in self.name:
            return self.rhs - self.lhs
        return self.lhs - self.rhs


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    checks: tuple[Check, ...]

    def format(self) -> str:
        lines = []
        for chk in self.checks:
            mark = "ok  " if chk.satisfied else "FAIL"
            lines.append(
                f"  [{mark}] {chk.name:<22s} lhs={chk.lhs:.10g} rhs={chk.rhs:.10g} "
                f"slack={chk.slack:+.3g}"
            )
        verdict = "admissible" if self.admissible else "not admissible"
        return "\n".join([f"parameters are {verdict}", *lines])


def _exact(x) -> Fraction:
    # floats are read as the decimal literal the user typed, so 1.2 -> 6/5
    if isinstance(x, Fraction):
        return x
    if isinstance(x, Rational):
        return Fraction(int(x.numerator), int(x.denominator))
    if isinstance(x, (float, np.floating)):
        return Fraction(repr(float(x)))
    if isinstance(x, str):
        return Fraction(x)
    raise TypeError(f"cannot convert {x!r} to an exact rational")


def derived_exponents(params: ModelParams) -> DerivedExponents:
    """Integrability exponents p, Q, s1, s2, s3 of the weak solution.

    ``p = (m+n-1)/2`` is the power of rho controlled by the entropy
    production, ``Q = n/d + p`` and the ``s_i = 2Q/(Q + e_i)`` with
    ``e = (m-p, n-p, 1)`` are the Sobolev exponents of rho^m, rho^n and
    rho grad(c).
    """
    m, n, d = float(params.m), float(params.n), params.dim
    p = (m + n - 1.0) / 2.0
    Q = n / d + p
    return DerivedExponents(
        p=p,
        Q=Q,
        s1=2.0 * Q / (Q + m - p),
        s2=2.0 * Q / (Q + n - p),
        s3=2.0 * Q / (Q + 1.0),
    )


def check_admissibility(params: ModelParams) -> AdmissibilityReport:
    m, n = _exact(params.m), _exact(params.n)
    d = Fraction(params.dim)
    rows = [
        ("n >= m-1", n, m - 1, n >= m - 1),
        ("n <= m+1", n, m + 1, n <= m + 1),
        ("m+n+(2/d)n > 3", m + n + 2 * n / d, Fraction(3), m + n + 2 * n / d > 3),
        ("n > 1", n, Fraction(1), n > 1),
        ("m > 0", m, Fraction(0), m > 0),
    ]
    checks = tuple(Check(name, bool(ok), float(lhs), float(rhs)) for name, lhs, rhs, ok in rows)
    return AdmissibilityReport(all(c.satisfied for c in checks), checks)


def admissible_by_p(params: ModelParams) -> bool:
    """Equivalent form ``1 - n/d < p <= min(m, n)`` in exact arithmetic."""
    m, n = _exact(params.m), _exact(params.n)
    p = (m + n - 1) / 2
    return 1 - n / params.dim < p <= min(m, n)


def entropy_variables(rho, c, params: ModelParams):
    """Entropy variables ``r = n/(n-1) rho^(n-1)`` and ``b = c/delta``."""
    if params.delta <= 0:
        raise ModelError("entropy variable b = c/delta needs delta > 0")
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ModelError("entropy variables need rho >= 0")
    n = float(params.n)
    r = n / (n - 1.0) * rho ** (n - 1.0)
    b = np.asarray(c, dtype=float) / float(params.delta)
    if r.ndim == 0:
        return float(r), float(b)
    return r, b


def diffusion_matrix(rho: float, params: ModelParams) -> np.ndarray:
    """Diffusion matrix acting on the gradients of the entropy variables."""
    if rho < 0:
        raise ModelError("diffusion matrix needs rho >= 0")
    m, n, delta = float(params.m), float(params.n), float(params.delta)
    expo = m - n + 1.0
    if rho == 0 and expo < 0:
        raise ModelError(
            f"mobility rho^(m-n+1) is singular at rho=0 for m-n+1={expo:g} < 0"
        )
    return np.array(
        [[m / n * rho**expo, -delta * rho], [delta * rho, delta]], dtype=float
    )


@dataclass(frozen=True)
class Theta:
    value: float
    usable: bool  # 0 < theta < p <= 1


def gn_theta(p: float, q: float, d: int) -> Theta:
    """Gagliardo-Nirenberg interpolation exponent for ||rho||_q vs grad(rho^p)."""
    denom = 1.0 - d / 2.0 + d * p
    if denom == 0:
        raise ModelError(f"1 - d/2 + d p vanishes for p={p}, d={d}")
    theta = d * p * (1.0 - 1.0 / q) / denom
    return Theta(theta, bool(0 < theta < p <= 1))


def decay_rate_kappa(delta: float, poincare_const: float) -> float:
    """Exponential decay rate toward the homogeneous state for m=1, n=2."""
    if not poincare_const > 0:
        raise ModelError("Poincare constant must be positive")
    cp2 = poincare_const**2
    if not delta > cp2 / 4.0:
        raise ModelError(
            f"decay needs delta > C_P^2/4 = {cp2 / 4:.6g}, got delta={delta:.6g}"
        )
    return min(1.0, 4.0 * delta - cp2) / (4.0 * delta)


def homogeneous_steady_state(mass: float, domain_volume: float) -> tuple[float, float]:
    if not domain_volume > 0:
        raise ModelError("domain volume must be positive")
    rho_star = mass / domain_volume
    return rho_star, rho_star
