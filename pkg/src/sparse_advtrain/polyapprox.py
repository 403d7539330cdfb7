"""Polynomial approximations of sgn and of a threshold step, Chebyshev
polynomials, coefficient complexity measures and the robust-fit target f*.

Nothing here is ever expanded into monomials for evaluation: p_k is summed
term by term, and its terms stay bounded by 1 on [-1, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from math import comb

import mpmath
import numpy as np

from .data import Dataset


def sign_poly_degree(eta: float, eps1: float) -> int:
    """Smallest integer k with k >= ln(2 / eps1) / eta^2."""
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must be in (0, 1), got {eta}")
    if not 0.0 < eps1 < 1.0:
        raise ValueError(f"eps1 must be in (0, 1), got {eps1}")
    return int(math.ceil(math.log(2.0 / eps1) / eta**2))


def sign_poly_eval(x, k: int, dps: int | None = None):
    """p_k(x) = x * sum_{i<=k} (1 - x^2)^i * prod_{j<=i} (2j - 1) / (2j).

    Each term is the previous one times (1 - x^2)(2i - 1)/(2i). Accepts a scalar
    or an array. With ``dps`` set, a scalar is evaluated in mpmath at that many
    decimal digits and an mpf is returned.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if dps is not None:
        with mpmath.workdps(dps):
            x = mpmath.mpf(x)
            u = 1 - x * x
            term = mpmath.mpf(1)
            acc = mpmath.mpf(1)
            for i in range(1, k + 1):
                term = term * u * (2 * i - 1) / (2 * i)
                acc += term
            return +(x * acc)
    x = np.asarray(x, dtype=float)
    u = 1.0 - x * x
    term = np.ones_like(x)
    acc = np.ones_like(x)
    for i in range(1, k + 1):
        term = term * u * ((2 * i - 1) / (2 * i))
        acc = acc + term
    out = x * acc
    return float(out) if out.ndim == 0 else out


def sign_poly_terms(x: float, k: int) -> np.ndarray:
    """The k + 1 summands of p_k(x); each lies in [-1, 1] when |x| <= 1."""
    out = np.empty(k + 1)
    term = 1.0
    u = 1.0 - x * x
    out[0] = x
    for i in range(1, k + 1):
        term *= u * (2 * i - 1) / (2 * i)
        out[i] = x * term
    return out


def sign_poly_deriv(x, k: int):
    """p_k'(x), using s_i - (2i - 1) x^2 s_{i-1} for the derivative of x s_i / x."""
    if k < 0:
        raise ValueError("k must be >= 0")
    x = np.asarray(x, dtype=float)
    x2 = x * x
    u = 1.0 - x2
    prev = np.ones_like(x)
    acc = np.ones_like(x)
    for i in range(1, k + 1):
        cur = prev * u * ((2 * i - 1) / (2 * i))
        acc = acc + cur - (2 * i - 1) * x2 * prev
        prev = cur
    return float(acc) if acc.ndim == 0 else acc


@dataclass(frozen=True)
class StepSpec:
    """Parameters of q(z) ~ 1[z >= 1 - rho^2 / 2] with a gap below.

    q(z) = (p_k((z - alpha) / 2) + 1) / 2. Both edges of the gap sit 2 * eta
    from alpha, so p_k needs margin eta after the halving, and k is chosen for
    accuracy eps1 there, which leaves q within eps1 / 4 of the step.
    """

    eps1: float
    eps_sep: float
    rho: float
    eta: float
    alpha: float
    k: int

    @classmethod
    def make(cls, eps1: float, eps_sep: float, rho: float) -> "StepSpec":
        if not 0.0 < eps1 < 1.0:
            raise ValueError(f"eps1 must be in (0, 1), got {eps1}")
        if rho < 0 or not eps_sep > 2.0 * rho:
            raise ValueError(f"need eps_sep > 2 rho >= 0, got eps_sep={eps_sep}, rho={rho}")
        if eps_sep > 2.0:
            raise ValueError("eps_sep > 2 is impossible for unit vectors")
        eta = (eps_sep - 2.0 * rho) * eps_sep / 8.0
        alpha = 1.0 - rho**2 / 2.0 - 2.0 * eta
        return cls(eps1, eps_sep, rho, eta, alpha, sign_poly_degree(eta, eps1))

    @property
    def low_edge(self) -> float:
        """q is near 0 strictly below this inner product."""
        return 1.0 - (self.eps_sep - self.rho) ** 2 / 2.0

    @property
    def high_edge(self) -> float:
        """q is near 1 at and above this inner product."""
        return 1.0 - self.rho**2 / 2.0


def step_poly_eval(z, spec: StepSpec, dps: int | None = None):
    if dps is not None:
        with mpmath.workdps(dps):
            u = (mpmath.mpf(z) - mpmath.mpf(spec.alpha)) / 2
            return (sign_poly_eval(u, spec.k, dps=dps) + 1) / 2
    u = (np.asarray(z, dtype=float) - spec.alpha) / 2.0
    return (sign_poly_eval(u, spec.k) + 1.0) / 2.0


def step_poly_deriv(z, spec: StepSpec):
    u = (np.asarray(z, dtype=float) - spec.alpha) / 2.0
    return sign_poly_deriv(u, spec.k) / 4.0


def chebyshev_eval(k: int, x):
    """First-kind Chebyshev C_k(x) via C_{j+1} = 2x C_j - C_{j-1}."""
    if k < 0:
        raise ValueError("k must be >= 0")
    x = np.asarray(x, dtype=float)
    prev, cur = np.ones_like(x), x.copy()
    if k == 0:
        out = prev
    else:
        for _ in range(k - 1):
            prev, cur = cur, 2.0 * x * cur - prev
        out = cur
    return float(out) if out.ndim == 0 else out


def _poly_mul(p: list[int], q: list[int]) -> list[int]:
    out = [0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        if a:
            for j, b in enumerate(q):
                out[i + j] += a * b
    return out


def chebyshev_coeffs(k: int) -> tuple[int, ...]:
    """Exact integer coefficients (ascending) of sum_i C(k, 2i) (x^2 - 1)^i x^(k - 2i)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    total = [0] * (k + 1)
    power = [1]  # (x^2 - 1)^i
    for i in range(k // 2 + 1):
        c = comb(k, 2 * i)
        for j, v in enumerate(power):
            total[j + k - 2 * i] += c * v
        power = _poly_mul(power, [-1, 0, 1])
    return Polynomial(total).coeffs


@dataclass(frozen=True)
class Polynomial:
    """Ascending exact or high-precision coefficients, trailing zeros stripped."""

    coeffs: tuple

    def __init__(self, coeffs):
        cs = list(coeffs)
        while cs and cs[-1] == 0:
            cs.pop()
        object.__setattr__(self, "coeffs", tuple(cs))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, x):
        acc = 0
        for c in reversed(self.coeffs):
            acc = acc * x + c
        return acc

    @classmethod
    def chebyshev(cls, k: int) -> "Polynomial":
        return cls(chebyshev_coeffs(k))

    @classmethod
    def from_fractions(cls, coeffs) -> "Polynomial":
        return cls(Fraction(c) for c in coeffs)


def complexity_measures(coeffs, eps1: float, c: float = 1.0) -> tuple[float, float]:
    """(C(phi), C(phi, eps1)) for phi(z) = sum_j alpha_j z^j.

    C(phi) = c * sum (j + 1)^1.75 |alpha_j|
    C(phi, eps1) = sum c^j (1 + sqrt(ln(1/eps1) / j)^j) |alpha_j|, with j = 0 counted as 2 |alpha_0|.
    """
    if not 0.0 < eps1 < 1.0:
        raise ValueError(f"eps1 must be in (0, 1), got {eps1}")
    if c < 1.0:
        raise ValueError("c must be >= 1")
    if isinstance(coeffs, Polynomial):
        coeffs = coeffs.coeffs
    log_term = math.log(1.0 / eps1)
    plain = 0.0
    eps = 0.0
    for j, a in enumerate(coeffs):
        a = abs(float(a))
        if a == 0.0:
            continue
        plain += (j + 1) ** 1.75 * a
        if j == 0:
            eps += 2.0 * a
        else:
            eps += c**j * (1.0 + math.sqrt(log_term / j) ** j) * a
    return c * plain, eps


def robust_fit_spec(ds: Dataset, eps: float) -> StepSpec:
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must be in (0, 1), got {eps}")
    if not ds.gamma > 0:
        raise ValueError(f"dataset gamma must be > 0, got {ds.gamma}")
    return StepSpec.make(eps / (3.0 * ds.n), ds.eps_sep, ds.rho)


def robust_fit_eval(ds: Dataset, x, eps: float, dps: int | None = None) -> float:
    """f*(x) = sum_i y_i q(<x_i, x>) with q accurate to eps / (3n)."""
    spec = robust_fit_spec(ds, eps)
    x = np.asarray(x, dtype=float)
    if dps is not None:
        with mpmath.workdps(dps):
            acc = mpmath.mpf(0)
            for xi, yi in zip(ds.xs, ds.ys):
                z = mpmath.fsum(mpmath.mpf(float(u)) * mpmath.mpf(float(v)) for u, v in zip(xi, x))
                acc += mpmath.mpf(float(yi)) * step_poly_eval(z, spec, dps=dps)
            return float(acc)
    zs = ds.xs @ x
    return float(np.dot(ds.ys, step_poly_eval(zs, spec)))


def robust_fit_grad(ds: Dataset, x, eps: float) -> np.ndarray:
    """Gradient of f* in x: sum_i y_i q'(<x_i, x>) x_i."""
    spec = robust_fit_spec(ds, eps)
    zs = ds.xs @ np.asarray(x, dtype=float)
    return (ds.ys * step_poly_deriv(zs, spec)) @ ds.xs


def degree_diagnostics(ds: Dataset, eps: float) -> dict:
    """Both stated degree parameters next to the one actually used."""
    spec = robust_fit_spec(ds, eps)
    gamma = ds.gamma
    return {
        "k_used": spec.k,
        "M_fit": 24.0 / gamma * math.log(48.0 * ds.n / eps),
        "M_step": 24.0 * math.log(16.0 / spec.eps1) / gamma,
        "eps1": spec.eps1,
        "eta": spec.eta,
        "alpha": spec.alpha,
    }
