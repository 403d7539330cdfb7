"""rho-bounded adversaries: outputs stay on the cap X and within rho of the input."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import net
from .data import HEAD_NORM, on_cap, project_to_cap

KINDS = ("null", "random", "pgd")
DOMAIN_TOL = 1e-9


@dataclass(frozen=True)
class AdversaryConfig:
    kind: str = "pgd"
    rho: float = 0.05
    steps: int = 5
    step_size: float | None = None  # None means 2.5 * rho / steps
    projection_rounds: int = 8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown adversary {self.kind!r}; choose from {KINDS}")
        if not self.rho >= 0:
            raise ValueError("rho must be >= 0")
        if self.kind == "pgd" and self.steps < 1:
            raise ValueError("pgd needs steps >= 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.projection_rounds < 0:
            raise ValueError("projection_rounds must be >= 0")

    @property
    def alpha(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.rho / max(self.steps, 1)


def _cap_pullback(v: np.ndarray, x0: np.ndarray, rho: float) -> np.ndarray:
    """Move a cap point v toward x0 along their great circle until |v - x0| = rho.

    Both points share last coordinate 1/2, so the problem lives on the circle of
    radius sqrt(3)/2 traced by the head; the chord to x0 is 2 r sin(theta / 2).
    """
    if x0.shape[0] == 2:
        # the cap is two points; the other one is sqrt(3) away, so only x0 is left
        return x0.copy()
    h0 = x0[:-1] / HEAD_NORM
    h = v[:-1] / HEAD_NORM
    cos_t = float(np.clip(np.dot(h0, h), -1.0, 1.0))
    perp = h - cos_t * h0
    pn = np.linalg.norm(perp)
    if pn == 0.0:
        # antipodal heads: any great circle works, take one through a fixed axis
        axis = np.zeros_like(h0)
        axis[int(np.argmin(np.abs(h0)))] = 1.0
        perp = axis - np.dot(axis, h0) * h0
        pn = np.linalg.norm(perp)
    perp /= pn
    s = min(1.0, rho / (2.0 * HEAD_NORM))
    theta = 2.0 * math.asin(s)
    # shave a hair so rounding cannot land just outside the ball
    theta *= 1.0 - 1e-12
    out = np.empty_like(v)
    out[:-1] = HEAD_NORM * (math.cos(theta) * h0 + math.sin(theta) * perp)
    out[-1] = 0.5
    return out


def project_to_domain(v, x0, rho: float, rounds: int = 8) -> np.ndarray:
    """Map v into B(x0, rho) intersected with X.

    Alternates ``rounds`` times between clipping to the ball and projecting onto
    the cap, then projects onto the cap once more. If the result is still
    outside the ball, it is pulled back along the great circle toward x0, which
    lands exactly on the ball's boundary.
    """
    x0 = np.asarray(x0, dtype=float)
    v = np.asarray(v, dtype=float)
    if v.shape != x0.shape:
        raise ValueError(f"shape mismatch {v.shape} vs {x0.shape}")
    if not on_cap(x0, DOMAIN_TOL):
        raise ValueError("x0 is not on the domain")
    if rho <= 0.0 or np.array_equal(v, x0):
        return x0.copy()
    out = v.copy()
    for _ in range(rounds):
        diff = out - x0
        dn = np.linalg.norm(diff)
        if dn > rho:
            out = x0 + diff * (rho / dn)
        if np.linalg.norm(out[:-1]) == 0.0:
            return x0.copy()
        out = project_to_cap(out)
    if np.linalg.norm(out[:-1]) == 0.0:
        return x0.copy()
    out = project_to_cap(out)
    if np.linalg.norm(out - x0) > rho:
        out = _cap_pullback(out, x0, rho)
    return out


def null_attack(x) -> np.ndarray:
    return np.array(x, dtype=float)


def random_attack(x, rho: float, seed, rounds: int = 8) -> np.ndarray:
    """project_to_domain(x + rho u) for a uniform unit direction u."""
    x = np.asarray(x, dtype=float)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.normal(size=x.shape[0])
    u /= np.linalg.norm(u)
    return project_to_domain(x + rho * u, x, rho, rounds)


def pgd(value_fn: Callable, grad_fn: Callable, x, y: float, cfg: AdversaryConfig, loss,
        start=None) -> np.ndarray:
    """Projected ascent on loss(y, value_fn(x)) with best-so-far tracking.

    ``grad_fn(x)`` returns d value / d x. Steps follow the normalized gradient
    so the step size is a distance. Only strict improvements replace the best
    point, so ties keep the earliest iterate. ``start`` (a feasible point)
    begins the ascent elsewhere; x itself is still a candidate.
    """
    x = np.asarray(x, dtype=float)
    if cfg.rho <= 0.0:
        return x.copy()
    best = x.copy()
    cur_val = value_fn(x)
    best_loss = loss.eval(y, cur_val)
    cur = x.copy()
    if start is not None:
        cur = np.asarray(start, dtype=float).copy()
        cur_val = value_fn(cur)
        if loss.eval(y, cur_val) > best_loss:
            best, best_loss = cur.copy(), loss.eval(y, cur_val)
    for _ in range(cfg.steps):
        g = loss.subgrad(y, cur_val) * np.asarray(grad_fn(cur), dtype=float)
        gn = np.linalg.norm(g)
        if gn == 0.0:
            break
        cur = project_to_domain(cur + cfg.alpha * g / gn, x, cfg.rho, cfg.projection_rounds)
        cur_val = value_fn(cur)
        cur_loss = loss.eval(y, cur_val)
        if cur_loss > best_loss:
            best, best_loss = cur.copy(), cur_loss
    return best


def pgd_attack(params: net.NetworkParams, x, y: float, cfg: AdversaryConfig, loss,
               active_fn: Callable | None = None) -> np.ndarray:
    """PGD against the network. ``active_fn(x)`` supplies exact active sets.

    Any exact active-set oracle gives bit-identical results, so callers can
    route the inner forwards through an index or through a full scan.
    """
    if active_fn is None:
        active_fn = lambda v: net.active_set(params, v)  # noqa: E731
    cache: dict = {}

    def active(v):
        key = v.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = active_fn(v)
        return cache[key]

    return pgd(
        lambda v: net.forward_sparse(params, v, active(v)),
        lambda v: net.grad_input_sparse(params, v, active(v)),
        x, y, cfg, loss,
    )


def pgd_attack_dense(params: net.NetworkParams, x, y: float, cfg: AdversaryConfig, loss) -> np.ndarray:
    """PGD using full-width forwards; bit-identical to :func:`pgd_attack`."""
    return pgd(
        lambda v: net.forward_dense(params, v),
        lambda v: net.grad_input_dense(params, v),
        x, y, cfg, loss,
    )


@dataclass
class Adversary:
    """Dispatch on the config kind; the random kind draws from the given seed."""

    cfg: AdversaryConfig = field(default_factory=AdversaryConfig)

    def __call__(self, params, x, y, loss, seed=None, active_fn=None, dense: bool = False) -> np.ndarray:
        if self.cfg.kind == "null":
            return null_attack(x)
        if self.cfg.kind == "random":
            return random_attack(x, self.cfg.rho, seed, self.cfg.projection_rounds)
        if dense:
            return pgd_attack_dense(params, x, y, self.cfg, loss)
        return pgd_attack(params, x, y, self.cfg, loss, active_fn)
