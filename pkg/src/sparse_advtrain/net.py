"""Two-layer shifted-ReLU network.

    f(x) = sum_r a_r * sigma_tau(<w_r, x> + b_r),   sigma_tau(z) = 1[z > tau] * z

Only the hidden weights ``W`` (shape ``(d, m)``, column ``w_r``) are trained;
``a`` and ``b`` are fixed at initialization.

Every reduction over neurons is a sequential left-to-right sum in ascending
neuron index (``np.cumsum``), and every pre-activation is accumulated in a
fixed coordinate order. This makes the active-set-restricted computations
bit-identical to the dense ones: the dense path only adds exact zeros.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


def shifted_relu(z, tau: float):
    """sigma_tau(z) = z if z > tau else 0. Works on scalars and arrays."""
    if np.ndim(z) == 0:
        return float(z) if z > tau else 0.0
    z = np.asarray(z, dtype=float)
    return np.where(z > tau, z, 0.0)


def shifted_relu_grad(z, tau: float):
    """Subgradient convention: 1 strictly above tau, 0 otherwise (incl. z == tau)."""
    if np.ndim(z) == 0:
        return 1.0 if z > tau else 0.0
    return (np.asarray(z) > tau).astype(float)


def ordered_coldot(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    """<M[:, r], x> for every column r, accumulated in coordinate order 0..d-1."""
    acc = M[0] * x[0]
    for j in range(1, M.shape[0]):
        acc = acc + M[j] * x[j]
    return acc


def preactivation(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """<w_r, x> + b_r per column. Same operation order as ``hsr.lifted_scores``."""
    return ordered_coldot(W, x) + b


def ordered_sum(v: np.ndarray) -> float:
    """Left-to-right sum; unlike ``np.sum`` this does not use pairwise blocking."""
    if v.shape[0] == 0:
        return 0.0
    return float(np.cumsum(v)[-1])


@dataclass
class NetworkParams:
    m: int
    d: int
    a: np.ndarray
    W: np.ndarray
    b: np.ndarray
    tau: float

    def __post_init__(self):
        if self.m < 1 or self.d < 2:
            raise ValueError(f"need m >= 1 and d >= 2, got m={self.m}, d={self.d}")
        if self.W.shape != (self.d, self.m) or self.a.shape != (self.m,) or self.b.shape != (self.m,):
            raise ValueError("parameter shapes do not match (m, d)")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        # a and b are fixed for the lifetime of the network
        self.a.flags.writeable = False
        self.b.flags.writeable = False

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.m, self.d, self.a.copy(), self.W.copy(), self.b.copy(), self.tau)

    def lifted(self, r=None) -> np.ndarray:
        """Neuron points (w_r || b_r) as rows, shape (k, d + 1)."""
        if r is None:
            return np.concatenate([self.W.T, self.b[:, None]], axis=1)
        r = np.asarray(r, dtype=np.int64)
        return np.concatenate([self.W[:, r].T, self.b[r, None]], axis=1)


@dataclass(frozen=True)
class InitialSnapshot:
    W0: np.ndarray
    b0: np.ndarray
    a0: np.ndarray

    @classmethod
    def of(cls, params: NetworkParams) -> "InitialSnapshot":
        arrs = [params.W.copy(), params.b.copy(), params.a.copy()]
        for arr in arrs:
            arr.flags.writeable = False
        return cls(*arrs)


def init_params(m: int, d: int, tau: float = 0.0, seed=0) -> tuple[NetworkParams, InitialSnapshot]:
    """W, b ~ N(0, 1/m) entrywise, a uniform on {-m^{-1/5}, +m^{-1/5}}."""
    if m < 1 or d < 2:
        raise ValueError(f"need m >= 1 and d >= 2, got m={m}, d={d}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    std = 1.0 / np.sqrt(m)
    W = rng.normal(0.0, std, size=(d, m))
    b = rng.normal(0.0, std, size=m)
    a = np.where(rng.integers(0, 2, size=m) == 1, 1.0, -1.0) * m ** (-0.2)
    params = NetworkParams(m=m, d=d, a=a, W=W, b=b, tau=float(tau))
    return params, InitialSnapshot.of(params)


def _check_x(params: NetworkParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (params.d,):
        raise ValueError(f"input has shape {x.shape}, expected ({params.d},)")
    return x


def active_set(params: NetworkParams, x) -> np.ndarray:
    """Exact sorted active set {r : <w_r, x> + b_r > tau} by a full scan."""
    x = _check_x(params, x)
    z = preactivation(params.W, params.b, x)
    return np.flatnonzero(z > params.tau)


def forward_from_preact(params: NetworkParams, z: np.ndarray) -> float:
    """f given all m pre-activations."""
    # inactive terms are +0.0 exactly, so they never perturb the running sum
    return ordered_sum(np.where(z > params.tau, params.a * z, 0.0))


def forward_dense(params: NetworkParams, x) -> float:
    x = _check_x(params, x)
    return forward_from_preact(params, preactivation(params.W, params.b, x))


def forward_sparse(params: NetworkParams, x, active) -> float:
    """Forward pass over the given active set only.

    ``active`` must be the exact active set of ``x``; this is not re-checked.
    """
    x = np.asarray(x, dtype=float)
    idx = np.asarray(active, dtype=np.int64)
    if idx.size == 0:
        return 0.0
    z = preactivation(params.W[:, idx], params.b[idx], x)
    return ordered_sum(params.a[idx] * z)


class ColumnGrad(NamedTuple):
    """Gradient of W restricted to a set of columns; all other columns are zero."""

    indices: np.ndarray
    columns: np.ndarray  # shape (d, len(indices))

    def to_dense(self, m: int) -> np.ndarray:
        G = np.zeros((self.columns.shape[0], m))
        G[:, self.indices] = self.columns
        return G


def grad_loss_sparse(params: NetworkParams, x, y: float, active, loss) -> ColumnGrad:
    """d loss(y, f(x)) / d W on the active columns: a_r * l'(y, f(x)) * x."""
    x = _check_x(params, x)
    idx = np.asarray(active, dtype=np.int64)
    if idx.size == 0:
        return ColumnGrad(idx, np.zeros((params.d, 0)))
    g = loss.subgrad(y, forward_sparse(params, x, idx))
    return ColumnGrad(idx, np.outer(x, params.a[idx] * g))


def grad_loss_dense(params: NetworkParams, x, y: float, loss) -> np.ndarray:
    """Full (d, m) gradient; columns of inactive neurons are exact zeros."""
    x = _check_x(params, x)
    z = preactivation(params.W, params.b, x)
    g = loss.subgrad(y, forward_dense(params, x))
    coef = np.where(z > params.tau, params.a * g, 0.0)
    return np.outer(x, coef)


def grad_input_sparse(params: NetworkParams, x, active) -> np.ndarray:
    """d f(x) / d x = sum over active r of a_r * w_r (ascending r)."""
    idx = np.asarray(active, dtype=np.int64)
    if idx.size == 0:
        return np.zeros(params.d)
    return np.cumsum(params.W[:, idx] * params.a[idx], axis=1)[:, -1]


def grad_input_dense(params: NetworkParams, x) -> np.ndarray:
    """Same as :func:`grad_input_sparse` with the active set found by a full scan."""
    x = _check_x(params, x)
    z = preactivation(params.W, params.b, x)
    return np.cumsum(np.where(z > params.tau, params.W * params.a, 0.0), axis=1)[:, -1]


def pseudo_forward(params: NetworkParams, snap: InitialSnapshot, x) -> float:
    """g(x; W) = sum_r a_{r,0} <w_r - w_{r,0}, x> 1[<w_{r,0}, x> + b_{r,0} >= tau]."""
    x = _check_x(params, x)
    if snap.W0.shape != params.W.shape:
        raise ValueError("snapshot and params disagree on (d, m)")
    phi0 = preactivation(snap.W0, snap.b0, x) >= params.tau
    dots = ordered_coldot(params.W - snap.W0, x)
    return ordered_sum(np.where(phi0, snap.a0 * dots, 0.0))


def decompose_f(params: NetworkParams, snap: InitialSnapshot, x) -> tuple[float, float, float]:
    """Split f(x; W) into (A, B, C) with indicators using the >= tau convention.

    A = sum a0 <dw, x> Phi,  B = sum a0 z0 Phi0,  C = sum a0 z0 (Phi - Phi0)
    where z0 is the initial pre-activation.
    """
    x = _check_x(params, x)
    if snap.W0.shape != params.W.shape:
        raise ValueError("snapshot and params disagree on (d, m)")
    tau = params.tau
    z0 = preactivation(snap.W0, snap.b0, x)
    phi0 = (z0 >= tau).astype(float)
    phi = (preactivation(params.W, snap.b0, x) >= tau).astype(float)
    dots = ordered_coldot(params.W - snap.W0, x)
    A = ordered_sum(snap.a0 * dots * phi)
    B = ordered_sum(snap.a0 * z0 * phi0)
    C = ordered_sum(snap.a0 * z0 * (phi - phi0))
    return A, B, C


def norm_2inf(M: np.ndarray) -> float:
    """Largest column Euclidean norm."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(M, axis=0)))


def norm_21(M: np.ndarray) -> float:
    """Sum of column Euclidean norms."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.sum(np.linalg.norm(M, axis=0)))
