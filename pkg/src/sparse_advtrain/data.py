"""Separated datasets on the sphere cap X = {x : x_d = 1/2, |x| = 1}."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HEAD_NORM = math.sqrt(3.0) / 2.0
LABEL_MODES = ("sign", "smooth")


@dataclass(frozen=True)
class Dataset:
    """Points on X with labels; eps_sep is the minimum pairwise distance."""

    xs: np.ndarray  # (n, d)
    ys: np.ndarray  # (n,)
    eps_sep: float
    rho: float

    @property
    def n(self) -> int:
        return int(self.xs.shape[0])

    @property
    def d(self) -> int:
        return int(self.xs.shape[1])

    @property
    def gamma(self) -> float:
        return self.eps_sep * (self.eps_sep - 2.0 * self.rho)


def project_to_cap(v: np.ndarray) -> np.ndarray:
    """Set the last coordinate to 1/2 and rescale the rest onto radius sqrt(3)/2."""
    out = np.array(v, dtype=float)
    head = out[:-1]
    norm = np.linalg.norm(head)
    if norm == 0.0:
        raise ValueError("cannot project a point with zero head onto the cap")
    out[:-1] = head * (HEAD_NORM / norm)
    out[-1] = 0.5
    return out


def on_cap(x: np.ndarray, tol: float = 1e-9) -> bool:
    x = np.asarray(x, dtype=float)
    return abs(x[-1] - 0.5) <= tol and abs(np.linalg.norm(x) - 1.0) <= tol


def sample_sphere_cap(d: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform point of X: a uniform direction of radius sqrt(3)/2 in R^{d-1}, then 1/2."""
    if d < 2:
        raise ValueError("d must be >= 2")
    head = rng.normal(size=d - 1)
    while not np.any(head):
        head = rng.normal(size=d - 1)
    x = np.empty(d)
    x[:-1] = head / np.linalg.norm(head) * HEAD_NORM
    x[-1] = 0.5
    return x


def _labels(xs: np.ndarray, mode: str, rng: np.random.Generator) -> np.ndarray:
    if mode == "sign":
        return np.where(rng.integers(0, 2, size=xs.shape[0]) == 1, 1.0, -1.0)
    if mode == "smooth":
        return np.clip(xs[:, 0], -1.0, 1.0)
    raise ValueError(f"unknown label mode {mode!r}; choose from {LABEL_MODES}")


def generate_dataset(n: int, d: int, eps_sep: float, rho: float, label_mode: str = "smooth",
                     seed=0, max_attempts: int = 100_000) -> Dataset:
    """Rejection-sample n points of X with pairwise distance >= eps_sep."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not eps_sep > 2.0 * rho:
        raise ValueError(f"need eps_sep > 2 rho, got eps_sep={eps_sep}, rho={rho}")
    if rho < 0:
        raise ValueError("rho must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pts: list[np.ndarray] = []
    attempts = 0
    while len(pts) < n:
        if attempts >= max_attempts:
            raise RuntimeError(
                f"placed only {len(pts)} of {n} points at separation {eps_sep} in d={d} "
                f"after {max_attempts} attempts; the cap may not host them"
            )
        attempts += 1
        x = sample_sphere_cap(d, rng)
        if all(np.linalg.norm(x - p) >= eps_sep for p in pts):
            pts.append(x)
    xs = np.array(pts)
    # record the separation actually achieved; a single point keeps the request
    realized = min_pairwise_distance(xs) if n > 1 else float(eps_sep)
    return Dataset(xs=xs, ys=_labels(xs, label_mode, rng), eps_sep=realized, rho=float(rho))


def min_pairwise_distance(xs: np.ndarray) -> float:
    n = xs.shape[0]
    best = math.inf
    for i in range(n - 1):
        dist = np.linalg.norm(xs[i + 1:] - xs[i], axis=1)
        best = min(best, float(dist.min()))
    return best


def verify_separability(ds: Dataset, rho: float | None = None) -> float:
    """gamma = eps * (eps - 2 rho) for the realized minimum pairwise distance eps.

    Negative means the points are not separated for this rho. With fewer than
    two points the condition is vacuous and +inf is returned.
    """
    rho = ds.rho if rho is None else rho
    if ds.n < 2:
        return math.inf
    eps = min_pairwise_distance(ds.xs)
    return eps * (eps - 2.0 * rho)


def save_csv(ds: Dataset, path) -> None:
    """Header line ``d,n,eps_sep,rho``, its values, then one ``x_1..x_d,y`` row per point."""
    lines = ["d,n,eps_sep,rho", f"{ds.d},{ds.n},{ds.eps_sep:.17g},{ds.rho:.17g}"]
    for x, y in zip(ds.xs, ds.ys):
        lines.append(",".join(f"{v:.17g}" for v in (*x, y)))
    Path(path).write_text("\n".join(lines) + "\n")


def load_csv(path) -> Dataset:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "d,n,eps_sep,rho":
        raise ValueError(f"{path}: missing 'd,n,eps_sep,rho' header")
    d_s, n_s, eps_s, rho_s = lines[1].split(",")
    d, n = int(d_s), int(n_s)
    rows = np.array([[float(v) for v in line.split(",")] for line in lines[2:] if line.strip()])
    rows = rows.reshape(-1, d + 1)
    if rows.shape[0] != n:
        raise ValueError(f"{path}: header says n={n} but found {rows.shape[0]} rows")
    return Dataset(xs=rows[:, :d].copy(), ys=rows[:, d].copy(), eps_sep=float(eps_s), rho=float(rho_s))
