"""Adversarial training loop with index-backed active sets.

Each iteration attacks every training point, finds the active neurons of the
perturbed points, runs forward and backward passes on those neurons only and
updates their columns of W, then re-inserts the moved neurons into the index.
The ``dense`` engine does the same arithmetic over all m neurons; inactive
neurons contribute exact zeros, so both engines produce identical bits.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import net
from .adversary import Adversary, AdversaryConfig
from .data import Dataset, sample_sphere_cap
from .hsr import HalfSpaceIndex
from .loss import get_loss

ENGINES = ("hsr", "dense")
METRIC_COLUMNS = (
    "t", "robust_loss", "union_size", "mean_k", "flips", "boundary_band", "d_max",
    "t_attack_ns", "t_query_ns", "t_forward_ns", "t_backward_ns", "t_update_ns",
)
TIMING_COLUMNS = METRIC_COLUMNS[7:]


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator per (seed, purpose, indices)."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), *map(int, extra)])


def derive_hparams(eps: float, K: float, m: int) -> tuple[float, int]:
    """eta = eps * m^{-1/5}, T = ceil(K^2 / eps^2), unit constants.

    The ceiling ignores a relative excess of 1e-12 so that rounding in K^2/eps^2
    cannot add an iteration.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must be in (0, 1), got {eps}")
    if not K > 0:
        raise ValueError(f"K must be > 0, got {K}")
    if m < 1:
        raise ValueError("m must be >= 1")
    ratio = K * K / (eps * eps)
    return eps * m ** (-0.2), max(1, math.ceil(ratio * (1.0 - 1e-12)))


@dataclass
class TrainConfig:
    m: int = 4096
    d: int = 8
    n: int = 8
    tau: float | None = None  # None means 1 / m
    rho: float = 0.05
    eps: float = 0.1
    K: float = 1.0
    seed: int = 0
    eta: float | None = None
    T: int | None = None
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    engine: str = "hsr"
    adversary_uses_index: bool = True
    workers: int = 1
    leaf_size: int = 32
    loss: str = "absolute"
    diagnostics: bool = True
    snapshot_every: int = 0

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}; choose from {ENGINES}")
        if self.m < 1 or self.d < 2 or self.n < 1:
            raise ValueError("need m >= 1, d >= 2, n >= 1")
        if self.tau is None:
            self.tau = 1.0 / self.m
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.adversary.rho != self.rho:
            self.adversary = dataclasses.replace(self.adversary, rho=self.rho)
        eta, T = derive_hparams(self.eps, self.K, self.m)
        if self.eta is None:
            self.eta = eta
        if self.T is None:
            self.T = T
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.T < 0:
            raise ValueError("T must be >= 0")


@dataclass
class IterationMetrics:
    t: int
    robust_loss: float
    k_per_example: np.ndarray
    union_size: int
    flips_since_init: int
    boundary_band_count: int
    d_max: float
    t_attack_ns: int = 0
    t_query_ns: int = 0
    t_forward_ns: int = 0
    t_backward_ns: int = 0
    t_update_ns: int = 0

    @property
    def mean_k(self) -> float:
        return float(np.mean(self.k_per_example)) if self.k_per_example.size else 0.0

    @property
    def total_ns(self) -> int:
        return self.t_attack_ns + self.t_query_ns + self.t_forward_ns + self.t_backward_ns + self.t_update_ns

    def row(self) -> tuple:
        return (
            self.t, self.robust_loss, self.union_size, self.mean_k, self.flips_since_init,
            self.boundary_band_count, self.d_max, self.t_attack_ns, self.t_query_ns,
            self.t_forward_ns, self.t_backward_ns, self.t_update_ns,
        )


@dataclass
class TrainResult:
    params: net.NetworkParams
    snapshot: net.InitialSnapshot
    metrics: list[IterationMetrics]
    snapshots: list[tuple[int, np.ndarray]]
    index: HalfSpaceIndex | None = None
    adversarial: list[np.ndarray] = field(default_factory=list)  # last iteration's x~


def count_sign_flips(params: net.NetworkParams, snap: net.InitialSnapshot, xs) -> int:
    """Neurons whose sign of (pre-activation - tau) differs from init at some x; sign(0) = +."""
    flipped = np.zeros(params.m, dtype=bool)
    for x in np.asarray(xs, dtype=float):
        now = net.preactivation(params.W, params.b, x) - params.tau >= 0
        then = net.preactivation(snap.W0, snap.b0, x) - params.tau >= 0
        flipped |= now != then
    return int(flipped.sum())


def count_boundary_band(snap: net.InitialSnapshot, x, band: float, tau: float) -> int:
    """Neurons with |<w_0, x> + b_0 - tau| <= band."""
    if band < 0:
        raise ValueError("band must be >= 0")
    z0 = net.preactivation(snap.W0, snap.b0, np.asarray(x, dtype=float))
    return int(np.count_nonzero(np.abs(z0 - tau) <= band))


def active_count_at_init(snap: net.InitialSnapshot, xs, tau: float) -> np.ndarray:
    return np.array(
        [np.count_nonzero(net.preactivation(snap.W0, snap.b0, x) > tau) for x in np.asarray(xs, dtype=float)],
        dtype=np.int64,
    )


def _column_norms(D: np.ndarray) -> np.ndarray:
    # elementwise in coordinate order, so any column subset gives the same bits
    acc = D[0] * D[0]
    for j in range(1, D.shape[0]):
        acc = acc + D[j] * D[j]
    return np.sqrt(acc)


class _Diagnostics:
    """Flip flags and column distances from init, refreshed only on the columns that moved."""

    def __init__(self, params, snap, xs, band):
        self.xs = xs
        self.tau = params.tau
        self.init_sign = np.array([net.preactivation(snap.W0, snap.b0, x) - params.tau >= 0 for x in xs])
        self.flipped = np.zeros(params.m, dtype=bool)
        self.dist = np.zeros(params.m)
        self.band = max(count_boundary_band(snap, x, band, params.tau) for x in xs)
        self.snap = snap

    def refresh(self, params, cols):
        if cols.size == 0:
            return
        W = params.W[:, cols]
        b = params.b[cols]
        flip = np.zeros(cols.size, dtype=bool)
        for i, x in enumerate(self.xs):
            flip |= (net.preactivation(W, b, x) - self.tau >= 0) != self.init_sign[i, cols]
        self.flipped[cols] = flip
        self.dist[cols] = _column_norms(W - self.snap.W0[:, cols])

    @property
    def d_max(self) -> float:
        return float(self.dist.max())


def _lift(x: np.ndarray) -> np.ndarray:
    return np.append(x, 1.0)


def build_index(params: net.NetworkParams, xs: np.ndarray, seed: int, leaf_size: int = 32) -> HalfSpaceIndex:
    """Index over the lifted neurons, with its frame fitted to lifted data-like queries."""
    rng = stream(seed, "frame")
    extra = np.array([sample_sphere_cap(params.d, rng) for _ in range(8 * (params.d + 1))])
    sample = np.array([_lift(x) for x in np.concatenate([xs, extra])])
    return HalfSpaceIndex.build(params.lifted(), leaf_size=leaf_size, query_sample=sample, seed=seed)


def train(cfg: TrainConfig, ds: Dataset, params: net.NetworkParams | None = None) -> TrainResult:
    """Run cfg.T iterations. ``params`` overrides the seeded initialization."""
    if ds.d != cfg.d or ds.n != cfg.n:
        raise ValueError(f"dataset is (n={ds.n}, d={ds.d}) but config says (n={cfg.n}, d={cfg.d})")
    if params is None:
        params, snap = net.init_params(cfg.m, cfg.d, cfg.tau, stream(cfg.seed, "init"))
    else:
        if (params.m, params.d) != (cfg.m, cfg.d):
            raise ValueError("params do not match the config's (m, d)")
        params = params.copy()
        params.tau = cfg.tau
        snap = net.InitialSnapshot.of(params)
    loss = get_loss(cfg.loss)
    adversary = Adversary(cfg.adversary)
    xs, ys, n, tau = ds.xs, ds.ys, ds.n, params.tau
    hsr = cfg.engine == "hsr"
    index = build_index(params, xs, cfg.seed, cfg.leaf_size) if hsr and cfg.T > 0 else None
    diag = _Diagnostics(params, snap, xs, cfg.K * cfg.m ** (-0.6)) if cfg.diagnostics else None
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    step = cfg.eta / n
    metrics: list[IterationMetrics] = []
    snapshots: list[tuple[int, np.ndarray]] = []
    x_adv: list[np.ndarray] = []

    def pmap(fn, items):
        return list(pool.map(fn, items)) if pool is not None else [fn(v) for v in items]

    try:
        for t in range(1, cfg.T + 1):
            if index is not None:
                index.prepare()
            use_index = hsr and cfg.adversary_uses_index

            def attack(i):
                seed = stream(cfg.seed, "adversary", t, i)
                if use_index:
                    fn = lambda v: index.query(_lift(v), tau)  # noqa: E731
                    return adversary(params, xs[i], ys[i], loss, seed=seed, active_fn=fn)
                return adversary(params, xs[i], ys[i], loss, seed=seed, dense=True)

            t0 = time.perf_counter_ns()
            x_adv = pmap(attack, range(n))
            t1 = time.perf_counter_ns()

            if hsr:
                active = index.query_many(np.array([_lift(x) for x in x_adv]), tau)
                preacts = None
            else:
                preacts = [net.preactivation(params.W, params.b, x) for x in x_adv]
                active = [np.flatnonzero(z > tau) for z in preacts]
            t2 = time.perf_counter_ns()

            if hsr:
                outs = pmap(lambda i: net.forward_sparse(params, x_adv[i], active[i]), range(n))
            else:
                outs = pmap(lambda i: net.forward_from_preact(params, preacts[i]), range(n))
            t3 = time.perf_counter_ns()

            gs = [loss.subgrad(ys[i], outs[i]) for i in range(n)]
            if hsr:
                grads = pmap(lambda i: np.outer(x_adv[i], params.a[active[i]] * gs[i]), range(n))
            else:
                def dense_grad(i):
                    return np.outer(x_adv[i], np.where(preacts[i] > tau, params.a * gs[i], 0.0))
                grads = pmap(dense_grad, range(n))
            t4 = time.perf_counter_ns()

            union = np.unique(np.concatenate(active)) if n else np.zeros(0, dtype=np.int64)
            if hsr:
                acc = np.zeros((cfg.d, union.size))
                for i in range(n):
                    acc[:, np.searchsorted(union, active[i])] += grads[i]
                params.W[:, union] -= step * acc
                index.update(union, params.lifted(union))
            else:
                acc = np.zeros((cfg.d, cfg.m))
                for i in range(n):
                    acc += grads[i]
                params.W -= step * acc
            t5 = time.perf_counter_ns()

            robust = math.fsum(loss.eval(ys[i], outs[i]) for i in range(n)) / n
            if diag is not None:
                diag.refresh(params, union)
            metrics.append(IterationMetrics(
                t=t,
                robust_loss=robust,
                k_per_example=np.array([a.size for a in active], dtype=np.int64),
                union_size=int(union.size),
                flips_since_init=int(diag.flipped.sum()) if diag else -1,
                boundary_band_count=diag.band if diag else -1,
                d_max=diag.d_max if diag else math.nan,
                t_attack_ns=t1 - t0, t_query_ns=t2 - t1, t_forward_ns=t3 - t2,
                t_backward_ns=t4 - t3, t_update_ns=t5 - t4,
            ))
            if cfg.snapshot_every and t % cfg.snapshot_every == 0:
                snapshots.append((t, params.W.copy()))
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(params, snap, metrics, snapshots, index, list(x_adv))


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def metrics_csv(metrics: list[IterationMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for m in metrics:
        w.writerow([_fmt(v) for v in m.row()])
    return buf.getvalue()


def write_metrics_csv(metrics: list[IterationMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(metrics_csv(metrics))


def strip_timings(csv_text: str) -> list[list[str]]:
    """Rows of a metrics CSV without the timing columns."""
    rows = list(csv.reader(io.StringIO(csv_text)))
    keep = [i for i, name in enumerate(rows[0]) if name not in TIMING_COLUMNS]
    return [[r[i] for i in keep] for r in rows]
