"""Scaling benchmarks for the index and for whole training iterations."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from . import net
from .adversary import AdversaryConfig
from .data import generate_dataset, sample_sphere_cap
from .trainer import TrainConfig, _lift, build_index, stream, train

BENCH_COLUMNS = ("m", "d", "mean_query_ns", "mean_visits", "mean_reported", "dense_ns")
ITER_COLUMNS = BENCH_COLUMNS + (
    "hsr_iter_ns", "dense_iter_ns", "t_attack_ns", "t_query_ns", "t_forward_ns", "t_backward_ns", "t_update_ns",
)


def tau_for_active_fraction(frac: float, m: int) -> float:
    """Threshold whose upper tail under the init pre-activation law N(0, 2/m) is frac.

    On the cap |x| = 1, so <w, x> + b has variance (|x|^2 + 1) / m = 2 / m.
    """
    if not 0.0 < frac <= 1.0:
        raise ValueError("active fraction must be in (0, 1]")
    if frac >= 1.0:
        return -math.inf
    return NormalDist().inv_cdf(1.0 - frac) * math.sqrt(2.0 / m)


def loglog_slope(ms, values) -> float:
    """Least-squares slope of log(values) against log(m); NaN with fewer than two sizes."""
    ms = np.asarray(ms, dtype=float)
    values = np.asarray(values, dtype=float)
    if ms.size < 2:
        return math.nan
    return float(np.polyfit(np.log(ms), np.log(values), 1)[0])


@dataclass
class BenchRow:
    m: int
    d: int
    mean_query_ns: float
    mean_visits: float
    mean_reported: float
    dense_ns: float
    extra: tuple = ()

    def values(self) -> tuple:
        return (self.m, self.d, self.mean_query_ns, self.mean_visits, self.mean_reported, self.dense_ns, *self.extra)


def _dense_scan_ns(params: net.NetworkParams, xs: np.ndarray, tau: float, repeats: int) -> float:
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        for x in xs:
            np.flatnonzero(net.preactivation(params.W, params.b, x) > tau)
        best = min(best, (time.perf_counter_ns() - t0) / len(xs))
    return best


def bench_hsr(d: int, m_list, active_frac: float = 0.01, trials: int = 64, seed: int = 0,
              repeats: int = 3, leaf_size: int = 32) -> list[BenchRow]:
    """Per-query index cost versus a full scan, for each width m.

    Queries are lifted uniform points of the cap. Times are the best of
    ``repeats`` passes over the same batch, per query.
    """
    rows = []
    for m in m_list:
        params, _ = net.init_params(int(m), d, 0.0, stream(seed, "init", m))
        tau = tau_for_active_fraction(active_frac, int(m))
        rng = stream(seed, "queries", m)
        xs = np.array([sample_sphere_cap(d, rng) for _ in range(trials)])
        index = build_index(params, xs[: max(1, trials // 2)], seed, leaf_size)
        Q = np.array([_lift(x) for x in xs])
        index.query_many(Q[:1], tau)  # compile / warm caches
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            res = index.query_many(Q, tau)
            best = min(best, (time.perf_counter_ns() - t0) / trials)
        visits = float(index.last_visits.mean())
        reported = float(np.mean([r.size for r in res]))
        rows.append(BenchRow(int(m), d, best, visits, reported, _dense_scan_ns(params, xs, tau, repeats)))
    return rows


def bench_iteration(d: int, m_list, n: int = 16, active_frac: float = 0.01, T: int = 5, seed: int = 0,
                    adversary: str = "pgd", steps: int = 5, rho: float = 0.05, eps_sep: float = 0.5,
                    workers: int = 1, warmup: int = 1) -> list[BenchRow]:
    """Whole training iterations under both engines.

    Iteration time is the sum of the five phase timers, averaged over the
    iterations after the first ``warmup``. Diagnostics are off so that only
    the training work is measured.
    """
    ds = generate_dataset(n, d, eps_sep, rho, "smooth", seed=stream(seed, "data"))
    rows = []
    for m in m_list:
        m = int(m)
        tau = max(tau_for_active_fraction(active_frac, m), 0.0)
        per_engine = {}
        for engine in ("hsr", "dense"):
            cfg = TrainConfig(
                m=m, d=d, n=n, tau=tau, rho=rho, seed=seed, T=T + warmup, engine=engine,
                adversary=AdversaryConfig(adversary, rho, steps), diagnostics=False, workers=workers,
            )
            res = train(cfg, ds)
            per_engine[engine] = res
        h, dn = per_engine["hsr"], per_engine["dense"]
        if not np.array_equal(h.params.W, dn.params.W):
            raise AssertionError(f"engines diverged at m={m}")
        hm, dm = h.metrics[warmup:], dn.metrics[warmup:]
        n_queries = max(1, h.index.stats.queries)
        phases = tuple(float(np.mean([getattr(r, name) for r in hm])) for name in
                       ("t_attack_ns", "t_query_ns", "t_forward_ns", "t_backward_ns", "t_update_ns"))
        rows.append(BenchRow(
            m, d,
            mean_query_ns=float(np.mean([r.t_query_ns for r in hm])) / n,
            mean_visits=h.index.stats.visits / n_queries,
            mean_reported=float(np.mean([r.mean_k for r in hm])),
            dense_ns=float(np.mean([r.t_query_ns for r in dm])) / n,
            extra=(float(np.mean([r.total_ns for r in hm])), float(np.mean([r.total_ns for r in dm])), *phases),
        ))
    return rows
