"""Verification suites. Each returns rows of (suite, check, value, bound, pass).

The same functions back ``verify`` on the command line and the acceptance
tests, at the sizes given by their defaults.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import adversary as adv
from . import net, polyapprox
from .bench import bench_iteration, loglog_slope
from .data import generate_dataset, sample_sphere_cap
from .hsr import HalfSpaceIndex, brute_force_query
from .loss import AbsoluteLoss
from .trainer import TrainConfig, metrics_csv, strip_timings, stream, train


@dataclass
class CheckRow:
    suite: str
    check: str
    value: float
    bound: float
    passed: bool

    def values(self) -> tuple:
        return (self.suite, self.check, self.value, self.bound, self.passed)


def _le(suite, check, value, bound) -> CheckRow:
    return CheckRow(suite, check, float(value), float(bound), bool(value <= bound))


# --------------------------------------------------------------------- hsr


def _random_index_instance(rng: np.random.Generator):
    m = int(rng.integers(1, 4097))
    d = int(rng.integers(2, 11))
    P = rng.normal(size=(m, d + 1))
    kw = dict(
        leaf_size=int(rng.choice([1, 4, 16, 32])),
        split=str(rng.choice(["axis", "random"])),
        seed=int(rng.integers(1 << 30)),
    )
    if rng.random() < 0.5:
        kw["query_sample"] = rng.normal(size=(16, d + 1)) * rng.uniform(0.1, 2.0, size=d + 1)
    return P, kw


def _random_threshold(rng, P, q) -> float:
    if P.shape[0] == 0 or rng.random() < 0.1:
        return 0.0
    scores = P @ q
    return float(np.quantile(scores, rng.uniform(0.0, 1.0)))


def suite_hsr(instances: int = 200, ops: int = 50, queries_per_op: int = 2, seed: int = 0) -> list[CheckRow]:
    """Index answers versus a linear scan across random build/insert/remove histories."""
    rng = stream(seed, "verify-hsr")
    start = time.perf_counter()
    mismatches = 0
    total = 0
    debug_mismatches = 0

    empty = HalfSpaceIndex(dim=3)
    empty_ok = all(empty.query(rng.normal(size=3), t).size == 0 for t in (-1.0, 0.0, 1.0))

    for _ in range(instances):
        P, kw = _random_index_instance(rng)
        m, D = P.shape
        index = HalfSpaceIndex.build(P, **kw)
        store = np.concatenate([P, np.zeros((ops, D))])
        alive = np.ones(m + ops, dtype=bool)
        alive[m:] = False
        next_id = m
        for op in range(ops):
            r = rng.random()
            live_ids = np.flatnonzero(alive[:next_id])
            dead_ids = np.flatnonzero(~alive[:next_id])
            if live_ids.size and r < 0.45:
                i = int(rng.choice(live_ids))
                index.remove(i)
                alive[i] = False
            elif dead_ids.size and r < 0.7:
                i = int(rng.choice(dead_ids))
                store[i] = store[i] + rng.normal(scale=rng.choice([1e-6, 1e-2, 1.0]), size=D)
                index.insert(i, store[i])
                alive[i] = True
            else:
                store[next_id] = rng.normal(size=D) * rng.choice([0.1, 1.0, 10.0])
                index.insert(next_id, store[next_id])
                alive[next_id] = True
                next_id += 1
            ids = np.flatnonzero(alive)
            pts = store[ids]
            for _ in range(queries_per_op):
                q = rng.normal(size=D)
                tau = _random_threshold(rng, pts, q)
                want = brute_force_query(pts, q, tau, ids)
                got = index.query(q, tau)
                total += 1
                mismatches += int(not np.array_equal(got, want))
                if op % 10 == 0:
                    debug_mismatches += int(not np.array_equal(index.query(q, tau, debug=True), want))
        index.check_invariants()
    elapsed = time.perf_counter() - start
    return [
        CheckRow("hsr", "empty_index_returns_nothing", float(empty_ok), 1.0, empty_ok),
        CheckRow("hsr", "query_mismatches", mismatches, 0, mismatches == 0),
        CheckRow("hsr", "debug_traversal_mismatches", debug_mismatches, 0, debug_mismatches == 0),
        CheckRow("hsr", "queries_checked", total, instances * ops * queries_per_op,
                 total == instances * ops * queries_per_op),
        _le("hsr", "runtime_s", elapsed, 60.0),
    ]


# -------------------------------------------------------------------- poly


def sign_contract_error(eta: float, eps1: float, points: int = 10_000) -> tuple[int, float]:
    k = polyapprox.sign_poly_degree(eta, eps1)
    grid = np.linspace(eta, 1.0, points)
    err = max(
        float(np.abs(polyapprox.sign_poly_eval(grid, k) - 1.0).max()),
        float(np.abs(polyapprox.sign_poly_eval(-grid, k) + 1.0).max()),
    )
    return k, err


def random_step_specs(count: int, seed: int) -> list[polyapprox.StepSpec]:
    """Valid specs with degrees small enough for dense grids (rho <= 0.3 eps_sep)."""
    rng = stream(seed, "step-specs")
    specs = []
    for _ in range(count):
        eps_sep = rng.uniform(0.6, 1.6)
        rho = rng.uniform(0.0, 0.3 * eps_sep)
        eps1 = rng.uniform(0.01, 0.2)
        specs.append(polyapprox.StepSpec.make(eps1, eps_sep, rho))
    return specs


def step_contract_errors(spec: polyapprox.StepSpec, points: int = 10_000) -> tuple[float, float]:
    low = np.linspace(-1.0, spec.low_edge, points, endpoint=False)
    high = np.linspace(spec.high_edge, 1.0, points)
    return (
        float(np.abs(polyapprox.step_poly_eval(low, spec)).max()),
        float(np.abs(polyapprox.step_poly_eval(high, spec) - 1.0).max()),
    )


def robust_fit_worst(n=4, d=8, eps_sep=0.9, rho=0.1, eps=0.3, variants=16, steps=20, seed=0,
                     dps: int | None = 30):
    """Largest |f*(x~_j) - y_j| over training points and PGD-perturbed variants.

    Each variant starts from a random point of the rho-ball and ascends
    |f* - y_j|. The worst point is re-evaluated at ``dps`` digits.
    """
    ds = generate_dataset(n, d, eps_sep, rho, "smooth", seed=stream(seed, "robust-fit-data"))
    loss = AbsoluteLoss()
    cfg = adv.AdversaryConfig("pgd", rho, steps)
    value = lambda v: polyapprox.robust_fit_eval(ds, v, eps)  # noqa: E731
    grad = lambda v: polyapprox.robust_fit_grad(ds, v, eps)  # noqa: E731
    worst, worst_pt, worst_j, max_dist = 0.0, ds.xs[0], 0, 0.0
    for j in range(n):
        x, y = ds.xs[j], ds.ys[j]
        cands = [x]
        for v in range(variants):
            start = adv.random_attack(x, rho, stream(seed, "robust-fit-start", j, v))
            cands.append(adv.pgd(value, grad, x, y, cfg, loss, start=start))
        for c in cands:
            max_dist = max(max_dist, float(np.linalg.norm(c - x)))
            err = abs(value(c) - y)
            if err > worst:
                worst, worst_pt, worst_j = err, c, j
    hp = abs(polyapprox.robust_fit_eval(ds, worst_pt, eps, dps=dps) - ds.ys[worst_j]) if dps else worst
    return {"worst": worst, "worst_highprec": float(hp), "max_dist": max_dist, "dataset": ds,
            "diagnostics": polyapprox.degree_diagnostics(ds, eps)}


def suite_poly(seed: int = 0) -> list[CheckRow]:
    rows = []
    for eta, eps1 in ((0.3, 0.1), (0.2, 0.05), (0.1, 0.02)):
        t0 = time.perf_counter()
        k, err = sign_contract_error(eta, eps1)
        dt = time.perf_counter() - t0
        rows.append(_le("poly", f"sign_contract[eta={eta},eps1={eps1},k={k}]", err, eps1 / 2 + 1e-9))
        rows.append(_le("poly", f"sign_contract_time_s[eta={eta},eps1={eps1}]", dt, 1.0))
    for i, spec in enumerate(random_step_specs(10, seed)):
        lo, hi = step_contract_errors(spec)
        tag = f"[{i},eps1={spec.eps1:.4g},eps_sep={spec.eps_sep:.4g},rho={spec.rho:.4g},k={spec.k}]"
        rows.append(_le("poly", "step_contract_low" + tag, lo, spec.eps1))
        rows.append(_le("poly", "step_contract_high" + tag, hi, spec.eps1))
    worst_ratio = 0.0
    for k in range(21):
        worst_ratio = max(worst_ratio, float(Fraction(max(abs(c) for c in polyapprox.chebyshev_coeffs(k)), 4**k)))
    rows.append(_le("poly", "chebyshev_max_coeff_over_4^k[k<=20]", worst_ratio, 1.0))
    theta = np.linspace(0.0, math.pi, 1000)
    trig = max(float(np.abs(polyapprox.chebyshev_eval(k, np.cos(theta)) - np.cos(k * theta)).max())
               for k in range(31))
    rows.append(_le("poly", "chebyshev_trig_identity[k<=30]", trig, 1e-9))
    xs = [Fraction(i, 7) for i in range(-7, 8)]
    rec = 0.0
    for k in range(21):
        poly = polyapprox.Polynomial.chebyshev(k)
        rec = max(rec, max(abs(float(poly(x)) - polyapprox.chebyshev_eval(k, float(x))) for x in xs))
    rows.append(_le("poly", "chebyshev_closed_form_vs_recurrence[k<=20]", rec, 1e-9))
    fit = robust_fit_worst(seed=seed)
    rows.append(_le("poly", "robust_fit_max_error", fit["worst"], 0.1 + 1e-6))
    rows.append(_le("poly", "robust_fit_max_error_highprec", fit["worst_highprec"], 0.1 + 1e-6))
    rows.append(_le("poly", "robust_fit_perturbation_radius", fit["max_dist"], 0.1 + 1e-9))
    return rows


# ---------------------------------------------------------------- coupling


def coupling_gap(m: int, seed: int, K: float = 1.0, d: int = 8, samples: int = 256) -> float:
    """sup over sampled x of |f(x; W0 + dW) - g(x; W0 + dW)| with every |dw_r| = K m^{-3/5}."""
    params, snap = net.init_params(m, d, 1.0 / m, stream(seed, "coupling-init", m))
    rng = stream(seed, "coupling-perturb", m)
    D = rng.normal(size=(d, m))
    D *= K * m ** (-0.6) / np.linalg.norm(D, axis=0)
    params.W = params.W + D
    xs = [sample_sphere_cap(d, rng) for _ in range(samples)]
    return max(abs(net.forward_dense(params, x) - net.pseudo_forward(params, snap, x)) for x in xs)


def suite_coupling(ms=(2**10, 2**12, 2**14), seeds=range(5), K: float = 1.0) -> list[CheckRow]:
    medians = [float(np.median([coupling_gap(m, s, K) for s in seeds])) for m in ms]
    rows = [CheckRow("coupling", f"median_sup_gap[m={m}]", v, math.inf, True) for m, v in zip(ms, medians)]
    for (m0, v0), (m1, v1) in zip(zip(ms, medians), zip(ms[1:], medians[1:])):
        rows.append(_le("coupling", f"non_increasing[m={m0}->{m1}]", v1, v0))
    return rows


# -------------------------------------------------------------- activation


def gaussian_upper_tail(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def activation_fraction(m: int = 8192, d: int = 16, samples: int = 32, seed: int = 0) -> tuple[float, float, float]:
    """Mean active fraction over ``samples`` (network, x) draws at tau = 2 sqrt(2/m).

    Every sample uses a fresh initialization, so the 32 m indicators are
    independent and the binomial standard error applies.
    """
    tau = 2.0 * math.sqrt(2.0 / m)
    p = gaussian_upper_tail(2.0)
    fracs = []
    for s in range(samples):
        _, snap = net.init_params(m, d, tau, stream(seed, "activation-init", s))
        x = sample_sphere_cap(d, stream(seed, "activation-x", s))
        fracs.append(net.preactivation(snap.W0, snap.b0, x).__gt__(tau).mean())
    return float(np.mean(fracs)), p, 3.0 * math.sqrt(p * (1 - p) / (samples * m))


def suite_activation(seed: int = 0) -> list[CheckRow]:
    mean, p, tol = activation_fraction(seed=seed)
    return [
        CheckRow("activation", "gaussian_tail_p", p, 0.02275, abs(p - 0.02275) < 5e-6),
        _le("activation", "abs(mean_fraction-p)", abs(mean - p), tol),
    ]


# ------------------------------------------------------ engine equivalence


def engine_pair(seed: int, n=8, d=8, m=4096, T=50, rho=0.05, eps=0.1, steps=5, workers=1, eps_sep=0.5):
    ds = generate_dataset(n, d, eps_sep, rho, "smooth", seed=stream(seed, "data"))
    out = {}
    for engine in ("hsr", "dense"):
        cfg = TrainConfig(m=m, d=d, n=n, rho=rho, eps=eps, seed=seed, T=T, engine=engine,
                          adversary=adv.AdversaryConfig("pgd", rho, steps), workers=workers)
        out[engine] = train(cfg, ds)
    return out["hsr"], out["dense"]


def suite_engine(seeds=(0, 1, 2), T: int = 50) -> list[CheckRow]:
    t0 = time.perf_counter()
    rows = []
    for s in seeds:
        h, dn = engine_pair(s, T=T)
        diff = float(np.abs(h.params.W - dn.params.W).max())
        same = strip_timings(metrics_csv(h.metrics)) == strip_timings(metrics_csv(dn.metrics))
        rows.append(CheckRow("engine-equivalence", f"max_abs_W_diff[seed={s}]", diff, 0.0, diff == 0.0))
        rows.append(CheckRow("engine-equivalence", f"metrics_identical[seed={s}]", float(same), 1.0, same))
    rows.append(_le("engine-equivalence", "runtime_s", time.perf_counter() - t0, 120.0))
    return rows


# ---------------------------------------------------------- convergence


def convergence_ratio(seed: int, eps: float = 0.01, T: int = 200) -> tuple[float, float]:
    ds = generate_dataset(8, 8, 0.5, 0.05, "smooth", seed=stream(seed, "data"))
    cfg = TrainConfig(m=4096, d=8, n=8, rho=0.05, eps=eps, seed=seed, T=T,
                      adversary=adv.AdversaryConfig("pgd", 0.05, 5), diagnostics=False)
    losses = [r.robust_loss for r in train(cfg, ds).metrics]
    return losses[0], float(np.mean(losses[-10:]))


def suite_convergence(seeds=(0, 1, 2)) -> list[CheckRow]:
    rows = []
    for s in seeds:
        first, last = convergence_ratio(s)
        rows.append(_le("convergence", f"last10_mean_over_first[seed={s}]", last / first, 0.5))
    return rows


# -------------------------------------------------------------- gradient


def _gradient_instance(rng):
    """Random instance with every pre-activation and the residual >= 1e-3 from a kink."""
    while True:
        m = int(rng.integers(1, 65))
        d = int(rng.integers(2, 9))
        tau = float(rng.uniform(0.0, 0.2))
        params, _ = net.init_params(m, d, tau, rng)
        params.W = params.W * rng.uniform(0.5, 4.0)
        x = sample_sphere_cap(d, rng)
        y = float(rng.uniform(-1.0, 1.0))
        z = net.preactivation(params.W, params.b, x)
        if np.all(np.abs(z - tau) >= 1e-3) and abs(net.forward_dense(params, x) - y) >= 1e-3:
            return params, x, y


def gradient_errors(params, x, y, h: float = 1e-6) -> tuple[float, bool]:
    """(max-norm relative error against central differences, sparse == dense exactly)."""
    loss = AbsoluteLoss()
    active = net.active_set(params, x)
    sparse = net.grad_loss_sparse(params, x, y, active, loss).to_dense(params.m)
    dense = net.grad_loss_dense(params, x, y, loss)
    fd = np.zeros_like(dense)
    for j in range(params.d):
        for r in range(params.m):
            w = params.W[j, r]
            params.W[j, r] = w + h
            up = loss.eval(y, net.forward_dense(params, x))
            params.W[j, r] = w - h
            down = loss.eval(y, net.forward_dense(params, x))
            params.W[j, r] = w
            fd[j, r] = (up - down) / (2 * h)
    scale = max(float(np.abs(dense).max()), 1e-300)
    return float(np.abs(fd - dense).max()) / scale, bool(np.array_equal(sparse, dense))


def suite_gradient(instances: int = 100, seed: int = 0) -> list[CheckRow]:
    rng = stream(seed, "gradient")
    worst, exact = 0.0, 0
    for _ in range(instances):
        err, same = gradient_errors(*_gradient_instance(rng))
        worst = max(worst, err)
        exact += same
    return [
        _le("gradient", "max_rel_error_vs_central_differences", worst, 1e-5),
        CheckRow("gradient", "sparse_equals_dense_exactly", exact, instances, exact == instances),
    ]


# --------------------------------------------------------------- scaling


def suite_scaling(d: int = 6, ms=tuple(2**k for k in range(12, 18)), n: int = 16, seed: int = 0,
                  T: int = 3) -> list[CheckRow]:
    """Index visits grow sublinearly in m and whole iterations beat the dense engine."""
    rows_b = bench_iteration(d, ms, n=n, active_frac=0.01, T=T, seed=seed)
    slope = loglog_slope([r.m for r in rows_b], [r.mean_visits for r in rows_b])
    last = rows_b[-1]
    speedup = last.extra[1] / last.extra[0]
    return [
        CheckRow("scaling", "visits_loglog_slope", slope, 1.0, slope < 1.0),
        CheckRow("scaling", f"iteration_speedup[m={last.m}]", speedup, 1.0, speedup > 1.0),
        CheckRow("scaling", f"iteration_speedup_meets_3x[m={last.m}]", speedup, 3.0, speedup >= 3.0),
    ]


SUITES = {
    "hsr": suite_hsr,
    "poly": suite_poly,
    "coupling": suite_coupling,
    "activation": suite_activation,
    "engine-equivalence": suite_engine,
    "gradient": suite_gradient,
    "convergence": suite_convergence,
    "scaling": suite_scaling,
}


def run_suite(name: str) -> list[CheckRow]:
    if name == "all":
        return [row for fn in SUITES.values() for row in fn()]
    return SUITES[name]()
