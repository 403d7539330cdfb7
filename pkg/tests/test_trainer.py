import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparse_advtrain import net
from sparse_advtrain.adversary import AdversaryConfig
from sparse_advtrain.data import Dataset, generate_dataset, sample_sphere_cap
from sparse_advtrain.hsr import brute_force_query
from sparse_advtrain.loss import AbsoluteLoss, get_loss
from sparse_advtrain.trainer import (
    METRIC_COLUMNS,
    TrainConfig,
    active_count_at_init,
    count_boundary_band,
    count_sign_flips,
    derive_hparams,
    metrics_csv,
    stream,
    strip_timings,
    train,
)


def gaussian_interval(lo, hi, sd):
    """P(lo <= N(0, sd^2) <= hi) from the error function."""
    return 0.5 * (math.erf(hi / (sd * math.sqrt(2))) - math.erf(lo / (sd * math.sqrt(2))))


def small_setup(seed=0, m=512, d=5, n=4, T=5, kind="pgd", **kw):
    ds = generate_dataset(n, d, 0.5, 0.05, "smooth", seed=stream(seed, "data"))
    cfg = TrainConfig(m=m, d=d, n=n, rho=0.05, seed=seed, T=T, adversary=AdversaryConfig(kind, 0.05, 5), **kw)
    return cfg, ds


def test_derive_hparams_examples():
    assert derive_hparams(0.1, 1, 1) == (0.1, 100)
    eta, T = derive_hparams(0.5, 2, 32)
    assert eta == pytest.approx(0.25, rel=1e-15) and T == 16
    assert derive_hparams(math.nextafter(1.0, 0.0), 1, 1)[1] == 1


@pytest.mark.parametrize("args", [(0.0, 1, 1), (1.0, 1, 1), (0.1, 0, 1), (0.1, 1, 0)])
def test_derive_hparams_rejects_invalid_ranges(args):
    with pytest.raises(ValueError):
        derive_hparams(*args)


def test_config_validation_and_defaults():
    cfg = TrainConfig(m=1024, eps=0.1)
    assert cfg.tau == 1 / 1024 and cfg.T == 100 and cfg.eta == pytest.approx(0.1 * 1024**-0.2)
    assert cfg.adversary.rho == cfg.rho
    with pytest.raises(ValueError):
        TrainConfig(engine="gpu")
    with pytest.raises(ValueError):
        TrainConfig(eta=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(workers=0)


def test_dataset_mismatch_is_rejected():
    cfg, ds = small_setup()
    with pytest.raises(ValueError):
        train(TrainConfig(m=64, d=6, n=4, T=1), ds)


def test_zero_iterations_return_initial_params():
    cfg, ds = small_setup(T=0)
    res = train(cfg, ds)
    init, _ = net.init_params(cfg.m, cfg.d, cfg.tau, stream(cfg.seed, "init"))
    assert res.metrics == [] and np.array_equal(res.params.W, init.W)
    assert metrics_csv(res.metrics) == ",".join(METRIC_COLUMNS) + "\n"


@pytest.mark.parametrize("engine", ["hsr", "dense"])
def test_single_neuron_hand_step(engine):
    x = np.array([0.866, 0.5])
    params = net.NetworkParams(m=1, d=2, a=np.array([1.0]), W=np.array([[1.0], [0.0]]), b=np.array([0.0]), tau=0.5)
    ds = Dataset(x[None, :], np.array([1.0]), 1.0, 0.0)
    cfg = TrainConfig(m=1, d=2, n=1, tau=0.5, rho=0.0, eta=0.1, T=1, engine=engine,
                      adversary=AdversaryConfig("null", 0.0))
    res = train(cfg, ds, params=params)
    assert np.array_equal(res.params.W[:, 0], np.array([1.0, 0.0]) + 0.1 * x)
    assert res.metrics[0].robust_loss == pytest.approx(1 - 0.866)


@pytest.mark.parametrize("kind", ["null", "random", "pgd"])
def test_engines_agree_bitwise(kind):
    cfg, ds = small_setup(seed=3, kind=kind)
    hsr = train(cfg, ds)
    dense = train(TrainConfig(**{**cfg.__dict__, "engine": "dense"}), ds)
    assert np.array_equal(hsr.params.W, dense.params.W)
    assert strip_timings(metrics_csv(hsr.metrics)) == strip_timings(metrics_csv(dense.metrics))


def test_engines_agree_when_the_adversary_scans_densely():
    cfg, ds = small_setup(seed=4, adversary_uses_index=False)
    routed = train(TrainConfig(**{**cfg.__dict__, "adversary_uses_index": True}), ds)
    dense = train(TrainConfig(**{**cfg.__dict__, "engine": "dense"}), ds)
    scanned = train(cfg, ds)
    assert np.array_equal(scanned.params.W, dense.params.W) and np.array_equal(routed.params.W, dense.params.W)


def test_worker_count_does_not_change_results():
    cfg, ds = small_setup(seed=5)
    one = train(cfg, ds)
    many = train(TrainConfig(**{**cfg.__dict__, "workers": 3}), ds)
    assert np.array_equal(one.params.W, many.params.W)
    assert strip_timings(metrics_csv(one.metrics)) == strip_timings(metrics_csv(many.metrics))


def test_engines_agree_over_larger_steps():
    # a large step moves neurons across thresholds, which exercises index maintenance
    cfg, ds = small_setup(seed=6, m=256, T=20, eta=2.0)
    hsr = train(cfg, ds)
    dense = train(TrainConfig(**{**cfg.__dict__, "engine": "dense"}), ds)
    assert hsr.metrics[-1].flips_since_init > 0
    assert np.array_equal(hsr.params.W, dense.params.W)
    hsr.index.check_invariants()


def test_only_active_columns_move_and_a_b_stay_fixed():
    cfg, ds = small_setup(seed=7, T=6, snapshot_every=1)
    res = train(cfg, ds)
    prev = res.snapshot.W0
    for (t, W), m in zip(res.snapshots, res.metrics):
        moved = np.count_nonzero(np.any(W != prev, axis=0))
        assert moved <= m.union_size
        prev = W
    assert res.params.a.tobytes() == res.snapshot.a0.tobytes()
    assert res.params.b.tobytes() == res.snapshot.b0.tobytes()


def test_first_iteration_metrics_match_an_independent_recount():
    cfg, ds = small_setup(seed=8, T=1)
    res = train(cfg, ds)
    init, _ = net.init_params(cfg.m, cfg.d, cfg.tau, stream(cfg.seed, "init"))
    actives = [brute_force_query(init.lifted(), np.append(x, 1.0), cfg.tau) for x in res.adversarial]
    union = np.unique(np.concatenate(actives))
    m = res.metrics[0]
    assert list(m.k_per_example) == [a.size for a in actives]
    assert m.union_size == union.size <= min(cfg.m, sum(a.size for a in actives))
    moved = np.flatnonzero(np.any(res.params.W != init.W, axis=0))
    assert set(moved) <= set(union)
    loss = AbsoluteLoss()
    want = math.fsum(loss.eval(y, net.forward_dense(init, x)) for x, y in zip(res.adversarial, ds.ys)) / ds.n
    assert m.robust_loss == want


def test_null_adversary_reports_the_training_loss():
    cfg, ds = small_setup(seed=9, T=1, kind="null")
    res = train(cfg, ds)
    init, _ = net.init_params(cfg.m, cfg.d, cfg.tau, stream(cfg.seed, "init"))
    plain = math.fsum(abs(y - net.forward_dense(init, x)) for x, y in zip(ds.xs, ds.ys)) / ds.n
    assert res.metrics[0].robust_loss == plain


def test_diagnostic_columns_match_direct_counts():
    cfg, ds = small_setup(seed=10, T=8, eta=1.0)
    res = train(cfg, ds)
    last = res.metrics[-1]
    assert last.flips_since_init == count_sign_flips(res.params, res.snapshot, ds.xs)
    assert last.d_max == net.norm_2inf(res.params.W - res.snapshot.W0)
    band = cfg.K * cfg.m ** -0.6
    assert last.boundary_band_count == max(count_boundary_band(res.snapshot, x, band, cfg.tau) for x in ds.xs)
    for m in res.metrics:
        assert m.robust_loss >= 0 and m.union_size <= min(cfg.m, int(m.k_per_example.sum()))
        assert min(m.t_attack_ns, m.t_query_ns, m.t_forward_ns, m.t_backward_ns, m.t_update_ns) >= 0


def test_metrics_csv_layout():
    cfg, ds = small_setup(seed=11, T=3)
    lines = metrics_csv(train(cfg, ds).metrics).splitlines()
    assert lines[0] == "t,robust_loss,union_size,mean_k,flips,boundary_band,d_max,t_attack_ns,t_query_ns,t_forward_ns,t_backward_ns,t_update_ns"
    assert len(lines) == 4 and [row.split(",")[0] for row in lines[1:]] == ["1", "2", "3"]
    loss_field = lines[1].split(",")[1]
    assert float(loss_field) == float(format(float(loss_field), ".17g"))


def test_sign_flip_examples():
    params, snap = net.init_params(64, 4, 0.01, seed=0)
    x = sample_sphere_cap(4, np.random.default_rng(0))
    assert count_sign_flips(params, snap, [x]) == 0
    z = net.preactivation(params.W, params.b, x) - params.tau
    r = int(np.argmin(np.abs(z)))
    params.W = params.W.copy()
    params.W[:, r] -= (z[r] + np.sign(z[r]) * 1e-3) * x  # |x| = 1, so this crosses the threshold
    assert count_sign_flips(params, snap, [x]) == 1


def test_flips_stay_inside_the_perturbation_band():
    m = 4096
    radius = m ** (-15 / 24)
    sd = math.sqrt(2 / m)
    p = gaussian_interval(-radius, radius, sd)  # tau = 0
    fractions = []
    for seed in range(8):
        rng = np.random.default_rng(seed)
        params, snap = net.init_params(m, 6, 0.0, rng)
        delta = rng.normal(size=params.W.shape)
        delta *= radius * rng.uniform(size=m) / np.linalg.norm(delta, axis=0)
        params.W = params.W + delta
        x = sample_sphere_cap(6, rng)
        flips = count_sign_flips(params, snap, [x])
        # a flip at x needs |z0 - tau| <= |<dw, x>| <= radius
        assert flips <= count_boundary_band(snap, x, radius, 0.0)
        fractions.append(flips / m)
    assert np.mean(fractions) <= p + 3 * math.sqrt(p * (1 - p) / (8 * m))


def test_boundary_band_examples():
    params, snap = net.init_params(256, 5, 0.01, seed=1)
    x = sample_sphere_cap(5, np.random.default_rng(1))
    assert count_boundary_band(snap, x, 0.0, 0.01) == 0
    assert count_boundary_band(snap, x, math.inf, 0.01) == 256
    with pytest.raises(ValueError):
        count_boundary_band(snap, x, -1.0, 0.01)


def test_boundary_band_matches_gaussian_interval():
    m, K, seeds = 4096, 1.0, 16
    tau = 1 / m
    band = K * m ** -0.6
    sd = math.sqrt(2 / m)
    p = gaussian_interval(tau - band, tau + band, sd)
    counts = []
    for seed in range(seeds):
        rng = np.random.default_rng(100 + seed)
        _, snap = net.init_params(m, 8, tau, rng)
        counts.append(count_boundary_band(snap, sample_sphere_cap(8, rng), band, tau))
    assert abs(np.mean(counts) / m - p) <= 3 * math.sqrt(p * (1 - p) / (seeds * m))


def test_active_count_examples():
    _, snap = net.init_params(128, 4, 0.0, seed=2)
    xs = [sample_sphere_cap(4, np.random.default_rng(s)) for s in range(3)]
    assert list(active_count_at_init(snap, xs, math.inf)) == [0, 0, 0]
    assert list(active_count_at_init(snap, xs, -math.inf)) == [128, 128, 128]


def test_active_count_matches_gaussian_tail():
    m = 8192
    tau = 2 * math.sqrt(2 / m)
    p = 0.5 * math.erfc(2 / math.sqrt(2))
    assert p == pytest.approx(0.02275, abs=1e-5)
    rng = np.random.default_rng(3)
    _, snap = net.init_params(m, 16, tau, rng)
    k = active_count_at_init(snap, [sample_sphere_cap(16, rng)], tau)[0]
    assert abs(k / m - p) <= 3 * math.sqrt(p * (1 - p) / m)


finite = st.floats(-10, 10, allow_nan=False)


@given(finite, finite, finite)
def test_absolute_loss_contract(y, u, v):
    loss = get_loss("absolute")
    assert loss.eval(y, y) == 0.0 and loss.eval(y, u) >= 0.0
    assert abs(loss.subgrad(y, u)) <= 1.0
    mid = loss.eval(y, (u + v) / 2)
    assert mid <= (loss.eval(y, u) + loss.eval(y, v)) / 2 + 1e-12
    # subgradient inequality
    assert loss.eval(y, v) >= loss.eval(y, u) + loss.subgrad(y, u) * (v - u) - 1e-12


def test_unknown_loss_is_rejected():
    with pytest.raises(ValueError):
        get_loss("huber")
