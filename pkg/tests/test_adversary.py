import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparse_advtrain import net
from sparse_advtrain.adversary import (
    Adversary,
    AdversaryConfig,
    null_attack,
    pgd_attack,
    pgd_attack_dense,
    project_to_domain,
    random_attack,
)
from sparse_advtrain.data import HEAD_NORM, on_cap, sample_sphere_cap
from sparse_advtrain.loss import AbsoluteLoss

LOSS = AbsoluteLoss()
TOL = 1e-9


def feasible(out, x, rho):
    return on_cap(out, TOL) and np.linalg.norm(out - x) <= rho + TOL


def _angle_on_circle_at_distance(dist):
    """Bisection for the head angle theta with chord 2 r sin(theta/2) = dist."""
    lo, hi = 0.0, math.pi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 2 * HEAD_NORM * math.sin(mid / 2) < dist:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_projection_example_on_circle():
    x0 = np.array([HEAD_NORM, 0.0, 0.5])
    v = np.array([0.0, HEAD_NORM, 0.5])
    out = project_to_domain(v, x0, 0.5)
    theta = _angle_on_circle_at_distance(0.5)
    want = np.array([HEAD_NORM * math.cos(theta), HEAD_NORM * math.sin(theta), 0.5])
    assert on_cap(out, TOL)
    assert abs(np.linalg.norm(out - x0) - 0.5) <= 1e-6
    assert np.max(np.abs(out - want)) <= 1e-6


def test_projection_fixed_point_and_zero_budget():
    x0 = sample_sphere_cap(5, np.random.default_rng(0))
    assert np.array_equal(project_to_domain(x0, x0, 0.3), x0)
    assert np.array_equal(project_to_domain(x0 + 1.0, x0, 0.0), x0)


def test_projection_rejects_off_domain_anchor():
    with pytest.raises(ValueError):
        project_to_domain(np.ones(3), np.ones(3), 0.1)


@given(st.integers(0, 2**31 - 1), st.integers(2, 9), st.floats(0.0, 2.5), st.floats(0.0, 5.0),
       st.integers(0, 8))
def test_projection_is_rho_bounded(seed, d, rho, spread, rounds):
    rng = np.random.default_rng(seed)
    x0 = sample_sphere_cap(d, rng)
    v = x0 + spread * rng.normal(size=d)
    assert feasible(project_to_domain(v, x0, rho, rounds), x0, rho)


def test_projection_of_antipodal_target_stays_feasible():
    x0 = np.array([HEAD_NORM, 0.0, 0.0, 0.5])
    v = np.array([-HEAD_NORM, 0.0, 0.0, 0.5])
    assert feasible(project_to_domain(v, x0, 0.4), x0, 0.4)


def test_config_validation():
    with pytest.raises(ValueError):
        AdversaryConfig("pgd", steps=0)
    with pytest.raises(ValueError):
        AdversaryConfig("pgd", rho=-0.1)
    with pytest.raises(ValueError):
        AdversaryConfig("fgsm")
    assert AdversaryConfig("pgd", rho=0.05, steps=5).alpha == pytest.approx(0.025)


def _instance(seed, m=64, d=4):
    rng = np.random.default_rng(seed)
    params, _ = net.init_params(m, d, 0.0, rng)
    x = sample_sphere_cap(d, rng)
    return params, x, float(rng.uniform(-1, 1)), rng


def test_null_and_zero_budget_attacks_return_input():
    params, x, y, _ = _instance(0)
    assert np.array_equal(null_attack(x), x)
    assert np.array_equal(random_attack(x, 0.0, 1), x)
    assert np.array_equal(pgd_attack(params, x, y, AdversaryConfig("pgd", rho=0.0), LOSS), x)


def test_random_attack_is_bounded_over_many_draws():
    x = sample_sphere_cap(6, np.random.default_rng(1))
    for seed in range(1000):
        assert feasible(random_attack(x, 0.1, seed), x, 0.1)


def test_random_attack_is_deterministic_in_seed():
    x = sample_sphere_cap(6, np.random.default_rng(2))
    assert np.array_equal(random_attack(x, 0.1, 42), random_attack(x, 0.1, 42))
    assert not np.array_equal(random_attack(x, 0.1, 42), random_attack(x, 0.1, 43))


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.5), st.integers(1, 10), st.sampled_from(["pgd", "random", "null"]))
def test_every_adversary_is_rho_bounded(seed, rho, steps, kind):
    params, x, y, _ = _instance(seed)
    out = Adversary(AdversaryConfig(kind, rho, steps))(params, x, y, LOSS, seed=seed)
    assert feasible(out, x, rho)


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.5), st.integers(1, 10))
def test_pgd_never_lowers_the_loss(seed, rho, steps):
    params, x, y, _ = _instance(seed)
    out = pgd_attack(params, x, y, AdversaryConfig("pgd", rho, steps), LOSS)
    assert LOSS.eval(y, net.forward_dense(params, out)) >= LOSS.eval(y, net.forward_dense(params, x))


@given(st.integers(0, 2**31 - 1))
def test_index_routed_and_dense_pgd_agree_bitwise(seed):
    params, x, y, _ = _instance(seed, m=128, d=5)
    cfg = AdversaryConfig("pgd", 0.2, 5)
    assert np.array_equal(pgd_attack(params, x, y, cfg, LOSS), pgd_attack_dense(params, x, y, cfg, LOSS))


def test_single_step_on_linear_region_does_not_lower_loss():
    params, x, y, _ = _instance(3)
    out = pgd_attack(params, x, y, AdversaryConfig("pgd", 0.01, 1), LOSS)
    assert LOSS.eval(y, net.forward_dense(params, out)) >= LOSS.eval(y, net.forward_dense(params, x))


@pytest.mark.parametrize("seed", range(4))
def test_pgd_beats_random_beats_null_on_average(seed):
    rng = np.random.default_rng(seed)
    params, _ = net.init_params(64, 4, 0.0, rng)
    cfg = AdversaryConfig("pgd", 0.2, 5)
    losses = np.zeros((100, 3))
    for trial in range(100):
        x = sample_sphere_cap(4, rng)
        y = float(rng.uniform(-1, 1))
        outs = (pgd_attack(params, x, y, cfg, LOSS), random_attack(x, cfg.rho, trial), null_attack(x))
        losses[trial] = [LOSS.eval(y, net.forward_dense(params, o)) for o in outs]
    pgd_mean, random_mean, null_mean = losses.mean(axis=0)
    assert pgd_mean > random_mean and pgd_mean > null_mean
    # a random direction leaves the loss unchanged to first order, so random vs
    # null is compared up to three standard errors of the paired difference
    diff = losses[:, 1] - losses[:, 2]
    assert random_mean >= null_mean - 3 * diff.std(ddof=1) / 10
