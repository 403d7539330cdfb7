import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparse_advtrain.data import (
    HEAD_NORM,
    Dataset,
    generate_dataset,
    load_csv,
    min_pairwise_distance,
    sample_sphere_cap,
    save_csv,
    verify_separability,
)


def assert_on_domain(xs, tol=1e-12):
    xs = np.atleast_2d(xs)
    assert np.all(np.abs(xs[:, -1] - 0.5) <= tol)
    assert np.all(np.abs(np.linalg.norm(xs, axis=1) - 1.0) <= tol)


@given(st.integers(0, 2**31 - 1), st.integers(2, 12))
def test_cap_samples_lie_on_domain(seed, d):
    x = sample_sphere_cap(d, np.random.default_rng(seed))
    assert abs(np.linalg.norm(x[:-1]) - HEAD_NORM) <= 1e-12
    assert_on_domain(x)


def test_two_dimensional_cap_has_two_points():
    rng = np.random.default_rng(0)
    seen = {tuple(map(float, sample_sphere_cap(2, rng))) for _ in range(50)}
    assert seen == {(HEAD_NORM, 0.5), (-HEAD_NORM, 0.5)}


def test_cap_samples_are_centred():
    rng = np.random.default_rng(1)
    trials = 10_000
    heads = np.array([sample_sphere_cap(5, rng)[:-1] for _ in range(trials)])
    assert np.all(np.abs(heads.mean(axis=0)) <= 4 / math.sqrt(trials))


def test_cap_sampler_rejects_d_below_two():
    with pytest.raises(ValueError):
        sample_sphere_cap(1, np.random.default_rng(0))


def test_gamma_arithmetic_example():
    ds = generate_dataset(2, 3, 0.5, 0.1, seed=0)
    assert Dataset(ds.xs, ds.ys, 0.5, 0.1).gamma == pytest.approx(0.15, abs=1e-15)
    assert ds.eps_sep >= 0.5 and ds.gamma >= 0.15


def test_single_point_dataset():
    ds = generate_dataset(1, 4, 0.5, 0.1, seed=3)
    assert ds.n == 1 and ds.eps_sep == 0.5 and ds.gamma == pytest.approx(0.15)
    assert verify_separability(ds) == math.inf


def test_generate_verify_round_trip_example():
    ds = generate_dataset(8, 8, 0.9, 0.1, seed=0)
    assert verify_separability(ds) >= 0.63


def test_antipodal_pair_gamma():
    xs = np.array([[HEAD_NORM, 0.5], [-HEAD_NORM, 0.5]])
    ds = Dataset(xs, np.zeros(2), math.sqrt(3), 0.1)
    assert verify_separability(ds) == pytest.approx(math.sqrt(3) * (math.sqrt(3) - 0.2), rel=1e-14)


def test_duplicate_point_is_flagged():
    x = sample_sphere_cap(4, np.random.default_rng(2))
    ds = Dataset(np.array([x, x]), np.zeros(2), 0.0, 0.1)
    assert verify_separability(ds) <= 0


@given(
    seed=st.integers(0, 2**31 - 1),
    n=st.integers(1, 6),
    d=st.integers(4, 8),
    eps_sep=st.floats(0.05, 0.5),
    rho_frac=st.floats(0.0, 0.49),
    mode=st.sampled_from(["sign", "smooth"]),
)
def test_generated_datasets_satisfy_their_invariants(seed, n, d, eps_sep, rho_frac, mode):
    rho = rho_frac * eps_sep
    ds = generate_dataset(n, d, eps_sep, rho, mode, seed=seed)
    assert_on_domain(ds.xs)
    assert np.all(np.abs(ds.ys) <= 1.0)
    assert ds.eps_sep >= eps_sep and ds.eps_sep > 2 * ds.rho
    assert verify_separability(ds) >= eps_sep * (eps_sep - 2 * rho) - 1e-9
    if mode == "sign":
        assert set(np.unique(ds.ys)) <= {-1.0, 1.0}
    again = generate_dataset(n, d, eps_sep, rho, mode, seed=seed)
    assert np.array_equal(again.xs, ds.xs) and np.array_equal(again.ys, ds.ys)


def test_generation_rejects_bad_parameters():
    with pytest.raises(ValueError):
        generate_dataset(4, 3, 0.2, 0.1)
    with pytest.raises(ValueError):
        generate_dataset(0, 3, 0.5, 0.1)
    with pytest.raises(ValueError):
        generate_dataset(2, 3, 0.5, 0.1, label_mode="ordinal")


def test_infeasible_packing_exhausts_the_budget():
    with pytest.raises(RuntimeError, match="attempts"):
        generate_dataset(3, 2, 1.0, 0.1, max_attempts=1000)


def test_min_pairwise_distance_matches_exhaustive_scan():
    rng = np.random.default_rng(4)
    xs = np.array([sample_sphere_cap(5, rng) for _ in range(20)])
    want = min(np.linalg.norm(a - b) for i, a in enumerate(xs) for b in xs[i + 1:])
    assert min_pairwise_distance(xs) == want


def test_csv_round_trip_is_exact(tmp_path):
    ds = generate_dataset(6, 5, 0.4, 0.05, "sign", seed=9)
    path = tmp_path / "ds.csv"
    save_csv(ds, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "d,n,eps_sep,rho" and len(lines) == 2 + ds.n
    back = load_csv(path)
    assert np.array_equal(back.xs, ds.xs) and np.array_equal(back.ys, ds.ys)
    assert back.eps_sep == ds.eps_sep and back.rho == ds.rho


def test_csv_rejects_wrong_header_and_row_count(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("n,d\n1,2\n")
    with pytest.raises(ValueError):
        load_csv(bad)
    short = tmp_path / "short.csv"
    short.write_text("d,n,eps_sep,rho\n2,2,0.5,0.1\n0.8660254037844386,0.5,1\n")
    with pytest.raises(ValueError):
        load_csv(short)
