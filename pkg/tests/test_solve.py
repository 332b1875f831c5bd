import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from expstack.errors import AllTilesRejectedWarning, UnsolvableSystemError
from expstack.solve import (SolveConfig, normal_equations, pair_ratio_system, reject_outlier_tiles,
                            solve_tiles, solve_wls)
from expstack.system import ReducedSystem


def random_system(rng, n, rows, n_tiles=1):
    i = rng.integers(0, n - 1, rows)
    j = np.array([rng.integers(a + 1, n) for a in i])
    z = np.zeros(rows, dtype=np.int64)
    return ReducedSystem(i, j, z, z.copy(), rng.normal(0, 2, rows), rng.uniform(0.1, 100, rows),
                         rng.integers(0, n_tiles, rows), n)


def dense_oracle(system, e0, lam, gauge):
    """Stacked least squares ``[sqrt(W) O; sqrt(lam) I] e = [sqrt(W) m; sqrt(lam) e0]``."""
    n = len(e0)
    O = np.zeros((len(system), n))
    O[np.arange(len(system)), system.i] = 1.0
    O[np.arange(len(system)), system.j] = -1.0
    sw = np.sqrt(system.w)
    A = np.vstack([sw[:, None] * O, math.sqrt(lam) * np.eye(n)])
    b = np.concatenate([sw * system.m, math.sqrt(lam) * e0])
    e = np.linalg.lstsq(A, b, rcond=None)[0]
    return e + (e0[gauge] - e[gauge])


@given(st.integers(0, 2 ** 31), st.integers(2, 5), st.integers(1, 50),
       st.sampled_from([1e-3, 1.0, 10.0, 1e3]))
def test_matches_dense_oracle(seed, n, rows, lam):
    rng = np.random.default_rng(seed)
    system = random_system(rng, n, rows)
    e0 = rng.normal(0, 3, n)
    est = solve_wls(system, e0, lam)
    ref = dense_oracle(system, e0, lam, n - 1)
    np.testing.assert_allclose(est.e_hat, ref, rtol=1e-9, atol=1e-9)
    assert est.e_hat[-1] == e0[-1]
    assert est.gauge == n - 1


def test_normal_equations_match_explicit_product(rng):
    system = random_system(rng, 4, 30)
    O = np.zeros((30, 4))
    O[np.arange(30), system.i] = 1
    O[np.arange(30), system.j] = -1
    A, b = normal_equations(system, 4)
    np.testing.assert_allclose(A, O.T @ np.diag(system.w) @ O)
    np.testing.assert_allclose(b, O.T @ (system.w * system.m))


def test_consistent_system_recovered_exactly():
    truth = np.log([1 / 64, 1 / 8, 1, 8])
    i = np.array([0, 0, 1, 2, 1])
    j = np.array([1, 3, 2, 3, 3])
    z = np.zeros(5, dtype=np.int64)
    system = ReducedSystem(i, j, z, z, truth[i] - truth[j], np.ones(5), z, 4)
    e0 = truth + np.array([0.1, -0.2, 0.05, 0.0])
    est = solve_wls(system, e0, lam=1e-9)
    np.testing.assert_allclose(est.e_hat, truth, atol=1e-8)
    est0 = solve_wls(system, e0, lam=0.0)
    np.testing.assert_allclose(est0.e_hat, truth, atol=1e-12)


@given(st.integers(0, 2 ** 31), st.floats(-20, 20))
def test_prior_shift_equivariance(seed, c):
    rng = np.random.default_rng(seed)
    system = random_system(rng, 4, 20)
    e0 = rng.normal(0, 2, 4)
    a = solve_wls(system, e0, 10.0)
    b = solve_wls(system, e0 + c, 10.0)
    np.testing.assert_allclose(b.e_hat - a.e_hat, c, atol=1e-9)


def test_lambda_zero_requires_connectivity():
    z = np.zeros(1, dtype=np.int64)
    system = ReducedSystem(np.array([0]), np.array([1]), z, z, np.array([0.5]), np.ones(1), z, 3)
    with pytest.raises(UnsolvableSystemError) as info:
        solve_wls(system, np.zeros(3), lam=0.0)
    assert info.value.unreachable == (0, 1)
    # the prior keeps the regularised problem well-posed
    est = solve_wls(system, np.zeros(3), lam=10.0)
    assert np.all(np.isfinite(est.e_hat))


def test_empty_system_returns_prior():
    e0 = np.array([-2.0, 0.0, 1.0])
    est = solve_wls(ReducedSystem.empty(3), e0, 10.0)
    np.testing.assert_allclose(est.e_hat, e0)


def test_tiles_match_individual_solves(rng):
    system = random_system(rng, 4, 120, n_tiles=6)
    e0 = rng.normal(0, 1, 4)
    tile_ids, est = solve_tiles(system, e0, 10.0)
    assert tile_ids.tolist() == sorted(set(system.tile.tolist()))
    for t, row in zip(tile_ids, est):
        ref = solve_wls(system.subset(system.tile == t), e0, 10.0)
        np.testing.assert_allclose(row, ref.e_hat, rtol=1e-10, atol=1e-12)


def _tiled_truth_system(truth, n_tiles, bad=()):
    rows = []
    for t in range(n_tiles):
        for a, b in ((0, 1), (1, 2), (0, 2)):
            m = truth[a] - truth[b] + (0.8 if t in bad else 0.0)
            rows.append((a, b, t, m))
    arr = np.array(rows)
    z = np.zeros(len(rows), dtype=np.int64)
    return ReducedSystem(arr[:, 0].astype(int), arr[:, 1].astype(int), z, z, arr[:, 3],
                         np.full(len(rows), 1e4), arr[:, 2].astype(int), 3)


def test_outlier_tiles_are_rejected():
    truth = np.log([0.25, 1.0, 4.0])
    system = _tiled_truth_system(truth, 10, bad={2, 7})
    res = reject_outlier_tiles(system, truth, 10.0, math.log(1.5))
    assert res.rejected == {2, 7}
    assert res.kept == set(range(10)) - {2, 7}
    assert not res.all_rejected
    est = solve_wls(res.system, truth + 0.1, 10.0)
    np.testing.assert_allclose(est.e_hat - est.e_hat[-1], truth - truth[-1], atol=1e-3)


def test_all_tiles_rejected_warns():
    truth = np.log([0.25, 1.0, 4.0])
    system = _tiled_truth_system(truth, 3, bad={0, 1, 2})
    with pytest.warns(AllTilesRejectedWarning):
        res = reject_outlier_tiles(system, truth, 10.0, math.log(1.5))
    assert res.all_rejected and len(res.system) == 0


def test_infinite_threshold_keeps_everything():
    truth = np.log([0.25, 1.0, 4.0])
    system = _tiled_truth_system(truth, 3, bad={0})
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = reject_outlier_tiles(system, truth, 10.0, math.inf)
    assert res.kept == {0, 1, 2} and len(res.system) == len(system)


def test_pair_ratio_system_uses_mean_linear_ratio():
    z = np.zeros(3, dtype=np.int64)
    system = ReducedSystem(np.array([0, 0, 1]), np.array([1, 1, 2]), z, z, np.zeros(3), np.ones(3),
                           z, 3, y_i=np.array([1.0, 3.0, 2.0]), y_j=np.array([2.0, 4.0, 8.0]))
    pr = pair_ratio_system(system)
    np.testing.assert_allclose(pr.m, np.log([(0.5 + 0.75) / 2, 0.25]))
    np.testing.assert_allclose(pr.w, [2.0, 1.0])


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(lam=-1.0)
    with pytest.raises(ValueError):
        SolveConfig(outlier_threshold_log=0.0)
    assert SolveConfig().to_dict() == {"lambda": 10.0, "outlier_threshold_log": math.log(1.5),
                                       "gauge": -1}
