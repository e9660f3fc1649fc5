import numpy as np
import pytest

from emsnet import hsi
from emsnet.baselines import NO_CHANGE_NOTE, chi2_statistic, cva, isfa, otsu_threshold, run_baseline, sfa_eigen
from emsnet.errors import ThresholdError
from emsnet.hsi import HsiCube, ScenePair
from emsnet.metrics import evaluate


def exhaustive_otsu(values, bins=256):
    counts, edges = np.histogram(values, bins=bins)
    centers = (edges[:-1] + edges[1:]) / 2
    best, best_k, seen = -1.0, None, -1
    for k in range(bins - 1):
        lo, hi = counts[: k + 1], counts[k + 1 :]
        if lo.sum() == 0 or hi.sum() == 0 or lo.sum() == seen:
            continue  # empty bin: same partition as the split before it
        seen = lo.sum()
        m0 = (lo * centers[: k + 1]).sum() / lo.sum()
        m1 = (hi * centers[k + 1 :]).sum() / hi.sum()
        score = lo.sum() * hi.sum() * (m0 - m1) ** 2
        if score > best:
            best, best_k = score, k
    return edges[best_k + 1]


def _pair(t1, t2, ref=None):
    ref = np.zeros(t1.shape[:2], dtype=np.int64) if ref is None else ref
    return ScenePair(HsiCube(t1), HsiCube(t2), ref)


# -- Otsu ---------------------------------------------------------------------
def test_otsu_two_values():
    thr = otsu_threshold(np.array([0.0] * 10 + [10.0] * 7))
    assert 0 < thr <= 10
    assert thr < 10 or np.sum(np.array([10.0]) >= thr) == 1


def test_otsu_affine_invariance():
    rng = np.random.default_rng(0)
    v = np.concatenate([rng.normal(1, 0.2, 500), rng.normal(3, 0.3, 300)])
    t = otsu_threshold(v)
    t2 = otsu_threshold(4.0 * v + 7.0)
    width = (v.max() - v.min()) / 256
    assert abs((t2 - 7.0) / 4.0 - t) <= width + 1e-9
    assert np.array_equal(v >= t, 4.0 * v + 7.0 >= t2)


def test_otsu_matches_exhaustive_scan():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n0, n1 = rng.integers(50, 500, 2)
        v = np.concatenate([rng.normal(rng.uniform(-2, 2), rng.uniform(0.1, 1), n0),
                            rng.normal(rng.uniform(2, 6), rng.uniform(0.1, 1), n1)])
        assert otsu_threshold(v) == exhaustive_otsu(v)


def test_otsu_constant_input():
    with pytest.raises(ThresholdError):
        otsu_threshold(np.full(10, 3.0))


# -- CVA ----------------------------------------------------------------------
def test_cva_no_change_is_degenerate(rng):
    t = rng.random((6, 6, 4))
    result = cva(_pair(t, t.copy()))
    assert np.all(result.magnitude == 0) and np.all(result.binary == 0)
    assert result.threshold == float("inf") and NO_CHANGE_NOTE in result.flags


def test_cva_three_four_five():
    t1 = np.zeros((1, 2, 2))
    t2 = np.array([[[3.0, 4.0], [0.0, 0.0]]])
    result = cva(_pair(t1, t2))
    assert result.magnitude[0, 0] == 5.0 and result.magnitude[0, 1] == 0.0
    np.testing.assert_array_equal(result.binary, [[1, 0]])


def test_cva_symmetric(rng):
    a, b = rng.random((5, 5, 3)), rng.random((5, 5, 3))
    np.testing.assert_array_equal(cva(_pair(a, b)).magnitude, cva(_pair(b, a)).magnitude)


def test_cva_noiseless_scene_is_perfect():
    for seed in range(3):
        pair = hsi.generate_synthetic_pair(64, 64, 16, 3, 0.0, seed)
        result = cva(pair)
        assert evaluate(result.binary, pair.reference).f1 == 1.0
        np.testing.assert_array_equal(result.binary == 1, result.magnitude >= result.threshold)


# -- ISFA ---------------------------------------------------------------------
def test_isfa_eigenpairs_match_dense_solver():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((200, 3)) @ rng.standard_normal((3, 3))
    y = x + 0.3 * rng.standard_normal((200, 3))
    w = rng.uniform(0.2, 1.0, 200)
    sol = sfa_eigen(x, y, w)
    dense = np.sort(np.linalg.eigvals(np.linalg.solve(sol.B, sol.A)).real)
    np.testing.assert_allclose(sol.eigenvalues, dense, atol=1e-8, rtol=0)
    np.testing.assert_allclose(sol.eigenvectors.T @ sol.B @ sol.eigenvectors, np.eye(3), atol=1e-8)
    assert not sol.regularized


def test_isfa_statistic_invariant_to_band_transform():
    pair = hsi.generate_synthetic_pair(32, 32, 8, 2, 0.02, 4)
    mix = np.random.default_rng(3).standard_normal((8, 8)) + 3 * np.eye(8)
    moved = _pair(pair.t1.values @ mix.T, pair.t2.values @ mix.T, pair.reference)
    a, b = isfa(pair), isfa(moved)
    np.testing.assert_allclose(b.magnitude, a.magnitude, rtol=1e-6, atol=1e-6 * a.magnitude.max())


def test_isfa_no_change_fixed_point():
    rng = np.random.default_rng(5)
    base = rng.random((20, 20, 4))
    t1 = base + 1e-6 * rng.standard_normal(base.shape)
    t2 = base + 1e-6 * rng.standard_normal(base.shape)
    # identical noise on both epochs leaves nothing to detect
    result = isfa(_pair(t1, t1.copy()))
    assert result.converged and np.all(result.binary == 0)
    result = isfa(_pair(t1, t2), max_iters=5)
    assert result.iterations <= 5
    assert result.binary.mean() < 0.5


def test_isfa_reports_non_convergence():
    pair = hsi.generate_synthetic_pair(32, 32, 8, 2, 0.02, 1)
    result = isfa(pair, max_iters=1, tol=0.0)
    assert result.converged is False and result.iterations == 1


def test_isfa_singular_covariance_regularised():
    rng = np.random.default_rng(6)
    t1 = rng.random((10, 10, 3))
    t1[..., 2] = t1[..., 0]  # rank-deficient epochs
    t2 = t1 + 0.05 * rng.standard_normal(t1.shape)
    t2[..., 2] = t2[..., 0]
    with pytest.warns(RuntimeWarning):
        result = isfa(_pair(t1, t2), max_iters=3)
    assert "regularized" in result.flags


def test_isfa_not_much_worse_than_cva():
    pair = hsi.generate_synthetic_pair(64, 64, 16, 3, 0.02, 7)
    k_isfa = evaluate(isfa(pair).binary, pair.reference).kappa
    k_cva = evaluate(cva(pair).binary, pair.reference).kappa
    assert k_isfa >= k_cva - 0.05


def test_chi2_statistic_formula(rng):
    d = rng.standard_normal((4, 2))
    lam = np.array([0.5, 2.0])
    phi = np.eye(2)
    np.testing.assert_allclose(chi2_statistic(d, lam, phi), d[:, 0] ** 2 / 0.5 + d[:, 1] ** 2 / 2.0)


def test_run_baseline_dispatch():
    pair = hsi.generate_synthetic_pair(16, 16, 8, 1, 0.02, 0)
    assert run_baseline(pair, "cva").method == "cva"
    with pytest.raises(ValueError, match="valid"):
        run_baseline(pair, "pca")
