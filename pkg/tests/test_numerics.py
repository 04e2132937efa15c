import numpy as np
import pytest
from scipy import stats

from vcspectra.numerics import (
    derive_seed,
    gaussian_matrix,
    real_poly_roots,
    sym_eig,
)


class TestSymEig:
    def test_identity(self):
        dec = sym_eig(np.eye(3))
        assert np.allclose(dec.values, [1.0, 1.0, 1.0])
        assert np.allclose(dec.vectors @ dec.vectors.T, np.eye(3), atol=1e-12)

    def test_diagonal_permutation(self):
        dec = sym_eig(np.diag([3.0, 1.0, 2.0]))
        assert np.allclose(dec.values, [1.0, 2.0, 3.0])
        # eigenvectors are signed standard basis vectors
        assert np.allclose(np.abs(dec.vectors), np.eye(3)[:, [1, 2, 0]], atol=1e-12)

    def test_reconstruction_random(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((8, 8))
        a = a + a.T
        dec = sym_eig(a)
        recon = dec.vectors @ np.diag(dec.values) @ dec.vectors.T
        assert np.linalg.norm(recon - a) <= 1e-9 * np.linalg.norm(a)

    @pytest.mark.parametrize("seed", range(5))
    def test_trace_and_orthonormality(self, seed):
        rng = np.random.default_rng(seed)
        n = rng.integers(2, 12)
        a = rng.standard_normal((n, n))
        a = a + a.T
        dec = sym_eig(a)
        scale = np.abs(a).max()
        assert abs(dec.values.sum() - np.trace(a)) <= 1e-10 * max(scale, 1.0) * n
        gram = dec.vectors.T @ dec.vectors
        assert np.abs(gram - np.eye(n)).max() <= 1e-10
        assert np.all(np.diff(dec.values) >= -1e-12)

    def test_determinism(self):
        a = np.arange(16.0).reshape(4, 4)
        a = a + a.T
        d1, d2 = sym_eig(a), sym_eig(a)
        assert np.array_equal(d1.values, d2.values)
        assert np.array_equal(d1.vectors, d2.vectors)

    def test_nonfinite_rejected(self):
        bad = np.eye(3)
        bad[0, 0] = np.nan
        with pytest.raises(ValueError):
            sym_eig(bad)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            sym_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestRealPolyRoots:
    def test_quadratic_plus_minus_one(self):
        roots = real_poly_roots([-1.0, 0.0, 1.0])  # x^2 - 1
        assert np.allclose(roots, [-1.0, 1.0], atol=1e-12)

    def test_mp_quadratic(self):
        # 5 m^2 + 5 m + 1; expected from the quadratic formula
        expected = np.sort([(-5 - np.sqrt(5)) / 10, (-5 + np.sqrt(5)) / 10])
        roots = real_poly_roots([1.0, 5.0, 5.0])
        assert np.allclose(roots, expected, atol=1e-12)

    def test_triple_root(self):
        # (x - 2)^3 = -8 + 12x - 6x^2 + x^3
        roots = real_poly_roots([-8.0, 12.0, -6.0, 1.0])
        assert roots.shape == (3,)
        assert np.allclose(roots, 2.0, atol=1e-4)
        assert np.ptp(roots) == 0.0  # reported as one value with multiplicity

    @pytest.mark.parametrize("seed", range(8))
    def test_degree_le_4_against_constructed_roots(self, seed):
        rng = np.random.default_rng(seed)
        deg = int(rng.integers(1, 5))
        true = np.sort(rng.uniform(-3, 3, size=deg))
        coeffs = np.array([1.0])
        for r in true:
            coeffs = np.convolve(coeffs, [-r, 1.0])
        got = real_poly_roots(coeffs)
        assert got.shape == true.shape
        assert np.allclose(got, true, atol=1e-9)

    def test_interval_filter(self):
        roots = real_poly_roots([-1.0, 0.0, 1.0], interval=(0.0, 2.0))
        assert np.allclose(roots, [1.0])

    def test_complex_pair_excluded(self):
        roots = real_poly_roots([1.0, 0.0, 1.0])  # x^2 + 1
        assert roots.size == 0

    def test_zero_poly_rejected(self):
        with pytest.raises(ValueError):
            real_poly_roots([0.0, 0.0])

    def test_trailing_zero_trim(self):
        # 0*x^3 + x^2 - 1 with an explicitly zero leading coefficient
        roots = real_poly_roots([-1.0, 0.0, 1.0, 0.0])
        assert np.allclose(roots, [-1.0, 1.0], atol=1e-12)


class TestGaussianMatrix:
    def test_zero_sd(self):
        assert np.all(gaussian_matrix(5, 4, 0.0, seed=3) == 0.0)

    def test_determinism(self):
        a = gaussian_matrix(7, 9, 1.3, seed=11)
        b = gaussian_matrix(7, 9, 1.3, seed=11)
        assert np.array_equal(a, b)

    def test_moments_and_ks(self):
        x = gaussian_matrix(1000, 100, 1.0, seed=1).ravel()
        assert abs(x.mean()) <= 4 / np.sqrt(x.size)
        assert abs(x.var() - 1.0) <= 0.02
        ks = stats.kstest(x, "norm").statistic
        assert ks < 0.02

    def test_negative_sd_rejected(self):
        with pytest.raises(ValueError):
            gaussian_matrix(2, 2, -1.0, seed=0)


def test_derive_seed_distinct_and_stable():
    seeds = {derive_seed(123, i) for i in range(100)}
    assert len(seeds) == 100
    assert derive_seed(123, 5) == derive_seed(123, 5)
    assert derive_seed(2**63, 2**63) == 0
