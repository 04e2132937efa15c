import json

import numpy as np
import pytest

from vcspectra.design import (
    build_design,
    design_from_json,
    design_to_json,
    manova_coefficients,
    mean_squares,
)

SMALL_DESIGNS = [
    ("oneway", {"I": 4, "J": 3}),
    ("nested_twoway", {"I": 3, "J": 2, "K": 2}),
    ("crossed_twoway", {"I": 2, "J": 2, "K": 3, "L": 2}),
]


def _b_matrix(design, a):
    b = np.zeros((design.n, design.n))
    for s in range(1, design.k + 1):
        v = design.basis[s]
        b += (a[s - 1] / design.d[s]) * (v @ v.T)
    return b


class TestBuildDesign:
    def test_oneway_small(self):
        d = build_design("oneway", I=3, J=2)
        assert d.n == 6 and d.k == 2
        assert d.m.tolist() == [3, 6]
        assert d.c.tolist() == [2.0, 1.0]
        assert d.d.tolist() == [1, 2, 3]

    def test_oneway_reference_size(self):
        d = build_design("oneway", I=300, J=2)
        assert d.n == 600
        assert d.d.tolist() == [1, 299, 300]

    def test_nested_dimensions_match_projector_ranks(self):
        d = build_design("nested_twoway", I=2, J=2, K=2)
        assert d.n == 8
        assert d.c.tolist() == [4.0, 2.0, 1.0]
        assert d.d.tolist() == [1, 1, 2, 4]
        # oracle: rank of col(U_2) minus col(U_1) from explicit incidence
        u1, u2 = d.incidence(1), d.incidence(2)
        p1 = u1 @ np.linalg.pinv(u1)
        p2 = u2 @ np.linalg.pinv(u2)
        assert np.linalg.matrix_rank(p2 - p1) == d.d[2]

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            build_design("oneway", I=1, J=2)
        with pytest.raises(ValueError):
            build_design("nested_twoway", I=2, J=1, K=2)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            build_design("latin_square", I=3)

    @pytest.mark.parametrize("kind,sizes", SMALL_DESIGNS)
    def test_strata_invariants(self, kind, sizes):
        d = build_design(kind, **sizes)
        assert int(d.d.sum()) == d.n
        # orthonormal bases, mutually orthogonal projectors summing to Id
        total = np.zeros((d.n, d.n))
        for r in range(d.k + 1):
            v = d.basis[r]
            assert np.abs(v.T @ v - np.eye(v.shape[1])).max() < 1e-10
            total += v @ v.T
            for s in range(r):
                assert np.abs(d.basis[r].T @ d.basis[s]).max() < 1e-10
        assert np.abs(total - np.eye(d.n)).max() < 1e-10

    @pytest.mark.parametrize("kind,sizes", SMALL_DESIGNS)
    def test_incidence_invariants(self, kind, sizes):
        d = build_design(kind, **sizes)
        for r in range(1, d.k + 1):
            u = d.incidence(r)
            assert np.abs(u.T @ u - d.c[r - 1] * np.eye(d.m[r - 1])).max() < 1e-10
        # lattice is reflexive and transitive, and matches subspace inclusion
        lat = d.lattice
        assert np.all(np.diag(lat))
        for r in range(d.k):
            for s in range(d.k):
                for t in range(d.k):
                    if lat[s, t] and lat[r, s]:
                        assert lat[r, t]
                if lat[r, s]:
                    us, ur = d.incidence(s + 1), d.incidence(r + 1)
                    proj = ur @ np.linalg.pinv(ur)
                    assert np.abs(proj @ us - us).max() < 1e-8


class TestManovaCoefficients:
    def test_oneway_exact(self):
        d = build_design("oneway", I=5, J=3)
        assert tuple(manova_coefficients(d, 1)) == (1 / 3, -1 / 3)
        assert tuple(manova_coefficients(d, 2)) == (0.0, 1.0)

    def test_nested_exact(self):
        d = build_design("nested_twoway", I=4, J=3, K=2)
        jk = 3 * 2
        assert tuple(manova_coefficients(d, 1)) == (1 / jk, -1 / jk, 0.0)
        assert tuple(manova_coefficients(d, 2)) == (0.0, 1 / 2, -1 / 2)
        assert tuple(manova_coefficients(d, 3)) == (0.0, 0.0, 1.0)

    @pytest.mark.parametrize("kind,sizes", SMALL_DESIGNS)
    def test_unbiasedness_trace_conditions(self, kind, sizes):
        d = build_design(kind, **sizes)
        for r in range(1, d.k + 1):
            a = manova_coefficients(d, r)
            b = _b_matrix(d, a)
            for s in range(1, d.k + 1):
                u = d.incidence(s)
                expected = 1.0 if s == r else 0.0
                assert abs(np.trace(u.T @ b @ u) - expected) < 1e-12

    @pytest.mark.parametrize("kind,sizes", SMALL_DESIGNS)
    def test_b_operator_norm_bound(self, kind, sizes):
        d = build_design(kind, **sizes)
        rng = np.random.default_rng(0)
        a = rng.standard_normal(d.k)
        b = _b_matrix(d, a)
        bound = max(abs(a[s]) / d.d[s + 1] for s in range(d.k))
        assert np.abs(np.linalg.eigvalsh(b)).max() <= bound + 1e-12

    def test_bad_component(self):
        d = build_design("oneway", I=3, J=2)
        with pytest.raises(ValueError):
            manova_coefficients(d, 0)
        with pytest.raises(ValueError):
            manova_coefficients(d, 3)


class TestMeanSquares:
    def test_zero_data(self):
        d = build_design("oneway", I=3, J=2)
        ms = mean_squares(np.zeros((6, 4)), d)
        assert all(np.all(m == 0) for m in ms.ms)

    def test_constant_rows_lie_in_mean_stratum(self):
        d = build_design("oneway", I=3, J=2)
        y = np.ones((6, 3)) * np.array([2.0, -1.0, 0.5])
        ms = mean_squares(y, d)
        for m in ms.ms:
            assert np.abs(m).max() < 1e-12

    def test_oneway_hand_computed(self):
        # groups (1,1), (2,2), (3,3): between-group mean square is 2, within is 0
        d = build_design("oneway", I=3, J=2)
        y = np.array([1.0, 1.0, 2.0, 2.0, 3.0, 3.0])[:, None]
        ms = mean_squares(y, d)
        assert abs(ms.ms[0][0, 0] - 2.0) < 1e-12
        assert abs(ms.ms[1][0, 0]) < 1e-12

    @pytest.mark.parametrize("kind,sizes", SMALL_DESIGNS)
    def test_quadratic_form_equality(self, kind, sizes):
        d = build_design(kind, **sizes)
        rng = np.random.default_rng(3)
        y = rng.standard_normal((d.n, 5))
        ms = mean_squares(y, d)
        a = rng.standard_normal(d.k)
        combo = sum(a_r * m for a_r, m in zip(a, ms.ms))
        direct = y.T @ _b_matrix(d, a) @ y
        scale = max(np.abs(direct).max(), 1.0)
        assert np.abs(combo - direct).max() < 1e-10 * scale

    def test_row_mismatch(self):
        d = build_design("oneway", I=3, J=2)
        with pytest.raises(ValueError):
            mean_squares(np.zeros((5, 2)), d)

    def test_expected_mean_squares_monte_carlo(self):
        # E[MS_s] = sum_{r >= s} c_r Sigma_r, checked to 4 SE entrywise
        from vcspectra.covmodel import ModelSpec, SpikedCovariance, simulate

        d = build_design("oneway", I=40, J=3)
        p = 4
        v = np.zeros(p)
        v[0] = 1.0
        model = ModelSpec(p=p, components=[
            SpikedCovariance(0.5, [(2.0, v)]),
            SpikedCovariance(1.0, []),
        ])
        sigmas = [c.matrix(p) for c in model.components]
        reps = 200
        samples = {s: [] for s in range(2)}
        for i in range(reps):
            ms = mean_squares(simulate(d, model, 1000 + i), d)
            for s in range(2):
                samples[s].append(ms.ms[s])
        for s in range(2):
            stack = np.array(samples[s])
            mean = stack.mean(axis=0)
            se = stack.std(axis=0, ddof=1) / np.sqrt(reps)
            expected = sum(
                d.c[r] * sigmas[r] for r in range(2) if d.lattice[r, s]
            )
            assert np.all(np.abs(mean - expected) <= 4 * se + 1e-12)


def test_json_round_trip():
    d = build_design("oneway", I=300, J=2)
    text = design_to_json(d)
    assert json.loads(text) == {"kind": "oneway", "I": 300, "J": 2}
    d2 = design_from_json(text)
    assert d2.n == d.n and d2.kind == d.kind

    with pytest.raises(ValueError):
        design_from_json("[1, 2]")
