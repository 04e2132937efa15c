import numpy as np
import pytest

from vcspectra.covmodel import (
    ModelSpec,
    SpikedCovariance,
    sigma_hat,
    simulate,
    spike_subspace,
)
from vcspectra.design import build_design, manova_coefficients, mean_squares
from vcspectra.errors import InSupportError
from vcspectra.mp_law import (
    GeneralF,
    build_general_f,
    m0_general,
    m0_real,
    mp_context,
    support,
    t_w_general,
)
from vcspectra.spike_theory import (
    clt_variance,
    population_locus,
    predicted_outliers,
    t_vector,
    taylor_biases_oneway,
    w_matrix,
)


def _oneway(I=300, J=2):
    return build_design("oneway", I=I, J=J)


def _fig_outliers_model(p=300):
    e = np.eye(p)
    v = 0.5 * e[0] + np.sqrt(3) / 2 * e[1]
    return ModelSpec(p=p, components=[
        SpikedCovariance(0.0, [(6.0, e[0])]),
        SpikedCovariance(1.0, [(29.0, v)]),
    ])


class TestTVector:
    def test_noiseless_manova_is_unit_vector(self):
        for design, r in [(_oneway(20, 3), 1), (_oneway(20, 3), 2),
                          (build_design("nested_twoway", I=5, J=2, K=3), 2)]:
            a = manova_coefficients(design, r)
            ctx = mp_context(design, a, np.zeros(design.k), N=50)
            tf = t_vector(ctx, 3.0)
            expected = np.zeros(design.k)
            expected[r - 1] = 1.0
            assert np.abs(tf.t - expected).max() < 1e-12

    def test_oneway_explicit_formula(self):
        I, J, N = 300, 2, 299
        design = _oneway(I, J)
        s1, s2 = 0.4, 1.1
        ctx = mp_context(design, manova_coefficients(design, 1),
                         np.array([s1, s2]), N)
        sup = support(ctx)
        lam = sup.upper() + 1.7
        tf = t_vector(ctx, lam, sup)
        m0 = tf.m0
        n = I * J
        t1 = (I - 1) * J / ((I - 1) * J + N * (J * s1 + s2) * m0)
        t2 = ((I - 1) / ((I - 1) * J + N * (J * s1 + s2) * m0)
              - (n - I) / ((n - I) * J - N * s2 * m0))
        assert abs(tf.t[0] - t1) < 1e-12
        assert abs(tf.t[1] - t2) < 1e-12

    def test_limit_at_infinity(self):
        design = _oneway()
        ctx = mp_context(design, manova_coefficients(design, 1),
                         np.array([0.0, 1.0]), N=299)
        tf = t_vector(ctx, 1e8)
        assert abs(tf.t[0] - 1.0) < 1e-6
        assert abs(tf.t[1]) < 1e-6

    def test_derivative_sign(self):
        design = _oneway()
        ctx = mp_context(design, np.array([0.3, 0.9]), np.array([0.5, 1.0]), N=300)
        sup = support(ctx)
        tf = t_vector(ctx, sup.upper() + 0.6, sup)
        assert np.all(tf.dt <= 1e-12)

    def test_in_support_raises(self):
        design = _oneway(600, 2)
        ctx = mp_context(design, np.array([0.0, 1.0]), np.array([0.0, 1.0]), N=300)
        sup = support(ctx)
        with pytest.raises(InSupportError):
            t_vector(ctx, float(sup.intervals[0].mean()), sup)


class TestWMatrix:
    def test_zero_coefficients(self):
        design = _oneway()
        ctx = mp_context(design, np.zeros(2), np.array([0.5, 1.0]), N=300)
        assert np.all(w_matrix(ctx, 5.0) == 0.0)

    def test_oneway_error_direction(self):
        design = _oneway(I=300, J=2)
        N = 300
        ctx = mp_context(design, np.array([0.0, 1.0]), np.array([0.0, 1.0]), N)
        sup = support(ctx)
        lam = sup.upper() + 1.0
        tf = t_vector(ctx, lam, sup)
        w = w_matrix(ctx, lam, sup)
        b2 = tf.t[1]  # c_2 = 1 and b_1 = 0, so t_2 = b_2
        assert w[0, 0] == 0.0
        assert abs(w[1, 1] - (N / design.d[2]) * b2**2) < 1e-12
        assert np.allclose(w, w.T)

    def test_general_f_cross_check_crossed_design(self):
        design = build_design("crossed_twoway", I=2, J=2, K=3, L=2)
        rng = np.random.default_rng(1)
        a = rng.uniform(-1, 1, size=5)
        sigma2 = np.array([0.2, 0.5, 0.8, 0.6, 1.0])
        N = 30
        ctx = mp_context(design, a, sigma2, N)
        f = build_general_f(design, a, sigma2, N)
        lam = support(ctx).upper() + 1.1
        m0 = m0_real(ctx, lam)
        _, w_gen = t_w_general(f, m0)
        assert np.abs(w_matrix(ctx, lam) - w_gen).max() < 1e-8


class TestTFormEquivalence:
    @pytest.mark.parametrize("seed", range(3))
    def test_full_matrix_forms_agree(self, seed):
        # z Id - sum t_r Sigma_r equals -(1/m0) Id - sum t_r V Theta V'
        rng = np.random.default_rng(seed)
        design = _oneway(40, 3)
        p = 30
        q, _ = np.linalg.qr(rng.standard_normal((p, 3)))
        model = ModelSpec(p=p, components=[
            SpikedCovariance(0.4, [(3.0, q[:, 0])]),
            SpikedCovariance(1.0, [(5.0, q[:, 1]), (2.0, q[:, 2])]),
        ])
        sub = spike_subspace(model)
        a = manova_coefficients(design, 1)
        ctx = mp_context(design, a, model.sigma2, N=p - sub.L)
        sup = support(ctx)
        lam = sup.upper() + rng.uniform(0.5, 3.0)
        tf = t_vector(ctx, lam, sup)
        sigmas = [c.matrix(p) for c in model.components]
        lowranks = [c.matrix(p) - c.sigma2 * np.eye(p) for c in model.components]
        form_a = lam * np.eye(p) - sum(t * s for t, s in zip(tf.t, sigmas))
        form_b = -(1.0 / tf.m0) * np.eye(p) - sum(
            t * s for t, s in zip(tf.t, lowranks))
        assert np.abs(form_a - form_b).max() < 1e-9

    def test_slope_bound_on_subspace(self):
        design = _oneway()
        model = _fig_outliers_model()
        sub = spike_subspace(model)
        ctx = mp_context(design, manova_coefficients(design, 1),
                         model.sigma2, N=model.p - sub.L)
        sup = support(ctx)
        for lam in (sup.upper() + 0.4, sup.upper() + 2.0, sup.lower() - 1.0):
            tf = t_vector(ctx, lam, sup)
            # dT restricted to the spike subspace
            dmat = np.eye(sub.L) * (1.0 - np.dot(tf.dt, model.sigma2))
            for r in range(2):
                dmat -= tf.dt[r] * sub.overlap(r)
            assert np.linalg.eigvalsh(dmat).min() >= 1.0 - 1e-9


class TestPredictedOutliers:
    def test_no_spikes_empty(self):
        design = _oneway()
        model = ModelSpec(p=50, components=[
            SpikedCovariance(0.0, []), SpikedCovariance(1.0, []),
        ])
        ctx = mp_context(design, manova_coefficients(design, 1),
                         model.sigma2, N=50)
        assert predicted_outliers(ctx, spike_subspace(model)) == []

    def test_reference_single_spike_location(self):
        design = _oneway(300, 2)
        p = 300
        model = ModelSpec(p=p, components=[
            SpikedCovariance(0.0, [(6.0, np.eye(p)[0])]),
            SpikedCovariance(1.0, []),
        ])
        sub = spike_subspace(model)
        ctx = mp_context(design, np.array([0.5, -0.5]), model.sigma2, N=299)
        preds = predicted_outliers(ctx, sub)
        assert len(preds) == 1
        q = preds[0]
        # hand algebra: m0 t1 = -1/6 at m0 = -2/13, lambda = z0(-2/13)
        assert q.lam == pytest.approx(6.577270381836945, abs=1e-7)
        tf = t_vector(ctx, q.lam)
        assert abs(tf.t[0] * 6.0 + tf.t[1] * 1.0 - q.lam) < 1e-8
        assert q.multiplicity == 1 and q.side == "above"
        assert 0 < q.alignment <= 1.0
        assert q.nu > 0

    def test_error_spike_produces_symmetric_pair(self):
        # a single large error spike gives two outliers near +/- sqrt(c2 theta)
        design = _oneway(300, 2)
        p = 300
        theta = 50.0
        model = ModelSpec(p=p, components=[
            SpikedCovariance(0.0, []),
            SpikedCovariance(1.0, [(theta, np.eye(p)[0])]),
        ])
        sub = spike_subspace(model)
        N = p - 1
        ctx = mp_context(design, np.array([0.5, -0.5]), model.sigma2, N=N)
        preds = predicted_outliers(ctx, sub)
        assert len(preds) == 2
        c2 = taylor_biases_oneway(design, model.sigma2, 0.0, theta, 0.0, N)["c2"]
        guess = np.sqrt(c2 * theta)
        lams = sorted(q.lam for q in preds)
        assert lams[0] == pytest.approx(-guess, rel=0.10)
        assert lams[1] == pytest.approx(guess, rel=0.10)
        assert {q.side for q in preds} == {"above", "below"}

    def test_three_outliers_with_kernel_residual(self):
        design = _oneway()
        model = _fig_outliers_model()
        sub = spike_subspace(model)
        ctx = mp_context(design, np.array([0.5, -0.5]), model.sigma2,
                         N=model.p - sub.L)
        preds = predicted_outliers(ctx, sub)
        assert len(preds) == 3
        sigmas = [c.matrix(model.p) for c in model.components]
        for q in preds:
            tf = t_vector(ctx, q.lam)
            t_full = q.lam * np.eye(model.p) - sum(
                t * s for t, s in zip(tf.t, sigmas))
            lifted = sub.basis @ q.v
            assert np.linalg.norm(t_full @ lifted) < 1e-8
            assert np.isfinite(q.separation)

    def test_multiplicity_two_from_symmetric_spikes(self):
        # two equal spikes in orthogonal directions cross zero together
        design = _oneway(300, 2)
        p = 100
        e = np.eye(p)
        model = ModelSpec(p=p, components=[
            SpikedCovariance(0.0, [(8.0, e[0]), (8.0, e[1])]),
            SpikedCovariance(1.0, []),
        ])
        sub = spike_subspace(model)
        ctx = mp_context(design, np.array([0.5, -0.5]), model.sigma2, N=p - 2)
        preds = predicted_outliers(ctx, sub)
        assert len(preds) == 1
        assert preds[0].multiplicity == 2
        assert preds[0].v is None and preds[0].nu is None


class TestCltVariance:
    def test_degenerate_collapse(self):
        # hypothetical inputs with q = 1 and w identically zero give nu = 0;
        # a = 0 realizes both (all b_s vanish)
        design = _oneway(20, 3)
        ctx = mp_context(design, np.zeros(2), np.array([0.5, 1.0]), N=40)
        tf = t_vector(ctx, 4.0)
        assert np.all(w_matrix(ctx, 4.0) == 0.0)
        nu = clt_variance(ctx, tf, 4.0, vsv=np.array([2.0, 0.0]))
        assert abs(nu) < 1e-14

    def test_scaling_in_n(self):
        # the explicit 1/N factor: doubling N with the other formula inputs
        # held fixed halves nu
        design = _oneway(300, 2)
        lam = 6.5772703818
        base = mp_context(design, np.array([0.5, -0.5]),
                          np.array([0.0, 1.0]), N=299)
        tf = t_vector(base, lam)
        vsv = np.array([6.0, 1.0])
        w = w_matrix(base, lam, m0=tf.m0)
        nu1 = clt_variance(base, tf, lam, vsv, w=w)
        doubled = mp_context(design, np.array([0.5, -0.5]),
                             np.array([0.0, 1.0]), N=598)
        nu2 = clt_variance(doubled, tf, lam, vsv, w=w)
        assert nu2 / nu1 == pytest.approx(0.5, rel=1e-12)
        q = 1.0 - float(tf.dt @ vsv)
        assert nu1 == pytest.approx(
            2.0 / (299 * q * q) * ((q - 1) ** 2 / tf.dm0 + vsv @ w @ vsv),
            rel=1e-12,
        )


class TestTaylorBiases:
    def test_reference_c1(self):
        design = _oneway(300, 2)
        out = taylor_biases_oneway(design, np.array([0.0, 1.0]), 6.0, 0.0, 0.0,
                                   N=299)
        assert out["c1"] == pytest.approx(0.5, abs=1e-15)
        assert out["biased_location"] == pytest.approx(6.5, abs=1e-12)

    def test_first_order_matches_exact_root(self):
        design = _oneway(300, 2)
        out = taylor_biases_oneway(design, np.array([0.0, 1.0]), 6.0, 0.0, 0.0,
                                   N=299)
        assert abs(out["biased_location"] - 6.577270381836945) < 0.08

    def test_rho_zero_kills_cross_term(self):
        design = _oneway(300, 2)
        with_spike = taylor_biases_oneway(
            design, np.array([0.0, 1.0]), 6.0, 29.0, 0.0, N=297)
        without = taylor_biases_oneway(
            design, np.array([0.0, 1.0]), 6.0, 0.0, 0.0, N=297)
        assert with_spike["biased_location"] == without["biased_location"]

    def test_cross_term_added(self):
        design = _oneway(300, 2)
        rho = 0.5
        out = taylor_biases_oneway(
            design, np.array([0.0, 1.0]), 6.0, 29.0, rho, N=297)
        base = taylor_biases_oneway(
            design, np.array([0.0, 1.0]), 6.0, 0.0, 0.0, N=297)
        bump = (29.0 / 6.0) * rho**2 * out["c2"]
        assert out["biased_location"] == pytest.approx(
            base["biased_location"] + bump, rel=1e-12)

    def test_invalid_inputs(self):
        design = _oneway(300, 2)
        with pytest.raises(ValueError):
            taylor_biases_oneway(design, np.array([0.0, 1.0]), 0.0, 29.0, 0.5,
                                 N=299)
        nested = build_design("nested_twoway", I=3, J=2, K=2)
        with pytest.raises(ValueError):
            taylor_biases_oneway(nested, np.zeros(3), 1.0, 0.0, 0.0, N=10)


class TestPopulationLocus:
    def test_single_spike_axis_point(self):
        p = 20
        model = ModelSpec(p=p, components=[
            SpikedCovariance(0.0, [(4.0, np.eye(p)[0])]),
            SpikedCovariance(1.0, []),
        ])
        pts = population_locus(spike_subspace(model), grid=90)
        axis = np.array([-0.25, 0.0])
        assert min(np.linalg.norm(pts - axis, axis=1)) < 1e-9
        # every point satisfies the determinant condition on the first axis
        on_axis1 = pts[np.abs(pts[:, 1]) < 1e-12]
        assert np.allclose(on_axis1[:, 0], -0.25, atol=1e-9)

    def test_reference_intercepts(self):
        model = _fig_outliers_model()
        sub = spike_subspace(model)
        pts = population_locus(sub, grid=720)
        for intercept in (np.array([-1 / 6, 0.0]), np.array([0.0, -1 / 29])):
            assert min(np.linalg.norm(pts - intercept, axis=1)) < 1e-9

    def test_orthogonal_spikes_factorize(self):
        p = 10
        e = np.eye(p)
        model = ModelSpec(p=p, components=[
            SpikedCovariance(0.0, [(2.0, e[0])]),
            SpikedCovariance(1.0, [(5.0, e[1])]),
        ])
        sub = spike_subspace(model)
        pts = population_locus(sub, grid=360)
        # the locus is the union of the lines s_1 = -1/2 and s_2 = -1/5
        dist = np.minimum(np.abs(pts[:, 0] + 0.5), np.abs(pts[:, 1] + 0.2))
        assert dist.max() < 1e-9

    def test_determinant_invariant(self):
        model = _fig_outliers_model(p=40)
        sub = spike_subspace(model)
        pts = population_locus(sub, grid=180)
        for s in pts[::7]:
            mat = np.eye(sub.L)
            for r in range(2):
                mat += s[r] * sub.overlap(r)
            assert abs(np.linalg.det(mat)) < 1e-8


class TestGeneralPathIdentities:
    def test_t_transform_relation(self):
        # k = 1, identity incidence, unit noise: m0 t1 = z m0 + 1
        n, N = 200, 200
        rng = np.random.default_rng(3)
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        eigs = rng.uniform(-1.0, 2.0, size=n) / n
        b = (q * eigs) @ q.T
        f = GeneralF(phi=b, sigma=np.array([1.0]), m=np.array([n]), N=N,
                     eigenvalues=np.linalg.eigvalsh(N * b))
        for z in (3.0 + 0.5j, -2.0 + 0.2j, 1.0 + 2.0j, 4.0 + 1e-3j):
            m0 = m0_general(f, z)
            t, _ = t_w_general(f, m0)
            assert abs(m0 * t[0] - (z * m0 + 1.0)) < 1e-8

    def test_subordination_identity(self):
        # free-addition setting: m0(z) = m0_check(omega_1(z)) on a grid
        N = 200
        m1 = m2 = 100
        a1, a2 = 1.0, 0.7
        eigs = np.concatenate([np.full(m1, a1), np.full(m2, a2)])
        part = np.full(m1, a1)
        for E in np.linspace(-4.0, 6.0, 9):
            z = E + 0.8j
            m0 = m0_general(eigs, z, N=N)
            omega1 = z - (m2 / N) * a2 / (1 + a2 * m0)
            m_check = m0_general(part, omega1, N=N)
            assert abs(m0 - m_check) < 1e-8


class TestEigenvectorProjections:
    def test_fig_outliers_monte_carlo(self):
        # sample outlier eigenvectors project onto the spike plane close to
        # the predicted alignment, and the orthogonal part has no mean drift
        design = _oneway()
        model = _fig_outliers_model()
        sub = spike_subspace(model)
        a = np.array([0.5, -0.5])
        ctx = mp_context(design, a, model.sigma2, N=model.p - sub.L)
        sup = support(ctx)
        preds = predicted_outliers(ctx, sub, sup=sup)
        assert len(preds) == 3
        reps = 200
        proj_acc = {i: [] for i in range(3)}
        perp_acc = []
        for rep in range(reps):
            y = simulate(design, model, 31000 + rep)
            est = sigma_hat(mean_squares(y, design), a)
            evals, evecs = np.linalg.eigh(est)
            for i, q in enumerate(preds):
                j = int(np.argmin(np.abs(evals - q.lam)))
                if sup.contains(evals[j], margin=0.3):
                    continue
                vhat = evecs[:, j]
                coords = sub.basis.T @ vhat
                target = q.alignment * q.v
                if coords @ target < 0:
                    coords = -coords
                    vhat = -vhat
                proj_acc[i].append(coords)
                perp = vhat - sub.basis @ (sub.basis.T @ vhat)
                perp_acc.append(perp / np.linalg.norm(perp))
        for i, q in enumerate(preds):
            assert len(proj_acc[i]) > reps * 0.9
            mean_coords = np.mean(proj_acc[i], axis=0)
            assert np.linalg.norm(mean_coords - q.alignment * q.v) < 0.05
        mean_perp = np.mean(perp_acc, axis=0)
        assert np.linalg.norm(mean_perp) < 0.2
