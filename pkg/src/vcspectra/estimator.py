"""De-aliased spike estimation by sweeping mean-square combinations.

For each direction a on the unit sphere, the combination
Sigma_hat(a) = a_1 MS_1 + ... + a_k MS_k has its own bulk law; outlier
eigenvalues lambda above the support track the surrogate matrix
sum_r t_r(lambda, a) Sigma_r. The sweep locates directions where
t_s(lambda, a) = 0 for every s other than the target component r, at which
point the outlier depends on Sigma_r alone and

    mu_hat = lambda / t_r(lambda, a)

estimates one population spike eigenvalue, with the outlier's sample
eigenvector as the (inconsistent but unaliased) eigenvector estimate.

k = 2 sweeps a circle with bracketed 1-D refinement; k = 3 sweeps a
spherical product grid with damped Newton on tangent charts; larger k is
refused.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .covmodel import estimate_noise_variances, sigma_hat
from .design import DesignSpec, MeanSquares
from .errors import NumericalError
from .mp_law import mp_context, support
from .spike_theory import t_vector

__all__ = [
    "SweepConfig",
    "SpikeEstimate",
    "ObservedLocus",
    "estimate_spikes",
    "observed_locus",
]


@dataclass(frozen=True)
class SweepConfig:
    """Sweep configuration for one target component.

    ``sigma2`` supplies known noise variances; when None they are estimated
    from the MANOVA traces with ``trim`` largest-magnitude eigenvalues
    removed. N is always taken as the trait dimension p on this path.
    """

    r: int
    delta: float = 0.5
    grid: int = 200
    refine_tol: float = 1e-8
    sigma2: np.ndarray | None = None
    trim: int = 1

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.grid < 16:
            raise ValueError("grid must be at least 16")


@dataclass(frozen=True)
class SpikeEstimate:
    """One sweep solution: the de-aliased eigenvalue estimate mu_hat, the
    sample eigenvector at the solving outlier, the solving direction a, the
    outlier location, the transform vector there, and the locus position
    s = m0 * t used for deduplication."""

    mu_hat: float
    v_hat: np.ndarray
    a: np.ndarray
    lambda_hat: float
    t_at_solution: np.ndarray
    s_point: np.ndarray


@dataclass(frozen=True)
class ObservedLocus:
    """Locus points (a, lambda_hat, s) emitted over the sweep grid."""

    points: list = field(default_factory=list)  # (a, lambda_hat, s) triples

    def s_array(self) -> np.ndarray:
        return np.asarray([s for _, _, s in self.points])


class _LostOutlier(Exception):
    """The tracked eigenvalue fell out of the search region mid-refinement."""


def _resolve_sigma2(ms: MeanSquares, design: DesignSpec, cfg: SweepConfig) -> np.ndarray:
    if cfg.sigma2 is not None:
        return np.asarray(cfg.sigma2, dtype=float)
    return estimate_noise_variances(ms, design, trim=cfg.trim)


class _Sweep:
    """Shared machinery: probe one direction, track one outlier rank."""

    def __init__(self, ms: MeanSquares, design: DesignSpec, cfg: SweepConfig,
                 sigma2: np.ndarray):
        self.ms = ms
        self.design = design
        self.cfg = cfg
        self.sigma2 = sigma2
        self.p = ms.p

    def probe(self, a: np.ndarray):
        """Outliers of Sigma_hat(a) above the search threshold with their
        transform vectors; returns (lams desc, list of TFunctions, ctx, sup)."""
        ctx = mp_context(self.design, a, self.sigma2, N=self.p)
        sup = support(ctx)
        threshold = sup.i_delta_lower(self.cfg.delta)
        evals = np.linalg.eigvalsh(sigma_hat(self.ms, a))[::-1]
        n_out = int(np.searchsorted(-evals, -threshold, side="right"))
        lams = evals[:n_out]
        tfs = [t_vector(ctx, lam, sup) for lam in lams]
        return lams, tfs, ctx, sup

    def tracked_t(self, a: np.ndarray, rank: int):
        """Transform vector at the rank-th largest eigenvalue of
        Sigma_hat(a); raises _LostOutlier when it leaves the search region."""
        ctx = mp_context(self.design, a, self.sigma2, N=self.p)
        sup = support(ctx)
        threshold = sup.i_delta_lower(self.cfg.delta)
        evals = np.linalg.eigvalsh(sigma_hat(self.ms, a))
        lam = evals[-1 - rank]
        if lam < threshold:
            raise _LostOutlier
        return lam, t_vector(ctx, lam, sup), ctx

    def solution(self, a: np.ndarray, rank: int) -> SpikeEstimate | None:
        """Certify and package a refined solution direction."""
        cfg = self.cfg
        ctx = mp_context(self.design, a, self.sigma2, N=self.p)
        sup = support(ctx)
        threshold = sup.i_delta_lower(cfg.delta)
        evals, vecs = np.linalg.eigh(sigma_hat(self.ms, a))
        lam = evals[-1 - rank]
        if lam < threshold:
            return None
        tf = t_vector(ctx, lam, sup)
        others = [s for s in range(ctx.k) if s != cfg.r - 1]
        if max(abs(tf.t[s]) for s in others) > cfg.refine_tol:
            return None
        t_r = tf.t[cfg.r - 1]
        if abs(t_r) < 1e-6:
            warnings.warn(
                "discarding sweep solution with t_r ~ 0 (mu_hat undefined)",
                RuntimeWarning,
            )
            return None
        v = vecs[:, -1 - rank]
        return SpikeEstimate(
            mu_hat=float(lam / t_r),
            v_hat=v,
            a=a.copy(),
            lambda_hat=float(lam),
            t_at_solution=tf.t.copy(),
            s_point=tf.m0 * tf.t,
        )


def _dedup(estimates: list[SpikeEstimate], tol: float = 1e-4) -> list[SpikeEstimate]:
    kept: list[SpikeEstimate] = []
    for est in estimates:
        if all(np.linalg.norm(est.s_point - other.s_point) > tol for other in kept):
            kept.append(est)
    kept.sort(key=lambda e: -e.mu_hat)
    return kept


def _circle_angles(grid: int) -> np.ndarray:
    phi = list(np.linspace(0.0, 2 * np.pi, grid, endpoint=False))
    for axis in (0.0, np.pi / 2, np.pi, 3 * np.pi / 2):
        if min(abs(p - axis) for p in phi) > 1e-12:
            phi.append(axis)
    return np.sort(np.asarray(phi))


def _sweep_circle(sweep: _Sweep, cfg: SweepConfig) -> list[SpikeEstimate]:
    s_other = 1 - (cfg.r - 1)  # the single non-target component for k = 2
    angles = _circle_angles(cfg.grid)
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    probes = [sweep.probe(a) for a in dirs]

    def g(phi: float, rank: int) -> float:
        a = np.array([np.cos(phi), np.sin(phi)])
        _, tf, _ = sweep.tracked_t(a, rank)
        return float(tf.t[s_other])

    estimates = []
    n = len(angles)
    for i in range(n):
        j = (i + 1) % n
        lams_i, tfs_i, _, _ = probes[i]
        lams_j, tfs_j, _, _ = probes[j]
        phi_i, phi_j = angles[i], angles[j]
        if j == 0:
            phi_j += 2 * np.pi
        for rank in range(min(len(lams_i), len(lams_j))):
            gi = float(tfs_i[rank].t[s_other])
            gj = float(tfs_j[rank].t[s_other])
            if gi == 0.0:
                root = phi_i
            elif gi * gj < 0.0:
                try:
                    root = brentq(g, phi_i, phi_j, args=(rank,), xtol=1e-13)
                except (_LostOutlier, ValueError, NumericalError):
                    continue
            else:
                continue
            a_sol = np.array([np.cos(root), np.sin(root)])
            try:
                est = sweep.solution(a_sol, rank)
            except NumericalError:
                continue
            if est is not None:
                estimates.append(est)
    return estimates


def _tangent_chart(a: np.ndarray) -> np.ndarray:
    """Two orthonormal tangent vectors at a point of the 2-sphere."""
    pivot = np.zeros(3)
    pivot[int(np.argmin(np.abs(a)))] = 1.0
    u1 = np.cross(a, pivot)
    u1 /= np.linalg.norm(u1)
    u2 = np.cross(a, u1)
    return np.column_stack([u1, u2])


def _sweep_sphere(sweep: _Sweep, cfg: SweepConfig) -> list[SpikeEstimate]:
    others = [s for s in range(3) if s != cfg.r - 1]
    n_az = cfg.grid
    n_pol = max(cfg.grid // 2, 4)
    az = np.linspace(0.0, 2 * np.pi, n_az, endpoint=False)
    pol = (np.arange(n_pol) + 0.5) * np.pi / n_pol

    def direction(i: int, jj: int) -> np.ndarray:
        t, p = az[i % n_az], pol[jj]
        return np.array([np.cos(t) * np.sin(p), np.sin(t) * np.sin(p), np.cos(p)])

    cache: dict[tuple[int, int], tuple] = {}

    def probe(i: int, jj: int):
        key = (i % n_az, jj)
        if key not in cache:
            cache[key] = sweep.probe(direction(i, jj))
        return cache[key]

    def g_vec(a: np.ndarray, rank: int) -> np.ndarray:
        _, tf, _ = sweep.tracked_t(a, rank)
        return tf.t[others]

    estimates = []
    for jj in range(n_pol - 1):
        for i in range(n_az):
            corners = [(i, jj), (i + 1, jj), (i, jj + 1), (i + 1, jj + 1)]
            probes = [probe(*c) for c in corners]
            n_shared = min(len(pr[0]) for pr in probes)
            for rank in range(n_shared):
                gs = np.array([[float(pr[1][rank].t[s]) for s in others]
                               for pr in probes])
                if not np.all(gs.min(axis=0) < 0.0) or not np.all(gs.max(axis=0) > 0.0):
                    continue
                a0 = np.mean([direction(*c) for c in corners], axis=0)
                a0 /= np.linalg.norm(a0)
                est = _newton_on_sphere(sweep, cfg, a0, rank, g_vec)
                if est is not None:
                    estimates.append(est)
    # axis directions are always visited; use them as extra refinement seeds
    for axis in np.vstack([np.eye(3), -np.eye(3)]):
        lams, _, _, _ = sweep.probe(axis)
        for rank in range(len(lams)):
            est = _newton_on_sphere(sweep, cfg, axis, rank, g_vec)
            if est is not None:
                estimates.append(est)
    return estimates


def _newton_on_sphere(sweep: _Sweep, cfg: SweepConfig, a0: np.ndarray,
                      rank: int, g_vec) -> SpikeEstimate | None:
    a = a0.copy()
    try:
        g = g_vec(a, rank)
    except (_LostOutlier, NumericalError):
        return None
    h = 1e-6
    for _ in range(60):
        if np.max(np.abs(g)) <= cfg.refine_tol:
            try:
                return sweep.solution(a, rank)
            except NumericalError:
                return None
        chart = _tangent_chart(a)
        jac = np.zeros((2, 2))
        try:
            for col in range(2):
                a_h = a + h * chart[:, col]
                a_h /= np.linalg.norm(a_h)
                jac[:, col] = (g_vec(a_h, rank) - g) / h
            step = np.linalg.solve(jac, -g)
        except (_LostOutlier, NumericalError, np.linalg.LinAlgError):
            return None
        scale = 1.0
        while scale > 1e-6:
            a_new = a + scale * (chart @ step)
            a_new /= np.linalg.norm(a_new)
            try:
                g_new = g_vec(a_new, rank)
            except (_LostOutlier, NumericalError):
                scale *= 0.5
                continue
            if np.max(np.abs(g_new)) < np.max(np.abs(g)):
                a, g = a_new, g_new
                break
            scale *= 0.5
        else:
            return None
    return None


def estimate_spikes(ms: MeanSquares, design: DesignSpec,
                    cfg: SweepConfig) -> list[SpikeEstimate]:
    """Run the sweep and return deduplicated estimates sorted by mu_hat
    descending. Every returned estimate satisfies its certificate:
    |t_s| <= refine_tol for s != r and lambda_hat inside the search region."""
    k = design.k
    if not 1 <= cfg.r <= k:
        raise ValueError(f"target component r={cfg.r} outside 1..{k}")
    if k > 3:
        raise ValueError(
            f"sweep supports k <= 3 random effects, design has k={k}"
        )
    sigma2 = _resolve_sigma2(ms, design, cfg)
    sweep = _Sweep(ms, design, cfg, sigma2)
    if k == 2:
        estimates = _sweep_circle(sweep, cfg)
    else:
        estimates = _sweep_sphere(sweep, cfg)
    return _dedup(estimates)


def observed_locus(ms: MeanSquares, design: DesignSpec,
                   cfg: SweepConfig) -> ObservedLocus:
    """One locus point s = m0(lambda, a) * t(lambda, a) per grid direction
    and outlier above the search region."""
    k = design.k
    if k > 3:
        raise ValueError(f"sweep supports k <= 3 random effects, design has k={k}")
    sigma2 = _resolve_sigma2(ms, design, cfg)
    sweep = _Sweep(ms, design, cfg, sigma2)
    if k == 2:
        angles = _circle_angles(cfg.grid)
        dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    else:
        from .spike_theory import _directions

        dirs = _directions(k, cfg.grid)
    points = []
    for a in dirs:
        lams, tfs, _, _ = sweep.probe(a)
        for lam, tf in zip(lams, tfs):
            points.append((a.copy(), float(lam), tf.m0 * tf.t))
    return ObservedLocus(points=points)
