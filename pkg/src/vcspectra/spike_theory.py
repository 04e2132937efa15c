"""Deterministic outlier theory: the block transforms t_r and w_rs, the
spike-subspace restriction of T(z), predicted outlier locations with
eigenvector alignments and CLT variances, large-spike Taylor biases for the
one-way design, and the population locus in s-space.

Outliers of a mean-square combination track the eigenvalues of the
surrogate matrix t_1(lambda) Sigma_1 + ... + t_k(lambda) Sigma_k rather
than any single component; predictions are the roots of

    det T(lambda) = 0,  T(lambda) = -(1/m0) Id - sum_r t_r V_r Theta_r V_r'

restricted to the combined spike subspace, found per eigenvalue curve by
bisection (each curve is strictly increasing in lambda with slope >= 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covmodel import SpikeSubspace
from .design import DesignSpec
from .mp_law import MPContext, SupportInfo, m0_real, support, z0_prime

__all__ = [
    "TFunctions",
    "OutlierPrediction",
    "t_vector",
    "w_matrix",
    "predicted_outliers",
    "clt_variance",
    "taylor_biases_oneway",
    "population_locus",
]

_BISECT_ITERS = 60


@dataclass(frozen=True)
class TFunctions:
    """t_r(lambda), their lambda-derivatives, and m0 with its derivative."""

    t: np.ndarray
    dt: np.ndarray
    m0: float
    dm0: float


def _b_values(ctx: MPContext, m0: float) -> np.ndarray:
    return ctx.a / (1.0 + ctx.g * m0)


def t_vector(ctx: MPContext, lam: float, sup: SupportInfo | None = None,
             m0: float | None = None) -> TFunctions:
    """Balanced-path block transforms t_r = c_r sum_{s <= r} b_s(m0(lambda))
    with derivatives through dm0 = 1 / z0'(m0)."""
    if m0 is None:
        m0 = m0_real(ctx, lam, sup)
    b = _b_values(ctx, m0)
    db_dm = -(ctx.N / ctx.d) * ctx.C * b**2
    dm0 = 1.0 / z0_prime(ctx, m0)
    t = ctx.c * (ctx.lattice @ b)
    dt = ctx.c * (ctx.lattice @ db_dm) * dm0
    return TFunctions(t=t, dt=dt, m0=m0, dm0=dm0)


def w_matrix(ctx: MPContext, lam: float, sup: SupportInfo | None = None,
             m0: float | None = None) -> np.ndarray:
    """Quadratic transforms w_rs = c_r c_s sum_{t <= r, t <= s} (N/d_t) b_t^2."""
    if m0 is None:
        m0 = m0_real(ctx, lam, sup)
    b = _b_values(ctx, m0)
    weight = (ctx.N / ctx.d) * b**2
    lat = ctx.lattice.astype(float)
    w = lat @ np.diag(weight) @ lat.T
    return np.outer(ctx.c, ctx.c) * w


@dataclass(frozen=True)
class OutlierPrediction:
    """One predicted outlier of the mean-square combination.

    ``v`` is the kernel direction of T(lam) in spike-subspace coordinates
    (multiplicity one only); ``alignment`` the predicted inner product
    between the sample eigenvector and this direction; ``nu`` the variance
    of the Gaussian fluctuation of the sample outlier (multiplicity one);
    ``side`` is 'above', 'below', or 'between' relative to the support.
    ``separation`` is the distance to the nearest other prediction.
    """

    lam: float
    multiplicity: int
    v: np.ndarray | None
    alignment: float | None
    nu: float | None
    side: str
    separation: float = np.inf
    nu_degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "multiplicity": self.multiplicity,
            "v_subspace": None if self.v is None else [float(x) for x in self.v],
            "alignment": self.alignment,
            "nu": self.nu,
            "side": self.side,
            "separation": None if not np.isfinite(self.separation) else self.separation,
        }


def _t_restricted(ctx: MPContext, lam: float, overlaps, sup) -> tuple[np.ndarray, TFunctions]:
    tf = t_vector(ctx, lam, sup)
    L = overlaps[0].shape[0]
    mat = -(1.0 / tf.m0) * np.eye(L)
    for t_r, a_r in zip(tf.t, overlaps):
        mat -= t_r * a_r
    return mat, tf


def clt_variance(ctx: MPContext, tf: TFunctions, lam: float, vsv: np.ndarray,
                 w: np.ndarray | None = None) -> float:
    """Fluctuation variance of a simple outlier:

        nu = 2 / (N q^2) * ( (q - 1)^2 / dm0 + sum_rs w_rs vsv_r vsv_s )

    with q = v' dT v = 1 - sum_r dt_r vsv_r and vsv_r = v' Sigma_r v.
    """
    if w is None:
        w = w_matrix(ctx, lam, m0=tf.m0)
    q = 1.0 - float(np.dot(tf.dt, vsv))
    quad = float(vsv @ w @ vsv)
    return 2.0 / (ctx.N * q * q) * ((q - 1.0) ** 2 / tf.dm0 + quad)


def predicted_outliers(ctx: MPContext, subspace: SpikeSubspace,
                       delta_inner: float = 1e-3,
                       sup: SupportInfo | None = None) -> list[OutlierPrediction]:
    """All roots of det T(lambda) = 0 outside the delta_inner-shrunk support,
    with multiplicities, kernel directions, alignments, and CLT variances."""
    if subspace.L == 0:
        return []
    if sup is None:
        sup = support(ctx)
    k = ctx.k
    overlaps = [subspace.overlap(r) for r in range(k)]
    L = subspace.L

    def curves(lam: float) -> np.ndarray:
        mat, _ = _t_restricted(ctx, lam, overlaps, sup)
        return np.linalg.eigvalsh(mat)

    # coarse norm bound on the surrogate pins down where every curve has
    # turned positive (above) or negative (below)
    t_inf = ctx.c * (ctx.lattice @ ctx.a)
    norms = np.array([
        ctx.sigma2[r] + (subspace.thetas[r].max() if subspace.thetas[r].size else 0.0)
        for r in range(k)
    ])
    lam_bound = 2.0 * (float(np.abs(t_inf) @ norms) + 1.0)

    roots: list[float] = []
    for lo, hi in sup.gaps():
        if np.isinf(lo) and np.isinf(hi):
            continue
        if np.isinf(hi):
            a = lo + delta_inner
            b = max(a + 1.0, lam_bound)
            fa = curves(a)
            for _ in range(60):
                fb = curves(b)
                if np.all(fb > 0):
                    break
                b = 2.0 * b if b > 0 else 1.0
            else:
                continue
        elif np.isinf(lo):
            b = hi - delta_inner
            a = min(b - 1.0, -lam_bound)
            fb = curves(b)
            for _ in range(60):
                fa = curves(a)
                if np.all(fa < 0):
                    break
                a = 2.0 * a if a < 0 else -1.0
            else:
                continue
        else:
            a = lo + delta_inner
            b = hi - delta_inner
            if b <= a:
                continue
            fa, fb = curves(a), curves(b)
        for ell in range(L):
            if fa[ell] < 0.0 < fb[ell]:
                x_lo, x_hi = a, b
                for _ in range(_BISECT_ITERS):
                    mid = 0.5 * (x_lo + x_hi)
                    if curves(mid)[ell] < 0.0:
                        x_lo = mid
                    else:
                        x_hi = mid
                roots.append(0.5 * (x_lo + x_hi))

    if not roots:
        return []
    roots.sort()
    clusters: list[list[float]] = [[roots[0]]]
    for lam in roots[1:]:
        if lam - clusters[-1][-1] <= 1e-9 * max(1.0, abs(lam)):
            clusters[-1].append(lam)
        else:
            clusters.append([lam])

    preds = []
    for group in clusters:
        lam = float(np.mean(group))
        mult = len(group)
        mat, tf = _t_restricted(ctx, lam, overlaps, sup)
        if lam > sup.upper():
            side = "above"
        elif lam < sup.lower():
            side = "below"
        else:
            side = "between"
        v = alignment = nu = None
        degenerate = False
        if mult == 1:
            vals, vecs = np.linalg.eigh(mat)
            v = vecs[:, int(np.argmin(np.abs(vals)))]
            vsv = np.array([
                ctx.sigma2[r] + float(v @ overlaps[r] @ v) for r in range(k)
            ])
            q = 1.0 - float(np.dot(tf.dt, vsv))
            alignment = q ** -0.5
            nu = clt_variance(ctx, tf, lam, vsv)
            degenerate = nu < 1e-14
        preds.append(OutlierPrediction(
            lam=lam, multiplicity=mult, v=v, alignment=alignment, nu=nu,
            side=side, nu_degenerate=degenerate,
        ))

    if len(preds) > 1:
        lams = np.array([p.lam for p in preds])
        for i, p in enumerate(preds):
            others = np.delete(lams, i)
            preds[i] = OutlierPrediction(
                lam=p.lam, multiplicity=p.multiplicity, v=p.v,
                alignment=p.alignment, nu=p.nu, side=p.side,
                separation=float(np.min(np.abs(others - p.lam))),
                nu_degenerate=p.nu_degenerate,
            )
    return preds


def taylor_biases_oneway(design: DesignSpec, sigma2, theta1: float,
                         theta2: float, rho: float, N: int) -> dict:
    """Large-spike first-order biases for the one-way design.

    c1 is the upward bias of an outlier from a component-1 spike; c2 scales
    the pair of outliers near +/- sqrt(c2 theta) produced by a component-2
    spike; the cross term (theta2/theta1) rho^2 c2 adds the aliasing
    inflation when both spikes are present with eigenvector overlap rho.
    """
    if design.kind != "oneway":
        raise ValueError("Taylor biases are specific to the one-way design")
    if theta1 == 0.0 and rho != 0.0:
        raise ValueError("rho must be 0 when there is no component-1 spike")
    I, J = design.sizes["I"], design.sizes["J"]
    n = design.n
    s1, s2 = float(sigma2[0]), float(sigma2[1])
    c1 = N * (J * s1 + s2) / ((I - 1) * J)
    c2 = N * (s1 + (n - 1) * s2 / (n * (J - 1))) / ((I - 1) * J)
    location = theta1 + s1 + c1
    if theta2 > 0.0 and theta1 > 0.0:
        location += (theta2 / theta1) * rho**2 * c2
    return {"c1": c1, "c2": c2, "biased_location": location}


def _directions(k: int, grid: int) -> np.ndarray:
    if k == 2:
        phi = np.linspace(0.0, 2 * np.pi, grid, endpoint=False)
        return np.column_stack([np.cos(phi), np.sin(phi)])
    if k == 3:
        az = np.linspace(0.0, 2 * np.pi, grid, endpoint=False)
        pol = (np.arange(max(grid // 2, 2)) + 0.5) * np.pi / max(grid // 2, 2)
        dirs = [np.array([np.cos(t) * np.sin(p), np.sin(t) * np.sin(p), np.cos(p)])
                for p in pol for t in az]
        dirs += list(np.eye(3)) + list(-np.eye(3))
        return np.asarray(dirs)
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((grid, k))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def population_locus(subspace: SpikeSubspace, grid: int = 360) -> np.ndarray:
    """Points of the determinantal locus {s: det(Id + sum_r s_r A_r) = 0}
    where A_r is component r's low-rank part in subspace coordinates.

    Sweeps ray directions u; along each ray, det(Id + rho sum u_r A_r) = 0
    exactly at rho = -1/e for each negative eigenvalue e of sum u_r A_r.
    Axis intercepts (0, ..., -1/theta, ..., 0) are always included.
    """
    if subspace.L == 0:
        raise ValueError("population locus needs at least one spike")
    k = len(subspace.coords)
    overlaps = [subspace.overlap(r) for r in range(k)]
    points = []
    for u in _directions(k, grid):
        mat = sum(u_r * a_r for u_r, a_r in zip(u, overlaps))
        eigs = np.linalg.eigvalsh(mat)
        for e in eigs[eigs < -1e-12]:
            points.append((-1.0 / e) * u)
    for r in range(k):
        for theta in subspace.thetas[r]:
            axis = np.zeros(k)
            axis[r] = -1.0 / theta
            points.append(axis)
    return np.asarray(points)
