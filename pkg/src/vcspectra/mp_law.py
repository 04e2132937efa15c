"""Bulk spectral law of a mean-square combination: the self-consistent
(Marcenko-Pastur type) equation, its Stieltjes transform m0, support
intervals, and the search region above the support.

Two solver paths are provided and cross-checked in tests:

- the balanced-design path, where the equation collapses to the scalar
  rational form z0(m) = -1/m + sum_s C_s b_s(m) with
  b_s(m) = a_s / (1 + (N/d_s) a_s C_s m) and C_s = sum_{r >= s} c_r sigma_r^2,
  so m0(lambda) is a root of a degree-(k+1) polynomial;
- a general path that solves z = -1/m + (1/N) Tr(F [Id + m F]^{-1}) over the
  spectrum of the dense block matrix F by damped Newton iteration.

Support edges are the stationary values z0(m*) with z0'(m*) = 0; gap
segments between candidate edges are classified in/out of the support by
checking whether a real preimage with z0' > 0 exists (out) or the root pair
is genuinely complex (in).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from .design import DesignSpec
from .errors import InSupportError, NumericalError, PoleError

__all__ = [
    "MPContext",
    "SupportInfo",
    "GeneralF",
    "mp_context",
    "z0_eval",
    "z0_prime",
    "m0_real",
    "m0_complex",
    "support",
    "build_general_f",
    "m0_general",
    "t_w_general",
]

_POLE_TOL = 1e-12


@dataclass(frozen=True)
class MPContext:
    """Everything needed to evaluate the balanced-path bulk law for one
    coefficient vector a: effective dimension N, stratum dimensions d_s,
    group sizes c_r, the inclusion lattice, noise variances, the noise
    aggregates C_s, and a itself."""

    N: int
    k: int
    d: np.ndarray
    c: np.ndarray
    lattice: np.ndarray
    sigma2: np.ndarray
    C: np.ndarray
    a: np.ndarray

    @property
    def g(self) -> np.ndarray:
        """Denominator slopes (N/d_s) a_s C_s of the rational terms."""
        return (self.N / self.d) * self.a * self.C

    @property
    def active(self) -> np.ndarray:
        return (self.a * self.C) != 0.0


def mp_context(design: DesignSpec, a, sigma2, N: int) -> MPContext:
    """Build an MPContext from a design, mean-square weights, and noise levels.

    N should be p - L when the spike count is known (theory path) and the
    raw trait dimension p when estimating from data.
    """
    a = np.asarray(a, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    k = design.k
    if a.shape != (k,) or sigma2.shape != (k,):
        raise ValueError(f"a and sigma2 must have length k={k}")
    if np.any(sigma2 < 0):
        raise ValueError("sigma2 entries must be nonnegative")
    if N < 1:
        raise ValueError("N must be positive")
    # C_s = sum over r with s preceding r of c_r sigma_r^2
    C = np.array([
        float(np.sum(design.c[design.lattice[:, s]] * sigma2[design.lattice[:, s]]))
        for s in range(k)
    ])
    return MPContext(N=int(N), k=k, d=design.d[1:].astype(float),
                     c=design.c.copy(), lattice=design.lattice.copy(),
                     sigma2=sigma2, C=C, a=a)


def z0_eval(ctx: MPContext, m):
    """The inverse map z0(m) = -1/m + sum_s C_s a_s / (1 + g_s m)."""
    if m == 0:
        raise PoleError("z0 has a pole at m = 0", pole=0.0)
    g = ctx.g
    denom = 1.0 + g * m
    num = ctx.C * ctx.a
    bad = (np.abs(denom) < _POLE_TOL) & (num != 0)
    if np.any(bad):
        s = int(np.nonzero(bad)[0][0])
        raise PoleError(f"z0 has a pole at m = {-1.0 / g[s]}", pole=-1.0 / g[s])
    return -1.0 / m + np.sum(num / denom)


def z0_prime(ctx: MPContext, m):
    """Derivative z0'(m) = 1/m^2 - sum_s C_s a_s g_s / (1 + g_s m)^2."""
    g = ctx.g
    return 1.0 / m**2 - np.sum(ctx.C * ctx.a * g / (1.0 + g * m) ** 2)


def _poly_prod(factors) -> np.ndarray:
    out = np.array([1.0])
    for f in factors:
        out = npoly.polymul(out, f)
    return out


def _m0_polynomial(ctx: MPContext, z) -> np.ndarray:
    """Coefficients (ascending) of the cleared-denominator equation
    z m G(m) + G(m) - m sum_s C_s a_s G_{!=s}(m) = 0, over active terms."""
    act = np.nonzero(ctx.active)[0]
    g = ctx.g
    factors = [np.array([1.0, g[s]]) for s in act]
    G = _poly_prod(factors)
    poly = npoly.polyadd(npoly.polymul(np.array([0.0, 1.0]) * z, G), G)
    for i, s in enumerate(act):
        G_not_s = _poly_prod(factors[:i] + factors[i + 1:])
        term = npoly.polymul(np.array([0.0, ctx.C[s] * ctx.a[s]]), G_not_s)
        poly = npoly.polysub(poly, term)
    return poly


def _candidate_roots(ctx: MPContext, z) -> np.ndarray:
    coeffs = _m0_polynomial(ctx, z)
    last = np.nonzero(np.abs(coeffs) > 0)[0]
    if last.size == 0:
        raise NumericalError(f"degenerate m0 polynomial at z={z}")
    return npoly.polyroots(coeffs[: last[-1] + 1])


def _rational_residual(ctx: MPContext, m, z) -> float:
    try:
        return abs(z0_eval(ctx, m) - z)
    except PoleError:
        return np.inf


def m0_real(ctx: MPContext, lam: float, sup: "SupportInfo | None" = None) -> float:
    """Stieltjes transform m0(lambda) for real lambda outside the support.

    Returns the unique real root of the cleared polynomial with
    z0'(m) > 0, Newton-polished on the rational equation.
    """
    if sup is not None and sup.contains(lam, margin=1e-8):
        raise InSupportError(f"lambda={lam} lies inside the bulk support")
    if not np.any(ctx.active):
        return -1.0 / lam  # noiseless: the bulk law is a point mass at zero
    roots = _candidate_roots(ctx, lam)
    tol = 1e-8 * (1.0 + abs(lam))
    best = None
    for z in roots:
        if abs(z.imag) > 1e-8 * (1.0 + abs(z)):
            continue
        m = float(z.real)
        if m == 0.0 or _rational_residual(ctx, m, lam) > tol:
            continue
        if z0_prime(ctx, m) <= 0.0:
            continue
        # Newton polish on the rational equation
        for _ in range(6):
            r = z0_eval(ctx, m) - lam
            dp = z0_prime(ctx, m)
            if dp == 0.0:
                break
            m -= r / dp
        if _rational_residual(ctx, m, lam) < 1e-10 * (1.0 + abs(lam)):
            if best is not None and abs(best - m) > 1e-8 * (1.0 + abs(m)):
                raise NumericalError(
                    f"multiple admissible m0 roots at lambda={lam}: {best}, {m}"
                )
            best = m
    if best is None:
        if _has_density(ctx, lam):
            raise InSupportError(f"lambda={lam} lies inside the bulk support")
        raise NumericalError(f"no admissible m0 root found at lambda={lam}")
    return best


def m0_complex(ctx: MPContext, z: complex) -> complex:
    """Balanced-path m0 at complex z, on the branch with Im m * Im z > 0."""
    if z.imag == 0:
        raise ValueError("m0_complex needs a spectral argument off the real axis")
    if not np.any(ctx.active):
        return -1.0 / z
    roots = _candidate_roots(ctx, z)
    best, best_res = None, np.inf
    for m in roots:
        if m == 0 or m.imag * z.imag <= 0:
            continue
        res = _rational_residual(ctx, m, z)
        if res < best_res:
            best, best_res = m, res
    if best is None or best_res > 1e-6 * (1.0 + abs(z)):
        raise NumericalError(f"no Herglotz m0 root found at z={z}")
    return complex(best)


def _has_density(ctx: MPContext, x: float) -> bool:
    """True when the cleared equation at x has a genuinely complex root pair
    (equivalently, the bulk density is positive at x)."""
    roots = _candidate_roots(ctx, x)
    for m in roots:
        if abs(m.imag) > 1e-9 * (1.0 + abs(m)) and \
                _rational_residual(ctx, complex(m), x) < 1e-6 * (1.0 + abs(x)):
            return True
    return False


def _out_of_support(ctx: MPContext, x: float) -> bool:
    roots = _candidate_roots(ctx, x)
    tol = 1e-7 * (1.0 + abs(x))
    for z in roots:
        if abs(z.imag) > 1e-8 * (1.0 + abs(z)):
            continue
        m = float(z.real)
        if m != 0.0 and _rational_residual(ctx, m, x) < tol and z0_prime(ctx, m) > 0:
            return True
    return False


@dataclass(frozen=True)
class SupportInfo:
    """Closed support intervals of the bulk law, ascending and disjoint.

    ``has_zero_atom`` marks a point mass at 0 (rank of F below N);
    ``degenerate`` marks the fully noiseless case where the law is exactly
    a point mass at 0 and there are no intervals.
    """

    intervals: np.ndarray
    has_zero_atom: bool
    degenerate: bool = False
    candidates: np.ndarray = field(default_factory=lambda: np.empty(0))

    def upper(self) -> float:
        vals = [iv[1] for iv in self.intervals]
        if self.has_zero_atom or self.degenerate:
            vals.append(0.0)
        return max(vals)

    def lower(self) -> float:
        vals = [iv[0] for iv in self.intervals]
        if self.has_zero_atom or self.degenerate:
            vals.append(0.0)
        return min(vals)

    def i_delta_lower(self, delta: float) -> float:
        """Lower endpoint of the search region above the support."""
        return self.upper() + delta

    def contains(self, x: float, margin: float = 0.0) -> bool:
        for lo, hi in self.intervals:
            if lo - margin <= x <= hi + margin:
                return True
        if (self.has_zero_atom or self.degenerate) and abs(x) <= margin:
            return True
        return False

    def gaps(self) -> list:
        """Open intervals of the complement, including the unbounded ends,
        split at a zero atom when one lies inside a gap."""
        points = []  # closed blocks of support
        for lo, hi in self.intervals:
            points.append((float(lo), float(hi)))
        if (self.has_zero_atom or self.degenerate) and not self.contains(0.0):
            points.append((0.0, 0.0))
        points.sort()
        out = []
        prev = -np.inf
        for lo, hi in points:
            if lo > prev:
                out.append((prev, lo))
            prev = max(prev, hi)
        out.append((prev, np.inf))
        return out


def support(ctx: MPContext) -> SupportInfo:
    """Support intervals of the bulk law via stationary points of z0."""
    act = np.nonzero(ctx.active)[0]
    if act.size == 0:
        return SupportInfo(intervals=np.empty((0, 2)), has_zero_atom=True,
                           degenerate=True)
    g = ctx.g
    factors = [np.array([1.0, g[s]]) for s in act]
    sq = [npoly.polymul(f, f) for f in factors]
    Q = _poly_prod(sq)
    m_sq = np.array([0.0, 0.0, 1.0])
    for i, s in enumerate(act):
        rest = _poly_prod(sq[:i] + sq[i + 1:])
        term = npoly.polymul(ctx.C[s] * ctx.a[s] * g[s] * m_sq, rest)
        Q = npoly.polysub(Q, term)
    last = np.nonzero(np.abs(Q) > 0)[0]
    if last.size == 0:
        raise NumericalError("stationarity polynomial vanished identically")
    roots = npoly.polyroots(Q[: last[-1] + 1])

    edges = []
    for z in roots:
        if abs(z.imag) > 1e-8 * (1.0 + abs(z)):
            continue
        m = float(z.real)
        if m == 0.0:
            continue
        try:
            dz = z0_prime(ctx, m)
        except ZeroDivisionError:
            continue
        scale = abs(1.0 / m**2) + abs(np.sum(ctx.C * ctx.a * g))
        if abs(dz) > 1e-6 * max(scale, 1.0):
            continue  # spurious root sitting on a pole
        # one Newton step on z0' sharpens the edge location
        edges.append(z0_eval(ctx, m))
    if not edges:
        raise NumericalError("no support edges found", candidates=np.asarray(roots))
    edges = np.sort(np.asarray(edges, dtype=float))
    # merge coincident stationary values
    merged = [edges[0]]
    for e in edges[1:]:
        if e - merged[-1] > 1e-9 * (1.0 + abs(e)):
            merged.append(e)
    edges = np.asarray(merged)

    n_nonzero_f = int(np.sum(ctx.d[act]))
    has_zero_atom = n_nonzero_f < ctx.N
    if n_nonzero_f >= ctx.N and edges.size % 2 == 1:
        # square-aspect hard edge at zero that stationarity cannot produce
        edges = np.sort(np.append(edges, 0.0))

    # classify the gap segments between consecutive candidate edges
    intervals = []
    run_start = None
    for i in range(edges.size - 1):
        mid = 0.5 * (edges[i] + edges[i + 1])
        is_out = _out_of_support(ctx, mid)
        is_in = _has_density(ctx, mid)
        if is_out == is_in:
            raise NumericalError(
                f"ambiguous support segment around x={mid}", candidates=edges
            )
        if is_in:
            if run_start is None:
                run_start = edges[i]
        elif run_start is not None:
            intervals.append((run_start, edges[i]))
            run_start = None
    if run_start is not None:
        intervals.append((run_start, edges[-1]))
    if not intervals:
        raise NumericalError("support classification found no bulk interval",
                             candidates=edges)
    return SupportInfo(intervals=np.asarray(intervals),
                       has_zero_atom=has_zero_atom, candidates=edges)


@dataclass(frozen=True)
class GeneralF:
    """Dense block matrix F with F_rs = N sigma_r sigma_s U_r' B U_s.

    ``phi`` stores the sigma-free blocks U_r' B U_s so the transforms stay
    well-defined when some sigma_r = 0.
    """

    phi: np.ndarray
    sigma: np.ndarray
    m: np.ndarray
    N: int
    eigenvalues: np.ndarray = field(repr=False)

    @property
    def matrix(self) -> np.ndarray:
        d = np.repeat(self.sigma, self.m)
        return self.N * (d[:, None] * self.phi * d[None, :])

    def block(self, mat: np.ndarray, r: int, s: int) -> np.ndarray:
        off = np.concatenate([[0], np.cumsum(self.m)])
        return mat[off[r]:off[r + 1], off[s]:off[s + 1]]


def build_general_f(design: DesignSpec, a, sigma2, N: int) -> GeneralF:
    """Assemble F for the mean-square combination B = sum_s a_s pi_s / d_s."""
    a = np.asarray(a, dtype=float)
    sigma = np.sqrt(np.asarray(sigma2, dtype=float))
    b = np.zeros((design.n, design.n))
    for s in range(1, design.k + 1):
        if a[s - 1] != 0.0:
            v = design.basis[s]
            b += (a[s - 1] / design.d[s]) * (v @ v.T)
    us = [design.incidence(r) for r in range(1, design.k + 1)]
    rows = [np.hstack([us[r].T @ b @ us[s] for s in range(design.k)])
            for r in range(design.k)]
    phi = np.vstack(rows)
    d = np.repeat(sigma, design.m)
    f = N * (d[:, None] * phi * d[None, :])
    eigs = np.linalg.eigvalsh(0.5 * (f + f.T))
    return GeneralF(phi=phi, sigma=sigma, m=design.m.copy(), N=int(N),
                    eigenvalues=eigs)


def m0_general(f: GeneralF | np.ndarray, z: complex, N: int | None = None) -> complex:
    """Solve z = -1/m + (1/N) sum_i t_i / (1 + t_i m) over the spectrum of F
    by damped Newton from m = -1/z, staying on the branch Im m * Im z > 0."""
    if isinstance(f, GeneralF):
        eigs, N = f.eigenvalues, f.N
    else:
        eigs = np.asarray(f, dtype=float)
        if N is None:
            raise ValueError("N is required when passing raw eigenvalues")
    if abs(z.imag) < 1e-9 and z.imag != 0:
        raise ValueError("spectral argument too close to the real axis")
    m = -1.0 / z
    target = 1e-12 * (1.0 + abs(z))
    res = _mp_residual(eigs, N, m, z)
    for _ in range(300):
        if abs(res) < target:
            break
        dh = 1.0 / m**2 - np.mean(eigs**2 / (1.0 + eigs * m) ** 2) * len(eigs) / N
        if dh == 0:
            raise NumericalError("m0_general hit a stationary point")
        step = res / dh
        lam = 1.0
        while lam > 1e-8:
            m_new = m - lam * step
            if m_new != 0 and (z.imag == 0 or m_new.imag * z.imag > 0):
                r_new = _mp_residual(eigs, N, m_new, z)
                if abs(r_new) < abs(res):
                    m, res = m_new, r_new
                    break
            lam *= 0.5
        else:
            raise NumericalError(f"m0_general stalled at z={z} (residual {abs(res):.2e})")
    if abs(res) > 1e-10 * (1.0 + abs(z)):
        raise NumericalError(f"m0_general did not converge at z={z}")
    return m


def _mp_residual(eigs: np.ndarray, N: int, m: complex, z: complex) -> complex:
    return -1.0 / m + np.sum(eigs / (1.0 + eigs * m)) / N - z


def t_w_general(f: GeneralF, m0: complex):
    """Block transforms from the dense path: t_r = Tr Psi_rr and
    w_rs = N ||Psi_rs||_HS^2 where Psi = -m0 N (Phi D A D Phi) + Phi and
    A = (Id + m0 F)^{-1}; valid for zero noise levels as well."""
    M = int(np.sum(f.m))
    d = np.repeat(f.sigma, f.m)
    fmat = f.N * (d[:, None] * f.phi * d[None, :])
    A = np.linalg.solve(np.eye(M) + m0 * fmat, np.eye(M))
    inner = f.phi @ (d[:, None] * A * d[None, :]) @ f.phi
    psi = -m0 * f.N * inner + f.phi
    k = len(f.m)
    t = np.array([np.trace(f.block(psi, r, r)) for r in range(k)])
    w = np.array([[f.N * np.sum(np.abs(f.block(psi, r, s)) ** 2)
                   for s in range(k)] for r in range(k)])
    return t, w
