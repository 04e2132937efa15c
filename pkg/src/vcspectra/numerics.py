"""Shared numerical kernels: symmetric eigendecomposition, real polynomial
roots, and seeded Gaussian sampling.

Random numbers come from numpy's PCG64 generator (``numpy.random.default_rng``).
Replicate-level streams are derived with :func:`derive_seed` (seed XOR
replicate index), so parallel replicates are reproducible independently of
scheduling order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

__all__ = [
    "EigenDecomposition",
    "sym_eig",
    "real_poly_roots",
    "gaussian_matrix",
    "derive_seed",
    "as_rng",
]

_SEED_MASK = (1 << 64) - 1


def derive_seed(seed: int, index: int) -> int:
    """Derive the stream seed for one replicate: ``seed XOR index`` (mod 2^64)."""
    return (int(seed) ^ int(index)) & _SEED_MASK


def as_rng(seed) -> np.random.Generator:
    """Coerce an integer seed (or pass through a Generator) to a PCG64 stream."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(int(seed) & _SEED_MASK)


@dataclass(frozen=True)
class EigenDecomposition:
    """Spectral factorization A = V diag(values) V' with values ascending."""

    values: np.ndarray
    vectors: np.ndarray


def sym_eig(a: np.ndarray) -> EigenDecomposition:
    """Eigendecomposition of a real symmetric matrix.

    Returns eigenvalues in ascending order with orthonormal eigenvector
    columns. Raises ValueError on non-finite or non-symmetric input.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    scale = np.abs(a).max() if a.size else 0.0
    if not np.allclose(a, a.T, atol=1e-10 * max(scale, 1.0), rtol=0.0):
        raise ValueError("matrix is not symmetric")
    values, vectors = np.linalg.eigh(a)
    return EigenDecomposition(values=values, vectors=vectors)


def _newton_polish(coeffs: np.ndarray, x: float, steps: int = 4) -> float:
    dcoeffs = npoly.polyder(coeffs)
    for _ in range(steps):
        p = npoly.polyval(x, coeffs)
        dp = npoly.polyval(x, dcoeffs)
        if dp == 0.0:
            break
        step = p / dp
        if not np.isfinite(step):
            break
        x -= step
    return x


def real_poly_roots(
    coeffs,
    interval: tuple[float, float] | None = None,
    residual_tol: float = 1e-9,
) -> np.ndarray:
    """All real roots of a polynomial, ascending, repeated with multiplicity.

    ``coeffs`` are in ascending order (coeffs[i] multiplies x**i). Roots are
    found from the companion matrix, clustered to recover multiplicities,
    Newton-polished when simple, and kept only if the polynomial residual is
    below ``residual_tol`` times the coefficient scale at the root. Restricts
    to a closed ``interval`` when given.
    """
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
    if coeffs.size == 0 or not np.any(coeffs != 0.0):
        raise ValueError("zero polynomial has no well-defined root set")
    # trim trailing (leading-degree) zeros
    last = np.nonzero(coeffs)[0][-1]
    coeffs = coeffs[: last + 1]
    if coeffs.size == 1:
        return np.empty(0)

    roots = npoly.polyroots(coeffs)
    scale_x = 1.0 + max(np.abs(roots).max(), 1.0)
    cluster_tol = 1e-5 * scale_x

    # greedy clustering of companion-matrix roots; a multiple root comes back
    # as a tight star of complex values around the true location
    order = np.argsort(roots.real)
    roots = roots[order]
    clusters: list[list[complex]] = []
    for z in roots:
        if clusters and abs(z - np.mean(clusters[-1])) <= cluster_tol:
            clusters[-1].append(z)
        else:
            clusters.append([z])

    cmax = np.abs(coeffs).max()
    out: list[float] = []
    for group in clusters:
        center = complex(np.mean(group))
        mult = len(group)
        if abs(center.imag) > cluster_tol:
            continue  # genuinely complex pair
        x = center.real
        if mult == 1:
            if abs(group[0].imag) > 1e-8 * scale_x:
                continue
            x = _newton_polish(coeffs, x)
        p_scale = cmax * max(1.0, abs(x)) ** (coeffs.size - 1)
        if abs(npoly.polyval(x, coeffs)) > residual_tol * p_scale:
            continue
        out.extend([x] * mult)

    res = np.sort(np.asarray(out))
    if interval is not None:
        lo, hi = interval
        res = res[(res >= lo) & (res <= hi)]
    return res


def gaussian_matrix(rows: int, cols: int, sd: float, seed) -> np.ndarray:
    """A ``rows x cols`` matrix of i.i.d. N(0, sd^2) entries, reproducible per seed."""
    if sd < 0:
        raise ValueError("sd must be nonnegative")
    rng = as_rng(seed)
    # sd == 0 still consumes the stream so block layouts stay aligned
    return sd * rng.standard_normal((rows, cols))
