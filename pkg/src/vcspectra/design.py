"""Balanced classification designs: strata bases, subspace lattice, incidence
matrices, mean squares, and MANOVA coefficient inversion.

A design decomposes R^n into mutually orthogonal strata S̊_0, ..., S̊_k
(S̊_0 is the intercept direction). Each random effect r has an incidence
matrix U_r whose column span S_r is a direct sum of the strata below it in
the inclusion lattice. Built-in kinds:

- ``oneway(I, J)``: I groups of size J, k = 2 effects (group, residual).
- ``nested_twoway(I, J, K)``: J subgroups of K individuals inside each of
  I groups, k = 3.
- ``crossed_twoway(I, J, K, L)``: I replicates of a J x K cross with L
  offspring per cell, k = 5 (rows, columns, interaction enter separately).

Strata bases are exact Kronecker products of Helmert contrasts, so the
projector identities hold to rounding error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DesignSpec",
    "MeanSquares",
    "build_design",
    "oneway",
    "nested_twoway",
    "crossed_twoway",
    "manova_coefficients",
    "mean_squares",
    "design_to_json",
    "design_from_json",
]


def helmert(q: int) -> np.ndarray:
    """Orthonormal q x (q-1) basis of the subspace of R^q orthogonal to 1_q."""
    h = np.zeros((q, q - 1))
    for j in range(1, q):
        h[:j, j - 1] = 1.0
        h[j, j - 1] = -j
        h[:, j - 1] /= np.sqrt(j * (j + 1))
    return h


def _kron_cols(*factors: np.ndarray) -> np.ndarray:
    out = factors[0]
    for f in factors[1:]:
        out = np.kron(out, f)
    return out


@dataclass(frozen=True)
class DesignSpec:
    """A balanced classification design.

    ``lattice[r, s]`` (0-indexed effects r, s = 1..k) is True when stratum
    s precedes r (S_s contained in S_r). ``basis[r]`` is an orthonormal
    n x d_r basis of stratum S̊_r for r = 0..k. ``groups[r-1]`` maps each
    observation row to its level of effect r, so U_r @ alpha equals
    ``alpha[groups[r-1]]``.
    """

    kind: str
    sizes: dict
    n: int
    k: int
    m: np.ndarray
    c: np.ndarray
    d: np.ndarray
    lattice: np.ndarray
    basis: list = field(repr=False)
    groups: list = field(repr=False)

    def incidence(self, r: int) -> np.ndarray:
        """Dense incidence matrix U_r (n x m_r), 1-indexed effect r."""
        g = self.groups[r - 1]
        u = np.zeros((self.n, self.m[r - 1]))
        u[np.arange(self.n), g] = 1.0
        return u

    def projection(self, r: int) -> np.ndarray:
        """Dense projector onto stratum S̊_r (r = 0..k)."""
        v = self.basis[r]
        return v @ v.T


@dataclass(frozen=True)
class MeanSquares:
    """The k canonical mean-square matrices MS_r = Y' (pi_r / d_r) Y."""

    ms: list
    p: int


def _finish(kind, sizes, n, k, m, d, lattice, basis, groups) -> DesignSpec:
    m = np.asarray(m, dtype=int)
    d = np.asarray(d, dtype=int)
    c = n / m.astype(float)
    if d.sum() != n:
        raise ValueError(f"stratum dimensions {d.tolist()} do not sum to n={n}")
    return DesignSpec(
        kind=kind,
        sizes=dict(sizes),
        n=n,
        k=k,
        m=m,
        c=c,
        d=d,
        lattice=np.asarray(lattice, dtype=bool),
        basis=basis,
        groups=[np.asarray(g, dtype=int) for g in groups],
    )


def oneway(I: int, J: int) -> DesignSpec:
    if I < 2 or J < 2:
        raise ValueError("one-way design needs I >= 2 groups of size J >= 2")
    n = I * J
    ones_I = np.ones((I, 1)) / np.sqrt(I)
    ones_J = np.ones((J, 1)) / np.sqrt(J)
    basis = [
        _kron_cols(ones_I, ones_J),                  # S̊_0: intercept
        _kron_cols(helmert(I), ones_J),              # S̊_1: between groups
        _kron_cols(np.eye(I), helmert(J)),           # S̊_2: within groups
    ]
    rows = np.arange(n)
    groups = [rows // J, rows]
    lattice = np.array([[True, False], [True, True]])
    return _finish("oneway", {"I": I, "J": J}, n, 2, [I, n], [1, I - 1, n - I],
                   lattice, basis, groups)


def nested_twoway(I: int, J: int, K: int) -> DesignSpec:
    if I < 2 or J < 2 or K < 2:
        raise ValueError("nested two-way design needs I, J, K >= 2")
    n = I * J * K
    eI, eJ = np.eye(I), np.eye(J)
    oI = np.ones((I, 1)) / np.sqrt(I)
    oJ = np.ones((J, 1)) / np.sqrt(J)
    oK = np.ones((K, 1)) / np.sqrt(K)
    basis = [
        _kron_cols(oI, oJ, oK),
        _kron_cols(helmert(I), oJ, oK),
        _kron_cols(eI, helmert(J), oK),
        _kron_cols(eI, eJ, helmert(K)),
    ]
    rows = np.arange(n)
    groups = [rows // (J * K), rows // K, rows]
    lattice = np.array([
        [True, False, False],
        [True, True, False],
        [True, True, True],
    ])
    return _finish(
        "nested_twoway", {"I": I, "J": J, "K": K}, n, 3,
        [I, I * J, n], [1, I - 1, I * J - I, n - I * J], lattice, basis, groups,
    )


def crossed_twoway(I: int, J: int, K: int, L: int) -> DesignSpec:
    if I < 2 or J < 2 or K < 2 or L < 2:
        raise ValueError("crossed two-way design needs I, J, K, L >= 2")
    n = I * J * K * L
    eI, eJ, eK = np.eye(I), np.eye(J), np.eye(K)
    oI = np.ones((I, 1)) / np.sqrt(I)
    oJ = np.ones((J, 1)) / np.sqrt(J)
    oK = np.ones((K, 1)) / np.sqrt(K)
    oL = np.ones((L, 1)) / np.sqrt(L)
    hJ, hK = helmert(J), helmert(K)
    basis = [
        _kron_cols(oI, oJ, oK, oL),
        _kron_cols(helmert(I), oJ, oK, oL),          # replicates
        _kron_cols(eI, hJ, oK, oL),                  # rows within replicate
        _kron_cols(eI, oJ, hK, oL),                  # columns within replicate
        _kron_cols(eI, hJ, hK, oL),                  # row x column interaction
        _kron_cols(eI, eJ, eK, helmert(L)),          # within cells
    ]
    rows = np.arange(n)
    cell = rows // L                                 # (i, j, k) cell index
    ij = cell // K
    i = ij // J
    j = ij % J
    kk = cell % K
    groups = [i, ij, i * K + kk, cell, rows]
    # S_1 ⊆ S_2, S_3 ⊆ S_4 ⊆ S_5; S_2 and S_3 incomparable
    lattice = np.array([
        [True, False, False, False, False],
        [True, True, False, False, False],
        [True, False, True, False, False],
        [True, True, True, True, False],
        [True, True, True, True, True],
    ])
    d4 = I * J * K - I * J - I * K + I
    return _finish(
        "crossed_twoway", {"I": I, "J": J, "K": K, "L": L}, n, 5,
        [I, I * J, I * K, I * J * K, n],
        [1, I - 1, I * J - I, I * K - I, d4, n - I * J * K],
        lattice, basis, groups,
    )


_BUILDERS = {
    "oneway": oneway,
    "nested_twoway": nested_twoway,
    "crossed_twoway": crossed_twoway,
}


def build_design(kind: str, **sizes: int) -> DesignSpec:
    """Construct a built-in balanced design by kind name and group sizes."""
    try:
        builder = _BUILDERS[kind]
    except KeyError:
        raise ValueError(f"unknown design kind {kind!r}") from None
    return builder(**sizes)


def manova_coefficients(design: DesignSpec, r: int) -> np.ndarray:
    """Mean-square weights a with E[a_1 MS_1 + ... + a_k MS_k] = Sigma_r.

    Solves H a = e_r by forward substitution in lattice order, where
    H[r, s] = 1{s precedes r} * c_r; effect indices are 1-based.
    """
    k = design.k
    if not 1 <= r <= k:
        raise ValueError(f"component index r={r} outside 1..{k}")
    a = np.zeros(k)
    for row in range(k):  # lattice order: s precedes row implies s <= row
        rhs = 1.0 if row == r - 1 else 0.0
        below = [s for s in range(row) if design.lattice[row, s]]
        a[row] = rhs / design.c[row] - sum(a[s] for s in below)
    return a


def mean_squares(y: np.ndarray, design: DesignSpec) -> MeanSquares:
    """Canonical mean squares MS_r = (V_r' Y)' (V_r' Y) / d_r for r = 1..k."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[0] != design.n:
        raise ValueError(
            f"data has shape {y.shape}, expected ({design.n}, p) for this design"
        )
    ms = []
    for r in range(1, design.k + 1):
        w = design.basis[r].T @ y
        ms.append(w.T @ w / design.d[r])
    return MeanSquares(ms=ms, p=y.shape[1])


def design_to_json(design: DesignSpec) -> str:
    return json.dumps({"kind": design.kind, **design.sizes})


def design_from_json(text: str) -> DesignSpec:
    obj = json.loads(text)
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ValueError("design JSON must be an object with a 'kind' field")
    kind = obj.pop("kind")
    return build_design(kind, **{k: int(v) for k, v in obj.items()})
