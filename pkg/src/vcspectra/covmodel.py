"""Population covariance models (isotropic noise plus low-rank spikes),
data simulation, estimator assembly, and noise-variance plug-ins.

Each random effect r has covariance

    Sigma_r = sigma_r^2 Id + V_r Theta_r V_r',

stored as the noise level ``sigma2`` and a list of ``(theta, v)`` spike
pairs. Note that theta is the *excess* over the noise level: the population
spike eigenvalue is mu = theta + sigma_r^2. Reported simulation tables are
indexed by mu, so convert before comparing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .design import DesignSpec, MeanSquares, manova_coefficients
from .numerics import as_rng

__all__ = [
    "SpikedCovariance",
    "ModelSpec",
    "SpikeSubspace",
    "simulate",
    "sigma_hat",
    "estimate_noise_variances",
    "spike_subspace",
    "model_to_json",
    "model_from_json",
]


@dataclass(frozen=True)
class SpikedCovariance:
    """One component: sigma2 * Id plus sum of theta_i v_i v_i'."""

    sigma2: float
    spikes: list = field(default_factory=list)  # [(theta, unit p-vector)]

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        for theta, v in self.spikes:
            if theta <= 0:
                raise ValueError("spike theta values must be positive")
            if abs(np.linalg.norm(v) - 1.0) > 1e-8:
                raise ValueError("spike vectors must be unit norm")
        if len(self.spikes) > 1:
            vs = np.column_stack([v for _, v in self.spikes])
            gram = vs.T @ vs
            if not np.allclose(gram, np.eye(len(self.spikes)), atol=1e-10):
                raise ValueError("spikes within one component must be orthonormal")

    def matrix(self, p: int) -> np.ndarray:
        out = self.sigma2 * np.eye(p)
        for theta, v in self.spikes:
            out += theta * np.outer(v, v)
        return out


@dataclass(frozen=True)
class ModelSpec:
    """Trait count, one SpikedCovariance per random effect, optional mean."""

    p: int
    components: list
    mean: np.ndarray | None = None

    def __post_init__(self):
        for comp in self.components:
            for _, v in comp.spikes:
                if len(v) != self.p:
                    raise ValueError("spike vector length does not match p")
        if self.mean is not None and len(self.mean) != self.p:
            raise ValueError("mean vector length does not match p")

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def sigma2(self) -> np.ndarray:
        return np.array([c.sigma2 for c in self.components])


@dataclass(frozen=True)
class SpikeSubspace:
    """Orthonormal basis of the combined spike span with per-component data.

    ``coords[r]`` holds the L x l_r coordinates of component r's spike
    vectors in this basis; ``thetas[r]`` the matching spike values.
    """

    basis: np.ndarray      # p x L
    L: int
    coords: list           # per component, L x l_r
    thetas: list           # per component, (l_r,)

    def overlap(self, r: int) -> np.ndarray:
        """L x L matrix of component r's low-rank part in subspace coordinates."""
        v, th = self.coords[r], self.thetas[r]
        if v.shape[1] == 0:
            return np.zeros((self.L, self.L))
        return (v * th) @ v.T


def spike_subspace(model: ModelSpec, rank_tol: float = 1e-8) -> SpikeSubspace:
    """QR basis of the span of all spike vectors across components."""
    cols = [v for comp in model.components for _, v in comp.spikes]
    if not cols:
        return SpikeSubspace(basis=np.zeros((model.p, 0)), L=0,
                             coords=[np.zeros((0, 0)) for _ in model.components],
                             thetas=[np.zeros(0) for _ in model.components])
    stack = np.column_stack(cols)
    q, rmat = np.linalg.qr(stack)
    keep = np.abs(np.diag(rmat)) > rank_tol
    basis = q[:, keep]
    L = basis.shape[1]
    coords, thetas = [], []
    for comp in model.components:
        if comp.spikes:
            vs = np.column_stack([v for _, v in comp.spikes])
            coords.append(basis.T @ vs)
            thetas.append(np.array([th for th, _ in comp.spikes]))
        else:
            coords.append(np.zeros((L, 0)))
            thetas.append(np.zeros(0))
    return SpikeSubspace(basis=basis, L=L, coords=coords, thetas=thetas)


def simulate(design: DesignSpec, model: ModelSpec, seed) -> np.ndarray:
    """Draw one n x p data matrix Y = 1 mu' + sum_r U_r alpha_r.

    Rows of alpha_r are i.i.d. N(0, Sigma_r), sampled as
    sigma_r G + Gs diag(sqrt(theta)) V_r' with independent standard Gaussian
    blocks G (m_r x p) and Gs (m_r x l_r).
    """
    if model.k != design.k:
        raise ValueError(
            f"model has {model.k} components but design has {design.k} effects"
        )
    rng = as_rng(seed)
    p = model.p
    y = np.zeros((design.n, p))
    if model.mean is not None:
        y += np.asarray(model.mean, dtype=float)[None, :]
    for r, comp in enumerate(model.components):
        m_r = design.m[r]
        alpha = comp.sigma2 ** 0.5 * rng.standard_normal((m_r, p)) \
            if comp.sigma2 > 0 else np.zeros((m_r, p))
        if comp.spikes:
            vs = np.column_stack([v for _, v in comp.spikes])
            th = np.sqrt([th for th, _ in comp.spikes])
            alpha = alpha + (rng.standard_normal((m_r, len(th))) * th) @ vs.T
        y += alpha[design.groups[r]]
    return y


def sigma_hat(ms: MeanSquares, a) -> np.ndarray:
    """Linear combination a_1 MS_1 + ... + a_k MS_k."""
    a = np.asarray(a, dtype=float)
    if a.shape != (len(ms.ms),):
        raise ValueError(f"coefficient vector has length {a.size}, expected {len(ms.ms)}")
    out = np.zeros((ms.p, ms.p))
    for a_r, m in zip(a, ms.ms):
        if a_r != 0.0:
            out += a_r * m
    return out


def estimate_noise_variances(ms: MeanSquares, design: DesignSpec,
                             trim: int = 0) -> np.ndarray:
    """Plug-in noise estimates sigma_hat_r^2 = mean eigenvalue of the MANOVA
    estimate of Sigma_r after dropping the ``trim`` largest-magnitude
    eigenvalues; clamped at zero."""
    if trim < 0 or trim >= ms.p:
        raise ValueError("trim must satisfy 0 <= trim < p")
    out = np.zeros(design.k)
    for r in range(1, design.k + 1):
        est = sigma_hat(ms, manova_coefficients(design, r))
        eigs = np.linalg.eigvalsh(est)
        if trim:
            keep = np.argsort(np.abs(eigs))[: ms.p - trim]
            eigs = eigs[keep]
        out[r - 1] = max(float(eigs.mean()), 0.0)
    return out


def _vector_from_json(obj, p: int) -> np.ndarray:
    if isinstance(obj, str):
        if not obj.startswith("e"):
            raise ValueError(f"unrecognized vector shorthand {obj!r}")
        idx = int(obj[1:])
        if not 1 <= idx <= p:
            raise ValueError(f"basis vector {obj!r} out of range for p={p}")
        v = np.zeros(p)
        v[idx - 1] = 1.0
        return v
    if isinstance(obj, dict) and "dense" in obj:
        v = np.asarray(obj["dense"], dtype=float)
        if v.shape != (p,):
            raise ValueError(f"dense vector has length {v.size}, expected {p}")
        norm = np.linalg.norm(v)
        if norm == 0:
            raise ValueError("dense spike vector must be nonzero")
        return v / norm
    raise ValueError("spike vector must be 'e<i>' or {'dense': [...]}")


def model_from_json(text: str) -> ModelSpec:
    obj = json.loads(text)
    p = int(obj["p"])
    components = []
    for comp in obj["components"]:
        spikes = [
            (float(s["theta"]), _vector_from_json(s["v"], p))
            for s in comp.get("spikes", [])
        ]
        components.append(SpikedCovariance(sigma2=float(comp["sigma2"]), spikes=spikes))
    mean = obj.get("mean")
    mean_vec = None if mean is None else np.asarray(mean, dtype=float)
    return ModelSpec(p=p, components=components, mean=mean_vec)


def model_to_json(model: ModelSpec) -> str:
    comps = []
    for comp in model.components:
        comps.append({
            "sigma2": comp.sigma2,
            "spikes": [{"theta": th, "v": {"dense": list(map(float, v))}}
                       for th, v in comp.spikes],
        })
    mean = None if model.mean is None else list(map(float, model.mean))
    return json.dumps({"p": model.p, "components": comps, "mean": mean})
