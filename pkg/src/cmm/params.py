"""Parameter containers and the constrained/unconstrained reparameterization.

The optimizer works on an unconstrained free vector
``u = [alpha_u (S), beta_free (p_free), log_delta, tau (3), sigma (S-1)]``.
`expand` maps it onto the reported constrained parameters: sum-zero dummy
blocks, positive dispersion, and the two simplex weight vectors; `collapse`
inverts the map. The Jacobian of `expand` propagates the optimizer's
covariance to the reported scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .design import Block, DesignInfo, sum_zero_collapse, sum_zero_expand


@dataclass(frozen=True)
class ModelParams:
    """Constrained parameters: intercepts, weights, dispersion, simplex shares."""

    alpha: np.ndarray
    beta: np.ndarray
    delta: float
    phi: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        pi = np.asarray(self.pi, dtype=float)
        if alpha.ndim != 1 or alpha.size == 0:
            raise ValueError("alpha must be a nonempty vector")
        if phi.shape != (4,) or abs(phi.sum() - 1) > 1e-8 or np.any(phi < -1e-12):
            raise ValueError("phi must be a 4-point probability vector")
        if pi.shape != alpha.shape or abs(pi.sum() - 1) > 1e-8 or np.any(pi < -1e-12):
            raise ValueError("pi must be a probability vector, one entry per segment")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        for name, v in (("alpha", alpha), ("beta", beta), ("phi", phi), ("pi", pi)):
            object.__setattr__(self, name, v)

    @property
    def n_segments(self) -> int:
        return len(self.alpha)


@dataclass(frozen=True)
class ParamSpace:
    """Dimension bookkeeping tying a design to a segment count."""

    n_segments: int
    design: DesignInfo

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError("need at least one segment")

    @property
    def n_beta(self) -> int:
        return self.design.n_columns

    @property
    def free_columns(self) -> np.ndarray:
        return self.design.free_column_indices()

    @property
    def n_beta_free(self) -> int:
        return len(self.free_columns)

    @property
    def n_free(self) -> int:
        s = self.n_segments
        return s + self.n_beta_free + 1 + 3 + (s - 1)

    def split(self, u: np.ndarray):
        """Slice the free vector into (alpha_u, beta_free, log_delta, tau, sigma)."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_free,):
            raise ValueError(f"free vector must have length {self.n_free}")
        s, pf = self.n_segments, self.n_beta_free
        return (
            u[:s],
            u[s : s + pf],
            u[s + pf],
            u[s + pf + 1 : s + pf + 4],
            u[s + pf + 4 :],
        )

    def join(self, alpha_u, beta_free, log_delta, tau, sigma) -> np.ndarray:
        return np.concatenate(
            [alpha_u, beta_free, [log_delta], tau, np.atleast_1d(sigma)]
        )

    def embed_beta(self, beta_free: np.ndarray) -> np.ndarray:
        beta = np.zeros(self.n_beta)
        beta[self.free_columns] = beta_free
        return beta


def softmax_implicit_last(logits: np.ndarray, size: int) -> np.ndarray:
    """Softmax over [logits, 0] with max subtraction; length `size` output."""
    logits = np.atleast_1d(np.asarray(logits, dtype=float))
    if logits.shape != (size - 1,):
        raise ValueError(f"expected {size - 1} logits")
    x = np.append(logits, 0.0)
    x -= x.max()
    e = np.exp(x)
    return e / e.sum()


def expand(u: np.ndarray, space: ParamSpace) -> ModelParams:
    """Map the free vector to constrained parameters."""
    alpha_u, beta_free, log_delta, tau, sigma = space.split(u)
    beta_full = space.embed_beta(beta_free)
    alpha, beta = sum_zero_expand(alpha_u, beta_full, space.design.blocks)
    return ModelParams(
        alpha=alpha,
        beta=beta,
        delta=float(np.exp(log_delta)),
        phi=softmax_implicit_last(tau, 4),
        pi=softmax_implicit_last(sigma, space.n_segments),
    )


def collapse(params: ModelParams, space: ParamSpace) -> np.ndarray:
    """Invert `expand`: reference-zero coding, log dispersion, simplex logits."""
    if params.n_segments != space.n_segments:
        raise ValueError("segment count mismatch")
    alpha_u, beta_ref = sum_zero_collapse(params.alpha, params.beta, space.design.blocks)
    beta_free = beta_ref[space.free_columns]
    tau = np.log(params.phi[:3] / params.phi[3])
    s = space.n_segments
    sigma = np.log(params.pi[: s - 1] / params.pi[s - 1]) if s > 1 else np.empty(0)
    return space.join(alpha_u, beta_free, np.log(params.delta), tau, sigma)


def _softmax_jacobian(weights: np.ndarray) -> np.ndarray:
    """d weights / d logits for the implicit-last softmax; shape (m, m-1)."""
    m = len(weights)
    return weights[:, None] * (np.eye(m)[:, : m - 1] - weights[None, : m - 1])


def jacobian_of_expand(u: np.ndarray, space: ParamSpace) -> np.ndarray:
    """Jacobian of `expand`, rows ordered [alpha, beta, delta, phi, pi].

    Block diagonal: a constant matrix for the linear recentering of
    (alpha, beta), exp for the dispersion, and one softmax Jacobian per
    simplex.
    """
    alpha_u, beta_free, log_delta, tau, sigma = space.split(u)
    s, p, pf = space.n_segments, space.n_beta, space.n_beta_free
    n_out = s + p + 1 + 4 + s
    jac = np.zeros((n_out, space.n_free))

    # gamma block: alpha_s = alpha_u_s + sum_j mean(block_j of embedded beta)
    jac[:s, :s] = np.eye(s)
    block_of = {}
    for b in space.design.blocks:
        for j in range(b.size):
            block_of[b.offset + j] = b
    for c, full_col in enumerate(space.free_columns):
        col = s + c
        b = block_of.get(full_col)
        if b is None:
            jac[s + full_col, col] = 1.0  # numeric column, passed through
            continue
        k = b.size
        jac[:s, col] = 1.0 / k
        for j in range(b.size):
            jac[s + b.offset + j, col] = (1.0 if b.offset + j == full_col else 0.0) - 1.0 / k

    jac[s + p, s + pf] = np.exp(log_delta)
    phi = softmax_implicit_last(tau, 4)
    jac[s + p + 1 : s + p + 5, s + pf + 1 : s + pf + 4] = _softmax_jacobian(phi)
    if s > 1:
        pi = softmax_implicit_last(sigma, s)
        jac[s + p + 5 :, s + pf + 4 :] = _softmax_jacobian(pi)
    return jac


def delta_method_cov(jac: np.ndarray, sigma_u: np.ndarray) -> np.ndarray:
    """Push the free-parameter covariance through the reparameterization."""
    sym = 0.5 * (sigma_u + sigma_u.T)
    if not np.allclose(sigma_u, sym, atol=1e-10):
        warnings.warn("covariance input not symmetric; symmetrizing")
    if np.linalg.eigvalsh(sym).min() < -1e-8:
        warnings.warn("covariance input not positive semidefinite")
    cov = jac @ sym @ jac.T
    return 0.5 * (cov + cov.T)


def unpack_cov_diagonal(cov: np.ndarray, space: ParamSpace) -> dict:
    """Standard errors per reported parameter, from the expanded covariance."""
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    s, p = space.n_segments, space.n_beta
    return {
        "alpha": se[:s],
        "beta": se[s : s + p],
        "delta": float(se[s + p]),
        "phi": se[s + p + 1 : s + p + 5],
        "pi": se[s + p + 5 :],
    }


def params_to_dict(params: ModelParams, design: DesignInfo) -> dict:
    """JSON-ready form; the fit artifact and simulator ground-truth format."""
    return {
        "alpha": params.alpha.tolist(),
        "beta": params.beta.tolist(),
        "delta": params.delta,
        "phi": params.phi.tolist(),
        "pi": params.pi.tolist(),
        "block_map": [
            {
                "name": b.name,
                "labels": list(b.labels),
                "offset": b.offset,
                "reference": b.reference,
            }
            for b in design.blocks
        ],
        "covariate_names": list(design.columns),
    }


def params_from_dict(doc: dict) -> tuple[ModelParams, list[Block], list[str]]:
    params = ModelParams(
        alpha=np.array(doc["alpha"], dtype=float),
        beta=np.array(doc["beta"], dtype=float),
        delta=float(doc["delta"]),
        phi=np.array(doc["phi"], dtype=float),
        pi=np.array(doc["pi"], dtype=float),
    )
    blocks = [
        Block(d["name"], tuple(d["labels"]), int(d["offset"]), int(d["reference"]))
        for d in doc.get("block_map", [])
    ]
    return params, blocks, list(doc.get("covariate_names", []))
