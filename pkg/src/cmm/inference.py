"""Post-fit inference: posterior segment membership, BIC-based segment-count
selection with share and separation criteria, and the weighted-means Wald test
for external score profiles."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.stats import chi2

from .design import PackedData
from .likelihood import responsibilities
from .params import ModelParams

if TYPE_CHECKING:  # pragma: no cover
    from .estimate import FitResult

DEGENERATE_SHARE = 1e-4


@dataclass(frozen=True)
class PosteriorMatrix:
    """Per-child posterior segment probabilities; rows sum to one."""

    P: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 2:
            raise ValueError("posterior matrix must be 2-D")
        if np.any(P < -1e-12):
            raise ValueError("posterior probabilities must be nonnegative")
        if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-10:
            raise ValueError("posterior rows must sum to 1")
        object.__setattr__(self, "P", P)

    @property
    def n_segments(self) -> int:
        return self.P.shape[1]

    def hard_assignments(self) -> np.ndarray:
        return self.P.argmax(axis=1)


def posteriors(fit: "FitResult", data: PackedData) -> PosteriorMatrix:
    """Bayes-updated segment membership for every child, in log space."""
    return PosteriorMatrix(responsibilities(fit.params, data))


def bic(loglik: float, n_params: int, n_units: int) -> float:
    """Schwarz criterion; n_units is the number of independent children."""
    if n_units < 1:
        raise ValueError("need at least one unit")
    return -2.0 * loglik + n_params * np.log(n_units)


@dataclass(frozen=True)
class SegmentSelectionReport:
    """Per-candidate criteria and the recommended segment count."""

    rows: tuple
    recommended: int | None
    override: bool
    min_share: float
    min_alpha_gap_se: float


def _alpha_gap_in_se(params: ModelParams, alpha_se: np.ndarray | None) -> float:
    """Smallest adjacent intercept gap measured in joint standard errors."""
    order = np.argsort(params.alpha, kind="stable")
    a = params.alpha[order]
    if len(a) < 2:
        return float("inf")
    if alpha_se is None:
        return float("nan")
    se = np.asarray(alpha_se, dtype=float)[order]
    joint = np.sqrt(se[:-1] ** 2 + se[1:] ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        gaps = np.abs(np.diff(a)) / joint
    return float(np.min(gaps))


def select_segments(fits: Sequence["FitResult"], min_share: float = 0.05,
                    min_alpha_gap_se: float = 2.0) -> SegmentSelectionReport:
    """Score candidate segment counts on BIC improvement, minimum share, and
    intercept separation; recommend the largest count passing the latter two."""
    if len(fits) < 1:
        raise ValueError("need at least one fit")
    ordered = sorted(fits, key=lambda f: f.params.n_segments)
    rows = []
    prev_bic = None
    for f in ordered:
        p = f.params
        share = float(p.pi.min())
        gap = _alpha_gap_in_se(p, None if f.se is None else f.se["alpha"])
        improved = True if prev_bic is None else bool(f.bic < prev_bic)
        row = {
            "S": p.n_segments,
            "bic": float(f.bic),
            "loglik": float(f.loglik),
            "converged": bool(f.converged),
            "min_share": share,
            "min_alpha_gap_se": gap,
            "bic_improved": improved,
            "share_ok": bool(share >= min_share),
            "separation_ok": bool(gap == gap and gap >= min_alpha_gap_se),
            "degenerate": bool(share < DEGENERATE_SHARE),
        }
        rows.append(row)
        prev_bic = f.bic
    passing = [r["S"] for r in rows if r["share_ok"] and r["separation_ok"]]
    if passing:
        recommended, override = max(passing), False
    else:
        recommended = min(rows, key=lambda r: r["bic"])["S"]
        override = True
    return SegmentSelectionReport(
        rows=tuple(rows),
        recommended=recommended,
        override=override,
        min_share=min_share,
        min_alpha_gap_se=min_alpha_gap_se,
    )


@dataclass(frozen=True)
class WaldProfile:
    """Weighted segment means of a score and the equality test across segments."""

    psi_star: np.ndarray
    cov: np.ndarray
    statistic: float
    df: int
    p_value: float
    psi: np.ndarray = field(default=None, repr=False)
    kept: np.ndarray = field(default=None, repr=False)


def significance_stars(p: float) -> str:
    """Three-level star labels: * 0.05<=p<0.10, ** 0.01<=p<0.05, *** p<0.01."""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


def _crossprod(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """A'B by columns with pairwise sums; avoids BLAS threading effects."""
    return np.stack(
        [(A * B[:, [j]]).sum(axis=0) for j in range(B.shape[1])], axis=1
    )


def weighted_profile(P, score: np.ndarray, robust: bool = False) -> WaldProfile:
    """Posterior-weighted segment means of an external score with a Wald test.

    Regresses the score on the posterior matrix without intercept, rescales
    the coefficients to weighted means, and tests their equality across
    segments with adjacent-difference contrasts.
    """
    mat = P.P if isinstance(P, PosteriorMatrix) else np.asarray(P, dtype=float)
    score = np.asarray(score, dtype=float)
    n, s_all = mat.shape
    if score.shape != (n,):
        raise ValueError("score length must match the posterior row count")

    mass = mat.sum(axis=0)
    kept = np.flatnonzero(mass > 1e-10)
    if len(kept) < len(mass):
        warnings.warn(
            f"dropping {len(mass) - len(kept)} segment(s) with no posterior mass"
        )
    if len(kept) == 0:
        raise ValueError("no segment has posterior mass")
    Pk = mat[:, kept]
    s = len(kept)

    def embed(vec, fill=np.nan):
        out = np.full(s_all, fill)
        out[kept] = vec
        return out

    if np.ptp(score) == 0.0:
        c = float(score[0]) if n else 0.0
        return WaldProfile(
            psi_star=embed(np.full(s, c)),
            cov=np.zeros((s_all, s_all)),
            statistic=0.0,
            df=max(s - 1, 0),
            p_value=1.0,
            psi=embed(np.full(s, c)),
            kept=kept,
        )

    G = _crossprod(Pk, Pk)
    pty = (Pk * score[:, None]).sum(axis=0)
    psi = np.linalg.solve(G, pty)
    B = G / mass[kept][:, None]
    psi_star = B @ psi

    fitted = (Pk * psi[None, :]).sum(axis=1)
    resid = score - fitted
    if robust:
        meat = _crossprod(Pk * (resid**2)[:, None], Pk)
        ginv = np.linalg.inv(G)
        cov_psi = ginv @ meat @ ginv
    else:
        sigma2 = float((resid**2).sum()) / max(n - s, 1)
        cov_psi = sigma2 * np.linalg.inv(G)
    cov_star = B.T @ cov_psi @ B

    if s < 2:
        stat, df, p = 0.0, 0, 1.0
    else:
        D = np.zeros((s - 1, s))
        D[np.arange(s - 1), np.arange(s - 1)] = 1.0
        D[np.arange(s - 1), np.arange(1, s)] = -1.0
        diff = D @ psi_star
        W = D @ cov_star @ D.T
        stat = float(max(diff @ np.linalg.pinv(W) @ diff, 0.0))
        df = s - 1
        p = float(chi2.sf(stat, df))

    cov_full = np.full((s_all, s_all), np.nan)
    cov_full[np.ix_(kept, kept)] = cov_star
    return WaldProfile(
        psi_star=embed(psi_star),
        cov=cov_full,
        statistic=stat,
        df=df,
        p_value=p,
        psi=embed(psi),
        kept=kept,
    )
