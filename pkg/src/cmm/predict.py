"""Point predictions and distribution summaries from a fitted model:
expected cards per round, aggregated predicted distributions, the
censoring-probability overlay for stopped-round histograms, and RMSE/MAD
scoring on voluntary stops."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .distributions import ATTRACTORS, SUPPORT_MAX
from .game import GameSetting, marginal_censor_prob
from .params import ModelParams

_CHUNK = 32768
_ATTR_MEAN_MASS = ATTRACTORS.sum() / len(ATTRACTORS)


@dataclass(frozen=True)
class PredictedDistribution:
    """Aggregated predicted mass over 0..32 cards."""

    mass: np.ndarray

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=float)
        if mass.shape != (SUPPORT_MAX + 1,):
            raise ValueError("mass must cover 0..32")
        if np.any(mass < -1e-12):
            raise ValueError("mass entries must be nonnegative")
        object.__setattr__(self, "mass", mass)

    @property
    def total(self) -> float:
        return float(self.mass.sum())


def _base_pmf_matrix(mu: np.ndarray, delta: float, n_levels: int) -> np.ndarray:
    """Count pmf on 0..n_levels-1 for each rate in mu; shape (len(mu), n_levels)."""
    levels = np.arange(n_levels, dtype=float)
    a_l = gammaln(delta + levels) - gammaln(delta) - gammaln(levels + 1.0)
    b_r = delta * (np.log(delta) - np.log(delta + mu))
    c_r = np.log(mu) - np.log(mu + delta)
    return np.exp(a_l[None, :] + b_r[:, None] + levels[None, :] * c_r[:, None])


def _mu_rows(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Per-segment rates for each design row; shape (S, R)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(params.beta):
        raise ValueError("design row width must match the coefficient count")
    g = (X * params.beta[None, :]).sum(axis=1)
    eta = params.alpha[:, None] + g[None, :]
    return np.maximum(np.logaddexp(0.0, eta), 1e-290)


def expected_cards_rows(params: ModelParams, X: np.ndarray, M: int = 100) -> np.ndarray:
    """Expected cards per design row, mixing segments by their prior shares.

    The base distribution is evaluated on the extended range 0..M and the
    mass beyond M is folded onto M; inflections at 0, the pattern points,
    and 31 contribute their fixed means.
    """
    mu = _mu_rows(params, X)
    s_count, n = mu.shape
    phi = params.phi
    levels = np.arange(M + 1, dtype=float)
    out = np.zeros(n)
    for s in range(s_count):
        for lo in range(0, n, _CHUNK):
            sl = slice(lo, min(lo + _CHUNK, n))
            f = _base_pmf_matrix(mu[s, sl], params.delta, M + 1)
            base_mean = (f * levels[None, :]).sum(axis=1)
            tail = np.clip(1.0 - f.sum(axis=1), 0.0, None)
            ev = (
                phi[0] * (base_mean + M * tail)
                + phi[2] * _ATTR_MEAN_MASS
                + phi[3] * (SUPPORT_MAX - 1)
            )
            out[sl] += params.pi[s] * ev
    return out


def expected_cards(params: ModelParams, x: np.ndarray, M: int = 100) -> float:
    """Point prediction for a single design row."""
    return float(expected_cards_rows(params, np.atleast_2d(x), M)[0])


def mixture_pmf_rows(params: ModelParams, X: np.ndarray,
                     truncate_at_32: bool = True) -> np.ndarray:
    """Predicted distribution over 0..32 for each row; shape (R, 33).

    With truncate_at_32, the top cell collects all base mass from 32 up so
    rows sum to one; otherwise it holds the base pmf at exactly 32 and rows
    sum to slightly less than one.
    """
    mu = _mu_rows(params, X)
    s_count, n = mu.shape
    phi = params.phi
    out = np.zeros((n, SUPPORT_MAX + 1))
    for s in range(s_count):
        for lo in range(0, n, _CHUNK):
            sl = slice(lo, min(lo + _CHUNK, n))
            f = _base_pmf_matrix(mu[s, sl], params.delta, SUPPORT_MAX + 1)
            if truncate_at_32:
                f = f.copy()
                f[:, SUPPORT_MAX] = np.clip(
                    1.0 - f[:, :SUPPORT_MAX].sum(axis=1), 0.0, None
                )
            q = phi[0] * f
            q[:, 0] += phi[1]
            q[:, ATTRACTORS] += phi[2] / len(ATTRACTORS)
            q[:, SUPPORT_MAX - 1] += phi[3]
            out[sl] += params.pi[s] * q
    return out


def aggregate_distribution(params: ModelParams, X: np.ndarray,
                           truncate_at_32: bool = True) -> PredictedDistribution:
    """Average predicted distribution across design rows."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 1:
        raise ValueError("need at least one design row")
    pmf = mixture_pmf_rows(params, X, truncate_at_32)
    mass = pmf.sum(axis=0) / pmf.shape[0]
    if truncate_at_32 and abs(mass.sum() - 1.0) > 1e-10:
        raise FloatingPointError("aggregated mass failed to normalize")
    return PredictedDistribution(mass=mass)


def censor_correct(dist: PredictedDistribution, s: GameSetting) -> np.ndarray:
    """Scale each cell by the marginal probability a round stops right there.

    Entry 0 is zero: a stopped round always reveals at least one card.
    """
    out = np.zeros(SUPPORT_MAX + 1)
    for k in range(1, SUPPORT_MAX + 1):
        out[k] = dist.mass[k] * marginal_censor_prob(k, s)
    return out


def censored_outcome_distribution(params: ModelParams, X: np.ndarray,
                                  s: GameSetting,
                                  normalize: bool = False) -> np.ndarray:
    """Predicted distribution of where stopped rounds end, on 1..32.

    Cell k carries (chance a loss card sits at position k) times (chance the
    intended count reaches k), averaged over rows; this is the curve to lay
    over an observed stopped-round histogram.
    """
    pmf = mixture_pmf_rows(params, X, truncate_at_32=True)
    upper = np.cumsum(pmf[:, ::-1], axis=1)[:, ::-1]  # P(Z >= k) in column k
    out = np.zeros(SUPPORT_MAX + 1)
    for k in range(1, SUPPORT_MAX + 1):
        out[k] = marginal_censor_prob(k, s) * upper[:, k].mean()
    if normalize:
        total = out.sum()
        if total > 0:
            out = out / total
    return out


def evaluate(y_hat: np.ndarray, y: np.ndarray,
             censored: np.ndarray) -> tuple[float, float]:
    """(RMSE, MAD) over voluntarily ended rounds only."""
    y_hat = np.asarray(y_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = ~np.asarray(censored, dtype=bool)
    if y_hat.shape != y.shape or y.shape != keep.shape:
        raise ValueError("prediction, outcome, and flag vectors must align")
    if not keep.any():
        raise ValueError("no voluntarily ended rounds to score")
    err = y[keep] - y_hat[keep]
    rmse = float(np.sqrt(np.mean(err**2)))
    mad = float(np.mean(np.abs(err)))
    return rmse, mad


def base_tail_mass(mu: np.ndarray, delta: float, M: int = 100) -> np.ndarray:
    """Base-count mass above M for each rate; the fold-at-M error bound."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    out = np.empty(len(mu))
    for lo in range(0, len(mu), _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, len(mu)))
        f = _base_pmf_matrix(mu[sl], delta, M + 1)
        out[sl] = np.clip(1.0 - f.sum(axis=1), 0.0, None)
    return out


def fitted_rates(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """All per-segment fitted rates for the rows; shape (S, R)."""
    return _mu_rows(params, X)
