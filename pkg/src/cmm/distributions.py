"""Negative binomial primitives and the multiply inflated outcome distribution.

The outcome is a count on {0..32}: the number of cards a participant intends
to turn over. The base distribution is negative binomial with mean ``mu`` and
dispersion ``delta`` (variance mu + mu**2/delta). Extra probability mass sits
at 0, at the attractor points, and at 31; all base mass at or beyond 32 is
lumped into the top point so the result is a proper distribution on the
33-point support.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

SUPPORT_MAX = 32
SUPPORT = np.arange(SUPPORT_MAX + 1)

# outcome values that receive their own shared inflation mass (popular card
# patterns); the weight is split uniformly over these points
ATTRACTORS = np.array([4, 8, 10, 12, 16, 20, 24])


def _check_params(mu, delta) -> None:
    if not (np.all(np.asarray(mu) > 0) and np.all(np.asarray(delta) > 0)):
        raise ValueError("mu and delta must be positive")


def nb_logpmf(z, mu, delta):
    """Log pmf of the negative binomial, parameterized by mean and dispersion.

    Vectorized over any mix of ``z``, ``mu``, ``delta``. Evaluated via
    log-gamma throughout so large z or small delta cannot overflow.
    """
    _check_params(mu, delta)
    z = np.asarray(z, dtype=float)
    return (
        gammaln(delta + z)
        - gammaln(delta)
        - gammaln(z + 1.0)
        + delta * (np.log(delta) - np.log(delta + mu))
        + z * (np.log(mu) - np.log(mu + delta))
    )


def nb_pmf(z, mu, delta):
    return np.exp(nb_logpmf(z, mu, delta))


def nb_cdf(k: int, mu: float, delta: float) -> float:
    """Pr(X <= k) by direct summation; nb_cdf(-1) is the empty sum 0."""
    _check_params(mu, delta)
    if k < -1:
        raise ValueError("k must be >= -1")
    if k == -1:
        return 0.0
    return float(np.sum(nb_pmf(np.arange(k + 1), mu, delta)))


def nb_survival(k: int, mu: float, delta: float) -> float:
    """Pr(X > k), clipped so float roundoff cannot produce a negative mass."""
    return max(1.0 - nb_cdf(k, mu, delta), 0.0)


def softplus(eta):
    """Inverse link mu = log(1 + exp(eta)); positive, near identity for eta > 1."""
    return np.logaddexp(0.0, eta)


def softplus_deriv(eta):
    """d softplus / d eta, the logistic function; in (0, 1)."""
    return expit(eta)


@dataclass(frozen=True)
class InflatedNB:
    """Multiply inflated negative binomial on {0..32}.

    weights = (phi1, phi2, phi3, phi4): base-distribution share, extra mass
    at 0, extra mass spread over the attractor set, extra mass at 31.
    """

    mu: float
    delta: float
    weights: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        _check_params(self.mu, self.delta)
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (4,):
            raise ValueError("weights must be a 4-vector")
        if np.any(w < -1e-12) or np.any(w > 1 + 1e-12) or abs(w.sum() - 1.0) > 1e-8:
            raise ValueError("weights must lie in [0, 1] and sum to 1")
        object.__setattr__(self, "weights", w)

    def base_pmf(self) -> np.ndarray:
        """Base negative binomial pmf on 0..31 (the folded point 32 excluded)."""
        return nb_pmf(np.arange(SUPPORT_MAX), self.mu, self.delta)

    def pmf_vector(self) -> np.ndarray:
        """The full 33-point pmf; sums to 1 up to float roundoff."""
        f = self.base_pmf()
        phi = self.weights
        q = phi[0] * f
        q = np.append(q, phi[0] * max(1.0 - f.sum(), 0.0))
        q[0] += phi[1]
        q[ATTRACTORS] += phi[2] / len(ATTRACTORS)
        q[31] += phi[3]
        return q


def inflated_pmf(ell: int, d: InflatedNB) -> float:
    if not 0 <= ell <= SUPPORT_MAX:
        raise ValueError(f"outcome {ell} outside support 0..{SUPPORT_MAX}")
    return float(d.pmf_vector()[ell])


def inflated_cdf(k: int, d: InflatedNB) -> float:
    """Pr(Z <= k) of the inflated distribution; k = -1 gives 0, k = 32 gives 1."""
    if not -1 <= k <= SUPPORT_MAX:
        raise ValueError(f"cdf point {k} outside -1..{SUPPORT_MAX}")
    if k == -1:
        return 0.0
    return float(d.pmf_vector()[: k + 1].sum())
