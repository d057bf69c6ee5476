"""Mixture log-likelihood for censored, inflated count rounds.

Each child contributes log sum_s pi_s exp(sum_t log theta_ist), where theta
is the probability of one observed round: the inflated count pmf at the
played value when the round ended voluntarily, and the upper tail of that
pmf when a loss card cut the round short. All heavy paths are vectorized
over rounds with plain elementwise ops and pairwise sums; no matrix-product
kernels, so results do not depend on BLAS threading.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, expit, gammaln, logsumexp

from .design import PackedData
from .distributions import ATTRACTORS, SUPPORT_MAX, inflated_cdf, inflated_pmf
from .game import GameSetting, conditional_censor_prob, survival_prob
from .params import ModelParams, ParamSpace, _softmax_jacobian, expand

_LOG_FLOOR = 1e-300
_N_SPIKES = len(ATTRACTORS)


def theta(y: int, censored: bool, mu: float, delta: float, phi: np.ndarray) -> float:
    """Probability of one observed round under the inflated count model.

    Voluntary stop at y: pmf at y (y = 32 is the undepleted surplus lump).
    Forced stop at y: probability the intended count is at least y.
    """
    from .distributions import InflatedNB

    d = InflatedNB(mu=mu, delta=delta, weights=np.asarray(phi, dtype=float))
    if censored:
        if not 1 <= y <= SUPPORT_MAX:
            raise ValueError("a forced stop reveals between 1 and 32 cards")
        return 1.0 - inflated_cdf(y - 1, d)
    if not 0 <= y <= SUPPORT_MAX:
        raise ValueError("cards played must lie in 0..32")
    return inflated_pmf(y, d)


def game_loglik(data: PackedData) -> float:
    """Sum of log card-draw probabilities; constant in the model parameters."""
    total = 0.0
    for i in range(data.n_trials):
        s = GameSetting(
            gain_amount=int(data.gain[i]),
            loss_amount=int(data.loss[i]),
            n_loss_cards=int(data.n_loss_cards[i]),
        )
        y = int(data.y[i])
        if data.censored[i]:
            p = survival_prob(y - 1, s) * conditional_censor_prob(y, s)
        else:
            p = survival_prob(y, s)
        total += np.log(max(p, _LOG_FLOOR))
    return float(total)


@dataclass
class _TrialIndex:
    """Per-dataset gather indices, reused across segments and iterations."""

    rows: np.ndarray
    y: np.ndarray
    cens: np.ndarray
    unc_small: np.ndarray  # voluntary stop at 0..31
    unc_full: np.ndarray  # voluntary stop at 32
    spike_zero: np.ndarray
    spike_attr: np.ndarray
    spike_top: np.ndarray
    cens_attr_tail: np.ndarray  # count of attractor points >= y, per round
    starts: np.ndarray


def _index(data: PackedData) -> _TrialIndex:
    y = data.y.astype(np.intp)
    cens = data.censored.astype(bool)
    rows = np.arange(data.n_trials)
    return _TrialIndex(
        rows=rows,
        y=y,
        cens=cens,
        unc_small=~cens & (y <= SUPPORT_MAX - 1),
        unc_full=~cens & (y == SUPPORT_MAX),
        spike_zero=~cens & (y == 0),
        spike_attr=~cens & np.isin(y, ATTRACTORS),
        spike_top=~cens & (y == SUPPORT_MAX - 1),
        cens_attr_tail=_N_SPIKES - np.searchsorted(ATTRACTORS, y, side="left"),
        starts=data.child_starts[:-1],
    )


def _segment_pass(alpha_s, g, delta, phi, data, idx, want_grad):
    """One segment's per-round probabilities and, optionally, score pieces.

    Returns (logtheta (n,), pieces or None) with pieces =
    (d_eta, d_delta, d_phi) per round, each already divided by theta.
    """
    n = data.n_trials
    levels = np.arange(SUPPORT_MAX, dtype=float)  # 0..31; 32 is the lump
    eta = alpha_s + g
    mu = np.maximum(np.logaddexp(0.0, eta), 1e-290)

    # count pmf on 0..31 in one broadcast: A_l + B_r + l * C_r
    a_l = gammaln(delta + levels) - gammaln(delta) - gammaln(levels + 1.0)
    b_r = delta * (np.log(delta) - np.log(delta + mu))
    c_r = np.log(mu) - np.log(mu + delta)
    f = np.exp(a_l[None, :] + b_r[:, None] + levels[None, :] * c_r[:, None])
    lump = np.clip(1.0 - f.sum(axis=1), 0.0, None)

    f33 = np.concatenate([f, lump[:, None]], axis=1)
    q = phi[0] * f33
    q[:, 0] += phi[1]
    q[:, ATTRACTORS] += phi[2] / _N_SPIKES
    q[:, SUPPORT_MAX - 1] += phi[3]

    tail_q = np.cumsum(q[:, ::-1], axis=1)[:, ::-1]
    th = np.where(idx.cens, tail_q[idx.rows, idx.y], q[idx.rows, idx.y])
    n_floored = int(np.count_nonzero(th <= _LOG_FLOOR))
    logtheta = np.log(np.maximum(th, _LOG_FLOOR))
    if not want_grad:
        return logtheta, n_floored, None

    thc = np.maximum(th, _LOG_FLOOR)
    w = levels[None, :] / mu[:, None] - (levels[None, :] + delta) / (mu + delta)[:, None]
    fw = f * w
    del w
    d_l = digamma(delta + levels) - digamma(delta)
    v = (
        d_l[None, :]
        + (np.log(delta) + 1.0)
        - np.log(delta + mu)[:, None]
        - (delta / (delta + mu))[:, None]
        - levels[None, :] / (mu + delta)[:, None]
    )
    fv = f * v
    del v
    # exclusive forward sums: column k holds sum over l < k
    zero = np.zeros((n, 1))
    cfw = np.concatenate([zero, np.cumsum(fw, axis=1)], axis=1)
    cfv = np.concatenate([zero, np.cumsum(fv, axis=1)], axis=1)

    d_mu = np.empty(n)
    d_de = np.empty(n)
    m = idx.unc_small
    d_mu[m] = phi[0] * fw[m][np.arange(m.sum()), idx.y[m]]
    d_de[m] = phi[0] * fv[m][np.arange(m.sum()), idx.y[m]]
    m = idx.unc_full
    d_mu[m] = -phi[0] * cfw[m, SUPPORT_MAX]
    d_de[m] = -phi[0] * cfv[m, SUPPORT_MAX]
    m = idx.cens
    d_mu[m] = -phi[0] * cfw[m][np.arange(m.sum()), idx.y[m]]
    d_de[m] = -phi[0] * cfv[m][np.arange(m.sum()), idx.y[m]]
    del fw, fv, cfw, cfv

    d_phi = np.zeros((n, 4))
    tail_f = np.cumsum(f33[:, ::-1], axis=1)[:, ::-1]
    d_phi[:, 0] = np.where(
        idx.cens, tail_f[idx.rows, idx.y], f33[idx.rows, idx.y]
    )
    d_phi[idx.spike_zero, 1] = 1.0
    d_phi[idx.spike_attr, 2] = 1.0 / _N_SPIKES
    d_phi[idx.cens, 2] = idx.cens_attr_tail[idx.cens] / _N_SPIKES
    d_phi[idx.spike_top, 3] = 1.0
    d_phi[idx.cens & (idx.y <= SUPPORT_MAX - 1), 3] = 1.0

    d_eta = np.clip(expit(eta) * d_mu / thc, -1e15, 1e15)
    d_delta = np.clip(d_de / thc, -1e15, 1e15)
    d_phi = np.clip(d_phi / thc[:, None], -1e15, 1e15)
    return logtheta, n_floored, (d_eta, d_delta, d_phi)


def _evaluate(alpha, beta, delta, phi, pi, data: PackedData, want_grad: bool,
              x_free: np.ndarray | None = None):
    """Shared pass over all segments; beta is the full coefficient vector."""
    idx = _index(data)
    # elementwise multiply + pairwise sum keeps the result thread-invariant
    g = (data.X * beta[None, :]).sum(axis=1)
    s_count = len(alpha)
    nc = data.n_children

    comp = np.empty((nc, s_count))
    floored = 0
    if want_grad:
        pf = x_free.shape[1]
        s_eta = np.empty((nc, s_count))
        s_delta = np.empty((nc, s_count))
        s_phi = np.empty((nc, s_count, 4))
        g_beta = np.empty((s_count, nc, pf))
    for s in range(s_count):
        logtheta, n_floored, pieces = _segment_pass(
            alpha[s], g, delta, phi, data, idx, want_grad
        )
        floored += n_floored
        comp[:, s] = np.add.reduceat(logtheta, idx.starts)
        if want_grad:
            d_eta, d_delta, d_phi = pieces
            s_eta[:, s] = np.add.reduceat(d_eta, idx.starts)
            s_delta[:, s] = np.add.reduceat(d_delta, idx.starts)
            s_phi[:, s, :] = np.add.reduceat(d_phi, idx.starts, axis=0)
            g_beta[s] = np.add.reduceat(x_free * d_eta[:, None], idx.starts, axis=0)

    log_pi = np.log(np.maximum(pi, _LOG_FLOOR))
    joint = log_pi[None, :] + comp
    per_child = logsumexp(joint, axis=1)
    resp = np.exp(joint - per_child[:, None])
    if not want_grad:
        return per_child, comp, resp, floored, None
    return per_child, comp, resp, floored, (s_eta, s_delta, s_phi, g_beta)


def _params_pass(params: ModelParams, data: PackedData):
    return _evaluate(
        params.alpha, params.beta, params.delta, params.phi, params.pi, data, False
    )


def component_logliks(params: ModelParams, data: PackedData) -> np.ndarray:
    """Per-child log-likelihood under each segment separately; shape (n_children, S)."""
    _, comp, _, _, _ = _params_pass(params, data)
    return comp


def person_loglik(params: ModelParams, data: PackedData) -> np.ndarray:
    """Per-child mixture log-likelihood; shape (n_children,)."""
    per_child, _, _, _, _ = _params_pass(params, data)
    return per_child


def responsibilities(params: ModelParams, data: PackedData) -> np.ndarray:
    """Posterior segment weights per child; rows sum to one."""
    _, _, resp, _, _ = _params_pass(params, data)
    return resp


def floored_terms(params: ModelParams, data: PackedData) -> int:
    """How many round probabilities hit the underflow floor; >0 taints a fit."""
    _, _, _, floored, _ = _params_pass(params, data)
    return floored


def total_negloglik(u: np.ndarray, space: ParamSpace, data: PackedData,
                    include_game_factor: bool = False) -> float:
    """Negative total log-likelihood at a free vector; the fit objective."""
    per_child, _, _, _, _ = _params_pass(expand(u, space), data)
    value = -per_child.sum()
    if include_game_factor:
        value -= game_loglik(data)
    return float(value)


def negloglik_and_grad(u: np.ndarray, space: ParamSpace, data: PackedData):
    """Objective and its gradient in one shared pass."""
    params = expand(u, space)
    alpha_u, beta_free, _, _, _ = space.split(u)
    x_free = data.X[:, space.free_columns]
    # eta is identical in free and expanded coordinates (blocks are one-hot),
    # so the pass can run on alpha_u and the embedded free coefficients
    per_child, _, resp, _, pieces = _evaluate(
        alpha_u, space.embed_beta(beta_free),
        params.delta, params.phi, params.pi, data, True, x_free,
    )
    s_eta, s_delta, s_phi, g_beta = pieces
    s_count = space.n_segments

    g_alpha = (resp * s_eta).sum(axis=0)
    gb = np.zeros(space.n_beta_free)
    for s in range(s_count):
        gb += (resp[:, s : s + 1] * g_beta[s]).sum(axis=0)
    g_logdelta = params.delta * (resp * s_delta).sum()
    g_phi = (resp[:, :, None] * s_phi).sum(axis=(0, 1))
    g_tau = _softmax_jacobian(params.phi).T @ g_phi
    if s_count > 1:
        g_sigma = (resp.sum(axis=0) - data.n_children * params.pi)[: s_count - 1]
    else:
        g_sigma = np.empty(0)

    grad = space.join(g_alpha, gb, g_logdelta, g_tau, g_sigma)
    return float(-per_child.sum()), -grad


def loglik_gradient(u: np.ndarray, space: ParamSpace, data: PackedData) -> np.ndarray:
    """Gradient of the total log-likelihood with respect to the free vector."""
    _, neg = negloglik_and_grad(u, space, data)
    return -neg
