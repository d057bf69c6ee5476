"""Maximum-likelihood driver: seeded warm start, quasi-Newton optimization
with a relative-change stopping rule, Newton polish steps off a numerical
Hessian, and Delta-method standard errors on the reported scale.

When the polish leaves a gradient above the convergence gate, a second stage
differences the analytic gradient into a fresh Hessian and takes damped
Newton steps restricted to its well-curved eigendirections."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .design import PackedData
from .distributions import ATTRACTORS, SUPPORT_MAX
from .inference import bic as _bic
from .likelihood import (
    floored_terms,
    loglik_gradient,
    negloglik_and_grad,
    total_negloglik,
)
from .params import (
    ModelParams,
    ParamSpace,
    collapse,
    delta_method_cov,
    expand,
    jacobian_of_expand,
    unpack_cov_diagonal,
)

GRAD_TOL = 1e-4  # max-abs gradient for the converged flag, post polish
_EIG_RTOL = 1e-10  # relative eigenvalue cutoff for the Hessian pseudo-inverse
_SUBSPACE_RTOL = 1e-8  # relative eigenvalue cutoff for trusted step directions


@dataclass(frozen=True)
class FitConfig:
    """Settings for one maximum-likelihood fit."""

    n_segments: int
    reltol: float = 1e-10
    max_iters: int = 500
    warm_start_n: int = 100
    seed: int = 0
    alpha_init: np.ndarray | None = None  # override the even-spacing rule
    phi_init: np.ndarray | None = None  # override the excess-mass rule

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError("need at least one segment")
        if not self.reltol > 0:
            raise ValueError("reltol must be positive")


@dataclass(frozen=True)
class FitResult:
    """A converged (or best-effort) fit with reporting-scale uncertainty."""

    params: ModelParams
    free: np.ndarray
    se: dict | None
    loglik: float
    bic: float
    n_params: int
    converged: bool
    iterations: int
    gradient_norm: float
    hessian_condition: float
    cov_free: np.ndarray | None = field(default=None, repr=False)
    cov_reported: np.ndarray | None = field(default=None, repr=False)
    hessian: np.ndarray | None = field(default=None, repr=False)
    space: ParamSpace = field(default=None, repr=False)
    n_children: int = 0
    config: FitConfig = None
    diagnostics: dict = field(default_factory=dict)


def n_free_params(space: ParamSpace) -> int:
    """Count of free parameters: intercepts + free slopes + dispersion +
    three inflation logits + segment-share logits."""
    return space.n_free


def initialize(data: PackedData, config: FitConfig) -> np.ndarray:
    """Deterministic start: evenly spaced intercepts over the card range,
    inflation weights from observed excess mass over interpolated neighbors,
    uniform shares, zero slopes, unit dispersion."""
    space = ParamSpace(config.n_segments, data.design)
    s = config.n_segments
    if config.alpha_init is not None:
        alpha = np.asarray(config.alpha_init, dtype=float)
        if alpha.shape != (s,):
            raise ValueError("alpha_init must have one entry per segment")
    else:
        alpha = SUPPORT_MAX * np.arange(1, s + 1) / (s + 1)
    phi = config.phi_init if config.phi_init is not None else _phi_from_excess(data)
    phi = np.asarray(phi, dtype=float)
    tau = np.log(phi[:3] / phi[3])
    sigma = np.zeros(s - 1)
    return space.join(alpha, np.zeros(space.n_beta_free), 0.0, tau, sigma)


def _phi_from_excess(data: PackedData, eps: float = 0.01) -> np.ndarray:
    """Spike weights from how far the voluntary-stop histogram sits above a
    linear interpolation of its non-inflated neighbors; floored at eps."""
    unc = ~data.censored.astype(bool)
    if not unc.any():
        return np.array([1.0 - 3 * eps, eps, eps, eps])
    emp = np.bincount(data.y[unc].astype(int), minlength=SUPPORT_MAX + 1)
    emp = emp / emp.sum()
    excess_zero = emp[0] - emp[1]
    excess_attr = sum(emp[a] - 0.5 * (emp[a - 1] + emp[a + 1]) for a in ATTRACTORS)
    excess_top = emp[SUPPORT_MAX - 1] - emp[SUPPORT_MAX - 2]
    spikes = np.maximum([excess_zero, excess_attr, excess_top], eps)
    total = spikes.sum()
    if total > 1.0 - eps:
        spikes *= (1.0 - eps) / total
    return np.concatenate([[1.0 - spikes.sum()], spikes])


def warm_start(data: PackedData, config: FitConfig) -> np.ndarray:
    """Fit a seeded subsample of children and reuse its optimum as the start.

    Falls back to the deterministic start if the subsample fit misbehaves.
    """
    if data.n_children <= config.warm_start_n:
        return initialize(data, config)
    rng = np.random.default_rng(config.seed)
    picked = np.sort(
        rng.choice(data.n_children, size=config.warm_start_n, replace=False)
    )
    try:
        sub = data.subset(picked)
        u0 = initialize(sub, config)
        res = _run_bfgs(sub, ParamSpace(config.n_segments, data.design), u0, config)
        u = res["u"]
        if not np.all(np.isfinite(u)):
            raise FloatingPointError("non-finite warm start")
        return u
    except Exception:
        return initialize(data, config)


def _run_bfgs(data: PackedData, space: ParamSpace, u0: np.ndarray,
              config: FitConfig) -> dict:
    """Quasi-Newton pass with the relative-change stopping rule.

    Stops once an iteration improves the objective by less than
    reltol * (|f| + reltol), mirroring a relative-tolerance convergence test.
    """
    state = {"prev": None, "rule_fired": False}

    def objective(u):
        return negloglik_and_grad(u, space, data)

    def callback(intermediate_result):
        f = float(intermediate_result.fun)
        prev = state["prev"]
        state["prev"] = f
        if prev is not None and prev - f < config.reltol * (abs(f) + config.reltol):
            state["rule_fired"] = True
            raise StopIteration

    res = minimize(
        objective,
        u0,
        jac=True,
        method="BFGS",
        callback=callback,
        options={"maxiter": config.max_iters, "gtol": 1e-12},
    )
    return {
        "u": np.asarray(res.x, dtype=float),
        "fun": float(res.fun),
        "iterations": int(res.nit),
        "rule_fired": state["rule_fired"],
        "optimizer_success": bool(res.success),
    }


def numerical_hessian(f: Callable[[np.ndarray], float], x: np.ndarray,
                      step: np.ndarray | None = None,
                      counter: list | None = None) -> np.ndarray:
    """Central-difference Hessian with exactly 2d^2 + 2d + 1 evaluations.

    Five-point second differences on the diagonal, four-point cross
    differences off it; per-coordinate step max(1e-4, 1e-4*|x_i|).
    """
    x = np.asarray(x, dtype=float)
    d = len(x)
    h = np.maximum(1e-4, 1e-4 * np.abs(x)) if step is None else np.asarray(step)

    def ev(dx):
        if counter is not None:
            counter.append(1)
        return float(f(x + dx))

    H = np.empty((d, d))
    fc = ev(np.zeros(d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h[i]
        fp, fm = ev(e), ev(-e)
        fpp, fmm = ev(2 * e), ev(-2 * e)
        H[i, i] = (-fpp + 16 * fp - 30 * fc + 16 * fm - fmm) / (12 * h[i] ** 2)
    for i in range(d):
        for j in range(i + 1, d):
            dx = np.zeros(d)
            dx[i], dx[j] = h[i], h[j]
            fpp = ev(dx)
            dx[j] = -h[j]
            fpm = ev(dx)
            dx[i] = -h[i]
            fmm = ev(dx)
            dx[j] = h[j]
            fmp = ev(dx)
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * h[i] * h[j])
    if not np.all(np.isfinite(H)):
        bad = np.argwhere(~np.isfinite(H))
        raise FloatingPointError(f"non-finite Hessian entries at {bad.tolist()}")
    return H


def _pinv_psd(H: np.ndarray) -> tuple[np.ndarray, int, float]:
    """Eigen pseudo-inverse keeping eigenvalues above a relative cutoff.

    Returns (pinv, rank, condition of the kept spectrum).
    """
    vals, vecs = np.linalg.eigh(0.5 * (H + H.T))
    top = float(vals.max(initial=0.0))
    cutoff = _EIG_RTOL * max(top, 1.0)
    keep = vals > cutoff
    inv_vals = np.where(keep, 1.0 / np.where(keep, vals, 1.0), 0.0)
    pinv = (vecs * inv_vals[None, :]) @ vecs.T
    rank = int(keep.sum())
    cond = float(top / vals[keep].min()) if rank else float("inf")
    return 0.5 * (pinv + pinv.T), rank, cond


def _gradient_hessian(u: np.ndarray, space: ParamSpace, data: PackedData) -> np.ndarray:
    """Hessian from central differences of the analytic gradient.

    The objective value carries float64 rounding of order |f| * 1e-16, which
    at cohort scale swamps the tiny differences a function-value stencil needs
    in weakly curved directions.  Differencing the exact gradient instead
    keeps every column accurate, at 2d gradient sweeps.
    """
    d = u.size
    h = np.maximum(1e-5, 1e-5 * np.abs(u))
    H = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h[i]
        gp = -loglik_gradient(u + e, space, data)
        gm = -loglik_gradient(u - e, space, data)
        H[:, i] = (gp - gm) / (2 * h[i])
    return 0.5 * (H + H.T)


def _subspace_polish(
    u: np.ndarray,
    f_curr: float,
    grad: np.ndarray,
    space: ParamSpace,
    data: PackedData,
    max_steps: int = 12,
) -> tuple[np.ndarray, float, np.ndarray, int]:
    """Damped Newton refinements restricted to well-curved eigendirections.

    Interaction blocks can leave the likelihood exactly flat along a few
    directions; a step component there is pure noise amplification, so those
    eigenpairs are dropped rather than floored.  A candidate is accepted when
    it lowers the objective or shrinks the gradient, since near the optimum
    the objective's rounding floor hides real descent.

    Returns the refined point, objective, gradient, and accepted step count.
    """
    H = _gradient_hessian(u, space, data)
    vals, vecs = np.linalg.eigh(H)
    cutoff = float(np.abs(vals).max(initial=0.0)) * _SUBSPACE_RTOL
    keep = vals > cutoff
    if not keep.any():
        return u, f_curr, grad, 0
    basis = vecs[:, keep]
    inv_vals = 1.0 / vals[keep]
    steps = 0
    for _ in range(max_steps):
        max_g = float(np.max(np.abs(grad)))
        if max_g <= GRAD_TOL:
            break
        step = -(basis @ (inv_vals * (basis.T @ grad)))
        accepted = False
        for damp in (1.0, 0.5, 0.25, 0.125):
            cand = u + damp * step
            f_cand, g_cand = negloglik_and_grad(cand, space, data)
            better = f_cand < f_curr or float(np.max(np.abs(g_cand))) < max_g
            if np.isfinite(f_cand) and better:
                u, f_curr, grad = cand, float(f_cand), g_cand
                accepted = True
                steps += 1
                break
        if not accepted:
            break
    return u, f_curr, grad, steps


def _sort_segments(u: np.ndarray, space: ParamSpace) -> tuple[np.ndarray, bool]:
    """Relabel segments so intercepts ascend; shares follow their segment."""
    params = expand(u, space)
    order = np.argsort(params.alpha, kind="stable")
    if np.array_equal(order, np.arange(space.n_segments)):
        return u, False
    sorted_params = ModelParams(
        alpha=params.alpha[order],
        beta=params.beta,
        delta=params.delta,
        phi=params.phi,
        pi=params.pi[order],
    )
    return collapse(sorted_params, space), True


def fit(data: PackedData, config: FitConfig) -> FitResult:
    """Full estimation pipeline on packed trial data."""
    space = ParamSpace(config.n_segments, data.design)
    diagnostics: dict = {}

    u0 = warm_start(data, config)
    diagnostics["warm_start_used"] = data.n_children > config.warm_start_n
    run = _run_bfgs(data, space, u0, config)
    u, swapped = _sort_segments(run["u"], space)
    diagnostics["labels_resorted"] = swapped

    def f_only(v):
        return total_negloglik(v, space, data)

    H = numerical_hessian(f_only, u)
    cov_free, rank, cond = _pinv_psd(H)
    diagnostics["hessian_rank"] = rank
    full_rank = rank == space.n_free

    # one Newton step toward a zero gradient, kept only if it helps, then a
    # few damped refinements reusing the same Hessian factorization
    f_curr = f_only(u)
    grad = -loglik_gradient(u, space, data)
    polish = "rejected"
    for attempt in range(11):
        if np.max(np.abs(grad)) <= GRAD_TOL and attempt > 0:
            break
        step = -cov_free @ grad
        accepted = False
        for damp in (1.0, 0.5, 0.25, 0.125):
            cand = u + damp * step
            f_cand = f_only(cand)
            if np.isfinite(f_cand) and f_cand <= f_curr:
                u, f_curr = cand, f_cand
                grad = -loglik_gradient(u, space, data)
                accepted = True
                break
        if attempt == 0:
            polish = "accepted" if accepted else "rejected"
        if not accepted:
            break
    diagnostics["newton_polish"] = polish

    if np.max(np.abs(grad)) > GRAD_TOL:
        # the function-value Hessian could not resolve the remaining descent
        u, f_curr, grad, refinements = _subspace_polish(u, f_curr, grad, space, data)
        diagnostics["subspace_polish_steps"] = refinements

    u, swapped_late = _sort_segments(u, space)
    if swapped_late:
        # the polish reordered near-equal intercepts; redo curvature there
        diagnostics["labels_resorted_after_polish"] = True
        H = numerical_hessian(f_only, u)
        cov_free, rank, cond = _pinv_psd(H)
        diagnostics["hessian_rank"] = rank
        full_rank = rank == space.n_free
        f_curr = f_only(u)
        grad = -loglik_gradient(u, space, data)

    params = expand(u, space)
    gradient_norm = float(np.max(np.abs(grad)))
    loglik = -f_curr
    n_params = space.n_free
    converged = (run["rule_fired"] or run["optimizer_success"]) and (
        gradient_norm <= GRAD_TOL
    )

    se = None
    cov_reported = None
    if full_rank:
        jac = jacobian_of_expand(u, space)
        cov_reported = delta_method_cov(jac, cov_free)
        se = unpack_cov_diagonal(cov_reported, space)
    else:
        diagnostics["hessian_singular"] = True

    degenerate = np.flatnonzero(params.pi < 1e-4)
    if degenerate.size:
        diagnostics["degenerate_segments"] = degenerate.tolist()
    n_floored = floored_terms(params, data)
    if n_floored:
        diagnostics["floored_terms"] = n_floored

    return FitResult(
        params=params,
        free=u,
        se=se,
        loglik=float(loglik),
        bic=float(_bic(loglik, n_params, data.n_children)),
        n_params=n_params,
        converged=bool(converged),
        iterations=run["iterations"],
        gradient_norm=gradient_norm,
        hessian_condition=cond,
        cov_free=cov_free,
        cov_reported=cov_reported,
        hessian=H,
        space=space,
        n_children=data.n_children,
        config=config,
        diagnostics=diagnostics,
    )


def fit_result_to_dict(fit_result: FitResult) -> dict:
    """JSON-ready summary of a fit, including the config echo."""
    from .params import params_to_dict

    doc = params_to_dict(fit_result.params, fit_result.space.design)
    cfg = fit_result.config
    out = {
        "params": doc,
        "free": fit_result.free.tolist(),
        "se": None
        if fit_result.se is None
        else {
            k: (v if isinstance(v, float) else np.asarray(v).tolist())
            for k, v in fit_result.se.items()
        },
        "loglik": fit_result.loglik,
        "bic": fit_result.bic,
        "n_params": fit_result.n_params,
        "converged": fit_result.converged,
        "iterations": fit_result.iterations,
        "gradient_norm": fit_result.gradient_norm,
        "hessian_condition": fit_result.hessian_condition,
        "n_children": fit_result.n_children,
        "diagnostics": fit_result.diagnostics,
        "config": None
        if cfg is None
        else {
            "n_segments": cfg.n_segments,
            "reltol": cfg.reltol,
            "max_iters": cfg.max_iters,
            "warm_start_n": cfg.warm_start_n,
            "seed": cfg.seed,
        },
    }
    return out
