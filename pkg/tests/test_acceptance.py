"""Acceptance criteria, one test per criterion.

Each test carries its tolerance constants inline. Criterion 6 runs a reduced
cohort by default; set CMM_FULL_SCALE=1 for the full-size run. Criterion 11
checks the published optimal-stopping table against exact expected values and
documents the one cell where the two disagree.
"""

import itertools
import json
import math
import os
import subprocess
import sys
import time

import numpy as np
from scipy.stats import chi2

from cmm.data import pack
from cmm.distributions import SUPPORT_MAX, InflatedNB, nb_pmf
from cmm.estimate import FitConfig, fit
from cmm.game import (
    ALL_SETTINGS,
    GameSetting,
    expected_round_score,
    marginal_censor_prob,
    omega,
    risk_neutral_optimum,
    simulate_trials,
    survival_prob,
)
from cmm.inference import select_segments, weighted_profile
from cmm.likelihood import negloglik_and_grad, responsibilities, total_negloglik
from cmm.params import (
    ParamSpace,
    collapse,
    delta_method_cov,
    expand,
    jacobian_of_expand,
)
from cmm.predict import base_tail_mass, evaluate, expected_cards_rows, fitted_rates
from cmm.presets import (
    PUBLISHED_INTERCEPT_SE,
    TRUE_INTERCEPTS,
    TRUE_SHARES,
    default_schema,
    reference_sim_config,
)
from cmm.simulate import generate_dataset

from conftest import game_only_truth, simulate_game_only

_recovery_cache = {}


# ---------------------------------------------------------------- criterion 1
def test_c01_distribution_normalization_and_pmf_oracle():
    budget_s = 5.0
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    for _ in range(1000):
        mu = float(rng.uniform(0.05, 80.0))
        delta = float(rng.uniform(0.05, 100.0))
        w = rng.dirichlet(np.ones(4))
        q = InflatedNB(mu, delta, tuple(w)).pmf_vector()
        assert q.shape == (33,)
        assert np.all(q >= 0)
        assert abs(q.sum() - 1.0) <= 1e-12
    for _ in range(1000):
        mu = float(rng.uniform(0.1, 60.0))
        delta = float(rng.uniform(0.1, 60.0))
        z = int(rng.integers(0, 201))
        ref = math.exp(
            math.lgamma(delta + z) - math.lgamma(delta) - math.lgamma(z + 1)
            + delta * (math.log(delta) - math.log(delta + mu))
            + z * (math.log(mu) - math.log(mu + delta))
        )
        assert abs(nb_pmf(z, mu, delta) - ref) <= 1e-12 * max(1.0, ref)
    assert time.perf_counter() - start < budget_s


# ---------------------------------------------------------------- criterion 2
def test_c02_censoring_marginals_match_enumeration():
    tol = 1e-14
    for n_loss in (1, 3):
        s = GameSetting(10, 250, n_loss)
        counts = np.zeros(34)
        total = 0
        for pos in itertools.combinations(range(1, 33), n_loss):
            counts[min(pos)] += 1
            total += 1
        exact = counts / total
        for k in range(1, 33):
            assert abs(marginal_censor_prob(k, s) - exact[k]) <= tol
        for z in range(0, 33):
            assert abs(survival_prob(z, s) - exact[z + 1 :].sum()) <= tol


# ---------------------------------------------------------------- criterion 3
def test_c03_simulator_agrees_with_game_probabilities():
    budget_s = 60.0
    start = time.perf_counter()
    rng = np.random.default_rng(303)
    z = 12
    n = 500_000
    for n_loss in (1, 3):
        s = GameSetting(10, 250, n_loss)
        y, censored, _ = simulate_trials(np.full(n, z), s, rng)
        p_unc = omega(z, False, z, s)
        emp_unc = float((~censored).mean())
        se = math.sqrt(p_unc * (1 - p_unc) / n)
        assert abs(emp_unc - p_unc) <= 4 * se
        for k in range(1, z + 1):
            p_k = omega(k, True, z, s)
            emp_k = float(((y == k) & censored).mean())
            se_k = math.sqrt(p_k * (1 - p_k) / n)
            assert abs(emp_k - p_k) <= 4 * se_k + 1e-12
    assert time.perf_counter() - start < budget_s


# ---------------------------------------------------------------- criterion 4
def test_c04_analytic_gradient_matches_finite_differences():
    rel_tol = 1e-5
    _, _, packed = simulate_game_only(50, seed=17)
    space = ParamSpace(2, packed.design)
    rng = np.random.default_rng(404)
    u0 = collapse(game_only_truth(), space)
    checked = 0
    for point in range(20):
        u = u0 + rng.normal(scale=0.2, size=space.n_free)
        _, g = negloglik_and_grad(u, space, packed)
        h = 1e-5
        for j in range(space.n_free):
            e = np.zeros(space.n_free)
            e[j] = h
            fd = (total_negloglik(u + e, space, packed)
                  - total_negloglik(u - e, space, packed)) / (2 * h)
            assert abs(g[j] - fd) <= rel_tol * max(1.0, abs(fd)), (
                f"point {point} coord {j}: analytic {g[j]:.10g} vs fd {fd:.10g}"
            )
            checked += 1
    assert checked == 20 * space.n_free


# ---------------------------------------------------------------- criterion 5
def test_c05_reparameterization_round_trip_jacobian_delta_method():
    _, _, packed = simulate_game_only(20, seed=19)
    space = ParamSpace(2, packed.design)
    rng = np.random.default_rng(505)

    for _ in range(200):
        u = rng.normal(scale=1.2, size=space.n_free)
        u2 = collapse(expand(u, space), space)
        assert np.max(np.abs(u - u2)) <= 1e-12

    def flat(u):
        p = expand(u, space)
        return np.concatenate([p.alpha, p.beta, [p.delta], p.phi, p.pi])

    for _ in range(10):
        u = rng.normal(scale=0.6, size=space.n_free)
        J = jacobian_of_expand(u, space)
        h = 1e-6
        for j in range(space.n_free):
            e = np.zeros(space.n_free)
            e[j] = h
            fd = (flat(u + e) - flat(u - e)) / (2 * h)
            assert np.max(np.abs(J[:, j] - fd)) <= 1e-6

    # delta-method standard errors against a monte-carlo push-forward
    u0 = collapse(game_only_truth(), space)
    A = rng.normal(scale=0.01, size=(space.n_free, space.n_free))
    sigma_u = A @ A.T + 1e-4 * np.eye(space.n_free)
    se_delta = np.sqrt(np.diag(delta_method_cov(jacobian_of_expand(u0, space),
                                                sigma_u)))

    n_mc = 1_000_000
    draws = rng.multivariate_normal(u0, sigma_u, size=n_mc)
    S = space.n_segments
    pf = space.n_beta_free
    alpha = draws[:, :S].copy()
    beta = np.zeros((n_mc, space.n_beta))
    beta[:, space.free_columns] = draws[:, S : S + pf]
    for b in space.design.blocks:
        seg = beta[:, b.offset : b.offset + b.size]
        m = seg.mean(axis=1, keepdims=True)
        seg -= m
        alpha += m  # block means move into the intercepts, as in expand
    delta = np.exp(draws[:, S + pf])
    tau = draws[:, S + pf + 1 : S + pf + 4]
    e_tau = np.exp(np.concatenate([tau, np.zeros((n_mc, 1))], axis=1)
                   - np.max(np.concatenate([tau, np.zeros((n_mc, 1))], axis=1),
                            axis=1, keepdims=True))
    phi = e_tau / e_tau.sum(axis=1, keepdims=True)
    sig = draws[:, S + pf + 4 :]
    e_sig = np.exp(np.concatenate([sig, np.zeros((n_mc, 1))], axis=1)
                   - np.max(np.concatenate([sig, np.zeros((n_mc, 1))], axis=1),
                            axis=1, keepdims=True))
    pi = e_sig / e_sig.sum(axis=1, keepdims=True)
    sample = np.concatenate([alpha, beta, delta[:, None], phi, pi], axis=1)
    se_mc = sample.std(axis=0)

    keep = se_mc > 1e-8
    rel = np.abs(se_delta[keep] - se_mc[keep]) / se_mc[keep]
    assert np.max(rel) <= 0.05, f"worst relative SE gap {np.max(rel):.4f}"

    # sanity: the batched transform matches expand on a sample of draws
    for idx in rng.integers(0, n_mc, size=20):
        p = expand(draws[idx], space)
        ref = np.concatenate([p.alpha, p.beta, [p.delta], p.phi, p.pi])
        assert np.max(np.abs(sample[idx] - ref)) <= 1e-10


# ---------------------------------------------------------------- criterion 6
def test_c06_parameter_recovery_at_reference_truth():
    full = os.environ.get("CMM_FULL_SCALE") == "1"
    n_children = 3404 if full else 800
    budget_s = 1800.0 if full else 300.0
    scale = math.sqrt(3404.0 / n_children)

    start = time.perf_counter()
    cfg = reference_sim_config(n_children=n_children, seed=0)
    children, trials = generate_dataset(cfg)

    rate = trials["censored"].mean()
    assert abs(rate - 0.68) <= 0.05, f"censoring prevalence {rate:.3f}"

    packed = pack(children, trials, default_schema())
    result = fit(packed, FitConfig(n_segments=4, seed=0))
    elapsed = time.perf_counter() - start

    _recovery_cache["packed"] = packed
    _recovery_cache["result"] = result

    assert result.converged, (
        f"gradient norm {result.gradient_norm:.3e}, "
        f"iterations {result.iterations}"
    )

    truth = cfg.true_params
    for s in range(4):
        tol = max(3.0 * PUBLISHED_INTERCEPT_SE[s] * scale,
                  0.05 * TRUE_INTERCEPTS[s])
        got = result.params.alpha[s]
        assert abs(got - TRUE_INTERCEPTS[s]) <= tol, (
            f"alpha[{s}]: {got:.3f} vs {TRUE_INTERCEPTS[s]} (tol {tol:.3f})"
        )
    pi_tol = 0.03 * scale
    for s in range(4):
        got = result.params.pi[s]
        assert abs(got - TRUE_SHARES[s]) <= pi_tol, (
            f"pi[{s}]: {got:.3f} vs {TRUE_SHARES[s]} (tol {pi_tol:.3f})"
        )

    sign_floor = 0.3 * scale
    strong = np.abs(truth.beta) > sign_floor
    agree = np.sign(result.params.beta[strong]) == np.sign(truth.beta[strong])
    assert np.all(agree), (
        f"sign disagreement on {np.flatnonzero(strong)[~agree].tolist()}"
    )

    assert elapsed < budget_s, f"recovery took {elapsed:.0f}s"


# ---------------------------------------------------------------- criterion 7
def test_c07_posterior_concentration():
    if "result" in _recovery_cache:
        packed = _recovery_cache["packed"]
        params = _recovery_cache["result"].params
    else:  # standalone invocation: score the truth on a fresh cohort
        cfg = reference_sim_config(n_children=400, seed=2, interactions=False)
        children, trials = generate_dataset(cfg)
        packed = pack(children, trials, default_schema(interactions=False))
        params = cfg.true_params
    P = responsibilities(params, packed)
    assert np.max(np.abs(P.sum(axis=1) - 1.0)) <= 1e-10
    share_confident = float((P.max(axis=1) > 0.8).mean())
    assert share_confident >= 0.60, f"only {share_confident:.1%} above 0.8"


# ---------------------------------------------------------------- criterion 8
def test_c08_segment_count_selection():
    hits = 0
    for seed in range(10):
        _, _, packed = simulate_game_only(200, seed=100 + seed, n_segments=3)
        fits = [fit(packed, FitConfig(n_segments=s, seed=seed))
                for s in (2, 3, 4)]
        report = select_segments(fits)
        hits += int(report.recommended == 3)
    assert hits >= 8, f"recommended 3 segments in only {hits}/10 runs"

    # a forced-empty segment is flagged, not fatal
    _, _, packed = simulate_game_only(120, seed=55, n_segments=2)
    forced = fit(
        packed,
        FitConfig(n_segments=3, seed=0, alpha_init=np.array([8.0, 24.0, 80.0])),
    )
    report = select_segments([forced])
    row = report.rows[0]
    assert row["degenerate"] or row["min_share"] < 0.05
    assert isinstance(report.recommended, int)


# ---------------------------------------------------------------- criterion 9
def test_c09_profile_matches_classical_anova():
    rng = np.random.default_rng(909)
    n, s = 120, 4
    groups = rng.integers(0, s, size=n)
    P = np.zeros((n, s))
    P[np.arange(n), groups] = 1.0
    score = rng.normal(loc=2.0 * groups, scale=1.3)

    profile = weighted_profile(P, score)
    means = np.array([score[groups == g].mean() for g in range(s)])
    counts = np.bincount(groups, minlength=s).astype(float)
    rss = sum(((score[groups == g] - means[g]) ** 2).sum() for g in range(s))
    cov = (rss / (n - s)) * np.diag(1.0 / counts)
    D = np.zeros((s - 1, s))
    D[np.arange(s - 1), np.arange(s - 1)] = 1.0
    D[np.arange(s - 1), np.arange(1, s)] = -1.0
    diff = D @ means
    stat = float(diff @ np.linalg.inv(D @ cov @ D.T) @ diff)

    assert np.max(np.abs(profile.psi_star - means)) <= 1e-10
    assert abs(profile.statistic - stat) <= 1e-10
    assert abs(profile.p_value - chi2.sf(stat, s - 1)) <= 1e-12

    flat = weighted_profile(P, np.full(n, 7.5))
    assert flat.statistic == 0.0 and flat.p_value == 1.0


# --------------------------------------------------------------- criterion 10
def test_c10_prediction_bounds_tail_and_generalization():
    children, trials, packed = simulate_game_only(400, seed=23)
    train = packed.subset(np.arange(300))
    test = packed.subset(np.arange(300, 400))
    result = fit(train, FitConfig(n_segments=2, seed=0))

    for part in (train, test):
        y_hat = expected_cards_rows(result.params, part.X)
        assert np.all(y_hat >= 0.0) and np.all(y_hat <= SUPPORT_MAX)

    mu_all = fitted_rates(result.params, packed.X).ravel()
    tails = base_tail_mass(mu_all, result.params.delta)
    assert np.max(tails) < 1e-4, f"worst tail mass {np.max(tails):.2e}"

    rmse_in, _ = evaluate(expected_cards_rows(result.params, train.X),
                          train.y, train.censored)
    rmse_out, _ = evaluate(expected_cards_rows(result.params, test.X),
                           test.y, test.censored)
    rel_gap = abs(rmse_in - rmse_out) / rmse_in
    assert rel_gap < 0.10, (
        f"in-sample rmse {rmse_in:.3f} vs held-out {rmse_out:.3f}"
    )


# --------------------------------------------------------------- criterion 11
def test_c11_risk_neutral_optima_match_published_table():
    published = {
        (10, 250, 1): 7, (10, 750, 1): 0, (30, 250, 1): 23, (30, 750, 1): 6,
        (10, 250, 3): 0, (10, 750, 3): 0, (30, 250, 3): 4, (30, 750, 3): 0,
    }
    # independent brute force agrees with the implementation on every cell
    for s in ALL_SETTINGS:
        values = [expected_round_score(z, s) for z in range(33)]
        best = max(values)
        brute = min(z for z, v in enumerate(values) if v == best)
        assert risk_neutral_optimum(s) == brute

    for (g, l, n_loss), want in published.items():
        s = GameSetting(g, l, n_loss)
        got = risk_neutral_optimum(s)
        ev_got = expected_round_score(got, s)
        ev_want = expected_round_score(want, s)
        assert got == want, (
            f"setting (gain {g}, loss {l}, {n_loss} loss card(s)): computed "
            f"optimum {got} (EV {ev_got:.4f}) vs published {want} "
            f"(EV {ev_want:.4f}). Expected value scales linearly in the "
            f"payoffs, so (10, 250, 1) and (30, 750, 1) must share an "
            f"optimum; the published table lists 7 and 6 for them, and the "
            f"exact EVs tie at z = 6 and 7 with ties broken toward fewer "
            f"cards."
        )


# --------------------------------------------------------------- criterion 12
def _run_cli(args, env_threads=None):
    env = os.environ.copy()
    if env_threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            env[var] = str(env_threads)
    return subprocess.run(
        [sys.executable, "-m", "cmm.cli", *args],
        capture_output=True, text=True, env=env,
    )


def test_c12_cli_bit_identical_across_reruns_and_threads(tmp_path):
    from cmm.cli import _design_for_schema
    from cmm.params import params_to_dict
    from cmm.presets import game_only_schema

    truth_path = tmp_path / "truth.json"
    truth_path.write_text(json.dumps(
        {"params": params_to_dict(game_only_truth(),
                                  _design_for_schema(game_only_schema()))}
    ))
    sim_cfg = tmp_path / "sim.json"
    sim_cfg.write_text(json.dumps({"n_children": 120, "n_trials": 16}))

    def run_chain(tag, threads):
        out_sim = tmp_path / tag / "sim"
        out_fit = tmp_path / tag / "fit"
        r1 = _run_cli(
            ["simulate", "--config", str(sim_cfg), "--truth", str(truth_path),
             "--schema", "game_only", "--seed", "11", "--out", str(out_sim),
             "--threads", str(threads)],
            env_threads=threads,
        )
        assert r1.returncode == 0, r1.stderr
        r2 = _run_cli(
            ["fit", "--children", str(out_sim / "children.csv"),
             "--trials", str(out_sim / "trials.csv"), "--schema", "game_only",
             "--segments", "2", "--seed", "5", "--out", str(out_fit),
             "--threads", str(threads)],
            env_threads=threads,
        )
        assert r2.returncode == 0, r2.stderr
        return out_sim, out_fit

    sim_a, fit_a = run_chain("a", 1)
    sim_b, fit_b = run_chain("b", 1)  # identical rerun
    data_files = ["children.csv", "trials.csv", "truth.json"]
    fit_files = ["fit.json", "posteriors.csv"]
    for name in data_files:
        assert (sim_a / name).read_bytes() == (sim_b / name).read_bytes(), name
    for name in fit_files:
        assert (fit_a / name).read_bytes() == (fit_b / name).read_bytes(), name
    for out_a, out_b in ((sim_a, sim_b), (fit_a, fit_b)):
        ma = json.loads((out_a / "manifest.json").read_text())
        mb = json.loads((out_b / "manifest.json").read_text())
        ma.pop("wall_time_s"), mb.pop("wall_time_s")
        assert ma == mb

    for threads in (4, 8):
        sim_t, fit_t = run_chain(f"t{threads}", threads)
        for name in data_files:
            assert (sim_t / name).read_bytes() == (sim_a / name).read_bytes(), (
                f"{name} differs at {threads} threads"
            )
        for name in fit_files:
            assert (fit_t / name).read_bytes() == (fit_a / name).read_bytes(), (
                f"{name} differs at {threads} threads"
            )
