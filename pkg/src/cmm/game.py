"""Card game mechanics: censoring probabilities, round simulation, payoffs.

A round shows 32 face-down cards of which 1 or 3 are loss cards, placed
uniformly at random. The participant turns cards one at a time, intending to
turn ``z`` of them. Revealing a loss card ends the round immediately: the
trial is censored and only the position of the loss card is observed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_CARDS = 32

GAIN_AMOUNTS = (10, 30)
LOSS_AMOUNTS = (250, 750)
LOSS_CARD_COUNTS = (1, 3)


@dataclass(frozen=True)
class GameSetting:
    gain_amount: int
    loss_amount: int
    n_loss_cards: int

    def __post_init__(self):
        if (
            self.gain_amount not in GAIN_AMOUNTS
            or self.loss_amount not in LOSS_AMOUNTS
            or self.n_loss_cards not in LOSS_CARD_COUNTS
        ):
            raise ValueError(f"not one of the 8 game settings: {self}")


ALL_SETTINGS = tuple(
    GameSetting(g, l, n)
    for g in GAIN_AMOUNTS
    for l in LOSS_AMOUNTS
    for n in LOSS_CARD_COUNTS
)


@dataclass(frozen=True)
class TrialOutcome:
    y: int              # cards turned over, counting the loss card if censored
    censored: bool
    score: int
    z_true: int         # the intended count (simulator ground truth)


def conditional_censor_prob(k: int, s: GameSetting) -> float:
    """Pr(card k is a loss | first k-1 were safe); defined for k <= 33 - L."""
    L = s.n_loss_cards
    if not 1 <= k <= 33 - L:
        raise ValueError(f"card index {k} out of range for {L} loss cards")
    return L / (33.0 - k)


def survival_prob(z: int, s: GameSetting) -> float:
    """Pr(no loss card among the first z turned); exact closed form."""
    if not 0 <= z <= N_CARDS:
        raise ValueError(f"z {z} outside 0..{N_CARDS}")
    if s.n_loss_cards == 1:
        return (32.0 - z) / 32.0
    return max((32.0 - z) * (31.0 - z) * (30.0 - z), 0.0) / (32.0 * 31.0 * 30.0)


def marginal_censor_prob(k: int, s: GameSetting) -> float:
    """Unconditional Pr(round ends exactly at card k) for a full 32-card sweep."""
    if not 1 <= k <= N_CARDS:
        raise ValueError(f"card index {k} outside 1..{N_CARDS}")
    if s.n_loss_cards == 1:
        return 1.0 / 32.0
    return 3.0 * max(32.0 - k, 0.0) * max(31.0 - k, 0.0) / (32.0 * 31.0 * 30.0)


def omega(y: int, censored: bool, z: int, s: GameSetting) -> float:
    """Pr(observe (y, censored) | intended z): the game-mechanics factor.

    Constant in the model parameters, so the likelihood drops it; the
    simulator agreement tests pin it down.
    """
    if not (0 <= y <= N_CARDS and 0 <= z <= N_CARDS):
        raise ValueError("y and z must lie in 0..32")
    if censored:
        if 1 <= y <= z and y <= 33 - s.n_loss_cards:
            return survival_prob(y - 1, s) * conditional_censor_prob(y, s)
        return 0.0
    return survival_prob(y, s) if z == y else 0.0


def expected_round_score(z: int, s: GameSetting) -> float:
    """Expected score for a player intending z cards under random placement."""
    if not 0 <= z <= N_CARDS:
        raise ValueError(f"z {z} outside 0..{N_CARDS}")
    g, l = s.gain_amount, s.loss_amount
    ev = 0.0
    for k in range(1, z + 1):
        ev += marginal_censor_prob(k, s) * (g * (k - 1) - l)
    return ev + survival_prob(z, s) * g * z


def risk_neutral_optimum(s: GameSetting) -> int:
    """argmax over z of the expected round score; ties broken toward smaller z."""
    values = [expected_round_score(z, s) for z in range(N_CARDS + 1)]
    return int(np.argmax(values))


def first_loss_positions(n: int, n_loss_cards: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n independent rounds' first-loss positions (1-based).

    Loss cards are uniform without replacement among the 32 positions; only
    the minimum matters for censoring.
    """
    if n_loss_cards == 1:
        return rng.integers(1, N_CARDS + 1, size=n)
    out = np.empty(n, dtype=np.int64)
    chunk = 65536  # fixed block size keeps rng consumption order reproducible
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        u = rng.random((stop - start, N_CARDS))
        picks = np.argpartition(u, n_loss_cards - 1, axis=1)[:, :n_loss_cards]
        out[start:stop] = picks.min(axis=1) + 1
    return out


def simulate_trials(z_intended: np.ndarray, s: GameSetting, rng: np.random.Generator):
    """Vectorized round simulation: returns (y, censored, score) arrays."""
    z = np.asarray(z_intended, dtype=np.int64)
    if np.any(z < 0) or np.any(z > N_CARDS):
        raise ValueError("intended card counts must lie in 0..32")
    first = first_loss_positions(z.shape[0], s.n_loss_cards, rng)
    censored = first <= z
    y = np.where(censored, first, z)
    score = np.where(
        censored,
        s.gain_amount * (y - 1) - s.loss_amount,
        s.gain_amount * y,
    )
    return y, censored, score


def simulate_trial(z_intended: int, s: GameSetting, rng: np.random.Generator) -> TrialOutcome:
    """Simulate one round; same code path as the batch form."""
    y, censored, score = simulate_trials(np.array([z_intended]), s, rng)
    return TrialOutcome(int(y[0]), bool(censored[0]), int(score[0]), int(z_intended))
