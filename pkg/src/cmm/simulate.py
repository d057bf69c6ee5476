"""Synthetic cohort generator: draws children with covariates, assigns each a
latent segment, plays out blocked card rounds with realized-loss feedback, and
emits the two normative tables (children, trials).

Each child gets an independent random stream spawned from the master seed and
the child's index, so generation order never changes the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .design import CovariateSchema
from .distributions import ATTRACTORS, SUPPORT_MAX
from .game import ALL_SETTINGS, simulate_trial
from .params import ModelParams

GAME_COLUMNS = ("gain", "loss", "loss_cards", "prev_loss", "prev2_loss")


@dataclass(frozen=True)
class NumericSpec:
    """Normal draw, truncated at +-clip standard deviations."""

    mean: float
    sd: float
    clip: float = 2.5

    def __post_init__(self):
        if not (self.sd > 0 and self.clip > 0):
            raise ValueError("numeric spec needs positive sd and clip")


@dataclass(frozen=True)
class CategoricalSpec:
    labels: tuple
    probs: tuple

    def __post_init__(self):
        labels = tuple(str(v) for v in self.labels)
        probs = tuple(float(p) for p in self.probs)
        if len(labels) != len(probs) or len(labels) < 2:
            raise ValueError("labels and probs must align, with >= 2 categories")
        if abs(sum(probs) - 1.0) > 1e-9 or min(probs) < 0:
            raise ValueError("probs must form a distribution")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "probs", probs)


@dataclass(frozen=True)
class CovariateGenerator:
    """Population the simulator samples children from."""

    numeric: dict = field(default_factory=dict)
    categorical: dict = field(default_factory=dict)

    def draw(self, rng: np.random.Generator) -> dict:
        out = {}
        for name, spec in self.numeric.items():
            z = float(np.clip(rng.standard_normal(), -spec.clip, spec.clip))
            out[name] = spec.mean + spec.sd * z
        for name, spec in self.categorical.items():
            u = rng.random()
            idx = int(np.searchsorted(np.cumsum(spec.probs), u, side="right"))
            out[name] = spec.labels[min(idx, len(spec.labels) - 1)]
        return out

    def numeric_stats(self) -> dict:
        """Population moments used to put numeric covariates on the z scale."""
        return {name: (spec.mean, spec.sd) for name, spec in self.numeric.items()}


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to generate one synthetic dataset."""

    n_children: int
    true_params: ModelParams
    schema: CovariateSchema
    covariates: CovariateGenerator
    n_trials: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.n_children < 1:
            raise ValueError("need at least one child")
        if self.n_trials < 1 or self.n_trials % len(ALL_SETTINGS) != 0:
            raise ValueError(
                "n_trials must be a positive multiple of the 8 game settings"
            )
        width = _design_width(self.schema)
        if len(self.true_params.beta) != width:
            raise ValueError(
                f"true beta has {len(self.true_params.beta)} entries; "
                f"schema implies {width} design columns"
            )
        person_numeric = set(self.schema.numeric)
        person_cat = {
            n for n, _ in self.schema.categorical if n not in GAME_COLUMNS
        }
        if person_numeric - set(self.covariates.numeric):
            raise ValueError("covariate generator missing numeric columns")
        if person_cat - set(self.covariates.categorical):
            raise ValueError("covariate generator missing categorical columns")
        for name, labels in self.schema.categorical:
            if name in GAME_COLUMNS:
                continue
            gen = self.covariates.categorical[name]
            if tuple(gen.labels) != tuple(str(v) for v in labels):
                raise ValueError(f"generator labels for {name} differ from schema")


def _design_width(schema: CovariateSchema) -> int:
    sizes = {n: len(ls) for n, ls in schema.categorical}
    return (
        len(schema.numeric)
        + sum(sizes.values())
        + sum(sizes[a] * sizes[b] for a, b in schema.interactions)
    )


@dataclass(frozen=True)
class _BetaLayout:
    """Coefficient offsets mirroring the design-matrix column order."""

    numeric: dict
    blocks: dict  # name -> (offset, labels)
    interactions: tuple  # (name_a, name_b, offset)


def _beta_layout(schema: CovariateSchema) -> _BetaLayout:
    numeric = {name: j for j, name in enumerate(schema.numeric)}
    blocks = {}
    offset = len(schema.numeric)
    for name, labels in schema.categorical:
        blocks[name] = (offset, tuple(str(v) for v in labels))
        offset += len(labels)
    inters = []
    for a, b in schema.interactions:
        inters.append((a, b, offset))
        offset += len(blocks[a][1]) * len(blocks[b][1])
    return _BetaLayout(numeric, blocks, tuple(inters))


def _eta_pieces(layout: _BetaLayout, beta: np.ndarray, stats: dict,
                values: dict) -> float:
    """Linear-predictor contribution of the given column values."""
    total = 0.0
    for name, col in layout.numeric.items():
        if name in values:
            mean, sd = stats[name]
            total += beta[col] * (values[name] - mean) / sd
    for name, (offset, labels) in layout.blocks.items():
        if name in values:
            total += beta[offset + labels.index(str(values[name]))]
    for a, b, offset in layout.interactions:
        if a in values and b in values:
            _, la = layout.blocks[a]
            _, lb = layout.blocks[b]
            idx = la.index(str(values[a])) + len(la) * lb.index(str(values[b]))
            total += beta[offset + idx]
    return total


def _draw_intended(mu: float, params: ModelParams, rng: np.random.Generator) -> int:
    """Sample the intended card count from the inflated distribution."""
    u = rng.random()
    cum = np.cumsum(params.phi)
    if u < cum[0]:
        lam = rng.gamma(params.delta, mu / params.delta)
        return int(min(rng.poisson(lam), SUPPORT_MAX))
    if u < cum[1]:
        return 0
    if u < cum[2]:
        return int(ATTRACTORS[rng.integers(len(ATTRACTORS))])
    return SUPPORT_MAX - 1


def child_rng(seed: int, child_index: int) -> np.random.Generator:
    """Independent per-child stream: master seed plus the child's index."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(child_index,)))


def generate_dataset(cfg: SimConfig) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Simulate the cohort; returns (children, trials) tables.

    Per child: draw a segment from the shares, draw covariates, shuffle the
    8 settings within each block of 8 rounds, then play rounds in order with
    loss feedback entering the next round's design row.
    """
    params = cfg.true_params
    layout = _beta_layout(cfg.schema)
    stats = cfg.covariates.numeric_stats()
    share_cum = np.cumsum(params.pi)
    n_blocks = cfg.n_trials // len(ALL_SETTINGS)

    person_cols = list(cfg.schema.numeric) + [
        n for n, _ in cfg.schema.categorical if n not in GAME_COLUMNS
    ]
    child_rows = []
    trial_rows = []
    for i in range(cfg.n_children):
        rng = child_rng(cfg.seed, i)
        segment = int(np.searchsorted(share_cum, rng.random(), side="right"))
        segment = min(segment, params.n_segments - 1)
        covs = cfg.covariates.draw(rng)
        alpha_s = params.alpha[segment]

        order = np.concatenate(
            [rng.permutation(len(ALL_SETTINGS)) for _ in range(n_blocks)]
        )
        prev_loss, prev2_loss = 0, 0
        for t in range(cfg.n_trials):
            s = ALL_SETTINGS[order[t]]
            values = dict(covs)
            values.update(
                gain=str(s.gain_amount),
                loss=str(s.loss_amount),
                loss_cards=str(s.n_loss_cards),
                prev_loss=str(prev_loss),
                prev2_loss=str(prev2_loss),
            )
            eta = alpha_s + _eta_pieces(layout, params.beta, stats, values)
            mu = float(np.logaddexp(0.0, eta))
            z = _draw_intended(mu, params, rng)
            outcome = simulate_trial(z, s, rng)
            trial_rows.append(
                (
                    i,
                    t + 1,
                    s.gain_amount,
                    s.loss_amount,
                    s.n_loss_cards,
                    prev_loss,
                    prev2_loss,
                    outcome.y,
                    int(outcome.censored),
                    outcome.score,
                    outcome.z_true,
                )
            )
            prev2_loss = prev_loss
            prev_loss = int(outcome.censored)

        child_rows.append([i, segment + 1] + [covs[c] for c in person_cols])

    children = pd.DataFrame(
        child_rows, columns=["child_id", "segment_true"] + person_cols
    )
    trials = pd.DataFrame(
        trial_rows,
        columns=[
            "child_id",
            "trial_index",
            "gain_amount",
            "loss_amount",
            "n_loss_cards",
            "prev_loss",
            "prev2_loss",
            "y",
            "censored",
            "score",
            "z_true",
        ],
    )
    return children, trials
