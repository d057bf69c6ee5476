"""Design matrix construction: z-scored numerics, full dummy blocks, interactions.

Every categorical variable enters with one dummy per category. The model
identifies these blocks through sum-to-zero constraints; this module owns the
block bookkeeping and the expand/collapse between the reference-zero (free)
coding used by the optimizer and the sum-zero coding used for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd


def standardize(values) -> tuple[np.ndarray, float, float]:
    """Z-score a numeric column with the population-sd convention.

    Returns (z, mean, sd); the stored statistics are reused verbatim when
    transforming later data with `apply_standardize`.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise ValueError("numeric column must be non-empty and finite")
    mean = float(v.mean())
    sd = float(v.std())  # ddof=0
    if sd == 0.0:
        raise ValueError("degenerate column: zero spread")
    return (v - mean) / sd, mean, sd


def apply_standardize(values, mean: float, sd: float) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("numeric column must be finite")
    return (v - mean) / sd


@dataclass(frozen=True)
class CovariateSchema:
    """Declares model covariates in layout order.

    numeric: column names entering as z-scores.
    categorical: (name, labels) pairs; the first label is the reference.
    interactions: (name_a, name_b) pairs of declared categorical blocks,
    expanded to product-dummy blocks with their own sum-zero constraint.
    """

    numeric: tuple = ()
    categorical: tuple = ()
    interactions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "numeric", tuple(self.numeric))
        object.__setattr__(
            self, "categorical", tuple((n, tuple(ls)) for n, ls in self.categorical)
        )
        object.__setattr__(self, "interactions", tuple(tuple(p) for p in self.interactions))
        names = list(self.numeric) + [n for n, _ in self.categorical]
        if len(set(names)) != len(names):
            raise ValueError("covariate names must be unique")
        declared = {n for n, _ in self.categorical}
        for n, ls in self.categorical:
            if len(ls) < 2 or len(set(ls)) != len(ls):
                raise ValueError(f"categorical {n} needs >= 2 distinct labels")
        for a, b in self.interactions:
            if a not in declared or b not in declared:
                raise ValueError(f"interaction ({a}, {b}) references undeclared block")


@dataclass(frozen=True)
class Block:
    """One dummy block: columns offset..offset+size-1 of the design matrix."""

    name: str
    labels: tuple
    offset: int
    reference: int = 0

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class DesignInfo:
    columns: tuple
    blocks: tuple
    numeric_stats: dict

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    def free_column_indices(self) -> np.ndarray:
        """Design columns kept by the free coding (reference dummies dropped)."""
        drop = {b.offset + b.reference for b in self.blocks}
        return np.array([j for j in range(self.n_columns) if j not in drop])


def _categorical_dummies(series: pd.Series, name: str, labels: tuple) -> np.ndarray:
    values = series.astype(str).to_numpy()
    codes = np.full(values.shape[0], -1, dtype=int)
    for idx, lab in enumerate(labels):
        codes[values == lab] = idx
    if np.any(codes < 0):
        bad = sorted(set(values[codes < 0]))
        raise ValueError(f"unknown categories in {name}: {bad}")
    out = np.zeros((values.shape[0], len(labels)))
    out[np.arange(values.shape[0]), codes] = 1.0
    return out


def build_design(
    frame: pd.DataFrame, schema: CovariateSchema, numeric_stats: dict | None = None
) -> tuple[np.ndarray, DesignInfo]:
    """Build the per-trial design matrix from an assembled covariate frame.

    `numeric_stats` carries frozen (mean, sd) per numeric column; pass the
    stats returned from the training build when transforming held-out data.
    """
    for name in schema.numeric:
        if name not in frame.columns:
            raise ValueError(f"missing numeric column {name}")
    for name, _ in schema.categorical:
        if name not in frame.columns:
            raise ValueError(f"missing categorical column {name}")
    if frame[list(schema.numeric)].isna().any().any() if schema.numeric else False:
        raise ValueError("missing values in numeric covariates")

    parts, columns, blocks = [], [], []
    stats = {}
    for name in schema.numeric:
        if numeric_stats is not None:
            mean, sd = numeric_stats[name]
            z = apply_standardize(frame[name].to_numpy(), mean, sd)
        else:
            z, mean, sd = standardize(frame[name].to_numpy())
        stats[name] = (mean, sd)
        parts.append(z[:, None])
        columns.append(name)

    label_map = dict(schema.categorical)
    dummies = {}
    offset = len(schema.numeric)
    for name, labels in schema.categorical:
        if frame[name].isna().any():
            raise ValueError(f"missing values in categorical column {name}")
        d = _categorical_dummies(frame[name], name, labels)
        dummies[name] = d
        parts.append(d)
        blocks.append(Block(name, labels, offset))
        columns.extend(f"{name}[{lab}]" for lab in labels)
        offset += len(labels)

    for a, b in schema.interactions:
        la, lb = label_map[a], label_map[b]
        cols = []
        labels = []
        # second factor outermost so the block reads a1:b1, a2:b1, a1:b2, ...
        for jb in range(len(lb)):
            for ja in range(len(la)):
                cols.append(dummies[a][:, ja] * dummies[b][:, jb])
                labels.append(f"{la[ja]}:{lb[jb]}")
        parts.append(np.column_stack(cols))
        name = f"{a}:{b}"
        blocks.append(Block(name, tuple(labels), offset))
        columns.extend(f"{name}[{lab}]" for lab in labels)
        offset += len(labels)

    X = np.hstack(parts) if parts else np.zeros((len(frame), 0))
    return X, DesignInfo(tuple(columns), tuple(blocks), stats)


def sum_zero_expand(alpha, beta_full, blocks) -> tuple[np.ndarray, np.ndarray]:
    """Recenter every dummy block to sum to zero, absorbing means into alpha.

    The linear predictor is invariant: subtracting a block mean m and adding
    m to every intercept leaves alpha_s + x'beta unchanged because exactly
    one dummy per block is active.
    """
    alpha = np.array(alpha, dtype=float)
    beta = np.array(beta_full, dtype=float)
    for b in blocks:
        seg = beta[b.offset : b.offset + b.size]
        m = seg.mean()
        seg -= m
        alpha += m
    return alpha, beta


def sum_zero_collapse(alpha, beta, blocks) -> tuple[np.ndarray, np.ndarray]:
    """Inverse recentering: zero the reference entry of every block."""
    alpha = np.array(alpha, dtype=float)
    beta = np.array(beta, dtype=float)
    for b in blocks:
        seg = beta[b.offset : b.offset + b.size]
        r = seg[b.reference]
        seg -= r
        alpha += r
    return alpha, beta


@dataclass(frozen=True)
class PackedData:
    """Model-ready dataset: outcomes, design rows, and child grouping.

    Rows are sorted by child; `child_starts` delimits each child's block of
    trials (ragged trial counts allowed).
    """

    y: np.ndarray
    censored: np.ndarray
    X: np.ndarray
    child_starts: np.ndarray
    child_ids: np.ndarray
    trial_index: np.ndarray
    gain: np.ndarray
    loss: np.ndarray
    n_loss_cards: np.ndarray
    design: DesignInfo
    score: np.ndarray | None = None

    @property
    def n_children(self) -> int:
        return len(self.child_ids)

    @property
    def n_trials(self) -> int:
        return len(self.y)

    def trials_per_child(self) -> np.ndarray:
        return np.diff(self.child_starts)

    def subset(self, child_indices) -> "PackedData":
        """Restrict to the given children (used by the warm start)."""
        child_indices = np.asarray(child_indices)
        rows = np.concatenate(
            [np.arange(self.child_starts[i], self.child_starts[i + 1]) for i in child_indices]
        )
        counts = self.trials_per_child()[child_indices]
        starts = np.concatenate([[0], np.cumsum(counts)])
        return PackedData(
            y=self.y[rows],
            censored=self.censored[rows],
            X=self.X[rows],
            child_starts=starts,
            child_ids=self.child_ids[child_indices],
            trial_index=self.trial_index[rows],
            gain=self.gain[rows],
            loss=self.loss[rows],
            n_loss_cards=self.n_loss_cards[rows],
            design=self.design,
            score=None if self.score is None else self.score[child_indices],
        )
