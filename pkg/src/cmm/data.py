"""Dataset IO and packing: normative CSV schemas for the two tables, the
merge into a per-round covariate frame, and construction of the model-ready
arrays."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .design import CovariateSchema, PackedData, build_design
from .distributions import SUPPORT_MAX

TRIALS_REQUIRED = (
    "child_id",
    "trial_index",
    "gain_amount",
    "loss_amount",
    "n_loss_cards",
    "prev_loss",
    "prev2_loss",
    "y",
    "censored",
)
TRIALS_OPTIONAL = ("score", "z_true")
GAME_RENAMES = {
    "gain_amount": "gain",
    "loss_amount": "loss",
    "loss_cards": "loss_cards",
}


class DataError(ValueError):
    """Input tables violate the documented schema."""


def validate_trials(trials: pd.DataFrame) -> None:
    missing = [c for c in TRIALS_REQUIRED if c not in trials.columns]
    if missing:
        raise DataError(f"trials table missing columns: {missing}")
    if trials[list(TRIALS_REQUIRED)].isna().any().any():
        raise DataError("trials table contains missing values")
    y = trials["y"].to_numpy()
    cens = trials["censored"].to_numpy()
    if not np.isin(cens, (0, 1)).all():
        raise DataError("censored must be 0/1")
    if ((y < 0) | (y > SUPPORT_MAX)).any():
        raise DataError("y must lie in 0..32")
    if ((cens == 1) & (y < 1)).any():
        raise DataError("a censored round must reveal at least one card")
    for col, allowed in (
        ("gain_amount", (10, 30)),
        ("loss_amount", (250, 750)),
        ("n_loss_cards", (1, 3)),
        ("prev_loss", (0, 1)),
        ("prev2_loss", (0, 1)),
    ):
        if not np.isin(trials[col].to_numpy(), allowed).all():
            raise DataError(f"{col} must take values in {allowed}")


def validate_children(children: pd.DataFrame) -> None:
    if "child_id" not in children.columns:
        raise DataError("children table missing child_id")
    if children["child_id"].duplicated().any():
        raise DataError("duplicate child_id in children table")


def assemble_frame(children: pd.DataFrame, trials: pd.DataFrame) -> pd.DataFrame:
    """One row per round: trial columns renamed to model names, child columns
    broadcast; sorted by (child_id, trial_index)."""
    validate_children(children)
    validate_trials(trials)
    unknown = set(trials["child_id"]) - set(children["child_id"])
    if unknown:
        raise DataError(f"trials reference unknown child_id: {sorted(unknown)[:5]}")
    merged = trials.merge(children, on="child_id", how="left", validate="m:1")
    merged = merged.sort_values(
        ["child_id", "trial_index"], kind="stable"
    ).reset_index(drop=True)
    merged["gain"] = merged["gain_amount"]
    merged["loss"] = merged["loss_amount"]
    merged["loss_cards"] = merged["n_loss_cards"]
    return merged


def pack(children: pd.DataFrame, trials: pd.DataFrame, schema: CovariateSchema,
         numeric_stats: dict | None = None,
         score_column: str | None = None) -> PackedData:
    """Merge, encode, and group the tables into model-ready arrays.

    `score_column` names a children-table column carried along as the
    per-child external score for profile analyses.
    """
    frame = assemble_frame(children, trials)
    try:
        X, info = build_design(frame, schema, numeric_stats)
    except ValueError as exc:
        # schema asks for columns or labels the tables do not provide
        raise DataError(str(exc)) from exc
    ids = frame["child_id"].to_numpy()
    change = np.flatnonzero(np.concatenate([[True], ids[1:] != ids[:-1]]))
    starts = np.concatenate([change, [len(ids)]])
    child_score = None
    if score_column is not None:
        if score_column not in frame.columns:
            raise DataError(f"score column {score_column!r} not found")
        child_score = frame[score_column].to_numpy(dtype=float)[change]
        if not np.all(np.isfinite(child_score)):
            raise DataError("score column contains missing values")
    return PackedData(
        y=frame["y"].to_numpy(dtype=np.int64),
        censored=frame["censored"].to_numpy(dtype=np.int64),
        X=X,
        child_starts=starts,
        child_ids=ids[change],
        trial_index=frame["trial_index"].to_numpy(dtype=np.int64),
        gain=frame["gain_amount"].to_numpy(dtype=np.int64),
        loss=frame["loss_amount"].to_numpy(dtype=np.int64),
        n_loss_cards=frame["n_loss_cards"].to_numpy(dtype=np.int64),
        design=info,
        score=child_score,
    )


def write_table(frame: pd.DataFrame, path: str | Path) -> None:
    """Deterministic CSV: header row, UTF-8, '.' decimals, LF line ends."""
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


def read_children(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    validate_children(frame)
    return frame


def read_trials(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    validate_trials(frame)
    return frame
