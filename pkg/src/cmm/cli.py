"""Command-line pipeline: simulate, fit, select, posteriors, profile,
predict, evaluate.

Every command reads a JSON config (flags override config keys), writes its
artifacts into the output directory with fixed names, and drops a
manifest.json recording tool version, config hash, seed, and wall time.
Exit codes: 0 success, 2 config error, 3 data error, 4 convergence failure,
5 internal invariant breach.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .data import DataError, pack, read_children, read_trials, write_table
from .design import CovariateSchema
from .distributions import SUPPORT_MAX
from .estimate import FitConfig, FitResult, fit, fit_result_to_dict
from .game import GameSetting
from .inference import posteriors, select_segments, significance_stars, weighted_profile
from .params import ModelParams, params_from_dict, params_to_dict
from .predict import (
    aggregate_distribution,
    censor_correct,
    censored_outcome_distribution,
    evaluate,
    expected_cards_rows,
)
from .presets import (
    default_covariates,
    default_schema,
    game_only_schema,
    true_model,
)
from .simulate import (
    CategoricalSpec,
    CovariateGenerator,
    NumericSpec,
    SimConfig,
    generate_dataset,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4
EXIT_INVARIANT = 5


class ConfigError(ValueError):
    """The run configuration is unusable."""


class ConvergenceFailure(RuntimeError):
    """The optimizer did not reach the convergence criteria."""


def _parse_segments(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad segments range: {text}")
        return list(range(lo, hi + 1))
    value = int(text)
    if value < 1:
        raise ConfigError(f"bad segment count: {text}")
    return [value]


def _schema_from_config(spec) -> CovariateSchema:
    if spec is None or spec == "default":
        return default_schema()
    if spec == "default_no_interactions":
        return default_schema(interactions=False)
    if spec == "game_only":
        return game_only_schema()
    if isinstance(spec, dict):
        try:
            return CovariateSchema(
                numeric=tuple(spec.get("numeric", ())),
                categorical=tuple(
                    (name, tuple(labels))
                    for name, labels in spec.get("categorical", ())
                ),
                interactions=tuple(
                    tuple(pair) for pair in spec.get("interactions", ())
                ),
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid schema: {exc}") from exc
    raise ConfigError(f"unknown schema spec: {spec!r}")


def _covariates_from_config(spec) -> CovariateGenerator:
    if spec is None or spec == "default":
        return default_covariates()
    if isinstance(spec, dict):
        try:
            numeric = {
                name: NumericSpec(**values)
                for name, values in spec.get("numeric", {}).items()
            }
            categorical = {
                name: CategoricalSpec(tuple(v["labels"]), tuple(v["probs"]))
                for name, v in spec.get("categorical", {}).items()
            }
            return CovariateGenerator(numeric=numeric, categorical=categorical)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid covariates spec: {exc}") from exc
    raise ConfigError(f"unknown covariates spec: {spec!r}")


def _params_from_config(spec) -> ModelParams:
    if spec is None or spec == "default":
        return true_model()
    if isinstance(spec, str):
        path = Path(spec)
        if not path.exists():
            raise ConfigError(f"parameter file not found: {spec}")
        doc = json.loads(path.read_text())
        params, _, _ = params_from_dict(doc.get("params", doc))
        return params
    raise ConfigError(f"unknown truth spec: {spec!r}")


def _load_config(args) -> dict:
    cfg = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {args.config}")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    for key in ("seed", "out", "threads", "segments", "children", "trials",
                "fit", "predictions", "score_column", "truth", "schema"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "appendix_c_literal", False):
        cfg["appendix_c_literal"] = True
    cfg.setdefault("out", ".")
    cfg.setdefault("seed", 0)
    return cfg


_UNHASHED_KEYS = ("out", "threads", "children", "trials", "fit",
                  "predictions", "truth")


def _config_hash(cfg: dict) -> str:
    """Digest of the analysis settings.

    File locations and the thread cap steer execution, not the analysis, so
    the same run hashes identically wherever its files live; the data files
    themselves carry the input identity.
    """
    content = {k: v for k, v in cfg.items() if k not in _UNHASHED_KEYS}
    canon = json.dumps(content, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def _write_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _manifest(out: Path, command: str, cfg: dict, outputs: list[str],
              started: float) -> None:
    _write_json(
        {
            "command": command,
            "version": __version__,
            "config_hash": _config_hash(cfg),
            "seed": cfg.get("seed"),
            "outputs": sorted(outputs),
            "wall_time_s": round(time.perf_counter() - started, 3),
        },
        out / "manifest.json",
    )


def _load_packed(cfg: dict, schema: CovariateSchema,
                 numeric_stats: dict | None = None,
                 score_column: str | None = None):
    for key in ("children", "trials"):
        if key not in cfg:
            raise ConfigError(f"missing required input path: {key}")
        if not Path(cfg[key]).exists():
            raise DataError(f"input file not found: {cfg[key]}")
    children = read_children(cfg["children"])
    trials = read_trials(cfg["trials"])
    return pack(children, trials, schema, numeric_stats, score_column)


def _load_fit_doc(cfg: dict) -> dict:
    if "fit" not in cfg:
        raise ConfigError("missing required input path: fit")
    path = Path(cfg["fit"])
    if not path.exists():
        raise DataError(f"fit file not found: {cfg['fit']}")
    return json.loads(path.read_text())


def _fit_params_and_stats(doc: dict) -> tuple[ModelParams, dict]:
    params, _, _ = params_from_dict(doc["params"])
    stats = {k: tuple(v) for k, v in doc.get("numeric_stats", {}).items()}
    return params, stats or None


def _fit_config(cfg: dict, n_segments: int) -> FitConfig:
    return FitConfig(
        n_segments=n_segments,
        reltol=float(cfg.get("reltol", 1e-10)),
        max_iters=int(cfg.get("max_iters", 500)),
        warm_start_n=int(cfg.get("warm_start_n", 100)),
        seed=int(cfg.get("seed", 0)),
    )


def _fit_doc(result: FitResult, cfg: dict) -> dict:
    doc = fit_result_to_dict(result)
    doc["numeric_stats"] = {
        name: list(stat)
        for name, stat in result.space.design.numeric_stats.items()
    }
    doc["seed"] = cfg.get("seed")
    doc["version"] = __version__
    return doc


def _posteriors_frame(result_params: ModelParams, packed) -> pd.DataFrame:
    from .likelihood import responsibilities

    P = responsibilities(result_params, packed)
    frame = pd.DataFrame(
        {"child_id": packed.child_ids}
        | {f"p_{s + 1}": P[:, s] for s in range(P.shape[1])}
    )
    frame["map_segment"] = P.argmax(axis=1) + 1
    return frame


def cmd_simulate(cfg: dict, out: Path) -> tuple[int, list[str]]:
    params = _params_from_config(cfg.get("truth"))
    schema = _schema_from_config(cfg.get("schema"))
    covariates = _covariates_from_config(cfg.get("covariates"))
    try:
        sim = SimConfig(
            n_children=int(cfg.get("n_children", 100)),
            true_params=params,
            schema=schema,
            covariates=covariates,
            n_trials=int(cfg.get("n_trials", 16)),
            seed=int(cfg["seed"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    children, trials = generate_dataset(sim)
    write_table(children, out / "children.csv")
    write_table(trials, out / "trials.csv")
    truth = params_to_dict(params, _design_for_schema(schema))
    _write_json({"params": truth, "seed": sim.seed}, out / "truth.json")
    return EXIT_OK, ["children.csv", "trials.csv", "truth.json"]


def _design_for_schema(schema: CovariateSchema):
    """DesignInfo skeleton for serializing params without data (no z stats)."""
    from .design import Block, DesignInfo

    columns, blocks = [], []
    columns.extend(schema.numeric)
    offset = len(schema.numeric)
    sizes = dict()
    for name, labels in schema.categorical:
        labels = tuple(str(v) for v in labels)
        sizes[name] = labels
        blocks.append(Block(name, labels, offset))
        columns.extend(f"{name}[{lab}]" for lab in labels)
        offset += len(labels)
    for a, b in schema.interactions:
        labels = tuple(
            f"{la}:{lb}" for lb in sizes[b] for la in sizes[a]
        )
        blocks.append(Block(f"{a}:{b}", labels, offset))
        columns.extend(f"{a}:{b}[{lab}]" for lab in labels)
        offset += len(labels)
    return DesignInfo(tuple(columns), tuple(blocks), {})


def cmd_fit(cfg: dict, out: Path) -> tuple[int, list[str]]:
    schema = _schema_from_config(cfg.get("schema"))
    packed = _load_packed(cfg, schema)
    segments = _parse_segments(str(cfg.get("segments", 1)))
    if len(segments) != 1:
        raise ConfigError("fit takes a single segment count; use select for ranges")
    result = fit(packed, _fit_config(cfg, segments[0]))
    _write_json(_fit_doc(result, cfg), out / "fit.json")
    write_table(_posteriors_frame(result.params, packed), out / "posteriors.csv")
    outputs = ["fit.json", "posteriors.csv"]
    if not result.converged:
        return EXIT_CONVERGENCE, outputs
    return EXIT_OK, outputs


def cmd_select(cfg: dict, out: Path) -> tuple[int, list[str]]:
    schema = _schema_from_config(cfg.get("schema"))
    packed = _load_packed(cfg, schema)
    segments = _parse_segments(str(cfg.get("segments", "1..4")))
    fits, outputs = [], []
    for s in segments:
        result = fit(packed, _fit_config(cfg, s))
        fits.append(result)
        name = f"fit_S{s}.json"
        _write_json(_fit_doc(result, cfg), out / name)
        outputs.append(name)
    report = select_segments(
        fits,
        min_share=float(cfg.get("min_share", 0.05)),
        min_alpha_gap_se=float(cfg.get("min_alpha_gap_se", 2.0)),
    )
    _write_json(
        {
            "rows": list(report.rows),
            "recommended": report.recommended,
            "override": report.override,
            "min_share": report.min_share,
            "min_alpha_gap_se": report.min_alpha_gap_se,
        },
        out / "selection_report.json",
    )
    outputs.append("selection_report.json")
    return EXIT_OK, outputs


def cmd_posteriors(cfg: dict, out: Path) -> tuple[int, list[str]]:
    schema = _schema_from_config(cfg.get("schema"))
    params, stats = _fit_params_and_stats(_load_fit_doc(cfg))
    packed = _load_packed(cfg, schema, stats)
    write_table(_posteriors_frame(params, packed), out / "posteriors.csv")
    return EXIT_OK, ["posteriors.csv"]


def cmd_profile(cfg: dict, out: Path) -> tuple[int, list[str]]:
    schema = _schema_from_config(cfg.get("schema"))
    score_column = cfg.get("score_column")
    if not score_column:
        raise ConfigError("profile needs score_column")
    params, stats = _fit_params_and_stats(_load_fit_doc(cfg))
    packed = _load_packed(cfg, schema, stats, score_column=score_column)

    from .likelihood import responsibilities

    P = responsibilities(params, packed)
    profile = weighted_profile(P, packed.score)
    row = {"score": score_column}
    for s in range(P.shape[1]):
        row[f"mean_{s + 1}"] = profile.psi_star[s]
    row.update(
        statistic=profile.statistic,
        df=profile.df,
        p_value=profile.p_value,
        stars=significance_stars(profile.p_value),
    )
    write_table(pd.DataFrame([row]), out / "profile.csv")
    return EXIT_OK, ["profile.csv"]


def _distribution_frame(card_mass_pairs: dict) -> pd.DataFrame:
    frame = pd.DataFrame({"card": np.arange(SUPPORT_MAX + 1)})
    for name, mass in card_mass_pairs.items():
        frame[name] = mass
    return frame


def cmd_predict(cfg: dict, out: Path) -> tuple[int, list[str]]:
    schema = _schema_from_config(cfg.get("schema"))
    params, stats = _fit_params_and_stats(_load_fit_doc(cfg))
    packed = _load_packed(cfg, schema, stats)
    literal = bool(cfg.get("appendix_c_literal", False))

    y_hat = expected_cards_rows(params, packed.X)
    preds = pd.DataFrame(
        {
            "child_id": np.repeat(packed.child_ids, packed.trials_per_child()),
            "trial_index": packed.trial_index,
            "y": packed.y,
            "censored": packed.censored,
            "y_hat": y_hat,
        }
    )
    write_table(preds, out / "predictions.csv")
    outputs = ["predictions.csv"]

    unc = packed.censored == 0
    emp_unc = np.bincount(packed.y[unc], minlength=SUPPORT_MAX + 1)
    emp_unc = emp_unc / max(emp_unc.sum(), 1)
    agg = aggregate_distribution(params, packed.X, truncate_at_32=not literal)
    write_table(
        _distribution_frame(
            {"empirical_uncensored": emp_unc, "predicted": agg.mass}
        ),
        out / "distribution_uncensored.csv",
    )
    outputs.append("distribution_uncensored.csv")

    for n_loss in (1, 3):
        setting = GameSetting(10, 250, n_loss)
        rows = packed.n_loss_cards == n_loss
        cens = rows & (packed.censored == 1)
        emp = np.bincount(packed.y[cens], minlength=SUPPORT_MAX + 1)
        emp = emp / max(emp.sum(), 1)
        corrected = censor_correct(agg, setting)
        overlay = censored_outcome_distribution(
            params, packed.X[rows], setting, normalize=True
        )
        write_table(
            _distribution_frame(
                {
                    "empirical_censored": emp,
                    "predicted_censor_scaled": corrected,
                    "predicted_stop_profile": overlay,
                }
            ),
            out / f"distribution_censored_{n_loss}.csv",
        )
        outputs.append(f"distribution_censored_{n_loss}.csv")
    return EXIT_OK, outputs


def cmd_evaluate(cfg: dict, out: Path) -> tuple[int, list[str]]:
    if "predictions" not in cfg:
        raise ConfigError("evaluate needs a predictions file")
    path = Path(cfg["predictions"])
    if not path.exists():
        raise DataError(f"predictions file not found: {cfg['predictions']}")
    preds = pd.read_csv(path)
    for col in ("y", "censored", "y_hat"):
        if col not in preds.columns:
            raise DataError(f"predictions file missing column {col}")
    try:
        rmse, mad = evaluate(
            preds["y_hat"].to_numpy(),
            preds["y"].to_numpy(),
            preds["censored"].to_numpy(),
        )
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    n_unc = int((preds["censored"] == 0).sum())
    write_table(
        pd.DataFrame([{"n_uncensored": n_unc, "rmse": rmse, "mad": mad}]),
        out / "evaluation.csv",
    )
    return EXIT_OK, ["evaluation.csv"]


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select": cmd_select,
    "posteriors": cmd_posteriors,
    "profile": cmd_profile,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmm",
        description="Censored mixture modeling of card-game risk taking",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="master random seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--threads", type=int, help="cap worker threads")
    parser.add_argument("--segments", help="segment count n or range a..b")
    parser.add_argument(
        "--appendix-c-literal",
        action="store_true",
        help="predict: report the raw extended-range mass at 32 instead of "
        "folding the upper tail into the top cell",
    )
    parser.add_argument("--children", help="children.csv path")
    parser.add_argument("--trials", help="trials.csv path")
    parser.add_argument("--fit", help="fit.json path (posteriors/profile/predict)")
    parser.add_argument("--predictions", help="predictions.csv path (evaluate)")
    parser.add_argument("--score-column", dest="score_column",
                        help="children column profiled across segments")
    parser.add_argument("--truth", help="simulate: parameter JSON or 'default'")
    parser.add_argument(
        "--schema",
        help="covariate schema preset: default, default_no_interactions, "
        "game_only (inline schemas go in the config file)",
    )
    return parser


def _thread_limit(n: int | None):
    """Cap BLAS pools when threadpoolctl is available; heavy reductions are
    BLAS-free so results do not depend on this."""
    if n is None:
        import contextlib

        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=n)
    except ImportError:
        import contextlib

        return contextlib.nullcontext()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        cfg = _load_config(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot prepare output directory: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with _thread_limit(cfg.get("threads")):
            code, outputs = _COMMANDS[args.command](cfg, out)
        _manifest(out, args.command, cfg, outputs, started)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceFailure as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except Exception as exc:  # noqa: BLE001 - last-resort invariant guard
        print(f"internal invariant breach: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
