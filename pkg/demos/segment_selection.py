"""Pick the number of segments for a simulated cohort.

Candidates S = 1..3 are each fit by maximum likelihood, then scored on BIC
improvement, smallest share, and intercept separation in joint standard
errors.  The generating model has two segments, so the report should
recommend S = 2 without an override.

    python3 demos/segment_selection.py
"""

import numpy as np

from cmm.data import pack
from cmm.estimate import FitConfig, fit
from cmm.inference import select_segments
from cmm.params import ModelParams
from cmm.presets import game_only_schema
from cmm.simulate import CovariateGenerator, SimConfig, generate_dataset

GAME_BETA = np.array(
    [0.343, -0.343, 0.195, -0.195, 0.85, -0.85, 0.823, -0.823, 0.502, -0.502]
)

TRUTH = ModelParams(
    alpha=np.array([8.0, 24.0]),
    beta=GAME_BETA,
    delta=8.0,
    phi=np.array([0.90, 0.02, 0.05, 0.03]),
    pi=np.array([0.4, 0.6]),
)


def main():
    schema = game_only_schema()
    cfg = SimConfig(
        n_children=240,
        true_params=TRUTH,
        schema=schema,
        covariates=CovariateGenerator(numeric={}, categorical={}),
        seed=20,
    )
    children, trials = generate_dataset(cfg)
    packed = pack(children, trials, schema)

    fits = []
    for s in (1, 2, 3):
        print(f"fitting S = {s} ...")
        fits.append(fit(packed, FitConfig(n_segments=s, seed=1)))

    report = select_segments(fits)
    print("\n S        BIC  min share  gap/SE  BIC down  share ok  sep ok")
    for row in report.rows:
        gap = row["min_alpha_gap_se"]
        gap_txt = f"{gap:6.1f}" if np.isfinite(gap) else "   inf"
        print(f" {row['S']}  {row['bic']:9.1f}      {row['min_share']:.3f}"
              f"  {gap_txt}"
              f"      {str(row['bic_improved']):<5}"
              f"     {str(row['share_ok']):<5}"
              f"    {str(row['separation_ok']):<5}")
    tail = " (override: fell back to best BIC)" if report.override else ""
    print(f"\nrecommended: S = {report.recommended}{tail}")


if __name__ == "__main__":
    main()
