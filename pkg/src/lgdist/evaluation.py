"""Dropout simulation, masked metrics, robustness sweeps, and ablation scoring.

Simulated dropout only ever hides entries the assay actually measured, so the
hidden values double as ground truth. Metrics are computed exclusively over
the simulated entries. The default gene scope is the HSAG columns: context
genes stay observed and keep feeding the model's conditioning, which is
exactly the role they play in the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lgdist.data import GenePanel, Slide
from lgdist.diffusion import TrainedDenoiser, complete_slide
from lgdist.errors import ConfigError, DegenerateInputError, ShapeError
from lgdist.preprocess import median_precomplete
from lgdist.rng import philox

GENE_SCOPES = ("hsags", "all")


@dataclass
class SimulationMask:
    entries: np.ndarray  # (k, 2) spot, panel gene index; every entry was observed
    fraction: float
    seed: int
    gene_scope: str


@dataclass
class MetricsReport:
    mse: float
    pcc: float | None  # None when undefined (zero variance)
    n_entries: int
    per_gene: dict[int, dict]


def simulate_dropout(
    slide: Slide, panel: GenePanel, fraction: float, seed: int, gene_scope: str = "hsags"
) -> SimulationMask:
    """Uniformly hide floor(fraction * observed-in-scope) measured entries."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError("fraction must lie strictly between 0 and 1")
    if gene_scope not in GENE_SCOPES:
        raise ConfigError(f"gene_scope must be one of {GENE_SCOPES}")
    cols = panel.hsag_count if gene_scope == "hsags" else panel.gene_count
    observed = np.argwhere(slide.observed_mask[:, :cols] == 1)
    count = int(np.floor(fraction * observed.shape[0]))
    if count == 0:
        raise ConfigError("fraction yields zero simulated entries")
    pick = philox(seed, "simulate", slide.slide_id).choice(
        observed.shape[0], size=count, replace=False
    )
    entries = observed[np.sort(pick)].astype(np.int64)
    return SimulationMask(entries, fraction, seed, gene_scope)


def apply_simulation(slide: Slide, mask: SimulationMask) -> Slide:
    """Corrupted copy: simulated entries become unobserved zeros."""
    expr = slide.expression.copy()
    obs = slide.observed_mask.copy()
    rows, cols = mask.entries[:, 0], mask.entries[:, 1]
    if np.any(slide.observed_mask[rows, cols] == 0):
        raise ConfigError("simulation mask covers entries that were never observed")
    expr[rows, cols] = 0.0
    obs[rows, cols] = 0
    return Slide(slide.slide_id, slide.coords.copy(), expr, obs)


def masked_mse(truth: np.ndarray, predicted: np.ndarray, entries: np.ndarray) -> float:
    if truth.shape != predicted.shape:
        raise ShapeError("truth and prediction shapes differ")
    if entries.shape[0] == 0:
        raise DegenerateInputError("empty evaluation mask")
    rows, cols = entries[:, 0], entries[:, 1]
    diff = truth[rows, cols].astype(np.float64) - predicted[rows, cols].astype(np.float64)
    return float(np.mean(diff * diff))


def masked_pcc(truth: np.ndarray, predicted: np.ndarray, entries: np.ndarray) -> float:
    if truth.shape != predicted.shape:
        raise ShapeError("truth and prediction shapes differ")
    if entries.shape[0] == 0:
        raise DegenerateInputError("empty evaluation mask")
    rows, cols = entries[:, 0], entries[:, 1]
    a = truth[rows, cols].astype(np.float64)
    b = predicted[rows, cols].astype(np.float64)
    a = a - a.mean()
    b = b - b.mean()
    va, vb = float(a @ a), float(b @ b)
    if va == 0.0 or vb == 0.0:
        raise DegenerateInputError("zero variance over masked entries; PCC undefined")
    return float((a @ b) / np.sqrt(va * vb))


def compute_metrics(truth: np.ndarray, predicted: np.ndarray, entries: np.ndarray) -> MetricsReport:
    mse = masked_mse(truth, predicted, entries)
    try:
        pcc = masked_pcc(truth, predicted, entries)
    except DegenerateInputError:
        pcc = None
    per_gene: dict[int, dict] = {}
    for gene in np.unique(entries[:, 1]):
        sub = entries[entries[:, 1] == gene]
        row = {"mse": masked_mse(truth, predicted, sub), "n": int(sub.shape[0])}
        try:
            row["pcc"] = masked_pcc(truth, predicted, sub)
        except DegenerateInputError:
            row["pcc"] = None
        per_gene[int(gene)] = row
    return MetricsReport(mse, pcc, int(entries.shape[0]), per_gene)


# ---------------------------------------------------------------------------
# completers: corrupted slide + targets -> full predicted matrix
# ---------------------------------------------------------------------------


def median_completer(corrupted: Slide, panel: GenePanel, entries: np.ndarray) -> np.ndarray:
    return median_precomplete(corrupted).precompleted


def make_diffusion_completer(denoiser: TrainedDenoiser, ae_model, seed: int = 0):
    def completer(corrupted: Slide, panel: GenePanel, entries: np.ndarray) -> np.ndarray:
        result = complete_slide(
            corrupted, panel, denoiser, ae_model, entries, seed=seed, keep_cgs=True
        )
        return result.full_expression

    return completer


def score_completion(
    slide: Slide,
    panel: GenePanel,
    completer,
    fraction: float,
    seed: int,
    gene_scope: str = "hsags",
) -> MetricsReport:
    """Simulate dropout on one slide, complete it, and score the hidden entries."""
    mask = simulate_dropout(slide, panel, fraction, seed, gene_scope)
    corrupted = apply_simulation(slide, mask)
    predicted = completer(corrupted, panel, mask.entries)
    return compute_metrics(slide.expression, predicted, mask.entries)


def robustness_sweep(
    slide: Slide,
    panel: GenePanel,
    completer,
    fractions,
    seeds,
    gene_scope: str = "hsags",
) -> list[dict]:
    """Mean and std of masked MSE per fraction, over simulation seeds."""
    rows = []
    for fraction in fractions:
        mses = [
            score_completion(slide, panel, completer, fraction, seed, gene_scope).mse
            for seed in seeds
        ]
        rows.append(
            {
                "fraction": float(fraction),
                "mean_mse": float(np.mean(mses)),
                "std_mse": float(np.std(mses)),
                "mses": [float(m) for m in mses],
            }
        )
    return rows


def ablation_run(
    slide: Slide,
    panel: GenePanel,
    variants: dict[str, object],
    fraction: float = 0.3,
    seeds=(0, 1, 2),
    gene_scope: str = "hsags",
) -> dict[str, dict]:
    """Identical simulated-dropout evaluation across named completers."""
    out = {}
    for name in variants:
        completer = variants[name]
        mses = [
            score_completion(slide, panel, completer, fraction, seed, gene_scope).mse
            for seed in seeds
        ]
        out[name] = {
            "mean_mse": float(np.mean(mses)),
            "std_mse": float(np.std(mses)),
            "mses": [float(m) for m in mses],
        }
    return out
