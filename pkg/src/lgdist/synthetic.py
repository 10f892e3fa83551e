"""Desk-scale ground-truth generator: spatially correlated gene fields on hex lattices.

Highly autocorrelated genes are Gaussian random fields obtained by kernel
smoothing of white noise over the hex graph (larger correlation_length gives
higher Moran's I). Context genes blend a fixed per-gene mixture of those base
fields with an independent rougher field. Dropout hides entries uniformly at
random; the true values are kept separately as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lgdist.data import GenePanel, Slide, SplitSpec
from lgdist.errors import ConfigError
from lgdist.hexgrid import hex_distance_matrix
from lgdist.preprocess import build_gene_panel, reorder_slide_to_panel
from lgdist.rng import philox


@dataclass
class SynthConfig:
    rows: int = 20
    cols: int = 20
    gene_count: int = 1024
    hsag_fraction: float = 32 / 1024
    correlation_length: float = 5.0
    cg_correlation: float = 0.8
    dropout_fraction: float = 0.0
    seed: int = 0
    # dataset-level layout used by generate_dataset / the synth subcommand
    n_train_slides: int = 2
    n_val_slides: int = 1
    n_test_slides: int = 1
    name: str = "synthetic"
    # per-gene affine ranges applied to the standardized fields
    level_range: tuple[float, float] = (1.0, 3.0)
    scale_range: tuple[float, float] = (0.4, 1.2)

    def __post_init__(self):
        if self.correlation_length <= 0:
            raise ConfigError("correlation_length must be positive")
        if not 0.0 <= self.cg_correlation <= 1.0:
            raise ConfigError("cg_correlation must lie in [0, 1]")
        if not 0.0 <= self.dropout_fraction < 1.0:
            raise ConfigError("dropout_fraction must lie in [0, 1)")
        if 2.0 * self.correlation_length > min(self.rows, self.cols):
            raise ConfigError(
                f"lattice {self.rows}x{self.cols} too small for correlation length "
                f"{self.correlation_length}"
            )

    @property
    def hsag_count(self) -> int:
        return max(1, round(self.gene_count * self.hsag_fraction))


def lattice_coords(rows: int, cols: int) -> np.ndarray:
    """Visium-style array coordinates: row r holds cols spots at (r, r%2 + 2k)."""
    coords = [(r, r % 2 + 2 * k) for r in range(rows) for k in range(cols)]
    return np.asarray(coords, dtype=np.int32)


def _smoothing_kernel(coords: np.ndarray, length: float) -> np.ndarray:
    d = hex_distance_matrix(coords).astype(np.float64)
    k = np.exp(-(d * d) / (2.0 * length * length))
    return k / k.sum(axis=1, keepdims=True)


def _standardize(fields: np.ndarray) -> np.ndarray:
    mu = fields.mean(axis=0, keepdims=True)
    sd = fields.std(axis=0, keepdims=True)
    sd = np.where(sd > 0, sd, 1.0)
    return (fields - mu) / sd


def _true_fields(cfg: SynthConfig, slide_index: int, coords: np.ndarray) -> np.ndarray:
    """S x G matrix of true expression values for one slide."""
    s = coords.shape[0]
    h = cfg.hsag_count
    kernel = _smoothing_kernel(coords, cfg.correlation_length)
    kernel_rough = _smoothing_kernel(coords, max(cfg.correlation_length / 2.0, 1e-3))

    base = np.empty((s, h))
    for j in range(h):
        z = philox(cfg.seed, "field", slide_index, j).standard_normal(s)
        base[:, j] = kernel @ z
    base = _standardize(base)

    fields = np.empty((s, cfg.gene_count))
    fields[:, :h] = base
    rho = cfg.cg_correlation
    for j in range(h, cfg.gene_count):
        w = philox(cfg.seed, "cgmix", j).standard_normal(h)
        w = w / np.linalg.norm(w)
        rough = kernel_rough @ philox(cfg.seed, "cgfield", slide_index, j).standard_normal(s)
        rough = rough / max(rough.std(), 1e-12)
        mix = base @ w
        fields[:, j] = rho * mix + (1.0 - rho) * rough
    fields = _standardize(fields)

    # gene-level affine shared across slides, so gene identity is stable
    lo_l, hi_l = cfg.level_range
    lo_s, hi_s = cfg.scale_range
    levels = np.empty(cfg.gene_count)
    scales = np.empty(cfg.gene_count)
    for j in range(cfg.gene_count):
        rng = philox(cfg.seed, "affine", j)
        levels[j] = rng.uniform(lo_l, hi_l)
        scales[j] = rng.uniform(lo_s, hi_s)
    return fields * scales[None, :] + levels[None, :]


def _apply_dropout(cfg: SynthConfig, slide_index: int, truth: np.ndarray):
    s, g = truth.shape
    mask = np.ones((s, g), dtype=np.uint8)
    k = int(np.floor(cfg.dropout_fraction * s * g))
    if k > 0:
        flat = philox(cfg.seed, "dropout", slide_index).choice(s * g, size=k, replace=False)
        mask.flat[np.sort(flat)] = 0
    expr = np.where(mask.astype(bool), truth, 0.0).astype(np.float32)
    return expr, mask


def _raw_slide(cfg: SynthConfig, slide_index: int, slide_id: str):
    coords = lattice_coords(cfg.rows, cfg.cols)
    truth = _true_fields(cfg, slide_index, coords).astype(np.float32)
    expr, mask = _apply_dropout(cfg, slide_index, truth)
    return Slide(slide_id, coords, expr, mask), truth


def generate(cfg: SynthConfig) -> tuple[Slide, GenePanel, np.ndarray]:
    """One slide plus its empirical gene panel and the true expression matrix."""
    slide, truth = _raw_slide(cfg, 0, "slide_000")
    names = tuple(f"g{j:04d}" for j in range(cfg.gene_count))
    panel = build_gene_panel(
        {slide.slide_id: slide}, names, [slide.slide_id], cfg.hsag_count, cfg.gene_count
    )
    order = [names.index(n) for n in panel.gene_names]
    slide = reorder_slide_to_panel(slide, names, panel)
    return slide, panel, truth[:, order]


def generate_dataset(cfg: SynthConfig):
    """Multi-slide dataset: (slides, panel, splits, ground_truth per slide).

    Fields are independent across slides; gene identities (mixture weights and
    affine levels) are shared, and the panel is ranked on training slides only.
    """
    n_total = cfg.n_train_slides + cfg.n_val_slides + cfg.n_test_slides
    ids, raw, truths = [], {}, {}
    for i in range(n_total):
        sid = f"slide_{i:03d}"
        ids.append(sid)
        raw[sid], truths[sid] = _raw_slide(cfg, i, sid)
    splits = SplitSpec(
        tuple(ids[: cfg.n_train_slides]),
        tuple(ids[cfg.n_train_slides : cfg.n_train_slides + cfg.n_val_slides]),
        tuple(ids[cfg.n_train_slides + cfg.n_val_slides :]),
    )
    names = tuple(f"g{j:04d}" for j in range(cfg.gene_count))
    panel = build_gene_panel(raw, names, splits.train, cfg.hsag_count, cfg.gene_count)
    order = [names.index(n) for n in panel.gene_names]
    slides = {sid: reorder_slide_to_panel(raw[sid], names, panel) for sid in ids}
    ground_truth = {sid: truths[sid][:, order] for sid in ids}
    return slides, panel, splits, ground_truth
