"""Moran's I, gene panel construction, and adaptive median pre-completion.

Moran's I uses binary symmetric 1-hop hex weights (not row-normalized):

    I = (N / W) * sum_ij w_ij (x_i - xbar)(x_j - xbar) / sum_i (x_i - xbar)^2

Pre-completion fills each dropout entry from the observed values of the same
gene, widening the pool until at least three sources exist: 1-hop ring, then
1-hop union 2-hop, then the whole slide; genes never observed anywhere fill 0.
Only originally observed values are used as sources (single pass).
"""

from __future__ import annotations

import warnings

import numpy as np

from lgdist.data import GenePanel, Slide
from lgdist.errors import DegenerateInputError, PanelPoolError
from lgdist.hexgrid import adjacency_edges, hex_neighbors

MIN_MEDIAN_SOURCES = 3


def morans_i(values: np.ndarray, edges: np.ndarray) -> float:
    """Global Moran's I for one variable over a directed 1-hop edge list.

    `edges` must contain each undirected adjacency in both directions, so the
    binary weight sum W equals len(edges).
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise DegenerateInputError("need at least two spots")
    if not np.isfinite(x).all():
        raise DegenerateInputError("non-finite values")
    if edges.shape[0] == 0:
        raise DegenerateInputError("adjacency has no edges")
    centered = x - x.mean()
    denom = float(np.sum(centered * centered))
    if denom == 0.0:
        raise DegenerateInputError("zero spatial variance")
    cross = float(np.sum(centered[edges[:, 0]] * centered[edges[:, 1]]))
    return (x.size / float(edges.shape[0])) * cross / denom


def morans_i_per_gene(expression: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Vectorized Moran's I for every column; -inf marks zero-variance genes."""
    x = np.asarray(expression, dtype=np.float64)
    if edges.shape[0] == 0:
        raise DegenerateInputError("adjacency has no edges")
    centered = x - x.mean(axis=0, keepdims=True)
    denom = np.sum(centered * centered, axis=0)
    cross = np.sum(centered[edges[:, 0]] * centered[edges[:, 1]], axis=0)
    out = np.full(x.shape[1], -np.inf)
    ok = denom > 0
    out[ok] = (x.shape[0] / float(edges.shape[0])) * cross[ok] / denom[ok]
    return out


def build_gene_panel(
    slides: dict[str, Slide],
    candidate_genes: tuple[str, ...],
    train_ids,
    hsag_count: int,
    total_count: int,
) -> GenePanel:
    """Rank candidates by mean Moran's I over training slides; keep the top ones.

    The first hsag_count survivors are flagged HSAG, the next
    (total_count - hsag_count) become context genes, and everything else is
    dropped. Ties break by gene name so the output is deterministic. Genes with
    zero variance in any training slide rank -inf and are always dropped.
    """
    if not 0 < hsag_count <= total_count:
        raise ValueError("need 0 < hsag_count <= total_count")
    train_ids = list(train_ids)
    if not train_ids:
        raise PanelPoolError("no training slides to rank genes on")
    scores = np.zeros(len(candidate_genes))
    for sid in train_ids:
        slide = slides[sid]
        edges = adjacency_edges(slide.coords)
        scores = scores + morans_i_per_gene(slide.expression, edges)
    scores = scores / len(train_ids)
    usable = int(np.sum(np.isfinite(scores)))
    if usable < total_count:
        raise PanelPoolError(
            f"only {usable} genes have a computable Moran's I; need {total_count}"
        )
    order = sorted(range(len(candidate_genes)), key=lambda i: (-scores[i], candidate_genes[i]))
    keep = order[:total_count]
    names = tuple(candidate_genes[i] for i in keep)
    morans = np.array([scores[i] for i in keep])
    flags = np.zeros(total_count, dtype=np.uint8)
    flags[:hsag_count] = 1
    return GenePanel(names, morans, flags)


def reorder_slide_to_panel(slide: Slide, candidate_genes: tuple[str, ...], panel: GenePanel) -> Slide:
    """Restrict/reorder a slide's gene columns to match the panel order."""
    col = {name: i for i, name in enumerate(candidate_genes)}
    idx = np.array([col[name] for name in panel.gene_names], dtype=np.int64)
    return Slide(
        slide.slide_id,
        slide.coords.copy(),
        slide.expression[:, idx].copy(),
        slide.observed_mask[:, idx].copy(),
    )


def _ring_median_and_count(slide: Slide, hops: int):
    """Per-(spot, gene) median and count of observed values over the hop ring(s)."""
    s, g = slide.expression.shape
    medians = np.zeros((s, g), dtype=np.float32)
    counts = np.zeros((s, g), dtype=np.int64)
    for i in range(s):
        center = (int(slide.coords[i, 0]), int(slide.coords[i, 1]))
        rows = [j for c in hex_neighbors(center, hops) if (j := slide.spot_at(c)) is not None]
        if not rows:
            continue
        vals = slide.expression[rows].astype(np.float32)
        observed = slide.observed_mask[rows].astype(bool)
        counts[i] = observed.sum(axis=0)
        pooled = np.where(observed, vals, np.nan)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            med = np.nanmedian(pooled, axis=0)
        medians[i] = np.where(counts[i] > 0, med, 0.0).astype(np.float32)
    return medians, counts


def median_precomplete(slide: Slide) -> Slide:
    """Fill dropout entries with adaptive per-gene medians; observed entries untouched.

    Returns a copy of the slide with `precompleted` populated; expression and
    observed_mask are carried over bit-exactly.
    """
    observed = slide.observed_mask.astype(bool)
    med1, cnt1 = _ring_median_and_count(slide, hops=1)
    med2, cnt2 = _ring_median_and_count(slide, hops=2)

    gene_vals = np.where(observed, slide.expression, np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        slide_med = np.nanmedian(gene_vals, axis=0)
    gene_has_any = observed.any(axis=0)
    slide_med = np.where(gene_has_any, slide_med, 0.0).astype(np.float32)

    fill = np.where(
        cnt1 >= MIN_MEDIAN_SOURCES,
        med1,
        np.where(cnt2 >= MIN_MEDIAN_SOURCES, med2, slide_med[None, :]),
    )
    completed = np.where(observed, slide.expression, fill).astype(np.float32)
    return Slide(
        slide.slide_id,
        slide.coords.copy(),
        slide.expression.copy(),
        slide.observed_mask.copy(),
        precompleted=completed,
    )
