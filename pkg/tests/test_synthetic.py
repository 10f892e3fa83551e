import numpy as np
import pytest

from lgdist.errors import ConfigError
from lgdist.hexgrid import adjacency_edges
from lgdist.preprocess import build_gene_panel, morans_i_per_gene
from lgdist.synthetic import SynthConfig, generate, generate_dataset


def test_no_smoothing_gives_near_zero_moran():
    # white noise: E[I] = -1/(N-1), so |I| should be small over 400 spots
    cfg = SynthConfig(rows=20, cols=20, gene_count=8, hsag_fraction=0.5,
                      correlation_length=1e-3, dropout_fraction=0.0, seed=0)
    slide, panel, _ = generate(cfg)
    assert np.all(np.abs(panel.morans_i) < 0.1)


def test_smooth_fields_have_high_moran():
    cfg = SynthConfig(rows=20, cols=20, gene_count=16, hsag_fraction=0.25,
                      correlation_length=5.0, dropout_fraction=0.0, seed=1)
    slide, panel, _ = generate(cfg)
    hsag_scores = panel.morans_i[panel.is_hsag.astype(bool)]
    assert np.all(hsag_scores > 0.5)


def test_zero_dropout_mask_all_ones():
    cfg = SynthConfig(rows=8, cols=8, gene_count=4, hsag_fraction=0.5,
                      correlation_length=2.0, dropout_fraction=0.0, seed=2)
    slide, _, _ = generate(cfg)
    assert np.all(slide.observed_mask == 1)


def test_dropout_fraction_exact_count():
    cfg = SynthConfig(rows=8, cols=8, gene_count=5, hsag_fraction=0.4,
                      correlation_length=2.0, dropout_fraction=0.25, seed=3)
    slide, _, _ = generate(cfg)
    total = slide.n_spots * slide.n_genes
    assert int((slide.observed_mask == 0).sum()) == int(np.floor(0.25 * total))
    assert np.all(slide.expression[slide.observed_mask == 0] == 0.0)


def test_deterministic_per_seed():
    cfg = SynthConfig(rows=8, cols=8, gene_count=6, hsag_fraction=0.5,
                      correlation_length=2.0, dropout_fraction=0.1, seed=9)
    a, pa, ta = generate(cfg)
    b, pb, tb = generate(cfg)
    assert a.expression.tobytes() == b.expression.tobytes()
    assert ta.tobytes() == tb.tobytes()
    assert pa.gene_names == pb.gene_names


def test_moran_monotone_in_correlation_length():
    means = []
    for length in (1.0, 2.5, 5.0):
        vals = []
        for seed in (0, 1, 2):
            cfg = SynthConfig(rows=14, cols=14, gene_count=6, hsag_fraction=1.0,
                              correlation_length=length, dropout_fraction=0.0, seed=seed)
            _, panel, _ = generate(cfg)
            vals.append(panel.morans_i.mean())
        means.append(np.mean(vals))
    assert means[0] < means[1] < means[2]


def test_panel_survives_rebuild():
    cfg = SynthConfig(rows=10, cols=10, gene_count=12, hsag_fraction=0.25,
                      correlation_length=3.0, dropout_fraction=0.0, seed=4)
    slide, panel, _ = generate(cfg)
    rebuilt = build_gene_panel(
        {slide.slide_id: slide}, panel.gene_names, [slide.slide_id],
        panel.hsag_count, panel.gene_count,
    )
    assert rebuilt.gene_names == panel.gene_names
    assert np.allclose(rebuilt.morans_i, panel.morans_i)


def test_columns_sorted_by_empirical_moran():
    cfg = SynthConfig(rows=10, cols=10, gene_count=10, hsag_fraction=0.3,
                      correlation_length=3.0, dropout_fraction=0.0, seed=5)
    slide, panel, _ = generate(cfg)
    edges = adjacency_edges(slide.coords)
    recomputed = morans_i_per_gene(slide.expression, edges)
    assert np.allclose(recomputed, panel.morans_i, atol=1e-9)
    assert np.all(np.diff(recomputed) <= 1e-12)


def test_ground_truth_matches_observed_entries():
    cfg = SynthConfig(rows=8, cols=8, gene_count=5, hsag_fraction=0.4,
                      correlation_length=2.0, dropout_fraction=0.3, seed=6)
    slide, _, truth = generate(cfg)
    obs = slide.observed_mask.astype(bool)
    assert np.array_equal(slide.expression[obs], truth[obs])
    assert not np.array_equal(slide.expression, truth)


def test_lattice_too_small_for_length():
    with pytest.raises(ConfigError):
        SynthConfig(rows=6, cols=6, gene_count=4, correlation_length=4.0)


def test_cg_correlation_with_base_fields():
    # with rho near 1, nearly all context-gene variance lies in the span of
    # the constructed base fields
    from lgdist.synthetic import _true_fields, lattice_coords

    cfg = SynthConfig(rows=12, cols=12, gene_count=12, hsag_fraction=0.25,
                      correlation_length=3.0, cg_correlation=0.95,
                      dropout_fraction=0.0, seed=7)
    coords = lattice_coords(cfg.rows, cfg.cols)
    fields = _true_fields(cfg, 0, coords)
    h = cfg.hsag_count
    bases = np.column_stack([fields[:, :h], np.ones(len(fields))])
    for k in range(h, cfg.gene_count):
        y = fields[:, k]
        res = np.linalg.lstsq(bases, y, rcond=None)[1]
        ss = float(((y - y.mean()) ** 2).sum())
        r2 = 1.0 - (float(res[0]) if len(res) else 0.0) / ss
        assert r2 > 0.8


def test_multi_slide_dataset_layout():
    cfg = SynthConfig(rows=8, cols=8, gene_count=6, hsag_fraction=0.5,
                      correlation_length=2.0, dropout_fraction=0.0, seed=8,
                      n_train_slides=2, n_val_slides=1, n_test_slides=1)
    slides, panel, splits, truth = generate_dataset(cfg)
    assert len(slides) == 4
    assert splits.train == ("slide_000", "slide_001")
    assert splits.val == ("slide_002",)
    assert splits.test == ("slide_003",)
    for sid, slide in slides.items():
        assert slide.n_genes == 6
        assert truth[sid].shape == (slide.n_spots, 6)
    # different slides carry different fields
    assert not np.array_equal(slides["slide_000"].expression, slides["slide_001"].expression)
