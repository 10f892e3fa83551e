import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lgdist.data import GenePanel, Slide
from lgdist.errors import ConfigError, DegenerateInputError
from lgdist.evaluation import (
    ablation_run,
    apply_simulation,
    compute_metrics,
    masked_mse,
    masked_pcc,
    median_completer,
    robustness_sweep,
    score_completion,
    simulate_dropout,
)
from lgdist.synthetic import SynthConfig, generate


@pytest.fixture(scope="module")
def synth_slide():
    cfg = SynthConfig(rows=10, cols=10, gene_count=8, hsag_fraction=0.5,
                      correlation_length=2.5, dropout_fraction=0.0, seed=0)
    slide, panel, _ = generate(cfg)
    return slide, panel


def test_simulate_counts_and_determinism(synth_slide):
    slide, panel = synth_slide
    mask1 = simulate_dropout(slide, panel, 0.5, seed=3)
    mask2 = simulate_dropout(slide, panel, 0.5, seed=3)
    mask3 = simulate_dropout(slide, panel, 0.5, seed=4)
    observed_in_scope = int(slide.observed_mask[:, : panel.hsag_count].sum())
    assert mask1.entries.shape[0] == int(np.floor(0.5 * observed_in_scope))
    assert np.array_equal(mask1.entries, mask2.entries)
    assert not np.array_equal(mask1.entries, mask3.entries)


def test_simulate_scope_all(synth_slide):
    slide, panel = synth_slide
    mask = simulate_dropout(slide, panel, 0.25, seed=1, gene_scope="all")
    assert mask.entries[:, 1].max() >= panel.hsag_count
    total = int(slide.observed_mask.sum())
    assert mask.entries.shape[0] == int(np.floor(0.25 * total))


@given(st.integers(0, 50))
def test_simulate_only_observed_entries(seed):
    rng = np.random.default_rng(99)
    coords = np.asarray([(r, 2 * c + r % 2) for r in range(4) for c in range(4)], dtype=np.int32)
    mask = (rng.random((16, 4)) > 0.4).astype(np.uint8)
    expr = np.where(mask.astype(bool), rng.normal(size=(16, 4)), 0.0).astype(np.float32)
    slide = Slide("h", coords, expr, mask)
    panel = GenePanel(("a", "b", "c", "d"), np.linspace(1, 0, 4), np.array([1, 1, 0, 0]))
    sim = simulate_dropout(slide, panel, 0.5, seed=seed, gene_scope="all")
    rows, cols = sim.entries[:, 0], sim.entries[:, 1]
    assert np.all(slide.observed_mask[rows, cols] == 1)


def test_simulate_rejects_degenerate_fraction(synth_slide):
    slide, panel = synth_slide
    with pytest.raises(ConfigError):
        simulate_dropout(slide, panel, 1e-9, seed=0)
    with pytest.raises(ConfigError):
        simulate_dropout(slide, panel, 1.0, seed=0)


def test_apply_simulation_hides_entries(synth_slide):
    slide, panel = synth_slide
    mask = simulate_dropout(slide, panel, 0.3, seed=5)
    corrupted = apply_simulation(slide, mask)
    rows, cols = mask.entries[:, 0], mask.entries[:, 1]
    assert np.all(corrupted.observed_mask[rows, cols] == 0)
    assert np.all(corrupted.expression[rows, cols] == 0.0)
    untouched = corrupted.observed_mask.sum() + mask.entries.shape[0]
    assert untouched == slide.observed_mask.sum()


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def entries_all(shape):
    return np.argwhere(np.ones(shape, dtype=bool)).astype(np.int64)


def test_mse_pcc_perfect_prediction():
    truth = np.arange(12, dtype=np.float64).reshape(3, 4)
    e = entries_all((3, 4))
    assert masked_mse(truth, truth.copy(), e) == 0.0
    assert masked_pcc(truth, truth.copy(), e) == pytest.approx(1.0)


def test_pcc_anticorrelation():
    truth = np.arange(12, dtype=np.float64).reshape(3, 4)
    pred = -truth + 5.0
    assert masked_pcc(truth, pred, entries_all((3, 4))) == pytest.approx(-1.0)


def test_mse_hand_value():
    truth = np.array([[1.0, 2.0, 3.0]])
    pred = np.array([[1.0, 2.0, 5.0]])
    e = entries_all((1, 3))
    assert masked_mse(truth, pred, e) == pytest.approx(4.0 / 3.0, abs=1e-12)


def test_pcc_zero_variance_is_error_not_zero():
    truth = np.full((2, 2), 3.0)
    pred = np.array([[1.0, 2.0], [3.0, 4.0]])
    with pytest.raises(DegenerateInputError):
        masked_pcc(truth, pred, entries_all((2, 2)))
    report = compute_metrics(truth, pred, entries_all((2, 2)))
    assert report.pcc is None


def test_metrics_ignore_non_masked_mutations():
    rng = np.random.default_rng(0)
    truth = rng.normal(size=(6, 5))
    pred = rng.normal(size=(6, 5))
    entries = np.asarray([[0, 0], [2, 3], [5, 4]], dtype=np.int64)
    base_mse = masked_mse(truth, pred, entries)
    base_pcc = masked_pcc(truth, pred, entries)
    mutated = pred.copy()
    mutated[1, 1] = 1e6
    mutated[4, 0] = -77.0
    assert masked_mse(truth, mutated, entries) == base_mse
    assert masked_pcc(truth, mutated, entries) == base_pcc


def test_mse_permutation_invariant():
    rng = np.random.default_rng(1)
    truth = rng.normal(size=(5, 5))
    pred = rng.normal(size=(5, 5))
    entries = np.asarray([[0, 1], [1, 2], [3, 3], [4, 0]], dtype=np.int64)
    shuffled = entries[[2, 0, 3, 1]]
    assert masked_mse(truth, pred, entries) == pytest.approx(
        masked_mse(truth, pred, shuffled), rel=1e-14
    )


@given(st.floats(0.1, 10.0), st.floats(-5.0, 5.0))
def test_pcc_affine_invariant(a, b):
    rng = np.random.default_rng(2)
    truth = rng.normal(size=(4, 4))
    pred = rng.normal(size=(4, 4))
    e = entries_all((4, 4))
    base = masked_pcc(truth, pred, e)
    assert masked_pcc(truth, a * pred + b, e) == pytest.approx(base, abs=1e-9)


def test_per_gene_breakdown():
    truth = np.zeros((4, 3))
    pred = np.zeros((4, 3))
    pred[:, 1] = 2.0
    entries = np.asarray([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.int64)
    report = compute_metrics(truth, pred, entries)
    assert report.per_gene[0]["mse"] == 0.0
    assert report.per_gene[1]["mse"] == 4.0
    assert report.n_entries == 4


# ---------------------------------------------------------------------------
# sweeps and completers
# ---------------------------------------------------------------------------


def cheating_completer(truth):
    def completer(corrupted, panel, entries):
        return truth.copy()

    return completer


def constant_median_completer(corrupted, panel, entries):
    out = corrupted.expression.copy()
    obs = corrupted.observed_mask.astype(bool)
    for k in range(out.shape[1]):
        col = corrupted.expression[obs[:, k], k]
        med = np.median(col) if col.size else 0.0
        out[~obs[:, k], k] = med
    return out


def test_sweep_oracle_is_zero(synth_slide):
    slide, panel = synth_slide
    rows = robustness_sweep(slide, panel, cheating_completer(slide.expression),
                            fractions=(0.2, 0.5), seeds=(0, 1))
    assert all(r["mean_mse"] == 0.0 for r in rows)
    assert len(rows) == 2


def test_sweep_constant_median_closed_form(synth_slide):
    # filling every hidden entry of a gene with one constant makes the MSE the
    # mean squared deviation of the hidden truth around that constant
    slide, panel = synth_slide
    fraction, seed = 0.4, 7
    mask = simulate_dropout(slide, panel, fraction, seed)
    corrupted = apply_simulation(slide, mask)
    predicted = constant_median_completer(corrupted, panel, mask.entries)
    got = masked_mse(slide.expression, predicted, mask.entries)

    expected_terms = []
    obs = corrupted.observed_mask.astype(bool)
    for spot, gene in mask.entries:
        col = corrupted.expression[obs[:, gene], gene]
        med = np.median(col)
        expected_terms.append((float(slide.expression[spot, gene]) - float(med)) ** 2)
    assert got == pytest.approx(np.mean(expected_terms), rel=1e-6)


def test_sweep_row_shape_and_determinism(synth_slide):
    slide, panel = synth_slide
    rows1 = robustness_sweep(slide, panel, median_completer, fractions=(0.1, 0.3, 0.5), seeds=(0, 1, 2))
    rows2 = robustness_sweep(slide, panel, median_completer, fractions=(0.1, 0.3, 0.5), seeds=(0, 1, 2))
    assert rows1 == rows2
    assert [r["fraction"] for r in rows1] == [0.1, 0.3, 0.5]
    for r in rows1:
        assert len(r["mses"]) == 3
        assert r["std_mse"] >= 0.0


def test_ablation_run_deterministic(synth_slide):
    slide, panel = synth_slide
    variants = {
        "median": median_completer,
        "oracle": cheating_completer(slide.expression),
    }
    t1 = ablation_run(slide, panel, variants, fraction=0.3, seeds=(0, 1))
    t2 = ablation_run(slide, panel, variants, fraction=0.3, seeds=(0, 1))
    assert t1 == t2
    assert t1["oracle"]["mean_mse"] == 0.0
    assert t1["median"]["mean_mse"] > 0.0


def test_score_completion_uses_hidden_truth(synth_slide):
    slide, panel = synth_slide
    report = score_completion(slide, panel, median_completer, fraction=0.3, seed=11)
    assert report.mse > 0.0
    assert report.pcc is not None
    assert report.n_entries == int(np.floor(0.3 * slide.observed_mask[:, : panel.hsag_count].sum()))
