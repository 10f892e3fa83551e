import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("lgdist", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("lgdist")


@pytest.fixture
def tiny_slide():
    """5x4 hex lattice slide with 6 genes and a hand-set dropout pattern."""
    from lgdist.data import GenePanel, Slide
    from lgdist.synthetic import lattice_coords

    coords = lattice_coords(5, 4)
    s = coords.shape[0]
    rng = np.random.default_rng(7)
    expr = rng.normal(2.0, 1.0, size=(s, 6)).astype(np.float32)
    mask = (rng.random((s, 6)) > 0.25).astype(np.uint8)
    expr = np.where(mask.astype(bool), expr, 0.0).astype(np.float32)
    panel = GenePanel(
        tuple(f"g{i}" for i in range(6)),
        np.linspace(0.9, 0.1, 6),
        np.array([1, 1, 0, 0, 0, 0], dtype=np.uint8),
    )
    return Slide("tiny", coords, expr, mask), panel
