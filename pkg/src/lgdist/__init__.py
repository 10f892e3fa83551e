"""Reference-free dropout completion for sequencing-based spatial transcriptomics."""

import os as _os

# LGDIST_THREADS caps worker threads; it must reach the BLAS layer before
# numpy is first imported, hence this runs at package import time.
_threads = _os.environ.get("LGDIST_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from lgdist.data import GenePanel, Neighborhood, Slide, SplitSpec, build_neighborhood
from lgdist.hexgrid import hex_neighbors

__all__ = [
    "GenePanel",
    "Neighborhood",
    "Slide",
    "SplitSpec",
    "build_neighborhood",
    "hex_neighbors",
    "__version__",
]
