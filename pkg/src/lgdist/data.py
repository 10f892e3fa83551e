"""Core data types, neighborhood extraction, and the on-disk dataset format.

A dataset directory looks like:

    metadata.json                      format_version, name, gene_count, hsag_count
    genes.csv                          index,name,morans_i,is_hsag
    splits.json                        {"train": [...], "val": [...], "test": [...]}
    slides/<id>/coords.csv             spot_index,array_row,array_col
    slides/<id>/expression.f32         row-major little-endian float32, S x G
    slides/<id>/observed_mask.u8       row-major bytes, S x G, values {0,1}
    slides/<id>/expression_precompleted.f32   (written by preprocess)
    slides/<id>/ground_truth.f32       (written by synth)

Expression values are assumed log-normalized on import. All types are
immutable after load and safe for concurrent readers.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lgdist.errors import CoordinateParityError, DatasetFormatError, ShapeError
from lgdist.hexgrid import HOPS_TO_NEIGHBOR_COUNT, check_parity, hex_neighbors

FORMAT_VERSION = 1


@dataclass
class GenePanel:
    """Ordered gene list: HSAGs first, then context genes, by descending Moran's I."""

    gene_names: tuple[str, ...]
    morans_i: np.ndarray  # float64, length G
    is_hsag: np.ndarray  # uint8, length G

    def __post_init__(self):
        self.morans_i = np.asarray(self.morans_i, dtype=np.float64)
        self.is_hsag = np.asarray(self.is_hsag, dtype=np.uint8)
        g = len(self.gene_names)
        if self.morans_i.shape != (g,) or self.is_hsag.shape != (g,):
            raise ShapeError("gene panel fields must all have length G")
        if len(set(self.gene_names)) != g:
            raise DatasetFormatError("duplicate gene names in panel")
        if np.any(np.diff(self.morans_i) > 0):
            raise DatasetFormatError("panel genes must be sorted by descending Moran's I")
        h = int(self.is_hsag.sum())
        if not np.all(self.is_hsag[:h] == 1) or np.any(self.is_hsag[h:] == 1):
            raise DatasetFormatError("HSAG flags must form a prefix of the panel")
        self.morans_i.flags.writeable = False
        self.is_hsag.flags.writeable = False

    @property
    def gene_count(self) -> int:
        return len(self.gene_names)

    @property
    def hsag_count(self) -> int:
        return int(self.is_hsag.sum())

    def restricted_to_hsags(self) -> "GenePanel":
        h = self.hsag_count
        return GenePanel(self.gene_names[:h], self.morans_i[:h].copy(), self.is_hsag[:h].copy())


@dataclass
class Slide:
    """One tissue section: spot coordinates plus an S x G expression matrix.

    observed_mask marks entries actually measured by the assay (1) versus
    dropout (0). precompleted, when present, is the median-filled copy of
    expression used as model input; observed entries are identical in both.
    """

    slide_id: str
    coords: np.ndarray  # int32 (S, 2), rows are (array_row, array_col)
    expression: np.ndarray  # float32 (S, G)
    observed_mask: np.ndarray  # uint8 (S, G)
    precompleted: np.ndarray | None = None
    _coord_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.int32)
        self.expression = np.asarray(self.expression, dtype=np.float32)
        self.observed_mask = np.asarray(self.observed_mask, dtype=np.uint8)
        s = self.coords.shape[0]
        if s == 0:
            raise DatasetFormatError(f"empty slide {self.slide_id!r}")
        if self.coords.shape != (s, 2):
            raise ShapeError("coords must have shape (S, 2)")
        if self.expression.shape[0] != s or self.expression.shape != self.observed_mask.shape:
            raise ShapeError("expression and observed_mask must both be S x G")
        if not np.isfinite(self.expression).all():
            raise DatasetFormatError(f"non-finite expression values in slide {self.slide_id!r}")
        if not np.isin(self.observed_mask, (0, 1)).all():
            raise DatasetFormatError(f"observed_mask values outside {{0,1}} in slide {self.slide_id!r}")
        if self.precompleted is not None:
            self.precompleted = np.asarray(self.precompleted, dtype=np.float32)
            if self.precompleted.shape != self.expression.shape:
                raise ShapeError("precompleted must match expression shape")
            self.precompleted.flags.writeable = False
        for r, c in self.coords:
            if (int(r) + int(c)) % 2 != 0:
                raise CoordinateParityError(
                    f"slide {self.slide_id!r}: coordinate ({r}, {c}) has odd parity"
                )
        self._coord_index = {(int(r), int(c)): i for i, (r, c) in enumerate(self.coords)}
        if len(self._coord_index) != s:
            raise DatasetFormatError(f"duplicate spot coordinates in slide {self.slide_id!r}")
        self.coords.flags.writeable = False
        self.expression.flags.writeable = False
        self.observed_mask.flags.writeable = False

    @property
    def n_spots(self) -> int:
        return self.coords.shape[0]

    @property
    def n_genes(self) -> int:
        return self.expression.shape[1]

    def spot_at(self, coord) -> int | None:
        return self._coord_index.get((int(coord[0]), int(coord[1])))

    def model_input(self) -> np.ndarray:
        """Expression used as model input: precompleted copy if available."""
        return self.precompleted if self.precompleted is not None else self.expression


@dataclass
class SplitSpec:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def validate_against(self, slide_ids) -> None:
        listed = list(self.train) + list(self.val) + list(self.test)
        if len(set(listed)) != len(listed):
            raise DatasetFormatError("splits overlap")
        if set(listed) != set(slide_ids):
            raise DatasetFormatError("splits do not cover the dataset's slides exactly")


@dataclass
class Neighborhood:
    """(n+1) x g expression block: row 0 is the center spot, rows 1..n its ring."""

    center_spot: int
    expression: np.ndarray  # float32 (n+1, g)
    coords: np.ndarray  # int32 (n+1, 2), formal coordinates (may lie off-slide)
    neighbor_valid: np.ndarray  # uint8 (n+1,), row 0 always 1
    center_observed: np.ndarray  # uint8 (g,)

    @property
    def n_neighbors(self) -> int:
        return self.expression.shape[0] - 1


def build_neighborhood(slide: Slide, panel: GenePanel, spot: int, hops: int) -> Neighborhood:
    """Extract the center spot and its hex ring(s) as a fixed-shape block.

    Neighbors absent from the slide (tissue edge) become zero rows flagged
    invalid. Expression is read from slide.model_input(), so run preprocess
    first when the slide has dropout.
    """
    if hops not in HOPS_TO_NEIGHBOR_COUNT:
        raise ValueError(f"hops must be in {{0,1,2}}, got {hops}")
    if not 0 <= spot < slide.n_spots:
        raise IndexError(f"spot index {spot} out of range for slide {slide.slide_id!r}")
    if slide.n_genes != panel.gene_count:
        raise ShapeError("slide expression must be restricted/reordered to the panel genes")
    values = slide.model_input()
    n = HOPS_TO_NEIGHBOR_COUNT[hops]
    g = slide.n_genes
    block = np.zeros((n + 1, g), dtype=np.float32)
    coords = np.zeros((n + 1, 2), dtype=np.int32)
    valid = np.zeros(n + 1, dtype=np.uint8)
    center = (int(slide.coords[spot, 0]), int(slide.coords[spot, 1]))
    block[0] = values[spot]
    coords[0] = center
    valid[0] = 1
    if hops > 0:
        for k, cand in enumerate(hex_neighbors(center, hops), start=1):
            coords[k] = cand
            j = slide.spot_at(cand)
            if j is not None:
                block[k] = values[j]
                valid[k] = 1
    return Neighborhood(spot, block, coords, valid, slide.observed_mask[spot].copy())


def neighborhood_batch(slide: Slide, spots, panel: GenePanel, hops: int):
    """Stack neighborhoods for many spots: (B,T,g) values, (B,T,2) coords, (B,T) valid."""
    nbhds = [build_neighborhood(slide, panel, int(s), hops) for s in spots]
    x = np.stack([nb.expression for nb in nbhds])
    coords = np.stack([nb.coords for nb in nbhds])
    valid = np.stack([nb.neighbor_valid for nb in nbhds])
    return x, coords, valid


# ---------------------------------------------------------------------------
# dataset directory IO
# ---------------------------------------------------------------------------


def _read_f32(path: Path, shape) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    if data.size != shape[0] * shape[1]:
        raise DatasetFormatError(f"{path.name}: expected {shape[0] * shape[1]} floats, found {data.size}")
    return data.reshape(shape)


def _write_f32(path: Path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype="<f4").tofile(path)


def save_dataset(
    path,
    slides: dict[str, Slide],
    panel: GenePanel,
    splits: SplitSpec,
    name: str = "dataset",
    ground_truth: dict[str, np.ndarray] | None = None,
) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "name": name,
        "gene_count": panel.gene_count,
        "hsag_count": panel.hsag_count,
    }
    (root / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    write_genes_csv(root / "genes.csv", panel)
    (root / "splits.json").write_text(
        json.dumps(
            {"train": list(splits.train), "val": list(splits.val), "test": list(splits.test)},
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    for slide_id in sorted(slides):
        slide = slides[slide_id]
        sdir = root / "slides" / slide_id
        sdir.mkdir(parents=True, exist_ok=True)
        with open(sdir / "coords.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["spot_index", "array_row", "array_col"])
            for i, (r, c) in enumerate(slide.coords):
                w.writerow([i, int(r), int(c)])
        _write_f32(sdir / "expression.f32", slide.expression)
        (sdir / "observed_mask.u8").write_bytes(
            np.ascontiguousarray(slide.observed_mask, dtype=np.uint8).tobytes()
        )
        if slide.precompleted is not None:
            _write_f32(sdir / "expression_precompleted.f32", slide.precompleted)
        if ground_truth and slide_id in ground_truth:
            _write_f32(sdir / "ground_truth.f32", ground_truth[slide_id])


def write_genes_csv(path, panel: GenePanel) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "name", "morans_i", "is_hsag"])
        for i, gname in enumerate(panel.gene_names):
            w.writerow([i, gname, format(float(panel.morans_i[i]), ".17g"), int(panel.is_hsag[i])])


def load_gene_panel(path) -> GenePanel:
    names, morans, flags = [], [], []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            names.append(row["name"])
            morans.append(float(row["morans_i"]))
            flags.append(int(row["is_hsag"]))
    return GenePanel(tuple(names), np.asarray(morans), np.asarray(flags))


def load_dataset(path) -> tuple[dict[str, Slide], GenePanel, SplitSpec]:
    """Load a dataset directory; validates formats and all type invariants."""
    root = Path(path)
    meta_path = root / "metadata.json"
    if not meta_path.exists():
        raise DatasetFormatError(f"{root}: missing metadata.json")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(f"unknown format version {meta.get('format_version')!r}")
    panel = load_gene_panel(root / "genes.csv")
    if panel.gene_count != meta["gene_count"]:
        raise DatasetFormatError("genes.csv length disagrees with metadata gene_count")
    raw_splits = json.loads((root / "splits.json").read_text())
    splits = SplitSpec(
        tuple(raw_splits["train"]), tuple(raw_splits["val"]), tuple(raw_splits["test"])
    )
    slides_dir = root / "slides"
    if not slides_dir.is_dir():
        raise DatasetFormatError(f"{root}: missing slides/ directory")
    slides: dict[str, Slide] = {}
    for sdir in sorted(slides_dir.iterdir()):
        if not sdir.is_dir():
            continue
        slide_id = sdir.name
        coords = []
        with open(sdir / "coords.csv", newline="") as f:
            for row in csv.DictReader(f):
                coords.append((int(row["array_row"]), int(row["array_col"])))
        coords = np.asarray(coords, dtype=np.int32).reshape(-1, 2)
        s = coords.shape[0]
        if s == 0:
            raise DatasetFormatError(f"empty slide {slide_id!r}")
        g = meta["gene_count"]
        expression = _read_f32(sdir / "expression.f32", (s, g))
        mask = np.frombuffer((sdir / "observed_mask.u8").read_bytes(), dtype=np.uint8)
        if mask.size != s * g:
            raise DatasetFormatError(f"{slide_id}: observed_mask size mismatch")
        mask = mask.reshape(s, g)
        pre_path = sdir / "expression_precompleted.f32"
        pre = _read_f32(pre_path, (s, g)) if pre_path.exists() else None
        slides[slide_id] = Slide(slide_id, coords, expression, mask, precompleted=pre)
    if not slides:
        raise DatasetFormatError(f"{root}: no slides found")
    splits.validate_against(slides.keys())
    return slides, panel, splits


def load_ground_truth(path, slide_id: str, shape) -> np.ndarray:
    return _read_f32(Path(path) / "slides" / slide_id / "ground_truth.f32", shape)
