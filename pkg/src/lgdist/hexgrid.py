"""Hexagonal geometry of the Visium spot array.

Spots live on array coordinates (array_row, array_col) with (row + col) even;
same-row neighbors sit two columns apart, adjacent-row neighbors one column
apart. Neighbor enumeration uses a fixed clockwise order starting due east,
ring by ring, so downstream tensors are positionally stable.
"""

from __future__ import annotations

import numpy as np

from lgdist.errors import CoordinateParityError

Coord = tuple[int, int]

# 1-hop ring, clockwise from east: E, SE, SW, W, NW, NE.
RING1_OFFSETS: tuple[Coord, ...] = ((0, 2), (1, 1), (1, -1), (0, -2), (-1, -1), (-1, 1))

# 2-hop ring, clockwise from east.
RING2_OFFSETS: tuple[Coord, ...] = (
    (0, 4), (1, 3), (2, 2), (2, 0), (2, -2), (1, -3),
    (0, -4), (-1, -3), (-2, -2), (-2, 0), (-2, 2), (-1, 3),
)

HOPS_TO_NEIGHBOR_COUNT = {0: 0, 1: 6, 2: 18}


def check_parity(coord: Coord) -> None:
    r, c = coord
    if (r + c) % 2 != 0:
        raise CoordinateParityError(f"coordinate {coord!r} has odd row+col parity")


def hex_neighbors(coord: Coord, hops: int) -> list[Coord]:
    """Formal neighbor coordinates within `hops` rings, clockwise from east.

    Coordinates may fall outside any slide (including negative values);
    membership is resolved by the caller against actual spot tables.
    """
    check_parity(coord)
    if hops not in (1, 2):
        raise ValueError(f"hops must be 1 or 2, got {hops}")
    r, c = coord
    out = [(r + dr, c + dc) for dr, dc in RING1_OFFSETS]
    if hops == 2:
        out.extend((r + dr, c + dc) for dr, dc in RING2_OFFSETS)
    return out


def hex_distance(a: Coord, b: Coord) -> int:
    """Graph distance on the hex lattice between two array coordinates."""
    check_parity(a)
    check_parity(b)
    dr = b[0] - a[0]
    dq = (b[1] - a[1] - dr) // 2
    return (abs(dq) + abs(dr) + abs(dq + dr)) // 2


def hex_distance_matrix(coords: np.ndarray) -> np.ndarray:
    """All-pairs hex distances for an (S, 2) array of array coordinates."""
    r = coords[:, 0].astype(np.int64)
    q = (coords[:, 1].astype(np.int64) - r) // 2
    dq = q[:, None] - q[None, :]
    dr = r[:, None] - r[None, :]
    return (np.abs(dq) + np.abs(dr) + np.abs(dq + dr)) // 2


def adjacency_edges(coords: np.ndarray) -> np.ndarray:
    """Directed 1-hop edge list (m, 2) over spots given as an (S, 2) coord array.

    Each undirected adjacency appears twice (i->j and j->i), which makes the
    binary weight sum W of Moran's I simply the row count.
    """
    index = {(int(r), int(c)): i for i, (r, c) in enumerate(coords)}
    edges = []
    for i, (r, c) in enumerate(coords):
        for dr, dc in RING1_OFFSETS:
            j = index.get((int(r) + dr, int(c) + dc))
            if j is not None:
                edges.append((i, j))
    if not edges:
        return np.empty((0, 2), dtype=np.int64)
    return np.asarray(edges, dtype=np.int64)
