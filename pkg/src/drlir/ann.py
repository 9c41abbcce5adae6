"""Random-hyperplane forest for sublinear nearest-item retrieval.

Each tree recursively splits the item set by a hyperplane equidistant between
two randomly sampled points, until every leaf holds at most ``leaf_size``
items. Queries traverse all trees through one shared priority queue keyed by
plane margins, so promising branches anywhere in the forest are descended
first. Candidates are deduplicated and ranked by angular distance.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from drlir import kernels

log = logging.getLogger(__name__)

MAGIC = b"DRLIRANN"
FORMAT_VERSION = 1

DEGENERATE_RETRIES = 3
DEFAULT_TREES = 5
DEFAULT_LEAF_SIZE = 30


@dataclass
class Forest:
    """Flattened forest: per-node child/plane/leaf tables shared by all trees."""

    items: np.ndarray  # (N, m) float64, the indexed vectors
    n_trees: int
    leaf_size: int
    seed: int
    roots: np.ndarray  # (n_trees,) node ids
    node_left: np.ndarray  # child node id, -1 for leaves
    node_right: np.ndarray
    node_plane: np.ndarray  # row into planes, -1 for leaves
    leaf_start: np.ndarray  # range into leaf_items, -1 for internal nodes
    leaf_end: np.ndarray
    planes: np.ndarray  # (n_planes, m) hyperplane normals
    plane_off: np.ndarray  # (n_planes,) offsets
    leaf_items: np.ndarray  # concatenated leaf membership

    @property
    def num_items(self) -> int:
        return self.items.shape[0]

    @property
    def m(self) -> int:
        return self.items.shape[1]


def angular_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cosine similarity, in [0, 2]; zero-norm vectors count as orthogonal."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 1.0
    return 1.0 - float(a @ b) / (na * nb)


def angular_distances(q: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Vectorized :func:`angular_distance` from one query to many rows."""
    nq = float(np.linalg.norm(q))
    norms = np.linalg.norm(rows, axis=1)
    if nq == 0.0:
        return np.ones(rows.shape[0])
    out = np.ones(rows.shape[0])
    nz = norms > 0.0
    out[nz] = 1.0 - (rows[nz] @ q) / (norms[nz] * nq)
    return out


class _TreeBuilder:
    """Accumulates one tree's nodes into the forest-wide flat tables."""

    def __init__(self, items: np.ndarray, leaf_size: int, rng: np.random.Generator, tables):
        self.items = items
        self.leaf_size = leaf_size
        self.rng = rng
        self.t = tables

    def build(self, subset: np.ndarray) -> int:
        t = self.t
        node = len(t["left"])
        if subset.shape[0] <= self.leaf_size:
            t["left"].append(-1)
            t["right"].append(-1)
            t["plane"].append(-1)
            t["lstart"].append(len(t["leaf_items"]))
            t["leaf_items"].extend(int(i) for i in subset)
            t["lend"].append(len(t["leaf_items"]))
            return node

        # reserve the slot before recursing so child ids land after the parent
        t["left"].append(-2)
        t["right"].append(-2)
        t["plane"].append(-2)
        t["lstart"].append(-1)
        t["lend"].append(-1)

        normal, offset, left_set, right_set = self._split(subset)
        plane_row = len(t["planes"])
        t["planes"].append(normal)
        t["plane_off"].append(offset)
        left_id = self.build(left_set)
        right_id = self.build(right_set)
        t["left"][node] = left_id
        t["right"][node] = right_id
        t["plane"][node] = plane_row
        return node

    def _split(self, subset: np.ndarray):
        pts = self.items
        for _ in range(1 + DEGENERATE_RETRIES):
            pick = self.rng.choice(subset.shape[0], size=2, replace=False)
            p1 = pts[subset[pick[0]]]
            p2 = pts[subset[pick[1]]]
            normal = p1 - p2
            if not normal.any():
                continue  # coincident sample points
            offset = float(normal @ ((p1 + p2) * 0.5))
            margins = pts[subset] @ normal - offset
            left_mask = margins <= 0.0  # on-plane points route left
            n_left = int(left_mask.sum())
            if n_left == 0 or n_left == subset.shape[0]:
                continue
            return normal, offset, subset[left_mask], subset[~left_mask]
        # all retries degenerate (e.g. duplicate vectors): halve by index order
        # behind a zero plane, which routes everything left at query time
        mid = (subset.shape[0] + 1) // 2
        return np.zeros(pts.shape[1]), 0.0, subset[:mid], subset[mid:]


def build_forest(
    items: np.ndarray,
    n_trees: int = DEFAULT_TREES,
    leaf_size: int = DEFAULT_LEAF_SIZE,
    seed: int = 0,
) -> Forest:
    """Build ``n_trees`` independent random-hyperplane trees over the item rows.

    Deterministic for a fixed seed; per-tree generators are spawned from the
    master seed so trees could be built in parallel without changing the result.
    """
    items = np.ascontiguousarray(items, dtype=np.float64)
    if items.ndim != 2 or items.shape[0] < 1:
        raise ValueError("items must be a non-empty (N, m) matrix")
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if not np.isfinite(items).all():
        raise ValueError("item vectors must be finite")

    tables = {
        "left": [],
        "right": [],
        "plane": [],
        "lstart": [],
        "lend": [],
        "planes": [],
        "plane_off": [],
        "leaf_items": [],
    }
    all_rows = np.arange(items.shape[0], dtype=np.int64)
    roots = []
    for child_seed in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child_seed)
        roots.append(_TreeBuilder(items, leaf_size, rng, tables).build(all_rows))

    m = items.shape[1]
    planes = (
        np.ascontiguousarray(tables["planes"], dtype=np.float64)
        if tables["planes"]
        else np.zeros((0, m))
    )
    return Forest(
        items=items,
        n_trees=n_trees,
        leaf_size=leaf_size,
        seed=seed,
        roots=np.array(roots, dtype=np.int64),
        node_left=np.array(tables["left"], dtype=np.int64),
        node_right=np.array(tables["right"], dtype=np.int64),
        node_plane=np.array(tables["plane"], dtype=np.int64),
        leaf_start=np.array(tables["lstart"], dtype=np.int64),
        leaf_end=np.array(tables["lend"], dtype=np.int64),
        planes=planes,
        plane_off=np.array(tables["plane_off"], dtype=np.float64),
        leaf_items=np.array(tables["leaf_items"], dtype=np.int64),
    )


def query_with_stats(
    forest: Forest,
    q: np.ndarray,
    k: int,
    search_budget: int | None = None,
):
    """Like :func:`query` but also returns the number of nodes visited."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.ascontiguousarray(q, dtype=np.float64)
    if q.shape != (forest.m,):
        raise ValueError(f"query vector must have shape ({forest.m},)")
    if not np.isfinite(q).all():
        raise ValueError("query vector must be finite")
    n = forest.num_items
    if k > n:
        log.warning("k=%d exceeds item count %d; returning all items", k, n)
        k = n
    budget = max(k, forest.n_trees * k if search_budget is None else search_budget)

    pool, visited = kernels.forest_collect(
        forest.roots,
        forest.node_left,
        forest.node_right,
        forest.node_plane,
        forest.leaf_start,
        forest.leaf_end,
        forest.planes,
        forest.plane_off,
        forest.leaf_items,
        q,
        budget,
        n,
    )
    dists = angular_distances(q, forest.items[pool])
    order = np.lexsort((pool, dists))[:k]
    results = [(int(pool[i]), float(dists[i])) for i in order]
    return results, visited


def query(
    forest: Forest,
    q: np.ndarray,
    k: int,
    search_budget: int | None = None,
) -> list[tuple[int, float]]:
    """Return up to ``k`` (item row, angular distance) pairs, nearest first.

    Ascending by distance with ties broken by item row. The candidate pool is
    gathered across all trees until it reaches ``max(k, search_budget)``
    (default budget: ``n_trees * k``); a pool smaller than ``k`` is returned
    as-is so callers can widen the budget.
    """
    results, _ = query_with_stats(forest, q, k, search_budget)
    return results


def _write_array(fh, arr: np.ndarray, dtype: str) -> None:
    a = np.ascontiguousarray(arr, dtype=dtype)
    fh.write(struct.pack("<B", a.ndim))
    for d in a.shape:
        fh.write(struct.pack("<q", d))
    fh.write(a.tobytes())


def _read_array(fh, dtype: str) -> np.ndarray:
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = tuple(struct.unpack("<q", fh.read(8))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    itemsize = np.dtype(dtype).itemsize
    return np.frombuffer(fh.read(count * itemsize), dtype=dtype).reshape(shape).copy()


_INDEX_ARRAYS = [
    ("roots", "<i8"),
    ("node_left", "<i8"),
    ("node_right", "<i8"),
    ("node_plane", "<i8"),
    ("leaf_start", "<i8"),
    ("leaf_end", "<i8"),
    ("planes", "<f8"),
    ("plane_off", "<f8"),
    ("leaf_items", "<i8"),
    ("items", "<f8"),
]


def save_forest(forest: Forest, path) -> None:
    """Write the index: header + flat tables; float64 payload keeps distances bit-exact."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(
            struct.pack(
                "<IqIIIq",
                FORMAT_VERSION,
                forest.num_items,
                forest.m,
                forest.n_trees,
                forest.leaf_size,
                forest.seed,
            )
        )
        for name, dtype in _INDEX_ARRAYS:
            _write_array(fh, getattr(forest, name), dtype)


def load_forest(path) -> Forest:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"not an index file: bad magic {magic!r}")
        version, n, m, n_trees, leaf_size, seed = struct.unpack("<IqIIIq", fh.read(32))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported index file version {version} (expected {FORMAT_VERSION})")
        fields = {name: _read_array(fh, dtype) for name, dtype in _INDEX_ARRAYS}
    forest = Forest(
        items=fields["items"],
        n_trees=n_trees,
        leaf_size=leaf_size,
        seed=seed,
        roots=fields["roots"],
        node_left=fields["node_left"],
        node_right=fields["node_right"],
        node_plane=fields["node_plane"],
        leaf_start=fields["leaf_start"],
        leaf_end=fields["leaf_end"],
        planes=fields["planes"],
        plane_off=fields["plane_off"],
        leaf_items=fields["leaf_items"],
    )
    if forest.num_items != n or forest.m != m:
        raise ValueError("index payload does not match header")
    return forest
