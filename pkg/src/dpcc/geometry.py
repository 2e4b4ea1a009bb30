"""Point cloud containers, block partitioning, and sampling/neighborhood kernels.

All operations are pure functions over immutable inputs and fully
deterministic: nearest-neighbor ties always break toward the lower index,
and farthest point sampling seeds at the point closest to the centroid,
so there is no RNG anywhere in the codec path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PointCloud:
    """Positions (N, 3) with optional unit normals, tagged world or block frame."""

    positions: np.ndarray
    normals: np.ndarray = None
    frame: str = "world"

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape[0] != self.positions.shape[0]:
                raise ValueError("normals row count must match positions")
        if self.frame not in ("world", "block"):
            raise ValueError(f"unknown frame tag: {self.frame}")

    def __len__(self):
        return self.positions.shape[0]

    @property
    def has_normals(self):
        return self.normals is not None

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return PointCloud(
            self.positions[idx],
            self.normals[idx] if self.normals is not None else None,
            self.frame,
        )


@dataclass
class Block:
    """One grid cell of a world cloud, normalized to [-1, 1]^3.

    origin is the cell center in world meters; scale is meters per block
    unit (half the cell edge), so denormalize(p) = p * scale + origin.
    """

    cloud: PointCloud
    origin: np.ndarray
    scale: float
    block_size: float
    cell: tuple = None

    def denormalize(self):
        pos = self.cloud.positions * self.scale + self.origin
        return PointCloud(pos, self.cloud.normals, "world")


@dataclass
class DownsampleMap:
    """Collapse assignment from a parent cloud onto its sampled subset.

    collapsed_sets[j] lists parent indices whose nearest sample is
    sampled_indices[j]; it always contains the sample itself, so the
    factors u = len(C(p)) are >= 1 and sum to the parent count.
    """

    sampled_indices: np.ndarray
    collapsed_sets: list
    factors: np.ndarray = field(default=None)

    def __post_init__(self):
        self.sampled_indices = np.asarray(self.sampled_indices, dtype=np.int64)
        if self.factors is None:
            self.factors = np.array([len(c) for c in self.collapsed_sets], dtype=np.int64)


def partition_blocks(cloud, block_size):
    """Split a world-frame cloud into non-overlapping axis-aligned cubes.

    Cells are the grid floor(p / block_size); empty cells never appear.
    Blocks come back sorted by cell index for determinism.
    """
    pos = cloud.positions
    if not np.all(np.isfinite(pos)):
        raise ValueError("partition_blocks: non-finite coordinates")
    if len(cloud) == 0:
        return []
    cells = np.floor(pos / block_size).astype(np.int64)
    order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0]))
    sorted_cells = cells[order]
    boundaries = np.nonzero(np.any(np.diff(sorted_cells, axis=0) != 0, axis=1))[0] + 1
    groups = np.split(order, boundaries)
    blocks = []
    for grp in groups:
        cell = tuple(cells[grp[0]])
        origin = (np.array(cell, dtype=np.float64) + 0.5) * block_size
        scale = block_size / 2.0
        local = (pos[grp] - origin) / scale
        normals = cloud.normals[grp] if cloud.normals is not None else None
        blocks.append(Block(
            cloud=PointCloud(local, normals, "block"),
            origin=origin, scale=scale, block_size=block_size, cell=cell,
        ))
    return blocks


def farthest_point_sample(points, count):
    """Iterative FPS returning `count` indices.

    Seeds at the point nearest the centroid; each next pick maximizes the
    min squared distance to the chosen set, ties toward the lower index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if count < 1 or count > n:
        raise ValueError(f"farthest_point_sample: count {count} out of range [1, {n}]")
    centroid = points.mean(axis=0)
    d0 = ((points - centroid) ** 2).sum(axis=1)
    seed = int(np.argmin(d0))
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = seed
    min_d = ((points - points[seed]) ** 2).sum(axis=1)
    min_d[seed] = -1.0
    for i in range(1, count):
        nxt = int(np.argmax(min_d))
        chosen[i] = nxt
        d = ((points - points[nxt]) ** 2).sum(axis=1)
        np.minimum(min_d, d, out=min_d)
        min_d[nxt] = -1.0
    return chosen


def knn(points, queries, k, chunk=512):
    """k nearest points per query, ascending squared distance, ties to lower index."""
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    if k > n:
        raise ValueError(f"knn: k={k} exceeds point count {n}")
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    for lo in range(0, queries.shape[0], chunk):
        q = queries[lo:lo + chunk]
        d2 = ((q[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        if k < n:
            part = np.argpartition(d2, k - 1, axis=1)[:, :k]
            pd = np.take_along_axis(d2, part, axis=1)
            sub = np.lexsort((part, pd), axis=1)
            out[lo:lo + chunk] = np.take_along_axis(part, sub, axis=1)
        else:
            idx = np.broadcast_to(np.arange(n), d2.shape)
            sub = np.lexsort((idx, d2), axis=1)
            out[lo:lo + chunk] = sub[:, :k]
    return out


def nearest_neighbor(points, queries):
    return knn(points, queries, 1)[:, 0]


def collapse_assign(parent, sampled_indices):
    """Assign every parent point to its nearest sampled point.

    Samples collapse onto themselves, so the sets partition the parent
    index range. Equidistant parents go to the sample with the lower
    parent-cloud index.
    """
    pos = parent.positions if isinstance(parent, PointCloud) else np.asarray(parent, dtype=np.float64)
    sampled_indices = np.asarray(sampled_indices, dtype=np.int64)
    if sampled_indices.size == 0:
        raise ValueError("collapse_assign: empty sample set")
    samples = pos[sampled_indices]
    d2 = ((pos[:, None, :] - samples[None, :, :]) ** 2).sum(axis=2)
    # break distance ties toward the sample with the lower parent index
    tie_order = np.argsort(sampled_indices, kind="stable")
    d2_ord = d2[:, tie_order]
    owner = tie_order[np.argmin(d2_ord, axis=1)]
    # a sample is always its own nearest (distance 0, lowest index on ties with duplicates)
    sets = [[] for _ in range(sampled_indices.size)]
    for parent_idx, slot in enumerate(owner):
        sets[slot].append(parent_idx)
    collapsed = [np.array(s, dtype=np.int64) for s in sets]
    return DownsampleMap(sampled_indices=sampled_indices, collapsed_sets=collapsed)


class SpatialHashGrid:
    """Uniform grid over points with cell edge = query radius.

    Deterministic radius queries for the density metric; adequate for
    the <= 100k points per block this codec targets.
    """

    def __init__(self, points, cell):
        self.points = np.asarray(points, dtype=np.float64)
        self.cell = float(cell)
        keys = np.floor(self.points / self.cell).astype(np.int64)
        self.table = {}
        for i, key in enumerate(map(tuple, keys)):
            self.table.setdefault(key, []).append(i)

    def query_radius(self, q, radius):
        """Indices with ||p - q|| <= radius, ascending index order."""
        q = np.asarray(q, dtype=np.float64)
        r2 = radius * radius
        lo = np.floor((q - radius) / self.cell).astype(np.int64)
        hi = np.floor((q + radius) / self.cell).astype(np.int64)
        hits = []
        for ix in range(lo[0], hi[0] + 1):
            for iy in range(lo[1], hi[1] + 1):
                for iz in range(lo[2], hi[2] + 1):
                    bucket = self.table.get((ix, iy, iz))
                    if bucket:
                        hits.extend(bucket)
        if not hits:
            return np.empty(0, dtype=np.int64)
        hits = np.array(sorted(hits), dtype=np.int64)
        d2 = ((self.points[hits] - q) ** 2).sum(axis=1)
        return hits[d2 <= r2]


def radius_counts_and_means(points, radius):
    """Per point: neighbor count within radius (self excluded) and mean
    neighbor distance. Isolated points report count 0 and mean nan."""
    points = np.asarray(points, dtype=np.float64)
    grid = SpatialHashGrid(points, radius)
    n = points.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    means = np.full(n, np.nan)
    for i in range(n):
        idx = grid.query_radius(points[i], radius)
        idx = idx[idx != i]
        counts[i] = idx.size
        if idx.size:
            means[i] = np.sqrt(((points[idx] - points[i]) ** 2).sum(axis=1)).mean()
    return counts, means


def estimate_normals(points, k=16):
    """PCA normals over k-NN with a viewpoint-free deterministic sign:
    the largest-magnitude component is made positive."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    kk = min(k, n)
    idx = knn(points, points, kk)
    normals = np.empty((n, 3))
    for i in range(n):
        nb = points[idx[i]]
        c = nb - nb.mean(axis=0)
        cov = c.T @ c
        w, v = np.linalg.eigh(cov)
        nrm = v[:, 0]
        j = int(np.argmax(np.abs(nrm)))
        if nrm[j] < 0:
            nrm = -nrm
        normals[i] = nrm / max(np.linalg.norm(nrm), 1e-12)
    return normals
