"""Flat parameter vectors and their block partitions.

Parameters live in one contiguous float64 array; a block is a half-open
index range into it, so block views are numpy views and writes go
straight through to the parent vector.  Block ids are 1-based.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, PartitionError, ShapeError


def as_param_vector(values, d=None):
    """Validate and convert ``values`` to a finite 1-D float64 array."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"parameter vector must be 1-D, got shape {v.shape}")
    if d is not None and v.shape[0] != d:
        raise ShapeError(f"expected dimension {d}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise NumericError("parameter vector contains non-finite entries")
    return v


@dataclass(frozen=True)
class BlockPartition:
    """Disjoint, gap-free ``[start, end)`` ranges covering ``[0, d)`` in order."""

    ranges: tuple

    def __post_init__(self):
        ranges = tuple((int(s), int(e)) for s, e in self.ranges)
        if not ranges:
            raise PartitionError("partition needs at least one block")
        ordered = sorted(ranges)
        if ordered[0][0] != 0:
            raise PartitionError(f"partition must start at 0, starts at {ordered[0][0]}")
        for (s, e) in ordered:
            if e <= s:
                raise PartitionError(f"empty or reversed range [{s},{e})")
        for (s0, e0), (s1, e1) in zip(ordered, ordered[1:]):
            if s1 < e0:
                raise PartitionError(f"ranges [{s0},{e0}) and [{s1},{e1}) overlap")
            if s1 > e0:
                raise PartitionError(f"gap between {e0} and {s1}")
        object.__setattr__(self, "ranges", ranges)

    @property
    def n_blocks(self):
        return len(self.ranges)

    B = n_blocks

    @property
    def dim(self):
        return max(e for _, e in self.ranges)

    @property
    def sizes(self):
        return tuple(e - s for s, e in self.ranges)

    def block_size(self, b):
        s, e = self.ranges[self._index(b)]
        return e - s

    def slice(self, b):
        s, e = self.ranges[self._index(b)]
        return slice(s, e)

    def _index(self, b):
        if isinstance(b, (bool, np.bool_)) or not isinstance(b, (int, np.integer)):
            raise PartitionError(f"block id must be an integer, got {b!r}")
        if not 1 <= b <= len(self.ranges):
            raise PartitionError(f"block id {b} outside [1, {len(self.ranges)}]")
        return int(b) - 1

    def check_covers(self, v):
        if np.shape(v)[-1] != self.dim:
            raise ShapeError(f"vector of dimension {np.shape(v)[-1]} vs partition over {self.dim}")


def make_partition(d, *, equal=None, by_layer=None, explicit=None):
    """Build a partition of ``[0, d)`` from exactly one strategy.

    ``equal=B`` gives ``floor(d/B)``-sized blocks with the remainder folded
    into the last block; ``by_layer`` takes consecutive layer sizes;
    ``explicit`` takes ``[start, end)`` pairs.
    """
    chosen = [x is not None for x in (equal, by_layer, explicit)]
    if sum(chosen) != 1:
        raise PartitionError("give exactly one of equal=, by_layer=, explicit=")
    d = int(d)
    if d < 1:
        raise PartitionError(f"dimension must be positive, got {d}")

    if equal is not None:
        B = int(equal)
        if B < 1 or B > d:
            raise PartitionError(f"cannot split d={d} into B={B} blocks")
        w = d // B
        ranges = [(b * w, (b + 1) * w) for b in range(B - 1)] + [((B - 1) * w, d)]
    elif by_layer is not None:
        dims = [int(x) for x in by_layer]
        if any(x < 1 for x in dims):
            raise PartitionError(f"layer sizes must be positive: {dims}")
        if sum(dims) != d:
            raise PartitionError(f"layer sizes sum to {sum(dims)}, expected {d}")
        edges = np.concatenate([[0], np.cumsum(dims)])
        ranges = list(zip(edges[:-1].tolist(), edges[1:].tolist()))
    else:
        ranges = [tuple(r) for r in explicit]

    p = BlockPartition(tuple(ranges))
    if p.dim != d:
        raise PartitionError(f"ranges cover [0,{p.dim}), expected [0,{d})")
    return p


def block_view(v, p, b):
    """Writable view of block ``b`` of ``v``."""
    p.check_covers(v)
    return v[p.slice(b)]


def block_norm_sq_sum(v, p):
    """Sum of squared block norms; equals ``||v||^2``."""
    p.check_covers(v)
    return float(sum(np.dot(v[s:e], v[s:e]) for s, e in p.ranges))


def block_dot_sum(u, v, p):
    if np.shape(u) != np.shape(v):
        raise ShapeError(f"shape mismatch {np.shape(u)} vs {np.shape(v)}")
    p.check_covers(u)
    return float(sum(np.dot(u[s:e], v[s:e]) for s, e in p.ranges))
