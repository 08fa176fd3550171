"""Top-k sparsification of block deltas."""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TopKConfig:
    ratio: float
    index_bits: int = 32
    value_bits: int = 32
    compress_downlink: bool = False

    def __post_init__(self):
        if not 0 < self.ratio <= 1:
            raise ValueError(f"top-k ratio must be in (0, 1], got {self.ratio}")

    def k(self, n):
        # round() guards against ratio*n landing a hair above an integer
        return max(1, min(n, math.ceil(round(self.ratio * n, 9))))

    def payload_bytes(self, n):
        return self.k(n) * (self.index_bits + self.value_bits) // 8


@dataclass(frozen=True)
class SparseDelta:
    indices: np.ndarray
    values: np.ndarray
    size: int
    payload_bytes: int

    def decompress(self):
        out = np.zeros(self.size)
        out[self.indices] = self.values
        return out


def topk_compress(delta, cfg):
    """Keep the ``ceil(ratio * n)`` largest-magnitude entries; ties go to the lower index."""
    delta = np.asarray(delta, dtype=np.float64)
    n = delta.shape[0]
    if n == 0:
        raise ValueError("cannot compress an empty delta")
    k = cfg.k(n)
    if k == n:
        idx = np.arange(n)
    else:
        # stable sort on -|x| keeps lower indices first among equal magnitudes
        idx = np.sort(np.argsort(-np.abs(delta), kind="stable")[:k])
    return SparseDelta(idx, delta[idx].copy(), n, cfg.payload_bytes(n))


def topk_roundtrip(delta, cfg):
    """``decompress(compress(delta))`` plus the payload size in bytes."""
    if cfg is None:
        return delta, None
    sp = topk_compress(delta, cfg)
    if sp.indices.size == sp.size:
        return np.asarray(delta, dtype=np.float64), sp.payload_bytes
    return sp.decompress(), sp.payload_bytes
