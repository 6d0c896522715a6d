"""Input generation: key streams (uniform, Gaussian-skewed, Zipf-like) and
fixed-size payloads that carry their key in the first four bytes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..operators import KEY_BYTES


@dataclass(frozen=True)
class SkewConfig:
    sigma: float
    key_space: int = 1000
    partitioning: str = "range"

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.key_space < 1:
            raise ValueError("key_space must be >= 1")


def gen_gaussian_keys(cfg: SkewConfig, n: int, seed: int = 0) -> np.ndarray:
    """Normal(0, sigma) draws restricted to [-1, 1] and mapped onto [0, K).

    Out-of-range draws are redrawn rather than clamped, so a wide sigma
    approaches a uniform key distribution instead of piling keys onto the
    two edge keys.
    """
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, cfg.sigma, n)
    out = np.abs(x) > 1.0
    while out.any():
        x[out] = rng.normal(0.0, cfg.sigma, int(out.sum()))
        out = np.abs(x) > 1.0
    keys = np.floor((x + 1.0) / 2.0 * cfg.key_space).astype(np.int64)
    return np.minimum(keys, cfg.key_space - 1)


def gen_uniform_keys(key_space: int, n: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, key_space, n)


def gen_zipf_keys(key_space: int, n: int, seed: int = 0, exponent: float = 1.0) -> np.ndarray:
    """Finite Zipf-like draw: P(k) proportional to 1 / (k + 1) ** exponent."""
    weights = 1.0 / np.arange(1, key_space + 1) ** exponent
    return np.random.default_rng(seed).choice(key_space, size=n, p=weights / weights.sum())


def payloads(keys: np.ndarray, tuple_size: int = 64, seed: int = 0) -> Iterator[bytes]:
    """One payload per key: key (4 bytes LE), index (4 bytes LE), filler."""
    filler = np.random.default_rng(seed + 1).bytes(max(0, tuple_size - KEY_BYTES - 4))
    for start in range(0, len(keys), 4096):
        # chunked so a long open-loop source starts emitting immediately
        for i, k in enumerate(keys[start:start + 4096].tolist(), start):
            yield int(k).to_bytes(KEY_BYTES, "little") + (i & 0xFFFFFFFF).to_bytes(4, "little") + filler


def bucket_shares(keys: np.ndarray, key_space: int, buckets: int) -> np.ndarray:
    """Fraction of keys in each of ``buckets`` equal-width key ranges."""
    idx = np.minimum(keys * buckets // key_space, buckets - 1)
    return np.bincount(idx, minlength=buckets) / len(keys)
