"""MinHash signatures and LSH banding for near-duplicate detection.

Shingles are character n-grams of the normalized text. Each of the k
permutations is realized as a salted 64-bit mix (splitmix64 finalizer) of a
stable blake2b shingle hash, so signatures depend only on
(text, k, w, seed) and never on process state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def shingle_set(text: str, w: int) -> set[str]:
    """Character w-grams; a text shorter than w is its own single shingle."""
    if w < 1:
        raise ValueError(f"shingle width must be >= 1, got {w}")
    if len(text) < w:
        return {text}
    return {text[i : i + w] for i in range(len(text) - w + 1)}


def _stable_hash64(s: str) -> int:
    return int.from_bytes(hashlib.blake2b(s.encode("utf-8"), digest_size=8).digest(), "little")


def _mix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = x ^ (x >> np.uint64(30))
        x = x * _MIX1
        x = x ^ (x >> np.uint64(27))
        x = x * _MIX2
        x = x ^ (x >> np.uint64(31))
    return x


@dataclass
class MinHashSignature:
    values: np.ndarray  # (k,) uint64 minima
    k: int
    w: int
    seed: int

    def compatible_with(self, other: "MinHashSignature") -> bool:
        return self.k == other.k and self.w == other.w and self.seed == other.seed


def permutation_salts(k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng((seed, "minhash-salts"))
    return rng.integers(0, np.iinfo(np.uint64).max, size=k, dtype=np.uint64)


def minhash_signature(text: str, k: int = 256, w: int = 5, seed: int = 0) -> MinHashSignature:
    """Per-permutation minimum over the text's shingle hashes."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    shingles = shingle_set(text, w)
    base = np.array([_stable_hash64(s) for s in sorted(shingles)], dtype=np.uint64)
    salts = permutation_salts(k, seed)
    hashed = _mix(base[:, None] ^ salts[None, :])  # (n_shingles, k)
    return MinHashSignature(values=hashed.min(axis=0), k=k, w=w, seed=seed)


def estimated_jaccard(a: MinHashSignature, b: MinHashSignature) -> float:
    """Fraction of agreeing signature components."""
    if not a.compatible_with(b):
        raise ConfigError("signatures built with different (k, w, seed) parameters")
    return float(np.mean(a.values == b.values))


def lsh_candidate_pairs(signatures: list[MinHashSignature], bands: int = 32, rows: int = 8) -> set[tuple[int, int]]:
    """Index pairs that collide in at least one LSH band.

    The banding threshold (1/bands)^(1/rows) sits well below the verification
    threshold, so this stage is the high-recall side and the estimated-Jaccard
    check does precision.
    """
    if not signatures:
        return set()
    k = signatures[0].k
    if bands * rows != k:
        raise ConfigError(f"bands*rows = {bands * rows} must equal k = {k}")
    for sig in signatures[1:]:
        if not sig.compatible_with(signatures[0]):
            raise ConfigError("signatures built with different (k, w, seed) parameters")
    pairs: set[tuple[int, int]] = set()
    for band in range(bands):
        buckets: dict[bytes, list[int]] = {}
        lo = band * rows
        for i, sig in enumerate(signatures):
            key = sig.values[lo : lo + rows].tobytes()
            buckets.setdefault(key, []).append(i)
        for members in buckets.values():
            for ai in range(len(members)):
                for bi in range(ai + 1, len(members)):
                    pairs.add((members[ai], members[bi]))
    return pairs


def banding_collision_probability(jaccard: float, bands: int = 32, rows: int = 8) -> float:
    """P(candidate) = 1 - (1 - J^rows)^bands for a pair with true Jaccard J."""
    return 1.0 - (1.0 - jaccard**rows) ** bands
