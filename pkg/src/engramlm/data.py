"""Token-stream files, fixed-length packing, deterministic batch order."""

from __future__ import annotations

import numpy as np

from .errors import ParseError


def load_token_docs(path) -> list[np.ndarray]:
    """Read a .tokens file: one document per line, space-separated ids."""
    docs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                docs.append(np.array([int(t) for t in line.split()], dtype=np.int64))
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
    return docs


def save_token_docs(docs, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc in docs:
            f.write(" ".join(str(int(t)) for t in doc) + "\n")


def pack_blocks(docs, context_len: int, sep_id: int) -> np.ndarray:
    """Concatenate docs with a separator token and cut into (context_len + 1)
    blocks; the trailing partial block is dropped. Block b yields inputs
    block[:-1] and targets block[1:]."""
    stream = []
    for doc in docs:
        stream.append(np.asarray(doc, dtype=np.int64))
        stream.append(np.array([sep_id], dtype=np.int64))
    if not stream:
        return np.zeros((0, context_len + 1), dtype=np.int64)
    flat = np.concatenate(stream)
    width = context_len + 1
    n = len(flat) // width
    return flat[: n * width].reshape(n, width)


class BatchSchedule:
    """Pure function (seed, step) -> micro-batch of block indices.

    Blocks are consumed in a per-epoch permutation drawn from the seed, so
    any step's batch can be recomputed without replaying earlier steps;
    resuming a run is exact by construction.
    """

    def __init__(self, n_blocks: int, batch_size: int, grad_accum_steps: int, seed: int):
        if n_blocks < 1:
            raise ValueError("need at least one packed block; corpus too small for context length")
        self.n_blocks = n_blocks
        self.batch_size = batch_size
        self.grad_accum_steps = grad_accum_steps
        self.seed = seed
        self._perm_cache: dict[int, np.ndarray] = {}

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._perm_cache:
            rng = np.random.default_rng((self.seed, epoch))
            self._perm_cache[epoch] = rng.permutation(self.n_blocks)
            if len(self._perm_cache) > 4:
                self._perm_cache.pop(min(self._perm_cache))
        return self._perm_cache[epoch]

    def micro_batches(self, step: int) -> list[np.ndarray]:
        """grad_accum_steps index arrays of length batch_size for this step."""
        per_step = self.batch_size * self.grad_accum_steps
        base = step * per_step
        out = []
        for j in range(self.grad_accum_steps):
            positions = base + j * self.batch_size + np.arange(self.batch_size)
            idx = np.empty(self.batch_size, dtype=np.int64)
            for i, pos in enumerate(positions):
                epoch, off = divmod(int(pos), self.n_blocks)
                idx[i] = self._perm(epoch)[off]
            out.append(idx)
        return out
