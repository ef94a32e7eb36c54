"""Counter-based per-path normal streams.

Each path owns a Philox generator keyed by (root_seed, stream_index), so any
subset of paths can be regenerated independently and in any order.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def path_generator(root_seed: int, index: int) -> np.random.Generator:
    key = np.array([int(root_seed) & _MASK64, int(index) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class NoiseSource:
    """Standard normal increments for a batch of paths.

    ``stream_indices`` may repeat; repeated entries receive identical noise,
    which is how common random numbers are shared across starting points.
    """

    def __init__(self, root_seed: int, stream_indices, width: int):
        idx = np.asarray(stream_indices, dtype=np.int64)
        self.unique, self.inverse = np.unique(idx, return_inverse=True)
        self.width = int(width)
        self.root_seed = int(root_seed)
        self._gens = [path_generator(root_seed, i) for i in self.unique]

    def block(self, n_steps: int) -> np.ndarray:
        """Next ``n_steps`` increments, shape (n_steps, n_paths, width)."""
        buf = np.empty((len(self._gens), n_steps, self.width))
        for j, g in enumerate(self._gens):
            g.standard_normal(out=buf[j])
        out = buf.transpose(1, 0, 2)
        if len(self.unique) != len(self.inverse) or np.any(self.inverse != np.arange(len(self.inverse))):
            out = out[:, self.inverse, :]
        return np.ascontiguousarray(out)


def chunk_steps(n_paths: int, width: int, budget_bytes: int = 32 * 2**20) -> int:
    return max(1, budget_bytes // (8 * max(1, n_paths) * max(1, width)))
