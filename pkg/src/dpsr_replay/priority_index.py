"""Array-backed index trees: O(log n) proportional sampling and extrema queries.

Both structures are implicit complete binary trees padded to the next power
of two, stored in flat numpy arrays (node ``i`` has children ``2i`` and
``2i+1``, leaves at ``[size, 2*size)``). Internal nodes are always
recomputed from their children, never delta-patched, so the parent/child
relation holds exactly in floating point at every touched node.

Single-writer structures: no internal locking, concurrent mutation is out
of contract.
"""

from __future__ import annotations

import numpy as np

__all__ = ["PrefixSumTree", "ExtremaTree"]


def _padded_size(capacity: int) -> int:
    if capacity < 1:
        raise ValueError(f"capacity must be a positive integer, got {capacity}")
    size = 1
    while size < capacity:
        size *= 2
    return size


class PrefixSumTree:
    """Prefix-sum tree over a fixed-capacity array of non-negative weights.

    Supports point updates, bulk updates, and ``find_prefix``: given a
    value u in [0, total), return the smallest leaf index i whose running
    prefix sum strictly exceeds u. Ties at an exact prefix boundary resolve
    to the next leaf, which keeps zero-weight leaves unreachable.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._size = _padded_size(capacity)
        self._depth = self._size.bit_length() - 1
        self._nodes = np.zeros(2 * self._size, dtype=np.float64)

    def __len__(self) -> int:
        return self.capacity

    def total(self) -> float:
        """Sum of all leaf weights (root node)."""
        return float(self._nodes[1])

    @property
    def leaf_weights(self) -> np.ndarray:
        """Read-only view of the current leaf weights."""
        view = self._nodes[self._size:self._size + self.capacity]
        view.flags.writeable = False
        return view

    def get_weight(self, index: int) -> float:
        if not 0 <= index < self.capacity:
            raise IndexError(f"leaf index {index} out of range [0, {self.capacity})")
        return float(self._nodes[self._size + index])

    def set_weight(self, index: int, w: float) -> None:
        """Set one leaf weight and refresh all ancestor sums."""
        if not 0 <= index < self.capacity:
            raise IndexError(f"leaf index {index} out of range [0, {self.capacity})")
        w = float(w)
        if not (w >= 0.0 and np.isfinite(w)):
            raise ValueError(f"weight must be finite and non-negative, got {w}")
        nodes = self._nodes
        i = self._size + index
        nodes[i] = w
        i >>= 1
        while i >= 1:
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1]
            i >>= 1

    def set_many(self, indices, weights) -> None:
        """Set several leaves at once; ancestors are refreshed level by level."""
        idx = np.asarray(indices, dtype=np.int64)
        w = np.asarray(weights, dtype=np.float64)
        if idx.size == 0:
            return
        if idx.min() < 0 or idx.max() >= self.capacity:
            raise IndexError(f"leaf index out of range [0, {self.capacity})")
        if not np.all(np.isfinite(w)) or np.any(w < 0.0):
            raise ValueError("weights must be finite and non-negative")
        nodes = self._nodes
        nodes[self._size + idx] = w
        # ancestors recompute from children, so duplicate parent indices
        # are harmless idempotent writes; no dedup needed
        level = (self._size + idx) >> 1
        while level[0] >= 1:
            nodes[level] = nodes[2 * level] + nodes[2 * level + 1]
            level >>= 1

    def assign(self, weights) -> None:
        """Replace the first ``len(weights)`` leaves, zero the rest, rebuild."""
        w = np.asarray(weights, dtype=np.float64)
        if w.size > self.capacity:
            raise ValueError(f"{w.size} weights exceed capacity {self.capacity}")
        if not np.all(np.isfinite(w)) or np.any(w < 0.0):
            raise ValueError("weights must be finite and non-negative")
        self._nodes[self._size:self._size + w.size] = w
        self._nodes[self._size + w.size:] = 0.0
        self.rebuild()

    def rebuild(self) -> None:
        """Recompute every internal sum from the leaves (bounds drift)."""
        nodes = self._nodes
        lo = self._size >> 1
        while lo >= 1:
            nodes[lo:2 * lo] = nodes[2 * lo:4 * lo:2] + nodes[2 * lo + 1:4 * lo:2]
            lo >>= 1

    def find_prefix(self, u: float) -> int:
        """Smallest leaf index whose prefix sum strictly exceeds u."""
        return int(self.find_prefix_many(np.array([u], dtype=np.float64))[0])

    def find_prefix_many(self, us) -> np.ndarray:
        """Vectorized ``find_prefix`` for a batch of query values."""
        total = self._nodes[1]
        if total <= 0.0:
            raise RuntimeError("cannot search an empty tree (total weight is zero)")
        u = np.array(us, dtype=np.float64)
        if not ((u >= 0.0) & (u < total)).all():
            raise ValueError(f"query values must lie in [0, {total})")
        nodes = self._nodes
        pos = np.ones(u.shape, dtype=np.int64)
        for _ in range(self._depth):
            pos <<= 1
            left = nodes[pos]
            go_right = u >= left
            np.subtract(u, left, out=u, where=go_right)
            pos += go_right
        # Rounding at a subtree boundary can strand a query on a zero
        # leaf; step back to the nearest positive one (total > 0, so one
        # exists). In practice this never triggers for random queries.
        if np.any(nodes[pos] == 0.0):
            for j in np.nonzero(nodes[pos] == 0.0)[0]:
                p = pos[j]
                while p > self._size and nodes[p] == 0.0:
                    p -= 1
                while nodes[p] == 0.0:
                    p += 1
                pos[j] = p
        return pos - self._size


class ExtremaTree:
    """Segment tree maintaining exact min and max over a fixed leaf array.

    Unset leaves hold +inf/-inf sentinels, so aggregates over the set
    leaves are exact (comparisons only, no float arithmetic). Queries on a
    structure with no set leaves raise.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._size = _padded_size(capacity)
        self._min = np.full(2 * self._size, np.inf, dtype=np.float64)
        self._max = np.full(2 * self._size, -np.inf, dtype=np.float64)
        self._set = np.zeros(capacity, dtype=bool)
        self._n_set = 0

    def __len__(self) -> int:
        return self.capacity

    def update(self, index: int, v: float) -> None:
        """Set one leaf value and refresh ancestor min/max aggregates."""
        if not 0 <= index < self.capacity:
            raise IndexError(f"leaf index {index} out of range [0, {self.capacity})")
        v = float(v)
        if not np.isfinite(v):
            raise ValueError(f"value must be finite, got {v}")
        if not self._set[index]:
            self._set[index] = True
            self._n_set += 1
        mn, mx = self._min, self._max
        i = self._size + index
        mn[i] = v
        mx[i] = v
        i >>= 1
        while i >= 1:
            mn[i] = min(mn[2 * i], mn[2 * i + 1])
            mx[i] = max(mx[2 * i], mx[2 * i + 1])
            i >>= 1

    def update_many(self, indices, values) -> None:
        idx = np.asarray(indices, dtype=np.int64)
        v = np.asarray(values, dtype=np.float64)
        if idx.size == 0:
            return
        if idx.min() < 0 or idx.max() >= self.capacity:
            raise IndexError(f"leaf index out of range [0, {self.capacity})")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        fresh = ~self._set[idx]
        if fresh.any():
            self._set[idx] = True
            self._n_set = int(self._set.sum())
        mn, mx = self._min, self._max
        mn[self._size + idx] = v
        mx[self._size + idx] = v
        level = (self._size + idx) >> 1
        while level[0] >= 1:
            mn[level] = np.minimum(mn[2 * level], mn[2 * level + 1])
            mx[level] = np.maximum(mx[2 * level], mx[2 * level + 1])
            level >>= 1

    def assign(self, values) -> None:
        """Replace the first ``len(values)`` leaves, clear the rest, rebuild."""
        v = np.asarray(values, dtype=np.float64)
        if v.size > self.capacity:
            raise ValueError(f"{v.size} values exceed capacity {self.capacity}")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        size = self._size
        self._min[size:size + v.size] = v
        self._min[size + v.size:] = np.inf
        self._max[size:size + v.size] = v
        self._max[size + v.size:] = -np.inf
        self._set[:] = False
        self._set[:v.size] = True
        self._n_set = int(v.size)
        lo = size >> 1
        while lo >= 1:
            self._min[lo:2 * lo] = np.minimum(self._min[2 * lo:4 * lo:2],
                                              self._min[2 * lo + 1:4 * lo:2])
            self._max[lo:2 * lo] = np.maximum(self._max[2 * lo:4 * lo:2],
                                              self._max[2 * lo + 1:4 * lo:2])
            lo >>= 1

    def query_min(self) -> float:
        if self._n_set == 0:
            raise RuntimeError("cannot query an empty structure")
        return float(self._min[1])

    def query_max(self) -> float:
        if self._n_set == 0:
            raise RuntimeError("cannot query an empty structure")
        return float(self._max[1])
