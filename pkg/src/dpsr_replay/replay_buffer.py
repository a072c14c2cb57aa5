"""Fixed-capacity experience store with two transformed-priority indexes.

``DpsrBuffer`` keeps the raw priority of every stored experience as the
single source of truth and mirrors two transforms of it into prefix-sum
trees: ``p**alpha`` drives training-batch sampling, ``p**(-gamma)`` drives
replacement-candidate selection (low priority -> likely eviction
candidate). Extrema trees over ``p**alpha`` and raw ``p`` give O(1) access
to the quantities needed for importance-weight normalization and
max-priority insertion.

Owned by exactly one training loop at a time; no shared-mutation support.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .priority_index import ExtremaTree, PrefixSumTree

__all__ = ["Experience", "DpsrBuffer"]

# Full internal-node refresh cadence, in buffer mutations; bounds float
# drift accumulated by incremental tree updates.
REBUILD_EVERY = 100_000


@dataclass
class Experience:
    """One stored transition plus the bookkeeping recycling needs.

    ``snapshot`` is an opaque environment token captured at ``state``
    (restoring it yields an environment whose current observation equals
    ``state``). ``birth_step`` is the global timestep at which the
    experience entered (or re-entered) the buffer.
    """

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool
    snapshot: object = None
    birth_step: int = 0
    priority: float = 1.0


class DpsrBuffer:
    """Slot store with prioritized sampling and prioritized replacement.

    Sampling probability of slot i is ``p_i**alpha / sum_j p_j**alpha``;
    replacement-candidate probability is ``p_i**(-gamma) / sum_j
    p_j**(-gamma)``. Both exponents may change over time; the transformed
    trees are rebuilt from raw priorities whenever they do.
    """

    def __init__(self, capacity: int, epsilon_p: float = 1e-6,
                 alpha: float = 0.6, gamma: float = 0.3):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        if epsilon_p <= 0:
            raise ValueError(f"priority offset must be positive, got {epsilon_p}")
        self.capacity = capacity
        self.epsilon_p = float(epsilon_p)
        self.alpha_current = float(alpha)
        self.gamma_current = float(gamma)
        self.slots: list[Optional[Experience]] = [None] * capacity
        self._priorities = np.zeros(capacity, dtype=np.float64)
        self._birth_steps = np.zeros(capacity, dtype=np.int64)
        self._count = 0
        self._mutations = 0
        # dense mirrors of the transition fields for fast batch gathers;
        # allocated lazily once the observation shape is known
        self._states = None
        self._next_states = None
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity, dtype=np.float64)
        self._terminals = np.zeros(capacity, dtype=bool)
        self.sample_tree = PrefixSumTree(capacity)
        self.replace_tree = PrefixSumTree(capacity)
        self.sample_min_tree = ExtremaTree(capacity)
        self.priority_max_tree = ExtremaTree(capacity)

    def __len__(self) -> int:
        return self._count

    @property
    def occupied(self) -> int:
        return self._count

    def is_full(self) -> bool:
        return self._count == self.capacity

    @property
    def priorities(self) -> np.ndarray:
        """Read-only view of raw priorities for the occupied slots."""
        view = self._priorities[:self._count]
        view.flags.writeable = False
        return view

    @property
    def birth_steps(self) -> np.ndarray:
        view = self._birth_steps[:self._count]
        view.flags.writeable = False
        return view

    # -- storage ----------------------------------------------------------

    def append(self, exp: Experience) -> int:
        """Store into the next free slot; buffer must not be full."""
        if self._count >= self.capacity:
            raise RuntimeError(
                f"buffer full ({self.capacity} slots); use the replacement path"
            )
        slot = self._count
        self._count += 1
        self._write_slot(slot, exp)
        return slot

    def overwrite_slot(self, slot: int, exp: Experience) -> None:
        """Discard the experience at ``slot`` and store ``exp`` there."""
        self._check_occupied(slot)
        self._write_slot(slot, exp)

    def _write_slot(self, slot: int, exp: Experience) -> None:
        p = float(exp.priority)
        if not (p > 0 and np.isfinite(p)):
            raise ValueError(f"experience priority must be positive and finite, got {p}")
        self.slots[slot] = exp
        self._priorities[slot] = p
        self._birth_steps[slot] = exp.birth_step
        state = np.asarray(exp.state)
        if state.ndim == 1:
            if self._states is None:
                self._states = np.zeros((self.capacity, state.size), dtype=np.float64)
                self._next_states = np.zeros_like(self._states)
            self._states[slot] = state
            self._next_states[slot] = exp.next_state
        self._actions[slot] = exp.action
        self._rewards[slot] = exp.reward
        self._terminals[slot] = exp.terminal
        self._set_slot_trees(slot, p)

    def _set_slot_trees(self, slot: int, p: float) -> None:
        # fused walk over all four index structures (they share one padded
        # size); arithmetic is identical to the per-tree public updates
        p_alpha = np.power(p, self.alpha_current)
        p_gamma = np.power(p, -self.gamma_current)
        smn, pmx = self.sample_min_tree, self.priority_max_tree
        if not smn._set[slot]:
            smn._set[slot] = True
            smn._n_set += 1
            pmx._set[slot] = True
            pmx._n_set += 1
        st, rt = self.sample_tree._nodes, self.replace_tree._nodes
        smn_min, smn_max = smn._min, smn._max
        pmx_min, pmx_max = pmx._min, pmx._max
        i = self.sample_tree._size + slot
        st[i] = p_alpha
        rt[i] = p_gamma
        smn_min[i] = p_alpha
        smn_max[i] = p_alpha
        pmx_min[i] = p
        pmx_max[i] = p
        i >>= 1
        while i >= 1:
            lo = i << 1
            hi = lo | 1
            st[i] = st[lo] + st[hi]
            rt[i] = rt[lo] + rt[hi]
            a, b = smn_min[lo], smn_min[hi]
            smn_min[i] = a if a < b else b
            a, b = smn_max[lo], smn_max[hi]
            smn_max[i] = a if a > b else b
            a, b = pmx_min[lo], pmx_min[hi]
            pmx_min[i] = a if a < b else b
            a, b = pmx_max[lo], pmx_max[hi]
            pmx_max[i] = a if a > b else b
            i >>= 1
        self._tick()

    def _refresh_slot_trees(self, idx: np.ndarray, p: np.ndarray) -> None:
        """Vectorized fused walk; every slot in ``idx`` must be occupied."""
        p_alpha = np.power(p, self.alpha_current)
        p_gamma = np.power(p, -self.gamma_current)
        st, rt = self.sample_tree._nodes, self.replace_tree._nodes
        smn, pmx = self.sample_min_tree, self.priority_max_tree
        smn_min, smn_max = smn._min, smn._max
        pmx_min, pmx_max = pmx._min, pmx._max
        leaf = self.sample_tree._size + idx
        st[leaf] = p_alpha
        rt[leaf] = p_gamma
        smn_min[leaf] = p_alpha
        smn_max[leaf] = p_alpha
        pmx_min[leaf] = p
        pmx_max[leaf] = p
        level = leaf >> 1
        while level[0] >= 1:
            lo = level << 1
            hi = lo + 1
            st[level] = st[lo] + st[hi]
            rt[level] = rt[lo] + rt[hi]
            smn_min[level] = np.minimum(smn_min[lo], smn_min[hi])
            smn_max[level] = np.maximum(smn_max[lo], smn_max[hi])
            pmx_min[level] = np.minimum(pmx_min[lo], pmx_min[hi])
            pmx_max[level] = np.maximum(pmx_max[lo], pmx_max[hi])
            level >>= 1
        self._tick(idx.size)

    def _tick(self, n: int = 1) -> None:
        self._mutations += n
        if self._mutations >= REBUILD_EVERY:
            self._mutations = 0
            self.sample_tree.rebuild()
            self.replace_tree.rebuild()

    def _check_occupied(self, slot: int) -> None:
        if not 0 <= slot < self._count:
            raise IndexError(
                f"slot {slot} not occupied (occupied slots: 0..{self._count - 1})"
            )

    def get(self, slot: int) -> Experience:
        self._check_occupied(slot)
        return self.slots[slot]

    def batch_arrays(self, slots):
        """Transition fields for the given slots as parallel arrays.

        Requires vector observations (the dense mirrors). Returns
        (states, actions, rewards, next_states, terminals).
        """
        if self._states is None:
            raise RuntimeError("batch_arrays needs vector observations")
        idx = np.asarray(slots, dtype=np.int64)
        return (self._states[idx], self._actions[idx], self._rewards[idx],
                self._next_states[idx], self._terminals[idx])

    # -- priorities -------------------------------------------------------

    def new_experience_priority(self) -> float:
        """Priority for a freshly assembled experience: current buffer max.

        Returns 1.0 for an empty buffer so the first insertion has
        well-defined transformed weights for any exponent.
        """
        if self._count == 0:
            return 1.0
        return self.priority_max_tree.query_max()

    def max_priority(self) -> float:
        if self._count == 0:
            raise RuntimeError("buffer is empty")
        return self.priority_max_tree.query_max()

    def update_priority(self, slot: int, abs_td: float) -> None:
        """Set slot priority to ``abs_td + epsilon_p`` and refresh indexes."""
        self._check_occupied(slot)
        abs_td = float(abs_td)
        if not (abs_td >= 0 and np.isfinite(abs_td)):
            raise ValueError(f"absolute TD error must be non-negative, got {abs_td}")
        p = abs_td + self.epsilon_p
        self.slots[slot].priority = p
        self._priorities[slot] = p
        self._set_slot_trees(slot, p)

    def update_priorities(self, slots, abs_tds) -> None:
        """Vectorized ``update_priority`` for a sampled batch.

        Duplicate slots are allowed; a slot sampled twice in one batch
        carries the same TD error both times, so last-write-wins is exact.
        """
        idx = np.asarray(slots, dtype=np.int64)
        if idx.size == 0:
            return
        if idx.min() < 0 or idx.max() >= self._count:
            raise IndexError("slot not occupied")
        td = np.asarray(abs_tds, dtype=np.float64)
        if not np.all(np.isfinite(td)) or np.any(td < 0):
            raise ValueError("absolute TD errors must be non-negative and finite")
        p = td + self.epsilon_p
        self._priorities[idx] = p
        for s, pi in zip(idx.tolist(), p.tolist()):
            self.slots[s].priority = pi
        self._refresh_slot_trees(idx, p)

    def set_exponents(self, alpha: float, gamma: float) -> None:
        """Switch transform exponents, rebuilding both trees if changed."""
        alpha = float(alpha)
        gamma = float(gamma)
        if alpha < 0 or gamma < 0:
            raise ValueError("exponents must be non-negative")
        if alpha == self.alpha_current and gamma == self.gamma_current:
            return
        self.alpha_current = alpha
        self.gamma_current = gamma
        occupied = self._priorities[:self._count]
        p_alpha = np.power(occupied, alpha)
        self.sample_tree.assign(p_alpha)
        self.sample_min_tree.assign(p_alpha)
        self.replace_tree.assign(np.power(occupied, -gamma))

    # -- sampling ---------------------------------------------------------

    def sample_batch(self, k: int, alpha: float, beta: float, rng) -> list[tuple[int, float]]:
        """Draw k slots independently (duplicates allowed) with weights.

        Each draw has probability ``p_i**alpha / sum_j p_j**alpha``. The
        returned weight is ``(n_occ * P(i))**-beta`` normalized by the max
        of that expression over all occupied slots, so weights lie in
        (0, 1] and equal exactly 1.0 whenever priorities are uniform or
        beta is zero.
        """
        slots, weights = self.sample_batch_arrays(k, alpha, beta, rng)
        return list(zip(slots.tolist(), weights.tolist()))

    def sample_batch_arrays(self, k: int, alpha: float, beta: float, rng):
        if self._count == 0:
            raise RuntimeError("cannot sample from an empty buffer")
        if k < 1:
            raise ValueError(f"batch size must be >= 1, got {k}")
        if alpha < 0 or beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        self.set_exponents(alpha, self.gamma_current)
        total = self.sample_tree.total()
        us = rng.random(k) * total
        # guard the measure-zero case where rounding lands exactly on total
        np.minimum(us, np.nextafter(total, 0.0), out=us)
        slots = self.sample_tree.find_prefix_many(us)
        # w_i = (n*PS_i)^-beta / max_j (n*PS_j)^-beta == (p_i^a / min_j p_j^a)^-beta;
        # the ratio form keeps every weight provably <= 1 in floating point
        min_alpha = self.sample_min_tree.query_min()
        leaf = self.sample_tree.leaf_weights[slots]
        weights = np.power(leaf / min_alpha, -beta)
        return slots, weights

    def select_replacement_candidates(self, c: int, gamma: float, rng) -> list[int]:
        """Draw ``c`` distinct slots, sequentially proportional to ``p**-gamma``.

        Implemented as an exponential race over the replacement-tree leaf
        weights: slot i gets key ``E_i / w_i`` with ``E_i`` standard
        exponential, and the ``c`` smallest keys win. The joint law of the
        resulting ordered draw is identical to sequentially sampling
        without replacement (masking already-drawn slots to weight zero),
        but runs in one vectorized pass.
        """
        if not self.is_full():
            raise RuntimeError(
                f"replacement candidates need a full buffer "
                f"({self._count}/{self.capacity} occupied)"
            )
        if not 1 <= c <= self.capacity:
            raise ValueError(f"candidate count {c} out of range [1, {self.capacity}]")
        if gamma < 0:
            raise ValueError("gamma must be non-negative")
        self.set_exponents(self.alpha_current, gamma)
        weights = self.replace_tree.leaf_weights[:self._count]
        keys = rng.standard_exponential(self._count) / weights
        if c == self.capacity:
            order = np.argsort(keys, kind="stable")
            return order.tolist()
        part = np.argpartition(keys, c - 1)[:c]
        order = part[np.argsort(keys[part], kind="stable")]
        return order.tolist()

    # -- diagnostics ------------------------------------------------------

    def dump_debug_csv(self, path) -> None:
        """Write one row per occupied slot for offline inspection."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["slot", "birth_step", "priority", "action",
                             "reward", "terminal"])
            for slot in range(self._count):
                exp = self.slots[slot]
                writer.writerow([slot, exp.birth_step, repr(exp.priority),
                                 exp.action, repr(float(exp.reward)),
                                 int(exp.terminal)])
