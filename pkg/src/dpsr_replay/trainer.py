"""The training loop: epsilon-greedy acting, prioritized storage with
state recycling, weighted double-style Q-updates, and target syncing.

Four modes share one loop:

* ``uniform``  -- uniform sampling (exponents forced to zero), unit
  weights, oldest-experience (FIFO) replacement.
* ``per``      -- prioritized sampling with importance weights, FIFO
  replacement.
* ``dpsr_no_recycle`` -- prioritized sampling AND prioritized replacement
  (candidates drawn by inverse-priority weight, oldest candidate evicted).
* ``dpsr``     -- all of the above plus periodic state recycling: old
  experiences are re-simulated from their snapshots with a changed action,
  and the incoming experience replaces the weakest recycled candidate.

A run is a pure function of (config, seed): acting, sampling, replacement,
recycling, and initialization each draw from their own named substream, so
re-running a config reproduces metrics bitwise, and degenerate
configurations collapse onto the baselines exactly.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .q_model import (
    DenseQNet,
    greedy_action,
    sync_target,
    td_error,
    td_errors_batch,
)
from .replay_buffer import DpsrBuffer, Experience

__all__ = [
    "MODES",
    "Schedules",
    "TrainConfig",
    "RunMetrics",
    "Hooks",
    "RngStreams",
    "RecycleFailedError",
    "act",
    "store_experience",
    "recycle_stage",
    "train_step",
    "run",
    "evaluate_greedy",
    "PAPER_PRESET",
    "ATARI_PARAM_SETS",
]

MODES = ("uniform", "per", "dpsr", "dpsr_no_recycle")

# Timesteps between per-checkpoint metric rows.
CHECKPOINT_EVERY = 1000


class RecycleFailedError(RuntimeError):
    """Every recycling candidate was unusable; caller falls back to common replacement."""


@dataclass
class Schedules:
    """Piecewise-linear hyperparameter schedules over a fixed horizon.

    Defaults: exploration decays as max(1 - 9.8 t / T, 0.02); the sampling
    exponent is constant 0.6; the bias-annealing exponent rises linearly
    0.4 -> 1.0 (fully annealed at T); the replacement exponent is constant.
    """

    horizon: int
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    gamma: float = 0.3
    epsilon_floor: float = 0.02
    epsilon_slope: float = 9.8

    def _frac(self, t: int) -> float:
        return t / self.horizon if self.horizon > 0 else 1.0

    def epsilon_at(self, t: int) -> float:
        return max(1.0 - self.epsilon_slope * self._frac(t), self.epsilon_floor)

    def alpha_at(self, t: int) -> float:
        return self.alpha

    def beta_at(self, t: int) -> float:
        return self.beta_start + (self.beta_end - self.beta_start) * self._frac(t)

    def gamma_at(self, t: int) -> float:
        return self.gamma


@dataclass
class TrainConfig:
    """Everything a run needs besides the environment.

    Defaults are desk-scale: buffer and horizon sized so replacement and
    recycling actually engage within seconds-to-minutes of wall time.
    ``PAPER_PRESET`` carries the full-scale values.
    """

    batch_size: int = 32
    learning_rate: float = 0.0005
    buffer_size: int = 5000
    recycle_max_priority: bool = False   # insert recycled experiences at buffer max
    common_candidates: int = 128         # candidate draws per common replacement
    recycle_candidates: int = 8          # candidate draws per recycling stage
    target_sync_every: int = 500
    train_every: int = 1
    recycle_every: int = 1000
    total_steps: int = 100_000
    discount: float = 1.0
    learning_starts: int = 1000
    mode: str = "dpsr"
    seed: int = 0
    priority_offset: float = 1e-6
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    replace_gamma: float = 0.3
    epsilon_floor: float = 0.02
    epsilon_slope: float = 9.8
    recycle_write_back: bool = True      # keep recycled experiences in their slots
    eval_episodes: int = 10
    eval_max_steps: int = 1000

    def schedules(self) -> Schedules:
        return Schedules(
            horizon=self.total_steps,
            alpha=self.alpha,
            beta_start=self.beta_start,
            beta_end=self.beta_end,
            gamma=self.replace_gamma,
            epsilon_floor=self.epsilon_floor,
            epsilon_slope=self.epsilon_slope,
        )

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.batch_size < 1 or self.buffer_size < 1:
            raise ValueError("batch_size and buffer_size must be positive")
        if self.total_steps < 0:
            raise ValueError("total_steps must be non-negative")
        if self.mode in ("dpsr", "dpsr_no_recycle"):
            if not 1 <= self.common_candidates <= self.buffer_size:
                raise ValueError("common_candidates must lie in [1, buffer_size]")
            if not 1 <= self.recycle_candidates <= self.buffer_size:
                raise ValueError("recycle_candidates must lie in [1, buffer_size]")


# Full-scale hyperparameters as published; the ranged entries
# (gamma / candidate sizes / recycling cadence) default to the mid-range
# set that worked well across games.
PAPER_PRESET = dict(
    batch_size=32,
    learning_rate=0.0005,
    buffer_size=50_000,
    target_sync_every=500,
    train_every=1,
    total_steps=1_000_000,
    replace_gamma=0.3,
    common_candidates=128,
    recycle_every=10_000,
    recycle_candidates=8,
)

# The documented good parameter sets (gamma, common candidates, recycling
# cadence, recycling candidates). Shipped for completeness; the Atari-scale
# experiments they were tuned on are out of scope here.
ATARI_PARAM_SETS = {
    "dpsr0": dict(replace_gamma=0.6, common_candidates=128, recycle_every=20_000, recycle_candidates=8),
    "dpsr1": dict(replace_gamma=0.1, common_candidates=128, recycle_every=10_000, recycle_candidates=16),
    "dpsr2": dict(replace_gamma=0.2, common_candidates=256, recycle_every=20_000, recycle_candidates=8),
    "dpsr3": dict(replace_gamma=0.3, common_candidates=128, recycle_every=10_000, recycle_candidates=8),
    "dpsr4": dict(replace_gamma=0.3, common_candidates=256, recycle_every=10_000, recycle_candidates=16),
}


@dataclass
class RunMetrics:
    """What a run produces; equality is bitwise for determinism checks.

    ``episodes`` rows are (end timestep, return, length); ``checkpoints``
    rows are (timestep, trailing-100-episode mean return or None, epsilon,
    priority min, priority max, priority mean -- None while empty).
    """

    episodes: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    final_eval: float = 0.0
    config: dict = field(default_factory=dict)


@dataclass
class Hooks:
    """Optional instrumentation callbacks, used heavily by property tests."""

    on_episode_end: Optional[Callable] = None   # (end_step, episode_return, length)
    on_replacement: Optional[Callable] = None   # (candidate_slots or None, chosen_slot)
    on_recycle: Optional[Callable] = None       # (slot, old_action, new_action, new_priority)


@dataclass
class RngStreams:
    """Named random substreams so unrelated draws never share a cursor."""

    init: np.random.Generator
    action: np.random.Generator
    sample: np.random.Generator
    replace: np.random.Generator
    recycle: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RngStreams":
        children = np.random.SeedSequence(seed).spawn(5)
        return cls(*(np.random.default_rng(c) for c in children))


def act(qf, obs, t: int, schedules: Schedules, rng) -> int:
    """Epsilon-greedy: explore uniformly with probability epsilon(t)."""
    if rng.random() < schedules.epsilon_at(t):
        return int(rng.integers(qf.n_actions))
    return greedy_action(qf, obs)


def _oldest_among(buffer: DpsrBuffer, candidates) -> int:
    """Candidate with the smallest birth step; ties go to the lowest slot id."""
    cands = np.asarray(candidates)
    births = buffer.birth_steps[cands]
    return int(cands[births == births.min()].min())


def store_experience(buffer, exp, t, config, schedules, qf, target,
                     env_spawner, rngs, hooks=None) -> None:
    """Store a fresh experience: append, or replace via the mode's policy.

    Caller assembles ``exp`` with ``priority = buffer.new_experience_priority()``.
    While the buffer is filling every mode appends. Once full: uniform and
    per evict the globally oldest slot; dpsr modes draw candidates by
    inverse-priority weight and evict the oldest candidate, except that in
    dpsr mode every ``recycle_every`` steps the candidates are recycled
    first and the weakest recycled slot receives the new experience.
    """
    if not buffer.is_full():
        buffer.append(exp)
        return
    if config.mode in ("uniform", "per"):
        victim = int(np.argmin(buffer.birth_steps))
        buffer.overwrite_slot(victim, exp)
        if hooks is not None and hooks.on_replacement is not None:
            hooks.on_replacement(None, victim)
        return
    if (config.mode == "dpsr"
            and config.recycle_every > 0
            and t % config.recycle_every == 0):
        if qf.n_actions < 2:
            warnings.warn(
                "state recycling needs at least 2 actions to force an action "
                "change; falling back to common replacement",
                RuntimeWarning,
            )
        else:
            try:
                victim = recycle_stage(buffer, t, config, schedules, qf, target,
                                       env_spawner, rngs, hooks)
            except RecycleFailedError:
                pass
            else:
                buffer.overwrite_slot(victim, exp)
                return
    candidates = buffer.select_replacement_candidates(
        config.common_candidates, schedules.gamma_at(t), rngs.replace
    )
    victim = _oldest_among(buffer, candidates)
    buffer.overwrite_slot(victim, exp)
    if hooks is not None and hooks.on_replacement is not None:
        hooks.on_replacement(list(candidates), victim)


def recycle_stage(buffer, t, config, schedules, qf, target, env_spawner,
                  rngs, hooks=None) -> int:
    """Re-simulate candidate experiences from their snapshots with changed actions.

    For each candidate: spawn the saved environment, ask the current
    network for an action at the saved state (drawing uniformly from the
    OTHER actions if it repeats the stored one), execute one step, and
    rebuild the experience with the original snapshot, a fresh birth step,
    and a new priority (buffer max if configured, else its own TD error).
    Returns the slot whose post-recycling priority is minimal; ties go to
    the lowest slot id. Candidates with unusable snapshots are skipped with
    a warning; if all are skipped, raises RecycleFailedError.
    """
    if not buffer.is_full():
        raise RuntimeError("recycling requires a full buffer")
    if qf.n_actions < 2:
        raise RuntimeError("recycling requires at least 2 actions")
    candidates = buffer.select_replacement_candidates(
        config.recycle_candidates, schedules.gamma_at(t), rngs.replace
    )
    max_priority = buffer.max_priority()
    results = []
    for slot in candidates:
        old = buffer.get(slot)
        try:
            env = env_spawner(old.snapshot)
        except (ValueError, TypeError) as err:
            warnings.warn(f"recycling skipped slot {slot}: {err}", RuntimeWarning)
            continue
        new_action = greedy_action(qf, old.state)
        if new_action == old.action:
            others = [a for a in range(qf.n_actions) if a != old.action]
            new_action = others[int(rngs.recycle.integers(len(others)))]
        try:
            next_obs, reward, terminal = env.step(new_action)
        except RuntimeError as err:
            warnings.warn(f"recycling skipped slot {slot}: {err}", RuntimeWarning)
            continue
        new_exp = Experience(
            state=old.state,
            action=new_action,
            reward=reward,
            next_state=next_obs,
            terminal=terminal,
            snapshot=old.snapshot,
            birth_step=t,
            priority=1.0,
        )
        if config.recycle_max_priority:
            priority = max_priority
        else:
            delta = td_error(qf, target, new_exp, config.discount)
            priority = abs(delta) + buffer.epsilon_p
        new_exp.priority = priority
        if config.recycle_write_back:
            buffer.overwrite_slot(slot, new_exp)
        if hooks is not None and hooks.on_recycle is not None:
            hooks.on_recycle(slot, old.action, new_action, priority)
        results.append((priority, slot))
    if not results:
        raise RecycleFailedError("no recycling candidate had a usable snapshot")
    return min(results)[1]


def train_step(buffer, qf, target, t, config, schedules, rngs):
    """One sampled-batch update; returns mean |TD error| or None if skipped.

    Uniform mode samples with both exponents forced to zero (every weight
    is exactly 1); the other modes use the scheduled exponents. Priorities
    refresh to |TD error| + offset before the accumulated weight change is
    applied, matching the published ordering.
    """
    if len(buffer) < max(config.batch_size, config.learning_starts):
        return None
    if config.mode == "uniform":
        alpha_t, beta_t = 0.0, 0.0
    else:
        alpha_t = schedules.alpha_at(t)
        beta_t = schedules.beta_at(t)
    slots, weights = buffer.sample_batch_arrays(config.batch_size, alpha_t,
                                                beta_t, rngs.sample)
    states, actions, rewards, next_states, terminals = buffer.batch_arrays(slots)
    deltas = td_errors_batch(qf, target, states, actions, rewards, next_states,
                             terminals, config.discount)
    buffer.update_priorities(slots, np.abs(deltas))
    qf.update_weighted(states, actions, weights * deltas, config.learning_rate)
    return float(np.mean(np.abs(deltas)))


def evaluate_greedy(qf, env, episodes: int, max_steps: int) -> float:
    """Mean return of the greedy policy (no exploration) over fresh episodes."""
    total = 0.0
    for _ in range(episodes):
        obs = env.reset()
        for _ in range(max_steps):
            obs, reward, terminal = env.step(greedy_action(qf, obs))
            total += reward
            if terminal:
                break
    return total / episodes


def run(config: TrainConfig, env_factory, hooks: Hooks = None) -> RunMetrics:
    """Execute the full loop; identical (config, seed) gives identical metrics."""
    config.validate()
    env = env_factory()
    rngs = RngStreams.from_seed(config.seed)
    schedules = config.schedules()
    qf = DenseQNet(env.observation_dim, env.action_count, rng=rngs.init)
    target = qf.clone()
    buffer = DpsrBuffer(config.buffer_size, epsilon_p=config.priority_offset,
                        alpha=config.alpha, gamma=config.replace_gamma)
    metrics = RunMetrics(config=asdict(config))
    recent = deque(maxlen=100)

    obs = env.reset()
    snap = env.snapshot()
    action = act(qf, obs, 0, schedules, rngs.action)
    ep_return, ep_len = 0.0, 0

    for t in range(1, config.total_steps + 1):
        next_obs, reward, terminal = env.step(action)
        ep_return += reward
        ep_len += 1
        exp = Experience(
            state=obs, action=action, reward=reward, next_state=next_obs,
            terminal=terminal, snapshot=snap, birth_step=t,
            priority=buffer.new_experience_priority(),
        )
        store_experience(buffer, exp, t, config, schedules, qf, target,
                         env.spawn_from, rngs, hooks)
        if config.train_every > 0 and t % config.train_every == 0:
            train_step(buffer, qf, target, t, config, schedules, rngs)
            if config.target_sync_every > 0 and t % config.target_sync_every == 0:
                sync_target(qf, target)
        if terminal:
            metrics.episodes.append((t, ep_return, ep_len))
            recent.append(ep_return)
            if hooks is not None and hooks.on_episode_end is not None:
                hooks.on_episode_end(t, ep_return, ep_len)
            ep_return, ep_len = 0.0, 0
            obs = env.reset()
        else:
            obs = next_obs
        if t % CHECKPOINT_EVERY == 0:
            mean100 = sum(recent) / len(recent) if recent else None
            if len(buffer) > 0:
                pris = buffer.priorities
                stats = (float(pris.min()), float(pris.max()), float(pris.mean()))
            else:
                stats = (None, None, None)
            metrics.checkpoints.append((t, mean100, schedules.epsilon_at(t), *stats))
        snap = env.snapshot()
        action = act(qf, obs, t, schedules, rngs.action)

    metrics.final_eval = evaluate_greedy(qf, env_factory(), config.eval_episodes,
                                         config.eval_max_steps)
    return metrics
