"""Snapshot-restorable environments.

Three deterministic environments sharing one contract: ``reset`` /
``step`` / ``snapshot`` / ``spawn_from``. A snapshot is an opaque token
capturing the full environment state; ``spawn_from`` builds an independent
copy whose behavior from that point is identical to the original's under
the same actions. All exploration randomness lives in the agent, which
keeps snapshot replay exact.

Observations are real vectors even for the discrete environments so a
single network input contract covers everything.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "SnapshotEnv",
    "ForkedCorridor",
    "CartPole",
    "ChainWorld",
    "chain_q_star",
    "make_env",
    "ENV_NAMES",
]


class SnapshotEnv:
    """Contract: deterministic episodic environment with full-state snapshots."""

    action_count: int
    observation_dim: int

    def reset(self) -> np.ndarray:
        raise NotImplementedError

    def step(self, action: int):
        """Apply an action; returns (observation, reward, terminal)."""
        raise NotImplementedError

    def snapshot(self):
        """Opaque token capturing the full current state."""
        raise NotImplementedError

    def spawn_from(self, token) -> "SnapshotEnv":
        """Independent copy restored from a snapshot token."""
        raise NotImplementedError

    def _require_live(self, terminal: bool) -> None:
        if terminal:
            raise RuntimeError("episode already finished; reset before stepping")


class ForkedCorridor(SnapshotEnv):
    """Two corridors joined at the start; the first move locks the direction.

    Going right pays ``r_step_right`` every step and ends after
    ``len_right`` steps. Going left pays ``r_step_left`` per step (0 by
    default) until the treasure at depth ``d_left``, worth ``r_treasure``.
    After the first step BOTH actions move in the locked direction, so the
    only decision that matters is the opening one. With the defaults the
    left treasure (40) beats the right corridor total (20).

    Observation: (position / max(d_left, len_right), direction_lock).
    Actions: 0 = left, 1 = right.
    """

    action_count = 2
    observation_dim = 2

    def __init__(self, d_left: int = 15, len_right: int = 20,
                 r_step_right: float = 1.0, r_treasure: float = 40.0,
                 r_step_left: float = 0.0):
        if d_left < 1 or len_right < 1:
            raise ValueError("corridor lengths must be >= 1")
        self.d_left = int(d_left)
        self.len_right = int(len_right)
        self.r_step_right = float(r_step_right)
        self.r_treasure = float(r_treasure)
        self.r_step_left = float(r_step_left)
        self._scale = float(max(self.d_left, self.len_right))
        self.reset()

    def reset(self) -> np.ndarray:
        self.position = 0
        self.direction_lock = 0
        self.terminal = False
        return self._observe()

    def _observe(self) -> np.ndarray:
        return np.array([self.position / self._scale, float(self.direction_lock)])

    def step(self, action: int):
        self._require_live(self.terminal)
        if action not in (0, 1):
            raise ValueError(f"action must be 0 (left) or 1 (right), got {action}")
        if self.direction_lock == 0:
            self.direction_lock = -1 if action == 0 else 1
        self.position += self.direction_lock
        if self.direction_lock > 0:
            reward = self.r_step_right
            self.terminal = self.position >= self.len_right
        else:
            if self.position <= -self.d_left:
                reward = self.r_treasure
                self.terminal = True
            else:
                reward = self.r_step_left
        return self._observe(), reward, self.terminal

    def snapshot(self):
        return ("forked_corridor", self.position, self.direction_lock, self.terminal)

    def spawn_from(self, token) -> "ForkedCorridor":
        if (not isinstance(token, tuple) or len(token) != 4
                or token[0] != "forked_corridor"):
            raise ValueError(f"malformed forked-corridor snapshot token: {token!r}")
        env = ForkedCorridor(self.d_left, self.len_right, self.r_step_right,
                             self.r_treasure, self.r_step_left)
        _, env.position, env.direction_lock, env.terminal = token
        return env


# Classic cart-pole constants: gravity, cart mass, pole mass, pole
# half-length, push force, integration step.
_GRAVITY = 9.8
_CART_MASS = 1.0
_POLE_MASS = 0.1
_POLE_HALF_LENGTH = 0.5
_FORCE_MAG = 10.0
_TAU = 0.02
_TOTAL_MASS = _CART_MASS + _POLE_MASS
_POLEMASS_LENGTH = _POLE_MASS * _POLE_HALF_LENGTH
_X_LIMIT = 2.4
_THETA_LIMIT = 12 * math.pi / 180
_MAX_STEPS = 200


class CartPole(SnapshotEnv):
    """Pole balancing on a cart, explicit Euler at 0.02 s per step.

    Positions integrate with the pre-step derivatives, then velocities
    with the fresh accelerations. Reward is +1 per step; the episode ends
    when |x| > 2.4, |pole angle| > 12 degrees, or after 200 steps. Reset
    is deterministic (all zeros): trajectory variety comes entirely from
    the agent's exploration.

    Actions: 0 = push left, 1 = push right.
    """

    action_count = 2
    observation_dim = 4

    def __init__(self, force_mag: float = _FORCE_MAG):
        self.force_mag = float(force_mag)
        self.reset()

    def reset(self) -> np.ndarray:
        self.x = 0.0
        self.x_dot = 0.0
        self.theta = 0.0
        self.theta_dot = 0.0
        self.steps = 0
        self.terminal = False
        return self._observe()

    def _observe(self) -> np.ndarray:
        return np.array([self.x, self.x_dot, self.theta, self.theta_dot])

    def step(self, action: int):
        self._require_live(self.terminal)
        if action not in (0, 1):
            raise ValueError(f"action must be 0 (left) or 1 (right), got {action}")
        force = self.force_mag if action == 1 else -self.force_mag
        cos_t = math.cos(self.theta)
        sin_t = math.sin(self.theta)
        temp = (force + _POLEMASS_LENGTH * self.theta_dot ** 2 * sin_t) / _TOTAL_MASS
        theta_acc = (_GRAVITY * sin_t - cos_t * temp) / (
            _POLE_HALF_LENGTH * (4.0 / 3.0 - _POLE_MASS * cos_t ** 2 / _TOTAL_MASS)
        )
        x_acc = temp - _POLEMASS_LENGTH * theta_acc * cos_t / _TOTAL_MASS
        self.x += _TAU * self.x_dot
        self.x_dot += _TAU * x_acc
        self.theta += _TAU * self.theta_dot
        self.theta_dot += _TAU * theta_acc
        self.steps += 1
        self.terminal = (
            abs(self.x) > _X_LIMIT
            or abs(self.theta) > _THETA_LIMIT
            or self.steps >= _MAX_STEPS
        )
        return self._observe(), 1.0, self.terminal

    def snapshot(self):
        return ("cartpole", self.x, self.x_dot, self.theta, self.theta_dot,
                self.steps, self.terminal)

    def spawn_from(self, token) -> "CartPole":
        if not isinstance(token, tuple) or len(token) != 7 or token[0] != "cartpole":
            raise ValueError(f"malformed cart-pole snapshot token: {token!r}")
        env = CartPole(self.force_mag)
        (_, env.x, env.x_dot, env.theta, env.theta_dot,
         env.steps, env.terminal) = token
        return env

    def energy(self) -> float:
        """Mechanical energy (rigid-rod pole); conserved when force is zero."""
        kinetic = (
            0.5 * _CART_MASS * self.x_dot ** 2
            + 0.5 * _POLE_MASS * (
                self.x_dot ** 2
                + 2 * _POLE_HALF_LENGTH * self.theta_dot * self.x_dot * math.cos(self.theta)
                + _POLE_HALF_LENGTH ** 2 * self.theta_dot ** 2
            )
            + (1.0 / 6.0) * _POLE_MASS * _POLE_HALF_LENGTH ** 2 * self.theta_dot ** 2
        )
        potential = _POLE_MASS * _GRAVITY * _POLE_HALF_LENGTH * math.cos(self.theta)
        return kinetic + potential


class ChainWorld(SnapshotEnv):
    """Deterministic chain of ``n_states`` cells, goal past the right end.

    Stepping right from the last cell terminates with reward +1; every
    other move pays 0. Stepping left clamps at cell 0. Observations are
    one-hot (all zeros once terminal), so both the table and the network
    can consume them. The exact optimal Q-table is available from
    ``chain_q_star`` for oracle tests.

    Actions: 0 = left, 1 = right.
    """

    action_count = 2

    def __init__(self, n_states: int = 5):
        if n_states < 1:
            raise ValueError("n_states must be >= 1")
        self.n_states = int(n_states)
        self.observation_dim = self.n_states
        self.reset()

    def reset(self) -> np.ndarray:
        self.state = 0
        self.terminal = False
        return self._observe()

    def _observe(self) -> np.ndarray:
        obs = np.zeros(self.n_states)
        if not self.terminal:
            obs[self.state] = 1.0
        return obs

    def step(self, action: int):
        self._require_live(self.terminal)
        if action not in (0, 1):
            raise ValueError(f"action must be 0 (left) or 1 (right), got {action}")
        reward = 0.0
        if action == 1:
            if self.state == self.n_states - 1:
                self.terminal = True
                reward = 1.0
            else:
                self.state += 1
        else:
            self.state = max(self.state - 1, 0)
        return self._observe(), reward, self.terminal

    def snapshot(self):
        return ("chain", self.state, self.terminal)

    def spawn_from(self, token) -> "ChainWorld":
        if not isinstance(token, tuple) or len(token) != 3 or token[0] != "chain":
            raise ValueError(f"malformed chain snapshot token: {token!r}")
        env = ChainWorld(self.n_states)
        _, env.state, env.terminal = token
        return env


def chain_q_star(n_states: int = 5, discount: float = 0.9,
                 tol: float = 1e-10) -> np.ndarray:
    """Exact optimal Q for ``ChainWorld`` by value iteration.

    Iterates until the max-abs Bellman residual drops below ``tol``.
    """
    if not 0 <= discount < 1:
        raise ValueError(f"discount must lie in [0, 1), got {discount}")
    q = np.zeros((n_states, 2))
    while True:
        v = q.max(axis=1)
        nxt = np.empty_like(q)
        for s in range(n_states):
            nxt[s, 0] = discount * v[max(s - 1, 0)]
            if s == n_states - 1:
                nxt[s, 1] = 1.0
            else:
                nxt[s, 1] = discount * v[s + 1]
        if np.max(np.abs(nxt - q)) < tol:
            return nxt
        q = nxt


ENV_NAMES = ("forked_corridor", "cartpole", "chain")


def make_env(name: str, **params) -> SnapshotEnv:
    """Build an environment by config name."""
    if name == "forked_corridor":
        return ForkedCorridor(**params)
    if name == "cartpole":
        return CartPole(**params)
    if name == "chain":
        return ChainWorld(**params)
    raise ValueError(f"unknown environment {name!r}; expected one of {ENV_NAMES}")
