"""Action-value models and the update rules the training loop applies.

Two interchangeable Q-functions: a dense rectifier network (input -> 64 ->
64 -> actions) with analytic gradients, and a dense table for exact,
oracle-testable arithmetic. Updates are weighted semi-gradient steps: the
parameters move by the learning rate times the batch SUM of
``weight * td_error * grad Q(s, a)``; no gradient flows through the
bootstrap target.

All math is float64. Model instances are single-threaded; independent
copies may run in parallel.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "QFunction",
    "DenseQNet",
    "TabularQ",
    "greedy_action",
    "td_error",
    "td_errors_batch",
    "apply_weighted_update",
    "sync_target",
]


class QFunction:
    """Minimal contract shared by the tabular and network models."""

    n_actions: int
    layer_sizes: tuple[int, ...]

    def q_values(self, state) -> np.ndarray:
        raise NotImplementedError

    def q_values_batch(self, states) -> np.ndarray:
        raise NotImplementedError

    def get_params(self) -> list[np.ndarray]:
        """Copies of all parameter arrays, in a fixed order."""
        raise NotImplementedError

    def set_params(self, params) -> None:
        raise NotImplementedError

    def apply_weighted_update(self, batch, eta: float) -> None:
        """Apply one accumulated step from ``(experience, weight, delta)`` triples."""
        raise NotImplementedError

    def clone(self) -> "QFunction":
        """Same architecture, parameters copied (used for target networks)."""
        raise NotImplementedError

    # -- flat binary round trip --------------------------------------------
    # layout: int32 LE header (count, then the layer sizes), followed by all
    # parameters as float64 LE in get_params order

    def save(self, path) -> None:
        sizes = np.asarray(self.layer_sizes, dtype="<i4")
        flat = np.concatenate([p.ravel() for p in self.get_params()]).astype("<f8")
        with open(path, "wb") as fh:
            fh.write(np.asarray([sizes.size], dtype="<i4").tobytes())
            fh.write(sizes.tobytes())
            fh.write(flat.tobytes())

    def load(self, path) -> None:
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < 4:
            raise ValueError("truncated parameter file")
        (n_sizes,) = np.frombuffer(raw[:4], dtype="<i4")
        header_end = 4 + 4 * int(n_sizes)
        if len(raw) < header_end:
            raise ValueError("truncated parameter file header")
        sizes = tuple(int(s) for s in np.frombuffer(raw[4:header_end], dtype="<i4"))
        if sizes != tuple(self.layer_sizes):
            raise ValueError(
                f"layer shapes {sizes} in file do not match model {tuple(self.layer_sizes)}"
            )
        params = self.get_params()
        total = sum(p.size for p in params)
        body = np.frombuffer(raw[header_end:], dtype="<f8")
        if body.size != total:
            raise ValueError(
                f"parameter file holds {body.size} values, model needs {total}"
            )
        out, offset = [], 0
        for p in params:
            out.append(body[offset:offset + p.size].reshape(p.shape).astype(np.float64))
            offset += p.size
        self.set_params(out)


class DenseQNet(QFunction):
    """Fully-connected rectifier network with identity output head.

    Parameters initialize uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
    from the supplied generator, so runs are reproducible end to end.
    """

    def __init__(self, input_dim: int, n_actions: int, hidden=(64, 64), rng=None):
        if input_dim < 1 or n_actions < 1:
            raise ValueError("input_dim and n_actions must be positive")
        self.input_dim = input_dim
        self.n_actions = n_actions
        self.hidden = tuple(hidden)
        self.layer_sizes = (input_dim, *self.hidden, n_actions)
        rng = rng if rng is not None else np.random.default_rng()
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    def q_values(self, state) -> np.ndarray:
        x = np.asarray(state, dtype=np.float64)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            x = w @ x + b
            np.maximum(x, 0.0, out=x)
        return self.weights[-1] @ x + self.biases[-1]

    def q_values_batch(self, states) -> np.ndarray:
        x = np.asarray(states, dtype=np.float64)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            x = x @ w.T + b
            np.maximum(x, 0.0, out=x)
        return x @ self.weights[-1].T + self.biases[-1]

    def _forward_cached(self, x):
        pre = []
        acts = [x]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = x @ w.T + b
            pre.append(z)
            x = np.maximum(z, 0.0)
            acts.append(x)
        out = x @ self.weights[-1].T + self.biases[-1]
        return pre, acts, out

    def gradient(self, state, action: int) -> list[np.ndarray]:
        """Analytic grad of Q(state, action) wrt every parameter.

        Returned in get_params order (W0, b0, W1, b1, ...).
        """
        x = np.asarray(state, dtype=np.float64).reshape(1, -1)
        upstream = np.zeros((1, self.n_actions))
        upstream[0, action] = 1.0
        grads_w, grads_b = self._backward(x, upstream)
        out = []
        for gw, gb in zip(grads_w, grads_b):
            out.extend([gw, gb])
        return out

    def _backward(self, x, upstream):
        """Backprop ``sum_b upstream[b] . dQ_b`` through the net."""
        pre, acts, _ = self._forward_cached(x)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        g = upstream
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = g.T @ acts[layer]
            grads_b[layer] = g.sum(axis=0)
            if layer > 0:
                g = (g @ self.weights[layer]) * (pre[layer - 1] > 0.0)
        return grads_w, grads_b

    def update_weighted(self, states, actions, coeffs, eta: float) -> None:
        """One accumulated step: params += eta * sum_b coeff_b * grad Q(s_b, a_b)."""
        x = np.asarray(states, dtype=np.float64)
        coeffs = np.asarray(coeffs, dtype=np.float64)
        upstream = np.zeros((x.shape[0], self.n_actions))
        upstream[np.arange(x.shape[0]), actions] = coeffs
        grads_w, grads_b = self._backward(x, upstream)
        for w, b, gw, gb in zip(self.weights, self.biases, grads_w, grads_b):
            w += eta * gw
            b += eta * gb

    def apply_weighted_update(self, batch, eta: float) -> None:
        if not batch:
            return
        states = np.stack([np.asarray(e.state, dtype=np.float64) for e, _, _ in batch])
        actions = np.array([e.action for e, _, _ in batch], dtype=np.int64)
        coeffs = np.array([w * d for _, w, d in batch], dtype=np.float64)
        self.update_weighted(states, actions, coeffs, eta)

    def get_params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w.copy(), b.copy()])
        return out

    def set_params(self, params) -> None:
        expected = [(fo, fi) for fi, fo in zip(self.layer_sizes[:-1], self.layer_sizes[1:])]
        arrays = [np.asarray(p, dtype=np.float64) for p in params]
        got_w = [a.shape for a in arrays[0::2]]
        got_b = [a.shape for a in arrays[1::2]]
        if got_w != expected or got_b != [(fo,) for fo, _ in expected]:
            raise ValueError(f"parameter shapes do not match layers {self.layer_sizes}")
        self.weights = [a.copy() for a in arrays[0::2]]
        self.biases = [a.copy() for a in arrays[1::2]]

    def clone(self) -> "DenseQNet":
        twin = DenseQNet.__new__(DenseQNet)
        twin.input_dim = self.input_dim
        twin.n_actions = self.n_actions
        twin.hidden = self.hidden
        twin.layer_sizes = self.layer_sizes
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        return twin


class TabularQ(QFunction):
    """Dense (state, action) table with exact update arithmetic.

    States may be integer ids or one-hot vectors (the argmax picks the
    id), which lets the table stand in for the network on small discrete
    environments.
    """

    def __init__(self, n_states: int, n_actions: int):
        if n_states < 1 or n_actions < 1:
            raise ValueError("n_states and n_actions must be positive")
        self.n_states = n_states
        self.n_actions = n_actions
        self.layer_sizes = (n_states, n_actions)
        self.table = np.zeros((n_states, n_actions), dtype=np.float64)

    @staticmethod
    def state_index(state) -> int:
        if isinstance(state, (int, np.integer)):
            return int(state)
        arr = np.asarray(state)
        if arr.ndim == 0:
            return int(arr)
        return int(arr.argmax())

    def q_values(self, state) -> np.ndarray:
        return self.table[self.state_index(state)].copy()

    def q_values_batch(self, states) -> np.ndarray:
        idx = [self.state_index(s) for s in states]
        return self.table[idx].copy()

    def apply_weighted_update(self, batch, eta: float) -> None:
        for exp, w, delta in batch:
            self.table[self.state_index(exp.state), exp.action] += eta * w * delta

    def update_weighted(self, states, actions, coeffs, eta: float) -> None:
        for s, a, c in zip(states, actions, coeffs):
            self.table[self.state_index(s), int(a)] += eta * c

    def get_params(self) -> list[np.ndarray]:
        return [self.table.copy()]

    def set_params(self, params) -> None:
        (table,) = params
        table = np.asarray(table, dtype=np.float64)
        if table.shape != self.table.shape:
            raise ValueError(
                f"table shape {table.shape} does not match {self.table.shape}"
            )
        self.table = table.copy()

    def clone(self) -> "TabularQ":
        twin = TabularQ(self.n_states, self.n_actions)
        twin.table = self.table.copy()
        return twin


# -- operations on Q-functions ---------------------------------------------


def greedy_action(qf: QFunction, state) -> int:
    """Argmax action; ties resolve to the lowest action id."""
    return int(np.argmax(qf.q_values(state)))


def td_error(qf: QFunction, target: QFunction, exp, discount: float) -> float:
    """Double-style TD error: online net selects, target net evaluates.

    Non-terminal: r + discount * Q_target(s', argmax_a Q(s', a)) - Q(s, a).
    Terminal transitions do not bootstrap.
    """
    q_sa = float(qf.q_values(exp.state)[exp.action])
    if exp.terminal:
        return float(exp.reward) - q_sa
    best_next = greedy_action(qf, exp.next_state)
    return (
        float(exp.reward)
        + discount * float(target.q_values(exp.next_state)[best_next])
        - q_sa
    )


def td_errors_batch(qf: QFunction, target: QFunction, states, actions, rewards,
                    next_states, terminals, discount: float) -> np.ndarray:
    """Vectorized ``td_error`` over parallel arrays."""
    n = len(actions)
    rows = np.arange(n)
    online = qf.q_values_batch(np.concatenate([states, next_states]))
    q_sa = online[:n][rows, actions]
    best_next = np.argmax(online[n:], axis=1)
    boot = target.q_values_batch(next_states)[rows, best_next]
    boot = np.where(terminals, 0.0, boot)
    return rewards + discount * boot - q_sa


def apply_weighted_update(qf: QFunction, batch, eta: float) -> None:
    """Accumulated step over ``(experience, weight, delta)`` triples."""
    if eta <= 0:
        raise ValueError(f"learning rate must be positive, got {eta}")
    qf.apply_weighted_update(batch, eta)


def sync_target(qf: QFunction, target: QFunction) -> None:
    """Copy online parameters into the target model, bitwise."""
    if tuple(qf.layer_sizes) != tuple(target.layer_sizes):
        raise ValueError(
            f"architecture mismatch: {tuple(qf.layer_sizes)} vs {tuple(target.layer_sizes)}"
        )
    target.set_params(qf.get_params())
