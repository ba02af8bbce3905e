"""Q-function regressors with two outputs, one per high-level action.

Only the output of the action actually taken receives a target, so every
``fit`` takes the action index of each sample alongside its target.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Regressor:
    kind = "base"

    def fit(self, x: np.ndarray, actions: np.ndarray, y: np.ndarray, seed: int = 0) -> "Regressor":
        raise NotImplementedError

    def predict(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def state(self) -> dict:
        raise NotImplementedError

    @classmethod
    def from_state(cls, state: dict) -> "Regressor":
        raise NotImplementedError


class ZeroRegressor(Regressor):
    """Predicts 0 for both actions; the value of an unfitted stage."""

    kind = "zero"

    def fit(self, x, actions, y, seed=0):
        return self

    def predict(self, x):
        return np.zeros((len(x), 2))

    def state(self):
        return {}

    @classmethod
    def from_state(cls, state):
        return cls()


class TabularRegressor(Regressor):
    """Lookup table over exact input rows; averages targets per (row, action)."""

    kind = "tabular"

    def __init__(self):
        self.table = {}

    @staticmethod
    def _key(row):
        return np.ascontiguousarray(row, dtype=float).tobytes()

    def fit(self, x, actions, y, seed=0):
        sums = {}
        for row, a, target in zip(x, actions, y):
            k = (self._key(row), int(a))
            s, n = sums.get(k, (0.0, 0))
            sums[k] = (s + float(target), n + 1)
        self.table = {k: s / n for k, (s, n) in sums.items()}
        return self

    def predict(self, x):
        out = np.zeros((len(x), 2))
        for i, row in enumerate(x):
            key = self._key(row)
            for a in (0, 1):
                out[i, a] = self.table.get((key, a), 0.0)
        return out

    def state(self):
        keys = sorted(self.table)
        return {
            "rows": np.array([np.frombuffer(k, dtype=float) for k, _ in keys]) if keys else np.zeros((0, 0)),
            "actions": np.array([a for _, a in keys], dtype=float),
            "values": np.array([self.table[k] for k in keys]),
        }

    @classmethod
    def from_state(cls, state):
        reg = cls()
        for row, a, v in zip(state["rows"], state["actions"], state["values"]):
            reg.table[(cls._key(row), int(a))] = float(v)
        return reg


@dataclass
class MLPConfig:
    hidden: tuple = (64, 64)
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    patience: int = 10
    validation_fraction: float = 0.1
    min_validation: int = 50
    warm_start: bool = True


class MLPRegressor(Regressor):
    """Feed-forward ReLU network with two linear outputs, trained with Adam on masked squared loss."""

    kind = "mlp"

    def __init__(self, config: MLPConfig | None = None):
        self.config = config or MLPConfig()
        self.weights = []
        self.biases = []
        self.y_mean = 0.0
        self.y_scale = 1.0

    def _init(self, n_in, rng):
        sizes = [n_in, *self.config.hidden, 2]
        self.weights = [rng.normal(0.0, np.sqrt(2.0 / a), (a, b)) for a, b in zip(sizes, sizes[1:])]
        self.biases = [np.zeros(b) for b in sizes[1:]]
        # zero output layer: a fresh network predicts the target mean exactly
        self.weights[-1][:] = 0.0

    def _forward(self, x):
        acts = [x]
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < len(self.weights) - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return acts

    def predict(self, x):
        if not self.weights:
            return np.zeros((len(x), 2))
        return self._forward(np.asarray(x, dtype=float))[-1] * self.y_scale + self.y_mean

    def _loss(self, x, actions, y):
        out = self._forward(x)[-1]
        return float(np.mean((out[np.arange(len(y)), actions] - y) ** 2))

    def fit(self, x, actions, y, seed=0):
        cfg = self.config
        x = np.asarray(x, dtype=float)
        actions = np.asarray(actions, dtype=int)
        y = np.asarray(y, dtype=float)
        rng = np.random.default_rng(seed)
        fresh = not (cfg.warm_start and self.weights and self.weights[0].shape[0] == x.shape[1])
        if fresh:
            self._init(x.shape[1], rng)
            self.y_mean = float(y.mean())
            self.y_scale = float(y.std()) or 1.0
        else:
            # keep the output scale of the warm network, refresh it only if targets drifted far
            spread = float(y.std()) or 1.0
            if spread > 4 * self.y_scale or abs(float(y.mean()) - self.y_mean) > 4 * self.y_scale:
                self._rescale(float(y.mean()), spread)
        ys = (y - self.y_mean) / self.y_scale

        n = len(y)
        order = rng.permutation(n)
        if n >= cfg.min_validation:
            n_val = max(1, int(round(cfg.validation_fraction * n)))
            val, train = order[:n_val], order[n_val:]
        else:
            val, train = order, order
        m = [np.zeros_like(w) for w in self.weights] + [np.zeros_like(b) for b in self.biases]
        v = [np.zeros_like(p) for p in m]
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        step = 0
        best = np.inf
        best_params = None
        stall = 0
        for _ in range(cfg.epochs):
            perm = train[rng.permutation(len(train))]
            for start in range(0, len(perm), cfg.batch_size):
                idx = perm[start:start + cfg.batch_size]
                grads = self._gradients(x[idx], actions[idx], ys[idx])
                step += 1
                params = self.weights + self.biases
                for i, (p, g) in enumerate(zip(params, grads)):
                    m[i] = beta1 * m[i] + (1 - beta1) * g
                    v[i] = beta2 * v[i] + (1 - beta2) * g * g
                    mhat = m[i] / (1 - beta1 ** step)
                    vhat = v[i] / (1 - beta2 ** step)
                    p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
            loss = self._loss(x[val], actions[val], ys[val])
            if loss < best - 1e-4 * max(best, 1e-12) if np.isfinite(best) else True:
                best = loss
                best_params = ([w.copy() for w in self.weights], [b.copy() for b in self.biases])
                stall = 0
            else:
                stall += 1
                if stall >= cfg.patience:
                    break
        if best_params is not None:
            self.weights, self.biases = best_params
        return self

    def _rescale(self, new_mean, new_scale):
        w, b = self.weights[-1], self.biases[-1]
        self.weights[-1] = w * (self.y_scale / new_scale)
        self.biases[-1] = (b * self.y_scale + self.y_mean - new_mean) / new_scale
        self.y_mean, self.y_scale = new_mean, new_scale

    def _gradients(self, x, actions, y):
        acts = self._forward(x)
        out = acts[-1]
        delta = np.zeros_like(out)
        rows = np.arange(len(y))
        delta[rows, actions] = 2.0 * (out[rows, actions] - y) / len(y)
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return gw + gb

    def state(self):
        out = {"y_stats": np.array([self.y_mean, self.y_scale])}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    @classmethod
    def from_state(cls, state, config: MLPConfig | None = None):
        reg = cls(config)
        reg.y_mean, reg.y_scale = (float(v) for v in state["y_stats"])
        i = 0
        while f"w{i}" in state:
            reg.weights.append(np.array(state[f"w{i}"], dtype=float))
            reg.biases.append(np.array(state[f"b{i}"], dtype=float))
            i += 1
        return reg


REGRESSORS = {cls.kind: cls for cls in (ZeroRegressor, TabularRegressor, MLPRegressor)}
