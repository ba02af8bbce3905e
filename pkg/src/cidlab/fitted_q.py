"""Fitted Q iteration over a bounded store of trajectories, plus trajectory generation.

Stage ``t`` has its own regressor mapping a flattened pseudo-state window to
the values of Trade and Idle.  Fitting sweeps backward from ``t = K - 1`` with
``Q_K`` identically zero.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .env import Episode, TradingEnv, simulate
from .features import Standardizer, build_pseudo_state, window_batch
from .regressors import REGRESSORS, MLPConfig, MLPRegressor, Regressor, ZeroRegressor
from .trade import IDLE, TRADE


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Quadruple:
    t: int
    z: np.ndarray
    action: int
    reward: float
    z_next: np.ndarray


class TrajectoryStore:
    """Fixed-capacity double-ended queue of episodes; the oldest is evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self._items = deque(maxlen=capacity)

    def append(self, episode: Episode) -> None:
        self._items.append(episode)

    def extend(self, episodes) -> None:
        for e in episodes:
            self.append(e)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def snapshot(self) -> list[Episode]:
        return list(self._items)

    def quadruples(self, t: int, h_max: int) -> list[Quadruple]:
        out = []
        for ep in self._items:
            win = window_batch(ep.observations, h_max)
            out.append(Quadruple(t, win[t], int(ep.actions[t]), float(ep.rewards[t]), win[t + 1]))
        return out


@dataclass
class TrainConfig:
    episodes_per_day: int = 50  # E
    ep: int = 10  # episodes between refits
    eps_range: tuple = (0.1, 0.5)
    decay: float | None = None  # None: reach 1e-3 after 70% of the episodes
    capacity: int = 100_000
    h_max: int = 10
    regressor: str = "mlp"
    mlp: MLPConfig = field(default_factory=MLPConfig)
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.episodes_per_day < 1 or self.ep < 1:
            raise ValueError("episodes_per_day and ep must be at least 1")
        lo, hi = self.eps_range
        if not 0 <= lo <= hi <= 1:
            raise ValueError("eps_range must satisfy 0 <= low <= high <= 1")
        if self.regressor not in REGRESSORS:
            raise ValueError(f"unknown regressor {self.regressor!r}")
        if self.h_max < 1 or self.capacity < 1:
            raise ValueError("h_max and capacity must be at least 1")

    def total_episodes(self, n_days: int) -> int:
        return self.episodes_per_day * n_days

    def decay_for(self, eps0: float, n_days: int) -> float:
        if self.decay is not None:
            return self.decay
        if eps0 <= 1e-3:
            return 0.0
        return math.log(eps0 / 1e-3) / max(1.0, 0.7 * self.total_episodes(n_days))

    def make_regressor(self) -> Regressor:
        if self.regressor == "mlp":
            return MLPRegressor(self.mlp)
        return REGRESSORS[self.regressor]()


def epsilon(eps0: float, decay: float, n: int) -> float:
    return eps0 * math.exp(-decay * n)


class QEnsemble:
    """Per-stage regressors, the input standardizer and the window length."""

    def __init__(self, regressors: list, standardizer: Standardizer, h_max: int):
        self.regressors = list(regressors)
        self.standardizer = standardizer
        self.h_max = h_max

    @classmethod
    def zero(cls, K: int, width: int, h_max: int) -> "QEnsemble":
        return cls([ZeroRegressor() for _ in range(K)], Standardizer.identity(width), h_max)

    @property
    def K(self) -> int:
        return len(self.regressors)

    def encode(self, history: np.ndarray) -> np.ndarray:
        """Flattened pseudo-state for the newest observation in ``history``."""
        return build_pseudo_state(self.standardizer(np.asarray(history, dtype=float)), self.h_max).ravel()

    def encode_episode(self, observations: np.ndarray) -> np.ndarray:
        return window_batch(self.standardizer(observations), self.h_max)

    def predict(self, t: int, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        if t >= self.K:
            return np.zeros((len(z), 2))
        return self.regressors[t].predict(z)

    def policy(self, eps: float = 0.0, rng: np.random.Generator | None = None):
        """Callback for :func:`simulate`."""
        def choose(step, observations):
            return act(self, step, self.encode(observations), eps, rng)
        return choose


def act(ensemble: QEnsemble, t: int, z: np.ndarray, eps: float, rng: np.random.Generator | None) -> int:
    """Epsilon-greedy choice; exact ties go to Trade."""
    if eps > 0:
        if rng is None:
            raise ValueError("a random generator is needed when eps > 0")
        if rng.random() < eps:
            return int(rng.integers(2))
    q = ensemble.predict(t, z)[0]
    return TRADE if q[TRADE] >= q[IDLE] else IDLE


def _stage_seed(seed: int, fit_index: int, t: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(1, fit_index, t)).generate_state(1)[0])


def fit_q(store, config: TrainConfig, regressor_factory=None, *, previous: QEnsemble | None = None,
          fit_index: int = 0, K: int | None = None) -> QEnsemble:
    """Backward fitted Q sweep over every episode in ``store``.

    ``previous`` (same stage count) seeds warm-started regressors; stage
    regressors are otherwise built by ``regressor_factory`` (default from
    ``config``).
    """
    episodes = list(store)
    if K is None:
        K = len(episodes[0].actions) if episodes else (previous.K if previous else 0)
    if not episodes:
        raise TrainingError(f"stage {K - 1}: no samples in the trajectory store")
    for ep in episodes:
        if len(ep.actions) != K:
            raise TrainingError(f"episode {ep.day}{ep.tag} has {len(ep.actions)} steps, expected {K}")
    factory = regressor_factory or config.make_regressor
    obs = np.concatenate([e.observations for e in episodes])
    std = Standardizer.fit(obs) if config.standardize else Standardizer.identity(obs.shape[1])
    windows = np.stack([window_batch(std(e.observations), config.h_max) for e in episodes])  # (M, K+1, d)
    actions = np.stack([e.actions for e in episodes])
    rewards = np.stack([e.rewards for e in episodes])

    regs = [None] * K
    next_values = np.zeros(len(episodes))
    for t in range(K - 1, -1, -1):
        y = rewards[:, t] + next_values
        reg = factory()
        if previous is not None and t < previous.K and type(previous.regressors[t]) is type(reg):
            reg = type(reg).from_state(previous.regressors[t].state(), *_extra(reg))
        reg.fit(windows[:, t], actions[:, t], y, seed=_stage_seed(config.seed, fit_index, t))
        regs[t] = reg
        if t > 0:
            next_values = reg.predict(windows[:, t]).max(axis=1)
    return QEnsemble(regs, std, config.h_max)


def _extra(reg):
    return (reg.config,) if isinstance(reg, MLPRegressor) else ()


def actor_rng(seed: int, actor: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(actor,)))


@dataclass
class Explorer:
    """Epsilon schedule and random stream of one trajectory generator."""

    rng: np.random.Generator
    eps0: float
    decay: float
    count: int = 0

    @classmethod
    def create(cls, config: TrainConfig, n_days: int, actor: int = 0) -> "Explorer":
        rng = actor_rng(config.seed, actor)
        eps0 = float(rng.uniform(*config.eps_range))
        return cls(rng, eps0, config.decay_for(eps0, n_days))

    @property
    def eps(self) -> float:
        return epsilon(self.eps0, self.decay, self.count)


def generate(env: TradingEnv, days, config: TrainConfig, ensemble: QEnsemble, explorer: Explorer,
             n_episodes: int, actor: int = 0, on_episode=None) -> list[Episode]:
    """``n_episodes`` epsilon-greedy episodes on uniformly drawn days, annealing after each."""
    if not days:
        raise ValueError("no training days")
    out = []
    for _ in range(n_episodes):
        day = days[int(explorer.rng.integers(len(days)))]
        eps = explorer.eps
        try:
            ep = simulate(env, day, ensemble.policy(eps, explorer.rng), tag=(actor, explorer.count))
        except Exception as exc:
            raise RuntimeError(f"actor {actor} (seed {config.seed}) failed on day {day.day}: {exc}") from exc
        ep.info["epsilon"] = eps
        out.append(ep)
        explorer.count += 1
        if on_episode is not None:
            on_episode(ep)
    return out


def train(env: TradingEnv, days, config: TrainConfig, on_episode=None):
    """Sequential trajectory generation and refitting; returns ``(ensemble, store)``."""
    store = TrajectoryStore(config.capacity)
    ensemble = QEnsemble.zero(env.K, env.width, config.h_max)
    explorer = Explorer.create(config, len(days), 0)
    M = config.total_episodes(len(days))
    fits = 0
    while explorer.count < M:
        batch = generate(env, days, config, ensemble, explorer, min(config.ep, M - explorer.count), 0, on_episode)
        store.extend(batch)
        ensemble = fit_q(store, config, previous=ensemble, fit_index=fits, K=env.K)
        fits += 1
    return ensemble, store


MAGIC = b"CIDLABQ\x00"
CHECKPOINT_VERSION = 1


def checkpoint_bytes(ensemble: QEnsemble, meta: dict | None = None) -> bytes:
    """Serialize: magic, u64 header length, JSON header, then float64 little-endian blocks."""
    blocks, arrays = [], []

    def add(name, arr):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        blocks.append({"name": name, "shape": list(arr.shape)})
        arrays.append(arr.tobytes())

    add("std/mean", ensemble.standardizer.mean)
    add("std/scale", ensemble.standardizer.scale)
    stages = []
    for t, reg in enumerate(ensemble.regressors):
        state = reg.state()
        entry = {"kind": reg.kind, "keys": sorted(state)}
        if isinstance(reg, MLPRegressor):
            entry["config"] = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(reg.config).items()}
        stages.append(entry)
        for key in sorted(state):
            add(f"stage{t}/{key}", state[key])
    header = {"version": CHECKPOINT_VERSION, "h_max": ensemble.h_max, "K": ensemble.K,
              "stages": stages, "blocks": blocks, "meta": meta or {}}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(arrays)


def save_checkpoint(ensemble: QEnsemble, path, meta: dict | None = None) -> str:
    """Write the checkpoint and return its SHA-256 hex digest."""
    data = checkpoint_bytes(ensemble, meta)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> tuple[QEnsemble, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(data[start:start + n])
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {header['version']} unsupported")
    offset = start + n
    arrays = {}
    for b in header["blocks"]:
        count = int(np.prod(b["shape"], dtype=int))
        arrays[b["name"]] = np.frombuffer(data, "<f8", count, offset).reshape(b["shape"]).copy()
        offset += 8 * count
    std = Standardizer(arrays["std/mean"], arrays["std/scale"])
    regs = []
    for t, entry in enumerate(header["stages"]):
        state = {k: arrays[f"stage{t}/{k}"] for k in entry["keys"]}
        cls = REGRESSORS[entry["kind"]]
        if cls is MLPRegressor:
            cfg = dict(entry["config"])
            cfg["hidden"] = tuple(cfg["hidden"])
            regs.append(MLPRegressor.from_state(state, MLPConfig(**cfg)))
        else:
            regs.append(cls.from_state(state))
    return QEnsemble(regs, std, header["h_max"]), header["meta"]
