"""Actor-learner orchestration of trajectory generation and fitted Q refits.

Actors run on threads, each with its own environment replica, random stream
and epsilon schedule.  They claim episodes from a shared counter, buffer them
locally and push whole buffers to the learner through a queue.  The learner
owns the trajectory store, refits and publishes a new ensemble into a
single-writer slot that actors read between buffers.  In deterministic mode a
single actor and the learner alternate inline, which reproduces
:func:`cidlab.fitted_q.train` exactly.
"""
from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass

from .env import simulate
from .fitted_q import Explorer, QEnsemble, TrainConfig, TrajectoryStore, fit_q

log = logging.getLogger("cidlab.runtime")


@dataclass
class RuntimeConfig:
    actors: int = 1
    local_buffer: int | None = None  # None: the training config's ``ep``
    capacity: int | None = None  # None: the training config's ``capacity``
    min_buffer: int = 1  # trajectories in the store before the first refit
    deterministic: bool = True

    def __post_init__(self):
        if self.actors < 1:
            raise ValueError("need at least one actor")
        if self.deterministic and self.actors != 1:
            raise ValueError("deterministic mode runs exactly one actor")
        if self.local_buffer is not None and self.local_buffer < 1:
            raise ValueError("local_buffer must be at least 1")


class ActorError(RuntimeError):
    def __init__(self, actor, seed, day, cause):
        super().__init__(f"actor {actor} (seed {seed}) failed on day {day}: {cause}")
        self.actor, self.seed, self.day = actor, seed, day


def progress_line(n: int, actor: int, day: str, ret: float, eps: float) -> str:
    return f"episode={n} actor={actor} day={day} return={ret:.2f} epsilon={eps:.6f}"


class _Counter:
    def __init__(self, total):
        self.total, self.next = total, 0
        self.lock = threading.Lock()

    def claim(self):
        with self.lock:
            if self.next >= self.total:
                return None
            self.next += 1
            return self.next - 1


class _Slot:
    """Single-writer holder of the latest ensemble."""

    def __init__(self, value):
        self._value = value
        self._lock = threading.Lock()

    def read(self):
        with self._lock:
            return self._value

    def write(self, value):
        with self._lock:
            self._value = value


class _Learner:
    def __init__(self, train_config: TrainConfig, capacity: int, min_buffer: int, K: int, initial: QEnsemble):
        self.config = train_config
        self.store = TrajectoryStore(capacity)
        self.min_buffer = min_buffer
        self.K = K
        self.ensemble = initial
        self.fits = 0

    def receive(self, batch):
        self.store.extend(batch)
        if len(self.store) >= self.min_buffer:
            self.ensemble = fit_q(self.store, self.config, previous=self.ensemble, fit_index=self.fits, K=self.K)
            self.fits += 1
        return self.ensemble


def _actor_episodes(actor, seed, env, days, explorer, claim, snapshot_of, flush, local_size, on_episode):
    snapshot = snapshot_of()
    local = []
    while True:
        idx = claim()
        if idx is None:
            break
        day = days[int(explorer.rng.integers(len(days)))]
        eps = explorer.eps
        try:
            ep = simulate(env, day, snapshot.policy(eps, explorer.rng), tag=(actor, idx))
        except Exception as exc:
            raise ActorError(actor, seed, day.day, exc) from exc
        ep.info["epsilon"] = eps
        explorer.count += 1
        local.append(ep)
        if on_episode is not None:
            on_episode(ep)
        if len(local) >= local_size:
            flush(local)
            local = []
            snapshot = snapshot_of()
    if local:
        flush(local)


def run(env_factory, days, train_config: TrainConfig, runtime_config: RuntimeConfig | None = None,
        on_episode=None):
    """Generate ``E * len(days)`` trajectories and fit; returns ``(ensemble, store)``."""
    rc = runtime_config or RuntimeConfig()
    if not days:
        raise ValueError("no training days")
    M = train_config.total_episodes(len(days))
    local_size = rc.local_buffer or train_config.ep
    capacity = rc.capacity or train_config.capacity
    probe = env_factory()
    learner = _Learner(train_config, capacity, rc.min_buffer, probe.K,
                       QEnsemble.zero(probe.K, probe.width, train_config.h_max))

    def report(ep):
        actor, idx = ep.tag
        log.info(progress_line(idx, actor, ep.day, ep.total, ep.info["epsilon"]))
        if on_episode is not None:
            on_episode(ep)

    if rc.deterministic:
        counter = _Counter(M)
        explorer = Explorer.create(train_config, len(days), 0)
        _actor_episodes(0, train_config.seed, probe, days, explorer, counter.claim, lambda: learner.ensemble,
                        learner.receive, local_size, report)
        return learner.ensemble, learner.store

    counter = _Counter(M)
    slot = _Slot(learner.ensemble)
    channel = queue.Queue()
    envs = [probe] + [env_factory() for _ in range(rc.actors - 1)]

    def worker(k):
        try:
            explorer = Explorer.create(train_config, len(days), k)
            _actor_episodes(k, train_config.seed, envs[k], days, explorer, counter.claim, slot.read,
                            lambda batch: channel.put(("batch", list(batch))), local_size, report)
        except BaseException as exc:  # forwarded to the learner, re-raised there
            channel.put(("error", exc))
        finally:
            channel.put(("done", k))

    threads = [threading.Thread(target=worker, args=(k,), name=f"actor-{k}", daemon=True)
               for k in range(rc.actors)]
    for th in threads:
        th.start()
    finished, error = 0, None
    while finished < rc.actors:
        kind, payload = channel.get()
        if kind == "batch":
            if error is None:
                slot.write(learner.receive(payload))
        elif kind == "error":
            error = error or payload
            with counter.lock:
                counter.total = 0  # stop handing out work
        else:
            finished += 1
    for th in threads:
        th.join()
    if error is not None:
        raise error
    return learner.ensemble, learner.store
