"""Episode simulator: replay a day, apply high-level actions, emit observations and rewards."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .data_io import DayRecord, step_book
from .features import book_features, observation_width, step_observation
from .market import MarketCalendar, OrderBook, apply_acceptance, open_products
from .storage import (ImbalancePriceModel, MarketPosition, StorageParams, StorageSchedule,
                      default_adjustments, imbalance_penalty, initial_state, update_after_clear, validate)
from .trade import IDLE, TRADE, TradeProblem, solve_trade


class EpisodeError(RuntimeError):
    """An invariant broke during an episode; carries the step and a state dump."""

    def __init__(self, message, day=None, step=None, dump=None):
        super().__init__(f"day {day} step {step}: {message}")
        self.day, self.step, self.dump = day, step, dump or {}


@dataclass
class _State:
    step: int
    book: OrderBook
    position: MarketPosition
    schedule: StorageSchedule
    obs: np.ndarray
    trades: int = 0


@dataclass
class Episode:
    """Per-step observations ``0..K``, actions and rewards ``0..K-1``."""

    day: str
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    tag: tuple = ()
    info: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(self.rewards.sum())


class TradingEnv:
    """Deterministic simulator of one storage agent acting as an aggressor.

    The environment is a deterministic function of the day and the action
    prefix, so transitions are memoized per ``(day, actions so far)``; pass
    ``cache_size=0`` to disable.
    """

    def __init__(self, calendar: MarketCalendar, params: StorageParams, *, power_settlement: bool = False,
                 imbalance_model: ImbalancePriceModel | None = None, check: bool = True,
                 cache_size: int = 50_000, seed: int = 0):
        self.calendar = calendar
        self.params = params
        # an episode starts from an empty position, so the idle schedule must already be feasible
        _, idle = initial_state(params, calendar.n_slots, calendar.delivery_step)
        bad = validate(idle, params, calendar.delivery_step, tol=1e-6)
        if bad:
            raise ValueError("storage cannot start idle: " + "; ".join(bad[:3]))
        self.power_settlement = power_settlement
        self.imbalance_model = imbalance_model or ImbalancePriceModel()
        self.check = check
        self.cache_size = cache_size
        self.seed = seed
        self._cache = {}
        self.day = None
        self._state = None
        self._actions = ()
        self._rewards = []

    @property
    def width(self) -> int:
        return observation_width(self.calendar.n_slots)

    @property
    def K(self) -> int:
        return self.calendar.K

    def _observe(self, book, position, step, prev_action, prev_reward):
        t = self.calendar.time(step)
        products = [p.index for p in open_products(self.calendar, t)]
        return step_observation(book_features(book, products), position.p_mar, self.day.exog[step],
                                prev_action, prev_reward)

    def reset(self, day: DayRecord) -> np.ndarray:
        if day.K != self.calendar.K:
            raise ValueError(f"day {day.day} has {day.K} trading steps, calendar has {self.calendar.K}")
        self.day = day
        self._actions = ()
        self._rewards = []
        self._imbalance_prices = self.imbalance_model.sample(
            np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(zlib.crc32(day.day.encode()),))),
            self.calendar.n_slots)
        key = (id(day), day.day, ())
        if key not in self._cache:
            position, schedule = initial_state(self.params, self.calendar.n_slots, self.calendar.delivery_step)
            book = step_book(OrderBook(), day.events[0], self.calendar, 0)
            obs = self._observe(book, position, 0, None, 0.0)
            self._remember(key, (_State(0, book, position, schedule, obs), 0.0))
        self._state = self._cache[key][0]
        return self._state.obs

    def _remember(self, key, value):
        if self.cache_size and len(self._cache) >= self.cache_size:
            self._cache.clear()
        self._cache[key] = value

    def step(self, action: int):
        """Apply ``action`` at the current step; returns ``(obs, reward, done)``."""
        if self._state is None or self._state.step >= self.K:
            raise RuntimeError("episode finished or not started; call reset()")
        if action not in (TRADE, IDLE):
            raise ValueError(f"unknown action {action}")
        key = (id(self.day), self.day.day, self._actions + (action,))
        cached = self._cache.get(key) if self.cache_size else None
        if cached is None:
            cached = self._transition(self._state, action)
            if self.cache_size:
                self._remember(key, cached)
            else:
                self._cache.pop(key, None)
        self._state, reward = cached
        self._actions = key[2]
        self._rewards.append(reward)
        return self._state.obs, reward, self._state.step >= self.K

    def _transition(self, state: _State, action: int):
        cal, prm = self.calendar, self.params
        step = state.step
        t = cal.time(step)
        book, position, schedule = state.book, state.position, state.schedule
        cash, trades = 0.0, 0
        if action == TRADE:
            problem = TradeProblem.from_state(book, position, schedule, prm, cal, t, self.power_settlement)
            sol = solve_trade(problem)
            accepted = {k: v for k, v in sol.fractions.items() if v > 0}
            if accepted:
                tx, v_con, book, cash = apply_acceptance(book, accepted, cal, power_settlement=self.power_settlement)
                trades = len(tx)
                v_con = np.asarray(v_con)
                tradable = problem.tradable
                filled = MarketPosition(position.p_mar + v_con, position.imbalance - v_con)
                try:
                    dg, dc = default_adjustments(filled, schedule, prm, adjustable=tradable)
                    position, schedule = update_after_clear(position, schedule, v_con, dg, dc, prm,
                                                            cal.delivery_step, adjustable=tradable)
                except ValueError as exc:
                    raise EpisodeError(str(exc), self.day.day, step, {"problem": problem}) from exc
        if self.check:
            self._check(position, schedule, step)
        t_next = cal.time(step + 1)
        settling = np.array([t < s <= t_next for s in cal.settlement_times])
        reward = cash + imbalance_penalty(position, self._imbalance_prices, settling)
        book = step_book(book, self.day.events[step + 1], cal, step + 1)
        obs = self._observe(book, position, step + 1, action, reward)
        return _State(step + 1, book, position, schedule, obs, trades), reward

    def _check(self, position, schedule, step):
        scale = max(1.0, self.params.c_max, self.params.g_max)
        worst = float(np.max(np.abs(position.imbalance), initial=0.0))
        if worst > 1e-9 * scale:
            raise EpisodeError(f"imbalance {worst:.3g} MW after step", self.day.day, step,
                               {"imbalance": position.imbalance.copy()})
        bad = validate(schedule, self.params, self.calendar.delivery_step, tol=1e-6)
        if bad:
            raise EpisodeError("; ".join(bad[:5]), self.day.day, step,
                               {"g": schedule.g.copy(), "c": schedule.c.copy(), "soc": schedule.soc.copy()})

    @property
    def position(self) -> MarketPosition:
        return self._state.position

    @property
    def schedule(self) -> StorageSchedule:
        return self._state.schedule

    @property
    def book(self) -> OrderBook:
        return self._state.book


def simulate(env: TradingEnv, day: DayRecord, choose, tag=()) -> Episode:
    """Run one episode; ``choose(step, observations_so_far)`` returns TRADE or IDLE."""
    obs = [env.reset(day)]
    actions, rewards = [], []
    done = env.K == 0
    while not done:
        a = int(choose(len(actions), np.asarray(obs)))
        o, r, done = env.step(a)
        obs.append(o)
        actions.append(a)
        rewards.append(r)
    return Episode(day.day, np.asarray(obs), np.asarray(actions, dtype=int), np.asarray(rewards, dtype=float), tag)
