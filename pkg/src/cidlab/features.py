"""Order book reduction to distance features and fixed-window pseudo-states."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import BUY, SELL, DepthCurve, OrderBook, aggregate_depth

N_EXOG = 24 + 4 + 4 + 3
N_BOOK = 12


@dataclass(frozen=True)
class BookFeatures:
    d: tuple  # D1..D10
    empty_buy: bool
    empty_sell: bool

    def as_array(self) -> np.ndarray:
        return np.array(list(self.d) + [float(self.empty_buy), float(self.empty_sell)])

    def __getitem__(self, i: int) -> float:
        """1-based access, ``features[1]`` is D1."""
        return self.d[i - 1]


def curve_quantile(curve: DepthCurve, q: float) -> tuple[float, float]:
    """Price and cumulative volume where the curve first reaches ``q`` of its total volume."""
    vols = np.asarray(curve.volumes)
    target = q * vols[-1]
    i = int(np.searchsorted(vols, target - 1e-12 * vols[-1], side="left"))
    i = min(i, len(vols) - 1)
    return curve.prices[i], float(vols[i])


def curve_summary(curve: DepthCurve) -> dict:
    prices = np.asarray(curve.prices)
    cum = np.asarray(curve.volumes)
    level = np.diff(np.concatenate([[0.0], cum]))
    out = {
        "p_best": prices[0],
        "p_mean": float(level @ prices / cum[-1]),
        "v_min": float(cum[0]),
        "v_mean": float(cum.mean()),
    }
    for q in (0.25, 0.5, 0.75):
        out[f"p_{q}"], out[f"v_{q}"] = curve_quantile(curve, q)
    return out


def book_features(book: OrderBook, products=None) -> BookFeatures:
    """Distance measures between the aggregated Buy and Sell depth curves."""
    buy = aggregate_depth(book, BUY, products)
    sell = aggregate_depth(book, SELL, products)
    empty_buy, empty_sell = len(buy) == 0, len(sell) == 0
    if empty_buy or empty_sell:
        return BookFeatures((0.0,) * 10, empty_buy, empty_sell)
    b, s = curve_summary(buy), curve_summary(sell)
    d = (
        b["p_best"] - s["p_best"],
        b["p_mean"] - s["p_mean"],
        b["p_0.25"] - s["p_0.75"],
        b["p_0.5"] - s["p_0.5"],
        b["p_0.75"] - s["p_0.25"],
        abs(b["v_min"] - s["v_min"]),
        abs(b["v_mean"] - s["v_mean"]),
        abs(b["v_0.25"] - s["v_0.25"]),
        abs(b["v_0.5"] - s["v_0.5"]),
        abs(b["v_0.75"] - s["v_0.75"]),
    )
    return BookFeatures(tuple(float(x) for x in d), False, False)


@dataclass(frozen=True)
class ExogRecord:
    """Exogenous information visible at one trading step."""

    day_ahead: tuple  # 24 hourly prices
    imbalance_price: tuple  # last four quarters
    system_imbalance: tuple  # last four quarters
    hour: int
    month: int
    weekend: bool

    def as_array(self) -> np.ndarray:
        return np.array(list(self.day_ahead) + list(self.imbalance_price) + list(self.system_imbalance)
                        + [self.hour, self.month, float(self.weekend)], dtype=float)

    @classmethod
    def blank(cls, hour=0, month=1, weekend=False):
        return cls((0.0,) * 24, (0.0,) * 4, (0.0,) * 4, hour, month, weekend)


def observation_width(n_slots: int) -> int:
    return N_BOOK + n_slots + N_EXOG + 3


def step_observation(features: BookFeatures, p_mar, exog: ExogRecord, prev_action: int | None,
                     prev_reward: float) -> np.ndarray:
    """Flat per-step block: book features, position, exogenous data, previous action and reward."""
    onehot = np.zeros(2)
    if prev_action is not None:
        onehot[prev_action] = 1.0
    return np.concatenate([features.as_array(), np.asarray(p_mar, dtype=float), exog.as_array(),
                           onehot, [float(prev_reward)]])


def build_pseudo_state(history, h_max: int) -> np.ndarray:
    """Last ``min(len(history), h_max)`` observations, zero-padded in front to ``h_max`` rows."""
    if len(history) == 0:
        raise ValueError("pseudo-state needs at least one observation")
    if h_max < 1:
        raise ValueError("h_max must be at least 1")
    recent = np.asarray(history[-h_max:], dtype=float)
    out = np.zeros((h_max, recent.shape[1]))
    out[h_max - len(recent):] = recent
    return out


def window_batch(observations: np.ndarray, h_max: int) -> np.ndarray:
    """Pseudo-states for every step of one episode, shape ``(n_steps, h_max * width)``."""
    n, w = observations.shape
    padded = np.concatenate([np.zeros((h_max - 1, w)), observations])
    idx = np.arange(n)[:, None] + np.arange(h_max)[None, :]
    return padded[idx].reshape(n, h_max * w)


@dataclass
class Standardizer:
    """Per-feature affine scaling frozen from training data."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        return cls(mean, np.where(std > 1e-12, std, 1.0))

    @classmethod
    def identity(cls, width: int) -> "Standardizer":
        return cls(np.zeros(width), np.ones(width))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale
