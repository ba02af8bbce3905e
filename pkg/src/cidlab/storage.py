"""Storage device state, market position and the imbalance-minimizing default strategy."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

TOL = 1e-9


class ScheduleError(ValueError):
    def __init__(self, message, slots=()):
        super().__init__(message)
        self.slots = list(slots)


class ImbalanceError(ScheduleError):
    def __init__(self, residual, slots=()):
        super().__init__(f"cannot balance position, residual |imbalance| = {residual:.6g} MW", slots)
        self.residual = residual


@dataclass(frozen=True)
class StorageParams:
    soc_min: float = 0.0
    soc_max: float = 200.0
    c_min: float = 0.0
    c_max: float = 200.0
    g_min: float = 0.0
    g_max: float = 200.0
    eta: float = 1.0
    soc_init: float = 100.0
    soc_term: float = 100.0

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if not (self.soc_min <= self.soc_init <= self.soc_max
                and self.soc_min <= self.soc_term <= self.soc_max):
            raise ValueError("initial and terminal SoC must lie within [soc_min, soc_max]")
        if not (0 <= self.c_min <= self.c_max and 0 <= self.g_min <= self.g_max):
            raise ValueError("power limits must satisfy 0 <= min <= max")

    @classmethod
    def case_study(cls) -> "StorageParams":
        """The pumped-hydro unit used in the German CID case study."""
        return cls(0.0, 200.0, 0.0, 200.0, 0.0, 200.0, 1.0, 100.0, 100.0)


@dataclass(frozen=True)
class StorageSchedule:
    """Per-slot discharge ``G``/charge ``C`` in MW, SoC in MWh at slot boundaries.

    ``soc`` has one more entry than ``g``/``c``: ``soc[0]`` is the level at
    the start of delivery and ``soc[-1]`` the level at the end.
    """

    g: np.ndarray
    c: np.ndarray
    soc: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return self.g - self.c


@dataclass(frozen=True)
class MarketPosition:
    p_mar: np.ndarray
    imbalance: np.ndarray


def soc_profile(g, c, soc_init: float, eta: float, dtau: float) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    c = np.asarray(c, dtype=float)
    steps = dtau * (eta * c - g / eta)
    return np.concatenate([[soc_init], soc_init + np.cumsum(steps)])


def initial_state(params: StorageParams, n_slots: int, dtau: float = 0.25):
    """Empty market position with an idle device."""
    zeros = np.zeros(n_slots)
    schedule = StorageSchedule(zeros.copy(), zeros.copy(), soc_profile(zeros, zeros, params.soc_init, params.eta, dtau))
    return MarketPosition(zeros.copy(), zeros.copy()), schedule


def adjustable_slots(delivery_slots, t: int) -> np.ndarray:
    """Slots whose delivery has not started at trading time ``t``."""
    return np.asarray(delivery_slots) >= t


def validate(schedule: StorageSchedule, params: StorageParams, dtau: float = 0.25, tol: float = TOL) -> list[str]:
    """List every violated device constraint; empty when the schedule is feasible."""
    out = []
    g, c, soc = schedule.g, schedule.c, schedule.soc
    for i in range(len(g)):
        if g[i] > tol and c[i] > tol:
            out.append(f"slot {i}: simultaneous charge {c[i]:.6g} and discharge {g[i]:.6g}")
        if c[i] > params.c_max + tol:
            out.append(f"slot {i}: charge {c[i]:.6g} above c_max {params.c_max}")
        if c[i] < -tol or (tol < c[i] < params.c_min - tol):
            out.append(f"slot {i}: charge {c[i]:.6g} outside {{0}} u [{params.c_min}, {params.c_max}]")
        if g[i] > params.g_max + tol:
            out.append(f"slot {i}: discharge {g[i]:.6g} above g_max {params.g_max}")
        if g[i] < -tol or (tol < g[i] < params.g_min - tol):
            out.append(f"slot {i}: discharge {g[i]:.6g} outside {{0}} u [{params.g_min}, {params.g_max}]")
    expected = soc_profile(g, c, params.soc_init, params.eta, dtau)
    for i in np.flatnonzero(np.abs(expected - soc) > tol):
        out.append(f"soc[{i}]: {soc[i]:.9g} breaks the state-of-charge recursion ({expected[i]:.9g})")
    for i, level in enumerate(soc):
        if level < params.soc_min - tol or level > params.soc_max + tol:
            out.append(f"soc[{i}]: {level:.9g} outside [{params.soc_min}, {params.soc_max}]")
    if abs(soc[0] - params.soc_init) > tol:
        out.append(f"soc[0]: {soc[0]:.9g} differs from soc_init {params.soc_init}")
    if abs(soc[-1] - params.soc_term) > tol:
        out.append(f"soc[{len(soc) - 1}]: {soc[-1]:.9g} differs from soc_term {params.soc_term}")
    return out


def update_after_clear(position: MarketPosition, schedule: StorageSchedule, v_con, dg, dc,
                       params: StorageParams, dtau: float = 0.25, adjustable=None, tol: float = TOL):
    """Book a market fill and the matching device adjustments.

    Implements ``P_mar' = P_mar + v_con``, ``G' = G + dG``, ``C' = C + dC`` and
    the incremental imbalance update ``D' = D + dG - dC - v_con``; the SoC
    vector is recomputed forward from ``soc_init``.
    """
    v_con, dg, dc = (np.asarray(x, dtype=float) for x in (v_con, dg, dc))
    if adjustable is not None:
        frozen = ~np.asarray(adjustable, dtype=bool)
        moved = frozen & ((np.abs(v_con) > 0) | (np.abs(dg) > 0) | (np.abs(dc) > 0))
        if moved.any():
            raise ScheduleError("fill or adjustment on a frozen slot", np.flatnonzero(moved))
    g = schedule.g + dg
    c = schedule.c + dc
    bad = np.flatnonzero((g < -tol) | (c < -tol) | (g > params.g_max + tol) | (c > params.c_max + tol))
    if bad.size:
        raise ScheduleError(f"power bounds violated on slots {bad.tolist()}", bad)
    g = np.clip(g, 0.0, None)
    c = np.clip(c, 0.0, None)
    new_position = MarketPosition(position.p_mar + v_con, position.imbalance + dg - dc - v_con)
    new_schedule = StorageSchedule(g, c, soc_profile(g, c, params.soc_init, params.eta, dtau))
    return new_position, new_schedule


def default_adjustments(position_after_fill: MarketPosition, schedule: StorageSchedule,
                        params: StorageParams, adjustable=None, tol: float = TOL):
    """Device adjustments bringing the residual production onto the market position.

    Each adjustable slot is set to run in the single mode matching its net
    contracted power (``G' = max(P_mar', 0)``, ``C' = max(-P_mar', 0)``),
    clipped to the power limits.  The time coupling through the SoC is the
    responsibility of whoever produced the fill; a leftover imbalance after
    clipping raises :class:`ImbalanceError`.
    """
    p = position_after_fill.p_mar
    mask = np.ones(len(p), dtype=bool) if adjustable is None else np.asarray(adjustable, dtype=bool)
    g_target = np.where(mask, np.clip(np.maximum(p, 0.0), 0.0, params.g_max), schedule.g)
    c_target = np.where(mask, np.clip(np.maximum(-p, 0.0), 0.0, params.c_max), schedule.c)
    residual = np.abs((g_target - c_target) - p)[mask]
    if residual.sum() > tol * max(1, len(p)):
        raise ImbalanceError(float(residual.sum()), np.flatnonzero(mask)[residual > tol])
    return g_target - schedule.g, c_target - schedule.c


def imbalance_penalty(position: MarketPosition, imbalance_prices, settling) -> float:
    """Imbalance settlement term of the reward for the slots settling now."""
    settling = np.asarray(settling, dtype=bool)
    return float(np.sum(position.imbalance[settling] * np.asarray(imbalance_prices, dtype=float)[settling]))


@dataclass(frozen=True)
class ImbalancePriceModel:
    """Unconditional truncated-normal imbalance price in €/MWh."""

    mean: float = 50.0
    std: float = 25.0
    low: float = -3000.0
    high: float = 3000.0

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        out = rng.normal(self.mean, self.std, size)
        bad = (out < self.low) | (out > self.high)
        while bad.any():
            out[bad] = rng.normal(self.mean, self.std, int(bad.sum()))
            bad = (out < self.low) | (out > self.high)
        return out


def with_soc(schedule: StorageSchedule, params: StorageParams, dtau: float) -> StorageSchedule:
    return replace(schedule, soc=soc_profile(schedule.g, schedule.c, params.soc_init, params.eta, dtau))
