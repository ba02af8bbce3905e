"""High-level actions: ``Trade`` (bid acceptance MILP) and ``Idle``."""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .lp import solve_lp, solve_milp
from .market import BUY, SELL, MarketCalendar, OrderBook
from .storage import (MarketPosition, StorageParams, StorageSchedule, soc_profile,
                      validate)

TRADE = 0
IDLE = 1
ACTIONS = ("Trade", "Idle")
SNAP = 1e-10


class TradeInputError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


def sign_volume(volume: float, side: str) -> float:
    """Positive for Buy orders (the agent sells into them), negative for Sell orders."""
    if volume < 0:
        raise ValueError(f"volume must be non-negative, got {volume}")
    if side == BUY:
        return volume
    if side == SELL:
        return -volume
    raise ValueError(f"bad side {side!r}")


@dataclass(frozen=True)
class TradeOrder:
    id: int
    slot: int
    side: str
    volume: float
    price: float
    duration: float = 0.25


@dataclass
class TradeProblem:
    orders: tuple
    p_mar: np.ndarray
    g: np.ndarray
    c: np.ndarray
    params: StorageParams
    tradable: np.ndarray
    dtau: float = 0.25
    t: int = 0
    power_settlement: bool = False

    @property
    def n_slots(self) -> int:
        return len(self.p_mar)

    @classmethod
    def from_state(cls, book: OrderBook, position: MarketPosition, schedule: StorageSchedule,
                   params: StorageParams, calendar: MarketCalendar, t: int,
                   power_settlement: bool = False) -> "TradeProblem":
        tradable = np.array(calendar.tradable_mask(t))
        open_idx = [p.index for p, ok in zip(calendar.products, tradable) if ok]
        orders = tuple(
            TradeOrder(o.id, calendar.slot_of(o.product), o.side, float(o.volume), o.price,
                       calendar.product(o.product).duration)
            for o in book.restricted(open_idx))
        return cls(orders, position.p_mar.copy(), schedule.g.copy(), schedule.c.copy(), params,
                   tradable, calendar.delivery_step, t, power_settlement)

    def revenue_coefficients(self) -> np.ndarray:
        return np.array([sign_volume(o.volume, o.side) * o.price * (1.0 if self.power_settlement else o.duration)
                         for o in self.orders])


@dataclass
class TradeSolution:
    fractions: dict
    k: np.ndarray
    g: np.ndarray
    c: np.ndarray
    soc: np.ndarray
    dg: np.ndarray
    dc: np.ndarray
    v_con: np.ndarray
    reward: float
    action: int = TRADE
    lp_objective: float = 0.0
    nodes: int = 0
    extra: dict = field(default_factory=dict)


def idle(schedule: StorageSchedule, position: MarketPosition) -> TradeSolution:
    """No transaction and no device adjustment."""
    zeros = np.zeros_like(schedule.g)
    return TradeSolution({}, (schedule.c > 0).astype(int), schedule.g.copy(), schedule.c.copy(),
                         schedule.soc.copy(), zeros, zeros.copy(), zeros.copy(), 0.0, IDLE)


class _Layout:
    """Column layout of the bid acceptance program."""

    def __init__(self, problem: TradeProblem, binaries: bool):
        prm = problem.params
        self.n_orders = len(problem.orders)
        self.open_slots = np.flatnonzero(problem.tradable)
        self.N = problem.n_slots
        col = self.n_orders
        self.c_col, self.g_col = {}, {}
        for s in self.open_slots:
            self.c_col[s], self.g_col[s] = col, col + 1
            col += 2
        self.k_col = {}
        if binaries:
            for s in self.open_slots:
                self.k_col[s] = col
                col += 1
        self.slack_rows = []
        if binaries:
            for s in self.open_slots:
                self.slack_rows.append(("cmax", s, col))
                self.slack_rows.append(("gmax", s, col + 1))
                col += 2
                if prm.c_min > 0:
                    self.slack_rows.append(("cmin", s, col))
                    col += 1
                if prm.g_min > 0:
                    self.slack_rows.append(("gmin", s, col))
                    col += 1
        self.soc_col = col
        col += self.N
        self.n_cols = col


def _build(problem: TradeProblem, binaries: bool):
    prm = problem.params
    L = _Layout(problem, binaries)
    rows, rhs = [], []
    lo = np.zeros(L.n_cols)
    hi = np.zeros(L.n_cols)
    lo[:L.n_orders], hi[:L.n_orders] = 0.0, 1.0
    for s in L.open_slots:
        hi[L.c_col[s]] = prm.c_max
        hi[L.g_col[s]] = prm.g_max
    for s, kc in L.k_col.items():
        lo[kc], hi[kc] = 0.0, 1.0
    slot_orders = {s: [] for s in range(L.N)}
    for j, o in enumerate(problem.orders):
        if not problem.tradable[o.slot]:
            raise TradeInputError(f"order {o.id} belongs to a closed product")
        slot_orders[o.slot].append(j)

    # energy balance of every open slot
    for s in L.open_slots:
        row = np.zeros(L.n_cols)
        row[L.g_col[s]] = 1.0
        row[L.c_col[s]] = -1.0
        for j in slot_orders[s]:
            o = problem.orders[j]
            row[j] = -sign_volume(o.volume, o.side)
        rows.append(row)
        rhs.append(problem.p_mar[s])

    for kind, s, sc in L.slack_rows:
        row = np.zeros(L.n_cols)
        kc = L.k_col[s]
        if kind == "cmax":  # C <= k Cmax
            row[L.c_col[s]], row[kc], row[sc] = 1.0, -prm.c_max, 1.0
            lo[sc], hi[sc], b = 0.0, prm.c_max, 0.0
        elif kind == "gmax":  # G <= (1 - k) Gmax
            row[L.g_col[s]], row[kc], row[sc] = 1.0, prm.g_max, 1.0
            lo[sc], hi[sc], b = 0.0, prm.g_max, prm.g_max
        elif kind == "cmin":  # C >= k Cmin
            row[L.c_col[s]], row[kc], row[sc] = 1.0, -prm.c_min, -1.0
            lo[sc], hi[sc], b = 0.0, prm.c_max, 0.0
        else:  # G >= (1 - k) Gmin
            row[L.g_col[s]], row[kc], row[sc] = 1.0, prm.g_min, -1.0
            lo[sc], hi[sc], b = 0.0, prm.g_max, prm.g_min
        rows.append(row)
        rhs.append(b)

    # state of charge recursion, soc[0] fixed at soc_init
    eta, dtau = prm.eta, problem.dtau
    for i in range(L.N):
        row = np.zeros(L.n_cols)
        row[L.soc_col + i] = 1.0
        b = 0.0
        if i == 0:
            b += prm.soc_init
        else:
            row[L.soc_col + i - 1] = -1.0
        if problem.tradable[i]:
            row[L.c_col[i]] = -dtau * eta
            row[L.g_col[i]] = dtau / eta
        else:
            b += dtau * (eta * problem.c[i] - problem.g[i] / eta)
        rows.append(row)
        rhs.append(b)
        lo[L.soc_col + i], hi[L.soc_col + i] = prm.soc_min, prm.soc_max
    lo[L.soc_col + L.N - 1] = hi[L.soc_col + L.N - 1] = prm.soc_term

    cost = np.zeros(L.n_cols)
    cost[:L.n_orders] = -problem.revenue_coefficients()
    return L, cost, np.array(rows), np.array(rhs), lo, hi


def _check_prior(problem: TradeProblem):
    prm = problem.params
    schedule = StorageSchedule(problem.g, problem.c, soc_profile(problem.g, problem.c, prm.soc_init, prm.eta, problem.dtau))
    issues = validate(schedule, prm, problem.dtau, tol=1e-6)
    imbalance = np.abs(problem.g - problem.c - problem.p_mar)
    if imbalance.max(initial=0.0) > 1e-6:
        issues.append(f"prior schedule unbalanced on slots {np.flatnonzero(imbalance > 1e-6).tolist()}")
    if issues:
        raise TradeInputError("invalid prior schedule: " + "; ".join(issues))


def _dump_on_failure(problem: TradeProblem, reason: str):
    fd, path = tempfile.mkstemp(prefix="cidlab-trade-", suffix=".txt")
    with os.fdopen(fd, "w") as fh:
        fh.write(format_problem(problem))
    raise SolverError(f"{reason}; problem dumped to {path}")


def solve_trade(problem: TradeProblem, *, branch: bool | None = None) -> TradeSolution:
    """Optimal risk-free order acceptance for the current book and position.

    Maximizes trading revenue over acceptance fractions of the resting orders
    subject to the device staying balanced on every delivery slot, its SoC
    and power limits, and the initial/terminal SoC levels.  With ``eta == 1``
    and zero minimum powers the mode binaries are dropped (simultaneous
    charge and discharge nets out at no cost); pass ``branch=True`` to force
    branch and bound.
    """
    _check_prior(problem)
    prm = problem.params
    if branch is None:
        branch = not (prm.eta == 1.0 and prm.c_min == 0 and prm.g_min == 0)
    if not problem.orders:
        return _zero_solution(problem)

    L, cost, A, b, lo, hi = _build(problem, branch)
    integer = np.array(sorted(L.k_col.values()), dtype=int)
    if branch:
        res = solve_milp(cost, A, b, lo, hi, integer)
    else:
        res = solve_lp(cost, A, b, lo, hi)
    if not res.success:
        _dump_on_failure(problem, "bid acceptance program reported infeasible on a feasible instance")
    best = -res.fun
    a = res.x[:L.n_orders].copy()
    a[np.abs(a) <= SNAP] = 0.0
    a[np.abs(a - 1.0) <= SNAP] = 1.0
    a = np.clip(a, 0.0, 1.0)
    if best <= 1e-9 * max(1.0, float(np.abs(cost).max(initial=0.0))):
        a[:] = 0.0  # nothing to earn: stay out of the market
    return _assemble(problem, a, getattr(res, "nodes", 0), best)


def _zero_solution(problem: TradeProblem) -> TradeSolution:
    return _assemble(problem, np.zeros(0), 0, 0.0)


def _assemble(problem: TradeProblem, a: np.ndarray, nodes: int, lp_objective: float) -> TradeSolution:
    prm = problem.params
    v_con = np.zeros(problem.n_slots)
    for aj, o in zip(a, problem.orders):
        v_con[o.slot] += aj * sign_volume(o.volume, o.side)
    p_new = problem.p_mar + v_con
    g = np.where(problem.tradable, np.maximum(p_new, 0.0), problem.g)
    c = np.where(problem.tradable, np.maximum(-p_new, 0.0), problem.c)
    soc = soc_profile(g, c, prm.soc_init, prm.eta, problem.dtau)
    reward = float(a @ problem.revenue_coefficients()) if len(a) else 0.0
    fractions = {o.id: float(aj) for aj, o in zip(a, problem.orders)}
    return TradeSolution(fractions, (c > 0).astype(int), g, c, soc, g - problem.g, c - problem.c,
                         v_con, reward, TRADE, lp_objective, nodes)


def format_problem(problem: TradeProblem) -> str:
    """Line-based dump of a problem: header lines, then one ``order`` line per order."""
    prm = problem.params
    fmt = lambda arr: " ".join(repr(float(v)) for v in arr)
    lines = [
        "cidlab-trade-problem 1",
        f"t {problem.t}",
        f"dtau {problem.dtau!r}",
        f"power_settlement {int(problem.power_settlement)}",
        "params " + " ".join(f"{k}={getattr(prm, k)!r}" for k in prm.__dataclass_fields__),
        "tradable " + " ".join(str(int(v)) for v in problem.tradable),
        "p_mar " + fmt(problem.p_mar),
        "g " + fmt(problem.g),
        "c " + fmt(problem.c),
    ]
    for o in problem.orders:
        lines.append(f"order {o.id} {o.slot} {o.side} {o.volume!r} {o.price!r} {o.duration!r}")
    return "\n".join(lines) + "\n"


def parse_problem(text: str) -> TradeProblem:
    fields, orders = {}, []
    for n, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        key, rest = parts[0], parts[1:]
        if key == "cidlab-trade-problem":
            if rest != ["1"]:
                raise ValueError(f"line {n}: unsupported dump version {rest}")
        elif key == "order":
            oid, slot, side, vol, price, dur = rest
            orders.append(TradeOrder(int(oid), int(slot), side, float(vol), float(price), float(dur)))
        elif key == "params":
            fields[key] = StorageParams(**{k: float(v) for k, v in (p.split("=") for p in rest)})
        else:
            fields[key] = rest
    vec = lambda k: np.array([float(v) for v in fields[k]])
    return TradeProblem(tuple(orders), vec("p_mar"), vec("g"), vec("c"), fields["params"],
                        np.array([v == "1" for v in fields["tradable"]]), float(fields["dtau"][0]),
                        int(fields["t"][0]), fields["power_settlement"][0] == "1")
