"""Backtesting: run policies over days, the rolling-intrinsic benchmark and the comparison report."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_io import DayRecord
from .env import TradingEnv, simulate
from .market import MarketCalendar
from .storage import StorageParams
from .trade import IDLE, TRADE

STAT_ROWS = ("mean", "min", "25%", "50%", "75%", "max", "sum")


@dataclass(frozen=True)
class DailyReturn:
    day: str
    policy: str
    value: float
    rewards: tuple = ()


def _chooser(policy):
    if policy == "ri":
        return "ri", lambda step, obs: TRADE
    if policy == "idle":
        return "idle", lambda step, obs: IDLE
    if hasattr(policy, "policy"):
        return "fq", policy.policy(0.0)
    if callable(policy):
        return getattr(policy, "__name__", "custom"), policy
    raise ValueError(f"unknown policy {policy!r}")


def run_policy(day: DayRecord, policy, storage: StorageParams, calendar: MarketCalendar, *,
               env: TradingEnv | None = None, tag: str | None = None, power_settlement: bool = False) -> DailyReturn:
    """Return of one policy over one day.

    ``policy`` is ``"ri"``, ``"idle"``, a fitted ensemble (greedy) or a
    callable ``(step, observations) -> action``.  The environment checks the
    zero-imbalance and schedule invariants at every step.
    """
    name, choose = _chooser(policy)
    env = env or TradingEnv(calendar, storage, power_settlement=power_settlement)
    day.check(calendar)
    ep = simulate(env, day, choose)
    rewards = tuple(float(r) for r in ep.rewards)
    if name == "ri" and any(r < -1e-9 for r in rewards):
        raise AssertionError(f"day {day.day}: negative rolling-intrinsic step reward {min(rewards)}")
    return DailyReturn(day.day, tag or name, math.fsum(rewards), rewards)


def rolling_intrinsic(day: DayRecord, storage: StorageParams, calendar: MarketCalendar, **kw) -> DailyReturn:
    """The benchmark: Trade at every step."""
    return run_policy(day, "ri", storage, calendar, **kw)


def describe(values) -> dict:
    """Mean, min, quartiles (linear interpolation between order statistics), max and sum."""
    xs = sorted(float(v) for v in values)
    if not xs:
        return {k: math.nan for k in STAT_ROWS}

    def quantile(q):
        pos = q * (len(xs) - 1)
        lo = math.floor(pos)
        hi = min(lo + 1, len(xs) - 1)
        return xs[lo] + (xs[hi] - xs[lo]) * (pos - lo)

    return {"mean": math.fsum(xs) / len(xs), "min": xs[0], "25%": quantile(0.25), "50%": quantile(0.5),
            "75%": quantile(0.75), "max": xs[-1], "sum": math.fsum(xs)}


def ratio(v_fq: float, v_ri: float) -> float | None:
    """Signed percentage gain over the benchmark; undefined when the benchmark is not positive."""
    if v_ri <= 0:
        return None
    return (v_fq - v_ri) / v_ri * 100.0


@dataclass
class BacktestReport:
    fq: dict
    ri: dict
    ratios: dict  # day -> r_d, or None when undefined
    r_stats: dict
    r_sum: float | None
    excluded: list
    meta: dict = field(default_factory=dict)

    @property
    def mean_ratio(self) -> float:
        return self.r_stats["mean"]

    def table(self) -> str:
        settlement = self.meta.get("settlement", "energy (volume x price x duration)")
        lines = [f"{'':>6} {'FQ returns (EUR)':>18} {'RI returns (EUR)':>18} {'r (%)':>9}"]
        fq_s, ri_s = describe(self.fq.values()), describe(self.ri.values())
        for row in STAT_ROWS:
            r = self.r_sum if row == "sum" else self.r_stats[row]
            r_txt = "n/a" if r is None or (isinstance(r, float) and math.isnan(r)) else f"{r:.2f}"
            lines.append(f"{row:>6} {fq_s[row]:>18.2f} {ri_s[row]:>18.2f} {r_txt:>9}")
        lines.append(f"days: {len(self.fq)}, excluded from ratios (RI <= 0): {len(self.excluded)}")
        lines.append(f"settlement: {settlement}")
        return "\n".join(lines)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["day", "fq_return", "ri_return", "ratio_pct"])
            for day in sorted(self.fq):
                r = self.ratios[day]
                w.writerow([day, repr(self.fq[day]), repr(self.ri[day]), "" if r is None else repr(r)])
        return path

    def histogram(self, bin_width: float = 1.0) -> list[tuple[float, float, int]]:
        vals = np.array([r for r in self.ratios.values() if r is not None])
        if vals.size == 0:
            return []
        lo = math.floor(vals.min() / bin_width) * bin_width
        hi = (math.floor(vals.max() / bin_width) + 1) * bin_width
        edges = np.arange(lo, hi + bin_width / 2, bin_width)
        counts, _ = np.histogram(vals, edges)
        return [(float(a), float(b), int(c)) for a, b, c in zip(edges[:-1], edges[1:], counts)]

    def write_histogram(self, path, bin_width: float = 1.0) -> Path:
        path = Path(path)
        rows = ["# ratio_low ratio_high count"]
        rows += [f"{a:g} {b:g} {c}" for a, b, c in self.histogram(bin_width)]
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        return path


def report(fq_returns, ri_returns, meta: dict | None = None) -> BacktestReport:
    fq = {r.day: r.value for r in fq_returns}
    ri = {r.day: r.value for r in ri_returns}
    if set(fq) != set(ri):
        raise ValueError("learned-policy and benchmark returns cover different days")
    ratios = {d: ratio(fq[d], ri[d]) for d in sorted(fq)}
    defined = [r for r in ratios.values() if r is not None]
    excluded = [d for d, r in ratios.items() if r is None]
    r_sum = ratio(math.fsum(fq.values()), math.fsum(ri.values()))
    return BacktestReport(fq, ri, ratios, describe(defined), r_sum, excluded, dict(meta or {}))


def write_returns(returns, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", "policy", "return"])
        for r in returns:
            w.writerow([r.day, r.policy, repr(r.value)])
    return path


def read_returns(path) -> list[DailyReturn]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [DailyReturn(row["day"], row["policy"], float(row["return"])) for row in rows]


def average_returns(runs, tag: str = "fq") -> list[DailyReturn]:
    """Per-day mean over several policies' returns (the multi-seed protocol)."""
    by_day = {}
    for run in runs:
        for r in run:
            by_day.setdefault(r.day, []).append(r.value)
    return [DailyReturn(d, tag, math.fsum(v) / len(v)) for d, v in sorted(by_day.items())]
