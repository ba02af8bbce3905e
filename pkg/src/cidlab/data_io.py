"""Day files for order-book replay, a seeded synthetic-day generator and train/test splitting.

A day file is UTF-8 CSV::

    version,day
    1,<day id>
    <step>,ORDER,<product>,<S|B>,<price>,<volume>
    <step>,EXOG,<hour>,<month>,<weekend>,<da1>..<da24>,<ip1>..<ip4>,<si1>..<si4>

ORDER rows are order arrivals in ``(t - dt, t]``, replayed in file order.
There is exactly one EXOG row per trading step ``0..K`` and rows are sorted
by step.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .features import ExogRecord
from .market import (BUY, SELL, VOLUME_GRAIN, MarketCalendar, Order, OrderBook, match_insert,
                     open_products, to_price, to_volume)

FORMAT_VERSION = 1
DATA_ROOT_ENV = "CIDLAB_DATA"


class DayFormatError(ValueError):
    def __init__(self, path, line, reason):
        super().__init__(f"{path}:{line}: {reason}")
        self.path, self.line, self.reason = str(path), line, reason


class DayVersionError(DayFormatError):
    pass


@dataclass(frozen=True)
class OrderEvent:
    product: int
    side: str
    price: float
    volume: Fraction


@dataclass(frozen=True)
class DayRecord:
    day: str
    events: tuple  # per step, a tuple of OrderEvent
    exog: tuple  # per step, an ExogRecord

    @property
    def K(self) -> int:
        return len(self.exog) - 1

    def check(self, calendar: MarketCalendar) -> None:
        """Raise ``ValueError`` unless the record fits the calendar."""
        if self.K != calendar.K or len(self.events) != len(self.exog):
            raise ValueError(f"day {self.day}: {len(self.exog)} steps, calendar has {calendar.K + 1}")
        for step, evs in enumerate(self.events):
            t = calendar.time(step)
            for ev in evs:
                if not 1 <= ev.product <= calendar.n_slots or not calendar.product(ev.product).is_open(t):
                    raise ValueError(f"day {self.day}: step {step} order for closed product {ev.product}")


def data_root(default: str | os.PathLike = "data") -> Path:
    return Path(os.environ.get(DATA_ROOT_ENV, default))


def _fmt_volume(v: Fraction) -> str:
    milli = v / VOLUME_GRAIN
    if milli.denominator != 1:
        raise ValueError(f"volume {v} is off the 0.001 MW grain")
    n = int(milli)
    sign = "-" if n < 0 else ""
    return f"{sign}{abs(n) // 1000}.{abs(n) % 1000:03d}"


def format_day(record: DayRecord) -> str:
    lines = ["version,day", f"{FORMAT_VERSION},{record.day}"]
    for step, (evs, ex) in enumerate(zip(record.events, record.exog)):
        nums = list(ex.day_ahead) + list(ex.imbalance_price) + list(ex.system_imbalance)
        lines.append(",".join([str(step), "EXOG", str(ex.hour), str(ex.month), str(int(ex.weekend))]
                              + [repr(float(x)) for x in nums]))
        for ev in evs:
            lines.append(f"{step},ORDER,{ev.product},{ev.side},{ev.price:.2f},{_fmt_volume(ev.volume)}")
    return "\n".join(lines) + "\n"


def save_day(record: DayRecord, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_day(record), encoding="utf-8")
    return path


def parse_day(text: str, path="<string>") -> DayRecord:
    lines = text.splitlines()
    if len(lines) < 2 or lines[0].strip() != "version,day":
        raise DayFormatError(path, 1, "missing 'version,day' header")
    head = lines[1].split(",", 1)
    if len(head) != 2:
        raise DayFormatError(path, 2, "expected '<version>,<day>'")
    if head[0].strip() != str(FORMAT_VERSION):
        raise DayVersionError(path, 2, f"unsupported version {head[0].strip()!r}, expected {FORMAT_VERSION}")
    day = head[1].strip()
    events, exog = {}, {}
    last_step = 0
    for n, raw in enumerate(lines[2:], 3):
        if not raw.strip():
            continue
        cols = [c.strip() for c in raw.split(",")]
        try:
            step = int(cols[0])
        except ValueError:
            raise DayFormatError(path, n, f"bad step {cols[0]!r}") from None
        if step < last_step:
            raise DayFormatError(path, n, f"step {step} after step {last_step}")
        last_step = step
        kind = cols[1] if len(cols) > 1 else ""
        if kind == "ORDER":
            events.setdefault(step, []).append(_parse_order(cols, path, n))
        elif kind == "EXOG":
            if step in exog:
                raise DayFormatError(path, n, f"second EXOG row for step {step}")
            exog[step] = _parse_exog(cols, path, n)
        else:
            raise DayFormatError(path, n, f"unknown row kind {kind!r}")
    if not exog:
        raise DayFormatError(path, len(lines), "no EXOG rows")
    K = max(exog)
    missing = [s for s in range(K + 1) if s not in exog]
    if missing:
        raise DayFormatError(path, len(lines), f"EXOG rows missing for steps {missing}")
    stray = [s for s in events if s > K]
    if stray:
        raise DayFormatError(path, len(lines), f"ORDER rows beyond last step {K}: {stray}")
    return DayRecord(day, tuple(tuple(events.get(s, ())) for s in range(K + 1)),
                     tuple(exog[s] for s in range(K + 1)))


def _parse_order(cols, path, n) -> OrderEvent:
    if len(cols) != 6:
        raise DayFormatError(path, n, f"ORDER row needs 6 fields, got {len(cols)}")
    try:
        product = int(cols[2])
        price = float(cols[4])
        volume = Fraction(cols[5])
    except ValueError as exc:
        raise DayFormatError(path, n, f"bad number ({exc})") from None
    if product < 1:
        raise DayFormatError(path, n, f"unknown product {product}")
    if cols[3] not in (SELL, BUY):
        raise DayFormatError(path, n, f"side must be S or B, got {cols[3]!r}")
    if volume <= 0:
        raise DayFormatError(path, n, f"volume must be positive, got {cols[5]}")
    if volume != to_volume(volume):
        raise DayFormatError(path, n, f"volume {cols[5]} is off the 0.001 MW grain")
    if not math.isfinite(price) or price != to_price(price):
        raise DayFormatError(path, n, f"price {cols[4]} is off the 0.01 tick")
    return OrderEvent(product, cols[3], price, volume)


def _parse_exog(cols, path, n) -> ExogRecord:
    if len(cols) != 5 + 24 + 4 + 4:
        raise DayFormatError(path, n, f"EXOG row needs 37 fields, got {len(cols)}")
    try:
        hour, month, weekend = int(cols[2]), int(cols[3]), int(cols[4])
        nums = [float(c) for c in cols[5:]]
    except ValueError as exc:
        raise DayFormatError(path, n, f"bad number ({exc})") from None
    if weekend not in (0, 1):
        raise DayFormatError(path, n, "weekend flag must be 0 or 1")
    return ExogRecord(tuple(nums[:24]), tuple(nums[24:28]), tuple(nums[28:32]), hour, month, bool(weekend))


def load_day(path) -> DayRecord:
    path = Path(path)
    return parse_day(path.read_text(encoding="utf-8"), path)


def day_path(directory, day: str) -> Path:
    return Path(directory) / f"day_{day}.csv"


def load_dataset(directory) -> list[DayRecord]:
    files = sorted(Path(directory).glob("day_*.csv"))
    if not files:
        raise FileNotFoundError(f"no day_*.csv files in {directory}")
    return [load_day(f) for f in files]


def replay_books(record: DayRecord, calendar: MarketCalendar, p_min=-3000.0, p_max=3000.0):
    """Book snapshot after the arrivals of each step, with closed products dropped."""
    book = OrderBook(p_min=p_min, p_max=p_max)
    out = []
    for step, evs in enumerate(record.events):
        book = step_book(book, evs, calendar, step)
        out.append(book)
    return out


def step_book(book: OrderBook, events, calendar: MarketCalendar, step: int) -> OrderBook:
    """Close products past gate closure, then insert the step's arrivals in file order."""
    t = calendar.time(step)
    book = book.close_products([p.index for p in open_products(calendar, t)])
    for ev in events:
        order = Order(book.next_id(), ev.product, ev.side, ev.volume, ev.price, step)
        _, book = match_insert(book, order)
    return book


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the synthetic market.  Prices in €/MWh, volumes in MW."""

    mean_price: float = 50.0
    reversion: float = 0.2
    volatility: float = 3.0
    profile_amplitude: float = 15.0
    spread_mean: float = 6.0
    spread_std: float = 1.5
    depth: float = 4.0
    volume_min: float = 1.0
    volume_max: float = 20.0
    orders_per_step: float = 6.0
    aggressive_prob: float = 0.1
    arbitrage_prob: float = 0.3
    arbitrage_volume: float = 20.0
    n_products: int = 8
    n_steps: int = 8
    trading_start: int = -120
    trading_step: int = 15

    def __post_init__(self):
        if self.volatility < 0 or self.spread_std < 0 or self.depth < 0:
            raise ValueError("volatility, spread_std and depth must be non-negative")
        if self.orders_per_step < 0 or not 0 <= self.arbitrage_prob <= 1 or not 0 <= self.aggressive_prob <= 1:
            raise ValueError("rates must be non-negative and probabilities within [0, 1]")
        if not 0 < self.volume_min <= self.volume_max:
            raise ValueError("need 0 < volume_min <= volume_max")
        if not 0 <= self.reversion <= 1:
            raise ValueError("reversion must lie in [0, 1]")

    def calendar(self) -> MarketCalendar:
        return MarketCalendar.quarterly(self.n_products, self.trading_start, self.n_steps, self.trading_step)


def mid_price_path(config: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    """AR(1) mid price over the trading steps ``0..K``."""
    out = np.empty(config.n_steps + 1)
    out[0] = config.mean_price
    for k in range(config.n_steps):
        out[k + 1] = (out[k] + config.reversion * (config.mean_price - out[k])
                      + config.volatility * rng.standard_normal())
    return out


def _generate_day(config: SyntheticConfig, calendar: MarketCalendar, day_index: int, seed: int) -> DayRecord:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(day_index,)))
    mids = mid_price_path(config, rng)
    phase = rng.uniform(0, 2 * np.pi)
    n = calendar.n_slots
    profile = config.profile_amplitude * np.sin(2 * np.pi * np.arange(n) / n + phase)
    spread_of = lambda: max(0.02, config.spread_mean + config.spread_std * rng.standard_normal())
    volume_of = lambda lo, hi: max(VOLUME_GRAIN, to_volume(rng.uniform(lo, hi)))
    weekend = day_index % 7 in (5, 6)
    month = 1 + (day_index // 30) % 12
    da_profile = config.mean_price + config.profile_amplitude * np.sin(2 * np.pi * np.arange(24) / 24 + phase)

    book = OrderBook()
    events, exog = [], []
    for step in range(calendar.K + 1):
        t = calendar.time(step)
        open_idx = [p.index for p in open_products(calendar, t)]
        book = book.close_products(open_idx)
        step_events = []
        if open_idx:
            for _ in range(int(rng.poisson(config.orders_per_step))):
                prod = int(rng.choice(open_idx))
                mid = mids[step] + profile[prod - 1]
                side = SELL if rng.random() < 0.5 else BUY
                offset = spread_of() / 2 + config.depth * abs(rng.standard_normal())
                if rng.random() < config.aggressive_prob:
                    offset = -offset
                price = to_price(mid + offset if side == SELL else mid - offset)
                step_events.append(OrderEvent(prod, side, price, volume_of(config.volume_min, config.volume_max)))
            if len(open_idx) >= 2 and rng.random() < config.arbitrage_prob:
                x1, x2 = sorted(int(x) for x in rng.choice(open_idx, 2, replace=False))
                m1, m2 = mids[step] + profile[x1 - 1], mids[step] + profile[x2 - 1]
                cheap, dear = (x1, x2) if m1 <= m2 else (x2, x1)
                lo, hi = min(m1, m2), max(m1, m2)
                edge = spread_of() / 4
                if hi - lo > 2 * edge + 1.0:
                    vol = to_volume(config.arbitrage_volume)
                    step_events.append(OrderEvent(cheap, SELL, to_price(lo + edge), vol))
                    step_events.append(OrderEvent(dear, BUY, to_price(hi - edge), vol))
        for ev in step_events:
            _, book = match_insert(book, Order(book.next_id(), ev.product, ev.side, ev.volume, ev.price, step))
        events.append(tuple(step_events))
        hour = (t // 60) % 24
        ip = tuple(round(float(v), 2) for v in mids[step] + 10 * rng.standard_normal(4))
        si = tuple(round(float(v), 3) for v in 50 * rng.standard_normal(4))
        da = tuple(round(float(v), 2) for v in da_profile + rng.standard_normal(24))
        exog.append(ExogRecord(da, ip, si, int(hour), month, weekend))
    return DayRecord(f"{day_index:04d}", tuple(events), tuple(exog))


def synth_generate(config: SyntheticConfig, days: int, seed: int) -> list[DayRecord]:
    """``days`` reproducible synthetic days; day ``d`` depends only on ``(seed, d)``."""
    if days < 0:
        raise ValueError("days must be non-negative")
    calendar = config.calendar()
    return [_generate_day(config, calendar, d, seed) for d in range(days)]


def split(dataset, train_fraction: float, seed: int):
    """Uniform split without replacement; both parts keep at least one day."""
    items = list(dataset)
    if not items:
        raise ValueError("cannot split an empty dataset")
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    if len(items) < 2:
        raise ValueError("need at least two days to split")
    n_train = min(max(int(round(train_fraction * len(items))), 1), len(items) - 1)
    perm = np.random.default_rng(seed).permutation(len(items))
    train = [items[i] for i in sorted(perm[:n_train])]
    test = [items[i] for i in sorted(perm[n_train:])]
    return train, test
