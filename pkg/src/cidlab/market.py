"""Continuous intraday market core: products, calendar, order book and matching.

Times are minutes relative to midnight of the delivery day (so 23:30 of the
previous day is -30).  Volumes are MW held as exact rationals on a 0.001 MW
grain; prices are €/MWh on a 0.01 grid.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Mapping

SELL = "S"
BUY = "B"
SIDES = (SELL, BUY)

VOLUME_GRAIN = Fraction(1, 1000)
PRICE_DECIMALS = 2
P_MIN = -3000.0
P_MAX = 3000.0
GATE_CLOSURE_LEAD = 30


class MarketError(ValueError):
    pass


class HorizonError(MarketError):
    pass


class OrderValidationError(MarketError):
    pass


def to_volume(value) -> Fraction:
    """Quantize a volume to the 0.001 MW grain."""
    exact = value if isinstance(value, Fraction) else Fraction(str(value))
    return round(exact / VOLUME_GRAIN) * VOLUME_GRAIN


def to_price(value) -> float:
    return round(float(value), PRICE_DECIMALS)


@dataclass(frozen=True)
class Product:
    index: int
    delivery_start: int
    duration: float = 0.25
    gate_open: int = -480
    gate_close: int | None = None

    def __post_init__(self):
        if self.gate_close is None:
            object.__setattr__(self, "gate_close", self.delivery_start - GATE_CLOSURE_LEAD)
        if not self.gate_open < self.gate_close:
            raise MarketError(f"product {self.index}: gate_open must precede gate_close")
        if self.duration <= 0:
            raise MarketError(f"product {self.index}: duration must be positive")

    def is_open(self, t: int) -> bool:
        return self.gate_open <= t <= self.gate_close


@dataclass(frozen=True)
class MarketCalendar:
    """Discrete trading timeline plus the quarter-hourly delivery timeline."""

    products: tuple[Product, ...]
    trading_steps: tuple[int, ...]
    trading_step: int = 15
    delivery_step: float = 0.25

    def __post_init__(self):
        starts = [p.delivery_start for p in self.products]
        if starts != sorted(starts):
            raise MarketError("products must be ordered by delivery start")
        gap = round(self.delivery_step * 60)
        for a, b in zip(starts, starts[1:]):
            if b - a != gap:
                raise MarketError("delivery slots must be evenly spaced")
        if list(self.trading_steps) != sorted(set(self.trading_steps)):
            raise MarketError("trading steps must be strictly increasing")

    @classmethod
    def quarterly(cls, n_products: int = 96, trading_start: int = -420, n_steps: int = 40,
                  trading_step: int = 15, gate_open: int = -480) -> "MarketCalendar":
        """Quarterly products Q1..Qn with K = n_steps trading intervals.

        The defaults reproduce the case-study setup: 96 products, trading from
        17:00 (D-1) to 03:00 in 15 minute steps, so K = 40.
        """
        products = tuple(Product(i + 1, 15 * i, 0.25, gate_open) for i in range(n_products))
        steps = tuple(trading_start + trading_step * k for k in range(n_steps + 1))
        return cls(products, steps, trading_step, 0.25)

    @property
    def K(self) -> int:
        return len(self.trading_steps) - 1

    @property
    def n_slots(self) -> int:
        return len(self.products)

    @property
    def tau_init(self) -> int:
        return self.products[0].delivery_start

    @property
    def tau_term(self) -> int:
        return self.products[-1].delivery_start + round(self.delivery_step * 60)

    @property
    def delivery_slots(self) -> tuple[int, ...]:
        return tuple(p.delivery_start for p in self.products)

    @property
    def settlement_times(self) -> tuple[int, ...]:
        gap = round(self.delivery_step * 60)
        return tuple(p.delivery_start + gap for p in self.products)

    def product(self, index: int) -> Product:
        p = self.products[index - 1]
        if p.index != index:
            raise MarketError(f"unknown product {index}")
        return p

    def slot_of(self, product_index: int) -> int:
        """0-based delivery slot position of a product."""
        if not 1 <= product_index <= len(self.products):
            raise MarketError(f"unknown product {product_index}")
        return product_index - 1

    def time(self, step: int) -> int:
        if not 0 <= step <= self.K:
            raise HorizonError(f"step {step} outside 0..{self.K}")
        return self.trading_steps[step]

    def tradable_mask(self, t: int) -> list[bool]:
        return [p.is_open(t) for p in self.products]


def open_products(calendar: MarketCalendar, t: int) -> list[Product]:
    """Products available for trading at wall-clock minute ``t``."""
    if not calendar.trading_steps[0] <= t <= calendar.trading_steps[-1]:
        raise HorizonError(f"t={t} outside trading horizon")
    return [p for p in calendar.products if p.gate_open <= t <= p.gate_close]


@dataclass(frozen=True)
class Order:
    id: int
    product: int
    side: str
    volume: Fraction
    price: float
    arrival_step: int = 0

    def __post_init__(self):
        if self.side not in SIDES:
            raise OrderValidationError(f"order {self.id}: bad side {self.side!r}")
        if not isinstance(self.volume, Fraction):
            object.__setattr__(self, "volume", to_volume(self.volume))


@dataclass(frozen=True)
class Transaction:
    product: int
    volume: Fraction
    price: float
    resting_order_id: int
    aggressor_side: str


def validate_order(order: Order, p_min: float = P_MIN, p_max: float = P_MAX) -> None:
    if order.volume <= 0:
        raise OrderValidationError(f"order {order.id}: volume must be positive, got {order.volume}")
    if not p_min <= order.price <= p_max:
        raise OrderValidationError(f"order {order.id}: price {order.price} outside [{p_min}, {p_max}]")


def _sort_key(order: Order):
    # Sell side best = lowest price, Buy side best = highest price; FCFS within a level.
    return (order.price, order.id) if order.side == SELL else (-order.price, order.id)


@dataclass
class OrderBook:
    """Resting limit orders, per product, each side kept in priority order."""

    sides: dict = field(default_factory=dict)
    last_id: int = 0
    p_min: float = P_MIN
    p_max: float = P_MAX

    def copy(self) -> "OrderBook":
        return OrderBook({k: (list(s), list(b)) for k, (s, b) in self.sides.items()},
                         self.last_id, self.p_min, self.p_max)

    def side(self, product: int, side: str) -> list[Order]:
        s, b = self.sides.get(product, ((), ()))
        return list(s if side == SELL else b)

    def _lists(self, product: int):
        if product not in self.sides:
            self.sides[product] = ([], [])
        return self.sides[product]

    def orders(self) -> list[Order]:
        out = []
        for product in sorted(self.sides):
            s, b = self.sides[product]
            out.extend(s)
            out.extend(b)
        return out

    def get(self, order_id: int) -> Order:
        for o in self.orders():
            if o.id == order_id:
                return o
        raise KeyError(order_id)

    def products(self) -> list[int]:
        return sorted(p for p, (s, b) in self.sides.items() if s or b)

    def best_bid(self, product: int) -> Order | None:
        b = self.sides.get(product, ((), ()))[1]
        return b[0] if b else None

    def best_ask(self, product: int) -> Order | None:
        s = self.sides.get(product, ((), ()))[0]
        return s[0] if s else None

    def resting_volume(self) -> Fraction:
        return sum((o.volume for o in self.orders()), Fraction(0))

    def __len__(self):
        return sum(len(s) + len(b) for s, b in self.sides.values())

    def next_id(self) -> int:
        return self.last_id + 1

    def is_crossed(self) -> bool:
        for product in self.sides:
            bid, ask = self.best_bid(product), self.best_ask(product)
            if bid is not None and ask is not None and bid.price >= ask.price:
                return True
        return False

    def close_products(self, open_indices: Iterable[int]) -> "OrderBook":
        """Drop the orders of every product not in ``open_indices`` (gate closure)."""
        keep = set(open_indices)
        out = self.copy()
        out.sides = {k: v for k, v in out.sides.items() if k in keep}
        return out

    def restricted(self, open_indices: Iterable[int]) -> list[Order]:
        keep = set(open_indices)
        return [o for o in self.orders() if o.product in keep]


def _rest(lists, order: Order) -> None:
    target = lists[0] if order.side == SELL else lists[1]
    keys = [_sort_key(o) for o in target]
    target.insert(bisect.bisect_right(keys, _sort_key(order)), order)


def match_insert(book: OrderBook, order: Order) -> tuple[list[Transaction], OrderBook]:
    """Insert ``order`` with FCFS matching; trades settle at the resting price."""
    validate_order(order, book.p_min, book.p_max)
    if order.id <= book.last_id:
        raise OrderValidationError(f"order id {order.id} not after last id {book.last_id}")
    out = book.copy()
    out.last_id = order.id
    sells, buys = out._lists(order.product)
    opposite = buys if order.side == SELL else sells

    remaining = order.volume
    trades = []
    while remaining > 0 and opposite:
        best = opposite[0]
        crosses = best.price >= order.price if order.side == SELL else best.price <= order.price
        if not crosses:
            break
        qty = min(remaining, best.volume)
        trades.append(Transaction(order.product, qty, best.price, best.id, order.side))
        remaining -= qty
        if qty == best.volume:
            opposite.pop(0)
        else:
            opposite[0] = replace(best, volume=best.volume - qty)
    if remaining > 0:
        _rest((sells, buys), replace(order, volume=remaining))
    return trades, out


def apply_acceptance(book: OrderBook, fractions: Mapping[int, float], calendar: MarketCalendar,
                     *, power_settlement: bool = False):
    """Accept fractions of resting orders as an aggressor.

    Returns ``(transactions, v_con, book', cash)`` where ``v_con`` is the net
    contracted MW per delivery slot, positive when the agent sells, and
    ``cash`` the settlement in € (volume x price x product duration, or
    volume x price when ``power_settlement``).
    """
    by_id = {o.id: o for o in book.orders()}
    for oid, a in fractions.items():
        if oid not in by_id:
            raise KeyError(f"order {oid} not in book")
        if not 0.0 <= a <= 1.0:
            raise MarketError(f"fraction {a} for order {oid} outside [0, 1]")
    out = book.copy()
    v_con = [0.0] * calendar.n_slots
    trades = []
    cash = 0.0
    for oid in sorted(fractions):
        a = fractions[oid]
        if a == 0:
            continue
        order = by_id[oid]
        qty = order.volume if a == 1 else Fraction(a) * order.volume
        lists = out._lists(order.product)
        target = lists[0] if order.side == SELL else lists[1]
        pos = next(i for i, o in enumerate(target) if o.id == oid)
        if qty >= order.volume:
            qty = order.volume
            target.pop(pos)
        else:
            target[pos] = replace(order, volume=order.volume - qty)
        aggressor = BUY if order.side == SELL else SELL
        trades.append(Transaction(order.product, qty, order.price, oid, aggressor))
        signed = float(qty) if order.side == BUY else -float(qty)
        v_con[calendar.slot_of(order.product)] += signed
        factor = 1.0 if power_settlement else calendar.product(order.product).duration
        cash += signed * order.price * factor
    return trades, v_con, out, cash


@dataclass(frozen=True)
class DepthCurve:
    side: str
    prices: tuple[float, ...]
    volumes: tuple[float, ...]

    def __len__(self):
        return len(self.prices)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.prices, self.volumes))


def depth_curve(orders: Iterable[Order], side: str) -> DepthCurve:
    """Stack ``orders`` of one side by price and accumulate volume per level."""
    levels: dict[float, Fraction] = {}
    for o in orders:
        if o.side == side:
            levels[o.price] = levels.get(o.price, Fraction(0)) + o.volume
    prices = sorted(levels, reverse=(side == BUY))
    cum = Fraction(0)
    vols = []
    for p in prices:
        cum += levels[p]
        vols.append(float(cum))
    return DepthCurve(side, tuple(prices), tuple(vols))


def aggregate_depth(book: OrderBook, side: str, products: Iterable[int] | None = None) -> DepthCurve:
    """Market depth over all (or the given) products' resting orders of one side."""
    if side not in SIDES:
        raise MarketError(f"bad side {side!r}")
    orders = book.orders() if products is None else book.restricted(products)
    return depth_curve(orders, side)
