import numpy as np
import pytest

from cidlab.market import BUY, SELL
from cidlab.storage import MarketPosition, StorageParams, StorageSchedule, soc_profile
from cidlab.trade import (IDLE, TradeInputError, TradeOrder, TradeProblem, format_problem, idle, parse_problem,
                          sign_volume, solve_trade)

from oracle import random_problem, trade_oracle

BATTERY = StorageParams(0, 5, 0, 20, 0, 20, 1.0, 0, 0)


def problem(orders, prm=BATTERY, n=2, **kw):
    z = np.zeros(n)
    return TradeProblem(tuple(orders), z, z, z, prm, np.ones(n, dtype=bool), **kw)


ARB = [TradeOrder(1, 0, SELL, 10.0, 10.0, 0.25), TradeOrder(2, 1, BUY, 10.0, 50.0, 0.25)]


def test_sign_volume():
    assert sign_volume(5, BUY) == 5
    assert sign_volume(5, SELL) == -5
    assert sign_volume(0, BUY) == 0
    with pytest.raises(ValueError):
        sign_volume(-1, BUY)


def test_empty_book():
    sol = solve_trade(problem([]))
    assert sol.fractions == {} and sol.reward == 0
    assert not sol.g.any() and not sol.c.any()


@pytest.mark.parametrize("branch", [False, True])
def test_two_order_arbitrage(branch):
    sol = solve_trade(problem(ARB), branch=branch)
    assert sol.fractions == {1: 1.0, 2: 1.0}
    assert sol.c[0] == pytest.approx(10) and sol.g[1] == pytest.approx(10)
    assert sol.reward == pytest.approx(100.0)
    assert sol.soc[-1] == pytest.approx(0)


def test_lossy_arbitrage_scales_discharge():
    prm = StorageParams(0, 5, 0, 20, 0, 20, 0.9, 0, 0)
    sol = solve_trade(problem(ARB, prm))
    assert sol.fractions[1] == 1.0
    assert sol.fractions[2] == pytest.approx(0.81)
    assert sol.k.tolist() == [1, 0]


def test_full_battery_cannot_buy():
    prm = StorageParams(0, 5, 0, 20, 0, 20, 1.0, 5, 5)
    orders = [TradeOrder(1, 0, SELL, 10.0, 1.0, 0.25), TradeOrder(2, 1, SELL, 3.0, 2.0, 0.25)]
    sol = solve_trade(problem(orders, prm))
    assert all(a == 0 for a in sol.fractions.values()) and sol.reward == 0


def test_unprofitable_book_accepts_nothing():
    orders = [TradeOrder(1, 0, SELL, 10.0, 50.0, 0.25), TradeOrder(2, 1, BUY, 10.0, 50.0, 0.25)]
    sol = solve_trade(problem(orders))
    assert sol.reward == 0 and all(a == 0 for a in sol.fractions.values())


def test_idle_changes_nothing():
    g, c = np.array([0, 2.0]), np.array([2.0, 0])
    sch = StorageSchedule(g, c, soc_profile(g, c, 1, 1, 0.25))
    pos = MarketPosition(g - c, np.zeros(2))
    sol = idle(sch, pos)
    assert sol.reward == 0 and sol.action == IDLE and sol.fractions == {}
    assert np.array_equal(sol.soc, sch.soc) and not sol.v_con.any()


def test_invalid_prior_is_input_error():
    z = np.zeros(2)
    p = TradeProblem(tuple(ARB), np.array([5.0, 0]), z, z, BATTERY, np.ones(2, dtype=bool))
    with pytest.raises(TradeInputError):
        solve_trade(p)


def test_matches_oracle_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(40):
        pr = random_problem(rng)
        sol = solve_trade(pr)
        assert sol.reward >= 0
        assert sol.reward == pytest.approx(trade_oracle(pr), abs=1e-6)
        prm = pr.params
        assert np.all(sol.g <= (1 - sol.k) * prm.g_max + 1e-9)
        assert np.all(sol.c <= sol.k * prm.c_max + 1e-9)


def test_dominated_order_never_hurts():
    rng = np.random.default_rng(5)
    for _ in range(30):
        pr = random_problem(rng, with_prior=False)
        if not pr.orders:
            continue
        base = solve_trade(pr).reward
        o = pr.orders[int(rng.integers(len(pr.orders)))]
        worse = o.price - 1.0 if o.side == BUY else o.price + 1.0
        extra = TradeOrder(max(x.id for x in pr.orders) + 1, o.slot, o.side, o.volume, worse, o.duration)
        bigger = TradeProblem(pr.orders + (extra,), pr.p_mar, pr.g, pr.c, pr.params, pr.tradable)
        assert solve_trade(bigger).reward >= base - 1e-9


def test_dump_round_trip():
    rng = np.random.default_rng(9)
    pr = random_problem(rng, with_prior=True)
    back = parse_problem(format_problem(pr))
    assert back.orders == pr.orders and back.params == pr.params
    assert np.array_equal(back.p_mar, pr.p_mar) and np.array_equal(back.tradable, pr.tradable)
    assert solve_trade(back).reward == solve_trade(pr).reward


def test_power_settlement_reward():
    sol = solve_trade(problem(ARB, power_settlement=True))
    assert sol.reward == pytest.approx(400.0)
