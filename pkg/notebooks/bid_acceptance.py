"""
Bid acceptance for a storage unit
=================================

Solve the one-step acceptance problem on a two-order book and replay a whole
synthetic day with the always-trade benchmark.
"""
import numpy as np

from cidlab.backtest import rolling_intrinsic
from cidlab.data_io import SyntheticConfig, synth_generate
from cidlab.market import BUY, SELL
from cidlab.storage import StorageParams
from cidlab.trade import TradeOrder, TradeProblem, format_problem, solve_trade

###############################################################################
# One step
# --------
# Buy cheap energy for the first quarter and sell it dear in the second.

battery = StorageParams(0.0, 5.0, 0.0, 20.0, 0.0, 20.0, 1.0, 0.0, 0.0)
orders = (TradeOrder(1, 0, SELL, 10.0, 10.0, 0.25), TradeOrder(2, 1, BUY, 10.0, 50.0, 0.25))
zeros = np.zeros(2)
problem = TradeProblem(orders, zeros, zeros, zeros, battery, np.ones(2, dtype=bool))
sol = solve_trade(problem)
print(format_problem(problem))
print("accepted", sol.fractions, "reward", sol.reward)
print("charge", sol.c, "discharge", sol.g, "soc", sol.soc)

###############################################################################
# A synthetic day
# ---------------

cfg = SyntheticConfig()
day = synth_generate(cfg, 1, 0)[0]
desk = StorageParams(0.0, 20.0, 0.0, 20.0, 0.0, 20.0, 1.0, 10.0, 10.0)
res = rolling_intrinsic(day, desk, cfg.calendar())
print("step rewards", np.round(res.rewards, 2))
print("day return", round(res.value, 2))
