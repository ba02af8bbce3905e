"""
Learning when to wait
=====================

On this day a small arbitrage at the first step uses up the storage that a
three times larger one needs a step later. Trading greedily takes the small
profit; a fitted Q policy learns to idle first.
"""
from fractions import Fraction

from cidlab.backtest import rolling_intrinsic, run_policy
from cidlab.data_io import DayRecord, OrderEvent
from cidlab.env import TradingEnv
from cidlab.features import ExogRecord
from cidlab.fitted_q import TrainConfig, train
from cidlab.market import MarketCalendar
from cidlab.storage import StorageParams

calendar = MarketCalendar.quarterly(3, -90, 2)
battery = StorageParams(0.0, 2.5, 0.0, 10.0, 0.0, 10.0, 1.0, 0.0, 0.0)
exog = ExogRecord((45.5,) * 24, (50.0,) * 4, (0.0,) * 4, 23, 6, False)
ten = Fraction(10)
day = DayRecord("waiting",
                ((OrderEvent(1, "S", 10.0, ten), OrderEvent(3, "B", 20.0, ten)),
                 (OrderEvent(2, "S", 10.0, ten), OrderEvent(3, "B", 40.0, ten)),
                 ()),
                (exog,) * 3)

print("always trade:", rolling_intrinsic(day, battery, calendar).value)
print("idle then trade:", run_policy(day, lambda step, obs: [1, 0][step], battery, calendar).value)

###############################################################################
# Train on this single day
# ------------------------

env = TradingEnv(calendar, battery)
ensemble, store = train(env, [day], TrainConfig(episodes_per_day=300, seed=0))
print("trajectories:", len(store))
print("fitted Q policy:", run_policy(day, ensemble, battery, calendar, env=env).value)
