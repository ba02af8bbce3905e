"""Strategic storage trading in a continuous intraday electricity market."""
from .backtest import BacktestReport, DailyReturn, report, rolling_intrinsic, run_policy
from .data_io import DayRecord, SyntheticConfig, load_day, save_day, split, synth_generate
from .env import TradingEnv, simulate
from .features import book_features, build_pseudo_state
from .fitted_q import QEnsemble, TrainConfig, TrajectoryStore, act, fit_q, generate, train
from .market import (BUY, SELL, MarketCalendar, Order, OrderBook, Product, aggregate_depth,
                     apply_acceptance, match_insert, open_products)
from .runtime import RuntimeConfig, run
from .storage import StorageParams, StorageSchedule, MarketPosition, default_adjustments, update_after_clear, validate
from .trade import IDLE, TRADE, TradeProblem, TradeSolution, idle, sign_volume, solve_trade

__version__ = "0.1.0"
