import logging
import re

import numpy as np
import pytest

from cidlab.data_io import SyntheticConfig, synth_generate
from cidlab.env import TradingEnv
from cidlab.fitted_q import TrainConfig, checkpoint_bytes, train
from cidlab.regressors import MLPConfig, ZeroRegressor
from cidlab.runtime import ActorError, RuntimeConfig, progress_line, run
from cidlab.storage import StorageParams

SMALL = StorageParams(0.0, 5.0, 0.0, 5.0, 0.0, 5.0, 1.0, 2.5, 2.5)
LINE = re.compile(r"^episode=\d+ actor=\d+ day=\S+ return=-?\d+\.\d{2} epsilon=\d+\.\d{6}$")


@pytest.fixture(scope="module")
def setup():
    cfg = SyntheticConfig(n_products=6, n_steps=4, trading_start=-90)
    cal = cfg.calendar()
    return cal, synth_generate(cfg, 2, 5), lambda: TradingEnv(cal, SMALL)


def _tc(**kw):
    kw.setdefault("mlp", MLPConfig(hidden=(8,), epochs=5))
    return TrainConfig(**kw)


def test_deterministic_matches_sequential(setup):
    cal, days, factory = setup
    tc = _tc(episodes_per_day=5, ep=3, seed=9)
    ens_a, store_a = run(factory, days, tc)
    ens_b, store_b = train(factory(), days, tc)
    assert checkpoint_bytes(ens_a) == checkpoint_bytes(ens_b)
    assert [(e.tag, e.day) for e in store_a] == [(e.tag, e.day) for e in store_b]
    assert all(np.array_equal(a.rewards, b.rewards) for a, b in zip(store_a, store_b))


def test_async_counts_every_trajectory_once(setup):
    cal, days, factory = setup
    ens, store = run(factory, days, _tc(episodes_per_day=8, ep=2), RuntimeConfig(actors=4, deterministic=False))
    assert len(store) == 16
    tags = [e.tag[1] for e in store]
    assert sorted(tags) == list(range(16))
    assert all(len(e.actions) == cal.K and len(e.observations) == cal.K + 1 for e in store)


def test_min_buffer_blocks_refits(setup):
    cal, days, factory = setup
    ens, store = run(factory, days, _tc(episodes_per_day=2, ep=1), RuntimeConfig(min_buffer=100))
    assert len(store) == 4
    assert all(isinstance(r, ZeroRegressor) for r in ens.regressors)


def test_progress_lines(setup, caplog):
    cal, days, factory = setup
    with caplog.at_level(logging.INFO, logger="cidlab.runtime"):
        run(factory, days, _tc(episodes_per_day=2, ep=2))
    lines = [r.getMessage() for r in caplog.records if r.name == "cidlab.runtime"]
    assert len(lines) == 4 and all(LINE.match(l) for l in lines)
    assert progress_line(3, 1, "d7", -2.5, 0.25) == "episode=3 actor=1 day=d7 return=-2.50 epsilon=0.250000"


@pytest.mark.parametrize("deterministic,actors", [(True, 1), (False, 2)])
def test_actor_failure_names_seed_and_day(setup, deterministic, actors):
    cal, days, _ = setup
    other = SyntheticConfig(n_products=6, n_steps=3, trading_start=-75)
    bad = synth_generate(other, 1, 0)
    with pytest.raises(ActorError) as err:
        run(lambda: TradingEnv(cal, SMALL), bad, _tc(episodes_per_day=2, seed=13),
            RuntimeConfig(actors=actors, deterministic=deterministic))
    assert err.value.seed == 13 and err.value.day == bad[0].day


def test_config_validation():
    with pytest.raises(ValueError):
        RuntimeConfig(actors=2, deterministic=True)
    with pytest.raises(ValueError):
        RuntimeConfig(actors=0)
    with pytest.raises(ValueError):
        RuntimeConfig(local_buffer=0)
