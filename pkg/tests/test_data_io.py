from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cidlab.data_io import (DayFormatError, DayRecord, DayVersionError, OrderEvent, SyntheticConfig, format_day,
                            load_day, mid_price_path, parse_day, replay_books, save_day, split, synth_generate)
from cidlab.features import ExogRecord
from cidlab.market import MarketCalendar

FIXTURES = Path(__file__).parent / "fixtures"


def test_sample_fixture_events():
    rec = load_day(FIXTURES / "sample_day.csv")
    assert rec.K == 4 and rec.day == "sample"
    assert rec.events[3] == (OrderEvent(1, "B", 38.5, Fraction(5, 2)), OrderEvent(4, "S", 44.1, Fraction(5, 4)))
    assert rec.events[0] == () and len(rec.events[1]) == 1
    rec.check(MarketCalendar.quarterly(4, -90, 4))


def test_round_trip(tmp_path):
    for rec in synth_generate(SyntheticConfig(), 3, 11):
        path = save_day(rec, tmp_path / f"{rec.day}.csv")
        assert load_day(path) == rec


exog_st = st.builds(ExogRecord, st.tuples(*[st.floats(-500, 500)] * 24), st.tuples(*[st.floats(-500, 500)] * 4),
                    st.tuples(*[st.floats(-500, 500)] * 4), st.integers(0, 23), st.integers(1, 12), st.booleans())
event_st = st.builds(OrderEvent, st.integers(1, 96), st.sampled_from(["S", "B"]),
                     st.integers(-300000, 300000).map(lambda c: c / 100),
                     st.integers(1, 10 ** 6).map(lambda m: Fraction(m, 1000)))


@given(st.lists(st.tuples(st.lists(event_st, max_size=3), exog_st), min_size=1, max_size=5))
def test_round_trip_property(steps):
    rec = DayRecord("x", tuple(tuple(e) for e, _ in steps), tuple(x for _, x in steps))
    assert parse_day(format_day(rec)) == rec


def _lines(extra):
    base = (FIXTURES / "sample_day.csv").read_text().splitlines()
    return "\n".join(base + extra) + "\n"


def test_negative_volume_names_line():
    text = _lines(["4,ORDER,2,S,40.00,-1"])
    with pytest.raises(DayFormatError) as err:
        parse_day(text, "bad.csv")
    assert err.value.line == 11 and "volume" in err.value.reason
    assert "bad.csv:11" in str(err.value)


@pytest.mark.parametrize("row,reason", [
    ("4,ORDER,2,X,40.00,1.000", "side"),
    ("4,ORDER,2,S,40.005,1.000", "tick"),
    ("4,ORDER,2,S,40.00,1.0001", "grain"),
    ("4,FOO,1", "kind"),
    ("2,ORDER,2,S,40.00,1.000", "after step"),
    ("4,EXOG" + ",0" * 35, "second EXOG"),
])
def test_strict_validation(row, reason):
    with pytest.raises(DayFormatError, match=reason):
        parse_day(_lines([row]))


def test_version_mismatch():
    text = (FIXTURES / "sample_day.csv").read_text().replace("1,sample", "2,sample", 1)
    with pytest.raises(DayVersionError):
        parse_day(text)


def test_missing_exog_step():
    lines = (FIXTURES / "sample_day.csv").read_text().splitlines()
    text = "\n".join(l for l in lines if not l.startswith("2,EXOG")) + "\n"
    with pytest.raises(DayFormatError, match="missing"):
        parse_day(text)


class TestSynthetic:
    def test_deterministic_bytes(self):
        a = [format_day(r) for r in synth_generate(SyntheticConfig(), 4, 5)]
        b = [format_day(r) for r in synth_generate(SyntheticConfig(), 4, 5)]
        assert a == b
        assert a != [format_day(r) for r in synth_generate(SyntheticConfig(), 4, 6)]

    def test_flat_mid_without_volatility(self):
        cfg = SyntheticConfig(volatility=0.0, spread_std=0.0)
        path = mid_price_path(cfg, np.random.default_rng(3))
        assert np.all(path == cfg.mean_price)

    def test_counts(self):
        cfg = SyntheticConfig()
        days = synth_generate(cfg, 50, 1)
        assert len(days) == 50 and all(len(d.events) == cfg.n_steps + 1 for d in days)

    def test_books_never_crossed_and_events_open(self):
        cfg = SyntheticConfig(aggressive_prob=0.4)
        cal = cfg.calendar()
        for rec in synth_generate(cfg, 10, 2):
            rec.check(cal)
            for book in replay_books(rec, cal):
                assert not book.is_crossed()

    def test_replay_is_deterministic(self):
        cfg = SyntheticConfig()
        rec = synth_generate(cfg, 1, 4)[0]
        a = [b.orders() for b in replay_books(rec, cfg.calendar())]
        b = [b.orders() for b in replay_books(rec, cfg.calendar())]
        assert a == b

    def test_bad_config(self):
        with pytest.raises(ValueError):
            SyntheticConfig(volatility=-1)
        with pytest.raises(ValueError):
            SyntheticConfig(arbitrage_prob=2)


class TestSplit:
    def test_reference_sizes(self):
        days = list(range(362))
        train, test = split(days, 252 / 362, 0)
        assert len(train) == 252 and len(test) == 110
        assert set(train) | set(test) == set(days) and not set(train) & set(test)

    def test_seeded(self):
        assert split(range(20), 0.7, 3) == split(range(20), 0.7, 3)

    def test_minimum_one_each(self):
        assert [len(x) for x in split([1, 2], 0.999, 0)] == [1, 1]

    def test_errors(self):
        with pytest.raises(ValueError):
            split([], 0.5, 0)
        with pytest.raises(ValueError):
            split([1, 2], 1.0, 0)
