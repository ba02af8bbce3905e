import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cidlab.storage import (ImbalanceError, ImbalancePriceModel, MarketPosition, ScheduleError, StorageParams,
                            StorageSchedule, default_adjustments, imbalance_penalty, initial_state, soc_profile,
                            update_after_clear, validate)

PRM = StorageParams(0, 200, 0, 200, 0, 200, 1.0, 100, 100)


def idle_state(n=4, prm=PRM):
    return initial_state(prm, n)


def test_params_validation():
    with pytest.raises(ValueError):
        StorageParams(eta=0.0)
    with pytest.raises(ValueError):
        StorageParams(soc_init=300)
    with pytest.raises(ValueError):
        StorageParams(c_min=10, c_max=5)
    assert StorageParams.case_study().soc_max == 200


class TestUpdateAfterClear:
    def test_buy_fill_charges(self):
        pos, sch = idle_state()
        v = np.array([-10.0, 0, 0, 0])
        pos2, sch2 = update_after_clear(pos, sch, v, np.zeros(4), np.array([10.0, 0, 0, 0]), PRM)
        assert pos2.p_mar[0] == -10 and sch2.c[0] == 10 and pos2.imbalance[0] == 0

    def test_identity(self):
        pos, sch = idle_state()
        z = np.zeros(4)
        pos2, sch2 = update_after_clear(pos, sch, z, z, z, PRM)
        assert np.array_equal(pos2.p_mar, pos.p_mar) and np.array_equal(sch2.soc, sch.soc)

    def test_sell_fill_discharges(self):
        pos, sch = idle_state()
        pos2, sch2 = update_after_clear(pos, sch, np.array([5.0, 0, 0, 0]), np.array([5.0, 0, 0, 0]),
                                        np.zeros(4), PRM)
        assert pos2.imbalance[0] == 0 and pos2.p_mar[0] == 5

    def test_bound_violation_lists_slots(self):
        pos, sch = idle_state()
        with pytest.raises(ScheduleError) as err:
            update_after_clear(pos, sch, np.zeros(4), np.zeros(4), np.array([0, 0, 250.0, 0]), PRM)
        assert list(err.value.slots) == [2]

    def test_frozen_slot_rejected(self):
        pos, sch = idle_state()
        with pytest.raises(ScheduleError):
            update_after_clear(pos, sch, np.array([1.0, 0, 0, 0]), np.array([1.0, 0, 0, 0]), np.zeros(4), PRM,
                               adjustable=np.array([False, True, True, True]))


class TestDefaultAdjustments:
    def test_charge_for_bought_energy(self):
        pos, sch = idle_state()
        filled = MarketPosition(np.array([-10.0, 0, 0, 0]), np.array([10.0, 0, 0, 0]))
        dg, dc = default_adjustments(filled, sch, PRM)
        assert dc[0] == 10 and not dg.any()

    def test_zero_fill(self):
        pos, sch = idle_state()
        dg, dc = default_adjustments(pos, sch, PRM)
        assert not dg.any() and not dc.any()

    def test_discharge_for_sold_energy(self):
        pos, sch = idle_state()
        filled = MarketPosition(np.array([10.0, 0, 0, 0]), np.zeros(4))
        dg, dc = default_adjustments(filled, sch, PRM)
        assert dg[0] == 10

    def test_reports_residual(self):
        pos, sch = idle_state()
        filled = MarketPosition(np.array([300.0, 0, 0, 0]), np.zeros(4))
        with pytest.raises(ImbalanceError) as err:
            default_adjustments(filled, sch, PRM)
        assert err.value.residual == pytest.approx(100)


class TestValidate:
    def test_feasible(self):
        _, sch = idle_state()
        assert validate(sch, PRM) == []

    def test_soc_above_max(self):
        prm = StorageParams(0, 200, 0, 200, 0, 200, 1.0, 0, 0)
        g = np.zeros(4)
        c = np.array([0, 0, 0, 0.0])
        soc = np.array([0, 0, 210.0, 0, 0])
        issues = validate(StorageSchedule(g, c, soc), prm)
        assert any("soc[2]" in s and "outside" in s for s in issues)

    def test_charge_above_max(self):
        prm = StorageParams(0, 200, 0, 200, 0, 200, 1.0, 0, 0)
        c = np.array([250.0, 0, 0, 0])
        issues = validate(StorageSchedule(np.zeros(4), c, soc_profile(np.zeros(4), c, 0, 1, 0.25)), prm)
        assert any("above c_max" in s for s in issues)

    def test_simultaneous_modes(self):
        g = np.array([1.0, 0])
        c = np.array([1.0, 0])
        prm = StorageParams(0, 10, 0, 10, 0, 10, 1.0, 5, 5)
        issues = validate(StorageSchedule(g, c, soc_profile(g, c, 5, 1, 0.25)), prm)
        assert any("simultaneous" in s for s in issues)


@given(st.lists(st.tuples(st.floats(0, 50), st.floats(0, 50)), min_size=1, max_size=12),
       st.sampled_from([1.0, 0.95, 0.8]))
def test_soc_telescoping(rows, eta):
    g = np.array([r[0] for r in rows])
    c = np.array([r[1] for r in rows])
    soc = soc_profile(g, c, 3.0, eta, 0.25)
    assert soc[-1] - soc[0] == pytest.approx(0.25 * np.sum(eta * c - g / eta), abs=1e-9)


@given(st.lists(st.lists(st.floats(-20, 20), min_size=3, max_size=3), min_size=1, max_size=8))
def test_imbalance_identity(fills):
    """Incremental imbalance equals residual production minus market position."""
    prm = StorageParams(0, 1e6, 0, 1e3, 0, 1e3, 1.0, 5e5, 5e5)
    pos, sch = initial_state(prm, 3)
    rng = np.random.default_rng(len(fills))
    for v in fills:
        v = np.array(v)
        dg = np.clip(rng.uniform(-5, 5, 3), -sch.g, None)
        dc = np.clip(rng.uniform(-5, 5, 3), -sch.c, None)
        pos, sch = update_after_clear(pos, sch, v, dg, dc, prm)
    assert np.allclose(pos.imbalance, (sch.g - sch.c) - pos.p_mar, atol=1e-9)


def test_imbalance_penalty_and_model():
    pos = MarketPosition(np.zeros(3), np.array([1.0, -2.0, 0.5]))
    assert imbalance_penalty(pos, [10, 20, 30], [True, True, False]) == -30
    draws = ImbalancePriceModel(50, 25, 0, 100).sample(np.random.default_rng(0), 2000)
    assert draws.min() >= 0 and draws.max() <= 100
    assert abs(draws.mean() - 50) < 3
