import numpy as np
import pytest

from gridcert.caseio import three_bus
from gridcert.continuation import (
    BaseCaseUnsolvable,
    default_monitored_bus,
    scale_controlled_voltages,
    trace_pv_curve,
)
from gridcert.netmodel import alpha_ratios, scale_injections
from gridcert.powerflow import mismatch
from gridcert.sdpcert import certify


@pytest.fixture(scope="module")
def trace14(ieee14):
    return trace_pv_curve(ieee14)


def test_nose_ieee14(trace14):
    assert trace14.nose_multiplier == pytest.approx(4.0595, abs=0.005)
    assert not trace14.step_underflow


def test_trace_has_both_branches(trace14):
    branches = [p.branch for p in trace14.points]
    assert branches[0] == "upper" and branches[-1] == "lower"
    # once on the lower branch the trace never returns to the upper one
    first_lower = branches.index("lower")
    assert set(branches[first_lower:]) == {"lower"}
    # the lower branch is followed until the multiplier drops below 10% of the nose
    assert trace14.points[-1].multiplier < 0.1 * trace14.nose_multiplier <= trace14.points[-2].multiplier


def test_every_point_satisfies_power_flow(ieee14, trace14):
    for p in trace14.points:
        r = mismatch(scale_injections(ieee14, p.multiplier), p.state) if p.multiplier > 0 else None
        if r is not None:
            assert np.max(np.abs(r)) <= 1e-6


def test_upper_branch_voltage_falls(ieee14, trace14):
    v = trace14.monitored_voltages(ieee14)
    upper = [x for x, p in zip(v, trace14.points) if p.branch == "upper"]
    assert upper[-1] < upper[0]


def test_nose_stable_under_smaller_step(ieee14, trace14):
    half = trace_pv_curve(ieee14, step=0.05)
    assert abs(half.nose_multiplier - trace14.nose_multiplier) <= 2 * 1e-4


def test_nose_below_injection_margin(ieee14, trace14):
    assert trace14.nose_multiplier <= certify(ieee14).eta + 1e-6


def test_reduced_voltages_move_nose_to_one(ieee14):
    low = scale_controlled_voltages(ieee14, 1 / 2.0148)
    assert trace_pv_curve(low).nose_multiplier == pytest.approx(1.0, abs=0.01)


def test_three_bus_trace():
    m = three_bus()
    t = trace_pv_curve(m, monitored_bus=3)
    assert t.nose_multiplier > 1.0
    assert t.nose_multiplier <= certify(m).eta + 1e-6


def test_scale_identity(ieee14):
    assert scale_controlled_voltages(ieee14, 1.0) == ieee14


def test_scale_keeps_ratios(ieee14):
    a, b = alpha_ratios(ieee14), alpha_ratios(scale_controlled_voltages(ieee14, 2.0))
    assert a.keys() == b.keys()
    for k in a:
        assert b[k] == pytest.approx(a[k], rel=1e-15)


def test_scale_to_lower_bound(ieee14):
    assert scale_controlled_voltages(ieee14, 1 / 2.0148).v0 == pytest.approx(0.5261, abs=5e-5)


def test_scale_rejects_nonpositive(ieee14):
    with pytest.raises(ValueError):
        scale_controlled_voltages(ieee14, -1.0)


def test_default_monitors(ieee14, ieee118):
    assert default_monitored_bus(ieee14) == 5
    assert default_monitored_bus(ieee118) == 44


def test_unsolvable_start(ieee14):
    with pytest.raises(BaseCaseUnsolvable):
        trace_pv_curve(ieee14, start_multiplier=8.0)


def test_unknown_monitor(ieee14):
    with pytest.raises(KeyError):
        trace_pv_curve(ieee14, monitored_bus=999)


@pytest.mark.slow
def test_nose_ieee118(ieee118):
    t = trace_pv_curve(ieee118)
    assert t.nose_multiplier == pytest.approx(3.185, abs=0.005)
    assert t.monitored_bus == 44
