"""Trace analytics, the drift constant, the power-regime bound, and fitting.

Where a closed form exists (arithmetic penalty sequences, the drift
constant, noiseless fit round trips) the expected numbers are written out
by hand; the rest is structural.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from aoisched.delays import Deterministic, UniformInt
from aoisched.engine import run
from aoisched.lowerbound import solve_p4
from aoisched.metrics import (
    FitResult,
    RegimeMismatch,
    check_power_regime,
    drift_constant,
    fit_composite,
    fmt_value,
    prop1_bound_check,
    summarize,
    summary_rows,
    sweep_row,
    write_csv,
    SUMMARY_HEADER,
)
from aoisched.penalty import (
    CompositePenalty,
    LinearPenalty,
    PowerPenalty,
    SquarePenalty,
)
from aoisched.policies import MaxWeightPolicy, NullPolicy

from conftest import make_device, make_system, two_type_devices

FITTED_PAIRS = [(0.02149158, 0.45788114), (0.14155363, 0.45766638)]


# ---------------------------------------------------------------------------
# summarize


def test_never_scheduled_device_averages_the_arithmetic_sequence():
    cfg = make_system([make_device(penalty=LinearPenalty(1.0))], horizon=10_000, seed=1)
    trace = run(cfg, NullPolicy(), engine="python")
    m0 = summarize(trace, cfg, warmup=0.0)
    assert m0.total_penalty == pytest.approx((1 + 10_000) / 2.0)
    m1 = summarize(trace, cfg, warmup=0.1)
    assert m1.warmup_slots == 1000
    assert m1.slots_counted == 9000
    assert m1.total_penalty == pytest.approx((1001 + 10_000) / 2.0)


def test_warmup_rounds_down_to_window_boundary():
    cfg = make_system([make_device()], horizon=2500, seed=1)
    trace = run(cfg, NullPolicy(), engine="python")
    m = summarize(trace, cfg, warmup=0.3)  # 750 slots, below one 1000-slot window
    assert m.warmup_slots == 0
    assert m.slots_counted == 2500


def test_warmup_fraction_validated():
    cfg = make_system([make_device()], horizon=100, seed=1)
    trace = run(cfg, NullPolicy(), engine="python")
    with pytest.raises(ValueError):
        summarize(trace, cfg, warmup=0.95)
    with pytest.raises(ValueError):
        summarize(trace, cfg, warmup=-0.1)


def test_totals_and_shapes_are_consistent():
    cfg = make_system(two_type_devices(2), channels=1, horizon=20_000, seed=12)
    trace = run(cfg, MaxWeightPolicy())
    m = summarize(trace, cfg, warmup=0.1)
    assert m.total_penalty == pytest.approx(m.per_device_penalty.sum(), rel=1e-12)
    assert np.all(m.per_device_energy >= 0.0)
    assert m.energy_series.shape == (20, 4)
    assert m.window_ends[-1] == 20_000
    assert np.all(m.rounds_local + m.rounds_offload >= 1)
    assert m.peak_histogram.sum() == m.rounds_local.sum() + m.rounds_offload.sum()
    assert m.alpha is not None
    assert m.win_len == 1000


def test_alpha_estimate_omitted_when_rounds_scarce():
    cfg = make_system([make_device()], horizon=3000, seed=2)
    trace = run(cfg, NullPolicy(), engine="python")
    m = summarize(trace, cfg, warmup=0.0)
    assert m.alpha is None


# ---------------------------------------------------------------------------
# drift constant


def test_drift_constant_thirty_device_reference():
    devs = [make_device(e_local=10.0, e_tx=1.0, e_budget=0.4) for _ in range(30)]
    cfg = make_system(devs, channels=3, V=1.0, horizon=10, seed=1)
    assert drift_constant(cfg) == pytest.approx(1382.4, rel=1e-12)


def test_drift_constant_scales_with_v():
    devs = [make_device(e_local=10.0, e_tx=1.0, e_budget=0.4) for _ in range(30)]
    cfg = make_system(devs, channels=3, V=10.0, horizon=10, seed=1)
    assert drift_constant(cfg) == pytest.approx(13824.0, rel=1e-12)


def test_drift_constant_uses_worst_mode_energy():
    dev = make_device(e_local=2.0, e_tx=5.0, e_budget=1.0)
    cfg = make_system([dev], V=2.0, horizon=10, seed=1)
    assert drift_constant(cfg) == pytest.approx(0.5 * 2.0 * (5.0 - 1.0) ** 2, rel=1e-12)


# ---------------------------------------------------------------------------
# power-regime bound


def unit_power_devices(n=4, p=1.0):
    return [
        make_device(
            penalty=PowerPenalty(alpha=1.0, p=p),
            local=Deterministic(1),
            tx=Deterministic(1),
            edge=Deterministic(0),
            e_local=1.0,
            e_tx=1.0,
            e_budget=0.25,
        )
        for _ in range(n)
    ]


def test_regime_accepts_pure_powers():
    cfg = make_system(unit_power_devices(), channels=2, horizon=10, seed=1)
    assert check_power_regime(cfg) == 1.0
    square = [
        make_device(
            penalty=SquarePenalty(0.3),
            local=Deterministic(1),
            tx=Deterministic(1),
            edge=Deterministic(0),
        )
    ]
    assert check_power_regime(make_system(square, horizon=10, seed=1)) == 2.0


@pytest.mark.parametrize(
    "dev",
    [
        make_device(penalty=CompositePenalty(0.02, 0.4), local=Deterministic(1), tx=Deterministic(1), edge=Deterministic(0)),
        make_device(penalty=LinearPenalty(1.0), local=UniformInt(1, 2), tx=Deterministic(1), edge=Deterministic(0)),
        make_device(penalty=LinearPenalty(1.0), local=Deterministic(1), tx=Deterministic(2), edge=Deterministic(0)),
        make_device(penalty=LinearPenalty(1.0), local=Deterministic(1), tx=Deterministic(1), edge=Deterministic(1)),
    ],
    ids=["composite", "random-local", "slow-tx", "slow-edge"],
)
def test_regime_rejects_other_shapes(dev):
    cfg = make_system([dev], horizon=10, seed=1)
    with pytest.raises(RegimeMismatch):
        check_power_regime(cfg)


def test_regime_rejects_mixed_exponents():
    devs = unit_power_devices(2, p=1.0) + unit_power_devices(2, p=2.0)
    with pytest.raises(RegimeMismatch):
        check_power_regime(make_system(devs, horizon=10, seed=1))


def test_prop1_report_on_a_real_run():
    cfg = make_system(unit_power_devices(6), channels=2, V=1.0, horizon=50_000, seed=21)
    trace = run(cfg, MaxWeightPolicy())
    m = summarize(trace, cfg, warmup=0.1)
    lb = solve_p4(cfg, tol=1e-6)
    report = prop1_bound_check(m, lb, cfg)
    assert report.p == 1.0
    assert report.satisfied
    assert report.margin > 0.0
    assert report.ratio == pytest.approx(m.total_penalty / lb.objective)
    assert report.ratio_bound == pytest.approx(2.0 + 2.0 * math.sqrt(report.B / lb.objective + 1.0))
    # hypothetical exact-optimal run still satisfies the bound comfortably
    at_opt = dataclasses.replace(m, total_penalty=lb.objective)
    assert prop1_bound_check(at_opt, lb, cfg).satisfied
    # and a wildly inflated penalty must break it
    blown = dataclasses.replace(m, total_penalty=100.0 * m.total_penalty)
    assert not prop1_bound_check(blown, lb, cfg).satisfied


def test_prop1_rejects_wrong_exponent_request():
    cfg = make_system(unit_power_devices(2), channels=1, horizon=2000, seed=3)
    trace = run(cfg, MaxWeightPolicy())
    m = summarize(trace, cfg, warmup=0.0, alpha_min_rounds=1)
    lb = solve_p4(cfg, tol=1e-6)
    with pytest.raises(RegimeMismatch):
        prop1_bound_check(m, lb, cfg, p=2.0)


# ---------------------------------------------------------------------------
# composite curve fitting


def profile(a: float, b: float, xs) -> list[tuple[float, float]]:
    return [(float(x), float((a * x + 1.0) ** (-b))) for x in xs]


@pytest.mark.parametrize("a, b", FITTED_PAIRS, ids=["shallow", "steep"])
def test_fit_round_trips_noiseless(a, b):
    res = fit_composite(profile(a, b, range(500)))
    assert res.converged
    assert not res.at_boundary
    assert abs(res.a - a) <= 1e-6
    assert abs(res.b - b) <= 1e-6
    assert res.rmse <= 1e-8


@pytest.mark.parametrize("a, b", FITTED_PAIRS, ids=["shallow", "steep"])
def test_fit_recovers_under_one_percent_noise(a, b):
    rng = np.random.default_rng(7)
    xs = np.arange(500)
    ys = (a * xs + 1.0) ** (-b) * (1.0 + 0.01 * rng.standard_normal(500))
    ys = np.clip(ys, 0.0, 1.0)
    res = fit_composite(list(zip(xs.tolist(), ys.tolist())))
    assert res.converged
    assert abs(res.a - a) / a <= 0.05
    assert abs(res.b - b) / b <= 0.05


def test_fit_constant_profile_hits_zero_boundary():
    # g identically 1 carries no curvature information: the fit collapses
    # onto the parameter boundary (a*b = 0) and says so.
    res = fit_composite([(x, 1.0) for x in range(10)])
    assert res.at_boundary
    assert min(res.a, res.b) <= 1e-10
    assert res.rmse <= 1e-8


def test_fit_minimal_point_count():
    res = fit_composite(profile(0.05, 0.5, range(5)))
    assert res.converged
    with pytest.raises(ValueError):
        fit_composite(profile(0.05, 0.5, range(4)))


def test_fit_rejects_bad_probabilities():
    pts = profile(0.05, 0.5, range(10))
    pts[3] = (3.0, 1.5)
    with pytest.raises(ValueError):
        fit_composite(pts)


# ---------------------------------------------------------------------------
# CSV plumbing


def test_fmt_value_round_trips_floats():
    vals = [0.1, 1.0 / 3.0, 875.0382636544065, 1e-17]
    for v in vals:
        assert float(fmt_value(v)) == v
    assert fmt_value(True) == "1"
    assert fmt_value(False) == "0"
    assert fmt_value(np.int64(7)) == "7"
    assert fmt_value("label") == "label"


def test_write_csv_layout(tmp_path):
    path = tmp_path / "out.csv"
    write_csv(path, ["a", "b"], [[1, 2.5], ["x", True]])
    text = path.read_text(encoding="utf-8")
    assert text == "a,b\n1,2.5\nx,1\n"


def test_summary_rows_cover_devices_plus_total():
    cfg = make_system(two_type_devices(1), channels=1, horizon=20_000, seed=5)
    trace = run(cfg, MaxWeightPolicy())
    m = summarize(trace, cfg, warmup=0.1)
    meta = {"scenario": "s", "label": "base", "policy": "maxweight", "replication": 0, "seed": 5}
    rows = summary_rows(meta, m)
    assert len(rows) == 3
    assert rows[-1][5] == "ALL"
    assert len(rows[0]) == len(SUMMARY_HEADER)
    assert rows[-1][6] == pytest.approx(m.total_penalty)


def test_sweep_row_aggregates_replications():
    row = sweep_row("s", "x10", "maxweight", [10.0, 12.0], [0.4, 0.4], [0.1, float("nan")], None)
    assert row[3] == 2
    assert row[4] == pytest.approx(11.0)
    assert row[5] == pytest.approx(np.std([10.0, 12.0], ddof=1) / math.sqrt(2))
    assert row[7] == pytest.approx(0.1)
    assert row[8] == ""
