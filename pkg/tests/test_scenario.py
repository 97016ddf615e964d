"""Scenario files: validation messages, overrides, sweeps, and builders.

A scenario mapping is easiest to exercise as a plain dict; the shipped
TOML files are loaded as well to keep them honest, and one TOML/JSON pair
is checked for equivalence.
"""

from __future__ import annotations

import copy
import json

import pytest

from aoisched.delays import Deterministic, UniformInt
from aoisched.engine import SystemModel
from aoisched.penalty import LinearPenalty
from aoisched.policies import MaxReductionPolicy, MaxWeightPolicy, RandomizedPolicy
from aoisched.scenario import (
    Scenario,
    ScenarioError,
    apply_overrides,
    build_system,
    expand_devices,
    load_scenario,
    make_policy,
    parse_scenario,
)

SHIPPED = [
    "two_class_linear.toml",
    "two_class_square.toml",
    "two_class_composite.toml",
    "fig3_linear.toml",
    "v_distribution_sweep.toml",
    "unit_delay_power.toml",
    "tracking_composite.toml",
]


def minimal_raw() -> dict:
    return {
        "name": "toy",
        "seed": 11,
        "horizon": 1000,
        "channels": 1,
        "V": 1.0,
        "devices": [
            {
                "count": 2,
                "e_local": 10.0,
                "e_tx": 1.0,
                "e_budget": 0.4,
                "penalty": {"kind": "linear", "c": 1.0},
                "local_delay": {"kind": "uniform", "a": 1, "b": 15},
                "tx_delay": {"kind": "uniform", "a": 1, "b": 3},
                "edge_delay": {"kind": "uniform", "a": 1, "b": 2},
            },
            {
                "count": 1,
                "e_local": 10.0,
                "e_tx": 1.0,
                "e_budget": 0.4,
                "penalty": {"kind": "square", "c": 0.1},
                "local_delay": {"kind": "deterministic", "d": 3},
                "tx_delay": {"kind": "deterministic", "d": 1},
                "edge_delay": {"kind": "deterministic", "d": 0},
            },
        ],
    }


# ---------------------------------------------------------------------------
# shipped files


@pytest.mark.parametrize("fname", SHIPPED)
def test_shipped_scenarios_load_and_build(fname, scenario_dir):
    scn = load_scenario(scenario_dir / fname)
    assert isinstance(scn, Scenario)
    for point in scn.points():
        cfg = build_system(scn.point_raw(point))
        assert cfg.horizon >= 1
        assert len(cfg.devices) >= 1


def test_shipped_population_shapes(scenario_dir):
    linear = load_scenario(scenario_dir / "two_class_linear.toml")
    cfg = build_system(linear.raw)
    assert len(cfg.devices) == 30
    assert cfg.channels == 3
    assert not linear.has_sweep
    assert [p.label for p in linear.points()] == ["base"]

    fig3 = load_scenario(scenario_dir / "fig3_linear.toml")
    assert fig3.has_sweep
    labels = [p.label for p in fig3.points()]
    assert labels == ["x10", "x12", "x14", "x16", "x18", "x20"]

    vsweep = load_scenario(scenario_dir / "v_distribution_sweep.toml")
    assert len(vsweep.points()) == 9
    assert vsweep.replications == 5


def test_fig3_sweep_points_change_one_group(scenario_dir):
    fig3 = load_scenario(scenario_dir / "fig3_linear.toml")
    points = fig3.points()
    base_cfg = build_system(fig3.point_raw(points[0]))
    for point, upper in zip(points, (10, 12, 14, 16, 18, 20)):
        cfg = build_system(fig3.point_raw(point))
        assert cfg.devices[15].local_delay == UniformInt(1, upper)
        # the first group is untouched by the sweep
        assert cfg.devices[0] == base_cfg.devices[0]


# ---------------------------------------------------------------------------
# validation messages


def test_unknown_top_level_field():
    raw = minimal_raw()
    raw["horizons"] = 5
    with pytest.raises(ScenarioError, match="horizons"):
        parse_scenario(raw)


def test_missing_required_field():
    raw = minimal_raw()
    del raw["seed"]
    with pytest.raises(ScenarioError, match="seed"):
        parse_scenario(raw)


def test_malformed_penalty_names_the_field():
    raw = minimal_raw()
    del raw["devices"][0]["penalty"]["c"]
    with pytest.raises(ScenarioError, match=r"devices\[0\].*penalty"):
        parse_scenario(raw)


def test_unknown_group_field():
    raw = minimal_raw()
    raw["devices"][1]["e_idle"] = 0.1
    with pytest.raises(ScenarioError, match="e_idle"):
        parse_scenario(raw)


@pytest.mark.parametrize(
    "key, value, match",
    [
        ("V", 0.0, "V"),
        ("V", -1.0, "V"),
        ("warmup", 0.95, "warmup"),
        ("channels", 0, "channels"),
        ("horizon", 0, "horizon"),
        ("seed", -1, "seed"),
        ("policy", "greedy", "policy"),
        ("replications", 0, "replications"),
    ],
)
def test_scalar_field_validation(key, value, match):
    raw = minimal_raw()
    raw[key] = value
    with pytest.raises(ScenarioError, match=match):
        parse_scenario(raw)


def test_boolean_is_not_a_number():
    raw = minimal_raw()
    raw["seed"] = True
    with pytest.raises(ScenarioError, match="seed"):
        parse_scenario(raw)


def test_duplicate_sweep_labels_rejected():
    raw = minimal_raw()
    raw["sweep"] = [{"label": "a"}, {"label": "a"}]
    with pytest.raises(ScenarioError, match="duplicate label"):
        parse_scenario(raw)


def test_sweep_points_validated_at_load_time():
    raw = minimal_raw()
    raw["sweep"] = [{"label": "bad", "set": {"devices.0.local_delay.b": 0}}]
    with pytest.raises(ScenarioError, match="bad"):
        parse_scenario(raw)


# ---------------------------------------------------------------------------
# overrides


def test_apply_overrides_reaches_nested_fields():
    raw = minimal_raw()
    out = apply_overrides(raw, {"devices.0.local_delay.b": 20, "V": 2.5})
    assert out["devices"][0]["local_delay"]["b"] == 20
    assert out["V"] == 2.5
    # the original mapping is untouched
    assert raw["devices"][0]["local_delay"]["b"] == 15
    assert raw["V"] == 1.0


def test_apply_overrides_can_replace_subtables():
    raw = minimal_raw()
    out = apply_overrides(
        raw, {"devices.1.local_delay": {"kind": "geometric", "mean": 8.0, "min": 1}}
    )
    cfg = build_system(out)
    assert cfg.devices[2].local_delay.mean() == pytest.approx(8.0)


def test_apply_overrides_unknown_key():
    raw = minimal_raw()
    with pytest.raises(ScenarioError, match="no such field"):
        apply_overrides(raw, {"devices.0.local_delay.upper": 20})


def test_apply_overrides_bad_list_index():
    raw = minimal_raw()
    with pytest.raises(ScenarioError, match="out of range"):
        apply_overrides(raw, {"devices.7.e_local": 1.0})
    with pytest.raises(ScenarioError, match="list index expected"):
        apply_overrides(raw, {"devices.first.e_local": 1.0})


def test_apply_overrides_cannot_descend_into_scalar():
    raw = minimal_raw()
    with pytest.raises(ScenarioError, match="cannot descend"):
        apply_overrides(raw, {"V.nested": 1.0})


# ---------------------------------------------------------------------------
# expansion and builders


def test_expand_devices_honors_counts_and_order():
    devices = expand_devices(minimal_raw())
    assert len(devices) == 3
    assert devices[0].penalty == LinearPenalty(1.0)
    assert devices[0] == devices[1]
    assert devices[2].local_delay == Deterministic(3)


def test_build_system_kwarg_overrides():
    raw = minimal_raw()
    cfg = build_system(raw, seed=99, horizon=77, V=3.5)
    assert cfg.seed == 99
    assert cfg.horizon == 77
    assert cfg.V == 3.5
    base = build_system(raw)
    assert base.seed == 11
    assert base.horizon == 1000
    assert base.V == 1.0


def test_json_and_toml_scenarios_are_equivalent(tmp_path, scenario_dir):
    toml_scn = load_scenario(scenario_dir / "two_class_linear.toml")
    json_path = tmp_path / "two_class_linear.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(toml_scn.raw, fh)
    json_scn = load_scenario(json_path)
    a = build_system(toml_scn.raw)
    b = build_system(json_scn.raw)
    assert a.devices == b.devices
    assert (a.channels, a.V, a.horizon, a.seed, a.h0) == (
        b.channels,
        b.V,
        b.horizon,
        b.seed,
        b.h0,
    )


def test_point_replications_prefer_sweep_value():
    raw = minimal_raw()
    raw["replications"] = 3
    raw["sweep"] = [
        {"label": "default"},
        {"label": "five", "replications": 5},
    ]
    scn = parse_scenario(raw)
    default, five = scn.points()
    assert scn.point_replications(default) == 3
    assert scn.point_replications(five) == 5


# ---------------------------------------------------------------------------
# policy construction


def test_make_policy_from_field_and_override():
    raw = minimal_raw()
    assert isinstance(make_policy(raw), MaxWeightPolicy)
    raw["policy"] = "maxreduction"
    assert isinstance(make_policy(raw), MaxReductionPolicy)
    assert isinstance(make_policy(raw, policy_name="maxweight"), MaxWeightPolicy)


def test_make_policy_randomized_broadcasts():
    raw = minimal_raw()
    raw["policy"] = "randomized"
    raw["randomized"] = {"p_local": 0.1, "p_offload": [0.2, 0.3]}
    pol = make_policy(raw)
    assert isinstance(pol, RandomizedPolicy)
    # scalar -> every device; per-group list -> expanded by count (2 + 1)
    assert tuple(pol.p_local) == (0.1, 0.1, 0.1)
    assert tuple(pol.p_offload) == (0.2, 0.2, 0.3)
    raw["randomized"] = {"p_local": [0.0, 0.1, 0.2], "p_offload": 0.0}
    pol = make_policy(raw)
    assert tuple(pol.p_local) == (0.0, 0.1, 0.2)


def test_make_policy_randomized_needs_probabilities():
    raw = minimal_raw()
    raw["policy"] = "randomized"
    with pytest.raises(ScenarioError, match="randomized"):
        make_policy(raw)


def test_make_policy_rejects_bad_lengths():
    raw = minimal_raw()
    raw["policy"] = "randomized"
    raw["randomized"] = {"p_local": [0.1, 0.2, 0.3, 0.4], "p_offload": 0.0}
    with pytest.raises(ScenarioError, match="p_local"):
        make_policy(raw)


def test_make_policy_rejects_infeasible_probabilities():
    raw = minimal_raw()
    raw["policy"] = "randomized"
    raw["randomized"] = {"p_local": 0.7, "p_offload": 0.6}
    with pytest.raises(ScenarioError, match="randomized"):
        make_policy(raw)
