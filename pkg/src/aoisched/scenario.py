"""Scenario files: declarative experiment descriptions.

A scenario file (TOML or JSON) describes one simulated system: the device
population (grouped, with a ``count`` per group), the channel count, the
trade-off weight ``V``, the horizon, the master seed, the policy to run,
and an optional list of sweep points.  Each sweep point carries a label
plus a set of dotted-path overrides that are applied to the raw scenario
mapping before the system is built, so a single file can describe a whole
curve (for example, growing one group's local-delay upper bound, or
switching delay families at a matched mean).

Everything here is plain data manipulation: parsing, validation with
field-level error messages, override application, and construction of
:class:`~aoisched.engine.SystemConfig` / policy objects.  No simulation
happens in this module.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .delays import delay_from_config
from .engine import DeviceConfig, SystemConfig
from .penalty import penalty_from_config
from .policies import (
    MaxReductionPolicy,
    MaxWeightPolicy,
    RandomizedPolicy,
)

POLICY_NAMES = ("maxweight", "maxreduction", "randomized")

_TOP_LEVEL_KEYS = {
    "name",
    "seed",
    "horizon",
    "channels",
    "V",
    "h0",
    "policy",
    "warmup",
    "replications",
    "randomized",
    "devices",
    "sweep",
}

_GROUP_KEYS = {
    "count",
    "e_local",
    "e_tx",
    "e_budget",
    "penalty",
    "local_delay",
    "tx_delay",
    "edge_delay",
}

_SWEEP_KEYS = {"label", "set", "replications"}

_RANDOMIZED_KEYS = {"p_local", "p_offload"}


class ScenarioError(ValueError):
    """A scenario file failed validation; the message names the field."""


def _fail(where: str, msg: str) -> None:
    raise ScenarioError(f"{where}: {msg}")


def _as_int(value: Any, where: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(where, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        _fail(where, f"must be >= {minimum}, got {value}")
    return int(value)


def _as_number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(where, f"expected a number, got {value!r}")
    return float(value)


@dataclass(frozen=True)
class SweepPoint:
    """One labeled point of a sweep: overrides applied on top of the base."""

    label: str
    overrides: Mapping[str, Any] = field(default_factory=dict)
    replications: int | None = None


@dataclass(frozen=True)
class Scenario:
    """A validated scenario: base mapping plus sweep metadata.

    ``raw`` is the base scenario mapping with defaults filled in; sweep
    points are applied to (deep copies of) it via :func:`apply_overrides`.
    """

    name: str
    raw: Mapping[str, Any]
    policy_name: str
    replications: int
    warmup: float
    sweep: tuple[SweepPoint, ...] = ()
    source: str = "<dict>"

    @property
    def has_sweep(self) -> bool:
        return len(self.sweep) > 0

    def points(self) -> tuple[SweepPoint, ...]:
        """Sweep points, or a single unlabeled base point."""
        if self.sweep:
            return self.sweep
        return (SweepPoint(label="base"),)

    def point_raw(self, point: SweepPoint) -> dict[str, Any]:
        """The raw mapping with the point's overrides applied."""
        return apply_overrides(self.raw, point.overrides)

    def point_replications(self, point: SweepPoint) -> int:
        return point.replications if point.replications is not None else self.replications


def apply_overrides(raw: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Apply dotted-path overrides to a deep copy of ``raw``.

    Paths address nested mappings by key and lists by integer index, e.g.
    ``"devices.1.local_delay.b"``.  Every path must resolve to an existing
    leaf: overrides adjust values, they never invent new fields.  Keys are
    applied in sorted order so the result does not depend on mapping order.
    """
    out = copy.deepcopy(dict(raw))
    for path in sorted(overrides):
        value = overrides[path]
        parts = path.split(".")
        node: Any = out
        for i, part in enumerate(parts):
            trail = ".".join(parts[: i + 1])
            last = i == len(parts) - 1
            if isinstance(node, list):
                try:
                    idx = int(part)
                except ValueError:
                    _fail(f"set.{path}", f"{trail!r}: list index expected, got {part!r}")
                if not 0 <= idx < len(node):
                    _fail(f"set.{path}", f"{trail!r}: index {idx} out of range (len {len(node)})")
                if last:
                    node[idx] = value
                else:
                    node = node[idx]
            elif isinstance(node, dict):
                if part not in node:
                    _fail(f"set.{path}", f"{trail!r}: no such field")
                if last:
                    node[part] = value
                else:
                    node = node[part]
            else:
                _fail(f"set.{path}", f"{trail!r}: cannot descend into a scalar")
    return out


def _validate_group(group: Any, where: str) -> dict[str, Any]:
    if not isinstance(group, dict):
        _fail(where, "expected a table of device-group settings")
    unknown = set(group) - _GROUP_KEYS
    if unknown:
        _fail(where, f"unknown fields {sorted(unknown)} (expected {sorted(_GROUP_KEYS)})")
    missing = (_GROUP_KEYS - {"count"}) - set(group)
    if missing:
        _fail(where, f"missing fields {sorted(missing)}")
    out = dict(group)
    out["count"] = _as_int(group.get("count", 1), f"{where}.count", minimum=1)
    for key in ("e_local", "e_tx", "e_budget"):
        out[key] = _as_number(group[key], f"{where}.{key}")
    for key in ("penalty", "local_delay", "tx_delay", "edge_delay"):
        if not isinstance(group[key], dict):
            _fail(f"{where}.{key}", "expected a table with a 'kind' field")
    return out


def _check_group_builds(group: Mapping[str, Any], where: str) -> None:
    try:
        penalty_from_config(group["penalty"])
    except ValueError as exc:
        raise ScenarioError(f"{where}.penalty: {exc}") from exc
    for key in ("local_delay", "tx_delay", "edge_delay"):
        try:
            delay_from_config(group[key])
        except ValueError as exc:
            raise ScenarioError(f"{where}.{key}: {exc}") from exc


def parse_scenario(raw: Mapping[str, Any], *, name: str | None = None, source: str = "<dict>") -> Scenario:
    """Validate a scenario mapping and return a :class:`Scenario`.

    Raises :class:`ScenarioError` naming the offending field on any
    structural problem; delegated penalty/delay errors are wrapped with
    their field path.
    """
    if not isinstance(raw, dict):
        raise ScenarioError("scenario: top level must be a table/object")
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        _fail("scenario", f"unknown fields {sorted(unknown)}")
    for key in ("seed", "horizon", "channels", "V", "devices"):
        if key not in raw:
            _fail("scenario", f"missing required field {key!r}")

    base: dict[str, Any] = copy.deepcopy(dict(raw))
    base["seed"] = _as_int(raw["seed"], "seed", minimum=0)
    base["horizon"] = _as_int(raw["horizon"], "horizon", minimum=1)
    base["channels"] = _as_int(raw["channels"], "channels", minimum=1)
    base["V"] = _as_number(raw["V"], "V")
    if base["V"] <= 0:
        _fail("V", f"must be > 0, got {base['V']}")
    base["h0"] = _as_int(raw.get("h0", 1), "h0", minimum=1)
    base["warmup"] = _as_number(raw.get("warmup", 0.1), "warmup")
    if not 0.0 <= base["warmup"] <= 0.9:
        _fail("warmup", f"must lie in [0, 0.9], got {base['warmup']}")
    base["replications"] = _as_int(raw.get("replications", 1), "replications", minimum=1)

    policy_name = raw.get("policy", "maxweight")
    if policy_name not in POLICY_NAMES:
        _fail("policy", f"unknown policy {policy_name!r} (expected one of {list(POLICY_NAMES)})")
    base["policy"] = policy_name

    if "randomized" in raw:
        rnd = raw["randomized"]
        if not isinstance(rnd, dict):
            _fail("randomized", "expected a table with p_local/p_offload")
        unknown = set(rnd) - _RANDOMIZED_KEYS
        if unknown:
            _fail("randomized", f"unknown fields {sorted(unknown)}")
        for key in _RANDOMIZED_KEYS:
            if key not in rnd:
                _fail("randomized", f"missing field {key!r}")
            val = rnd[key]
            if isinstance(val, list):
                for j, item in enumerate(val):
                    _as_number(item, f"randomized.{key}[{j}]")
            else:
                _as_number(val, f"randomized.{key}")

    devices = raw["devices"]
    if not isinstance(devices, list) or not devices:
        _fail("devices", "expected a non-empty list of device groups")
    base["devices"] = [
        _validate_group(group, f"devices[{i}]") for i, group in enumerate(devices)
    ]
    for i, group in enumerate(base["devices"]):
        _check_group_builds(group, f"devices[{i}]")

    sweep_points: list[SweepPoint] = []
    if "sweep" in raw:
        sweep = raw["sweep"]
        if not isinstance(sweep, list) or not sweep:
            _fail("sweep", "expected a non-empty list of sweep points")
        labels: set[str] = set()
        for i, point in enumerate(sweep):
            where = f"sweep[{i}]"
            if not isinstance(point, dict):
                _fail(where, "expected a table with a 'label'")
            unknown = set(point) - _SWEEP_KEYS
            if unknown:
                _fail(where, f"unknown fields {sorted(unknown)}")
            label = point.get("label")
            if not isinstance(label, str) or not label:
                _fail(f"{where}.label", "expected a non-empty string")
            if label in labels:
                _fail(f"{where}.label", f"duplicate label {label!r}")
            labels.add(label)
            overrides = point.get("set", {})
            if not isinstance(overrides, dict):
                _fail(f"{where}.set", "expected a table of dotted-path overrides")
            reps = point.get("replications")
            if reps is not None:
                reps = _as_int(reps, f"{where}.replications", minimum=1)
            sweep_points.append(
                SweepPoint(label=label, overrides=dict(overrides), replications=reps)
            )
        base.pop("sweep", None)
        # Every point must still build; surface bad overrides at load time.
        for i, point in enumerate(sweep_points):
            try:
                merged = apply_overrides(base, point.overrides)
                build_system(merged)
            except ScenarioError as exc:
                raise ScenarioError(f"sweep[{i}] ({point.label}): {exc}") from exc
            except ValueError as exc:
                raise ScenarioError(f"sweep[{i}] ({point.label}): {exc}") from exc

    scenario_name = raw.get("name", name)
    if scenario_name is None:
        scenario_name = "scenario"
    if not isinstance(scenario_name, str) or not scenario_name:
        _fail("name", "expected a non-empty string")
    base["name"] = scenario_name

    return Scenario(
        name=scenario_name,
        raw=base,
        policy_name=policy_name,
        replications=base["replications"],
        warmup=base["warmup"],
        sweep=tuple(sweep_points),
        source=source,
    )


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario from a ``.toml`` or ``.json`` file."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            with path.open("rb") as fh:
                raw = tomllib.load(fh)
        elif suffix == ".json":
            with path.open("r", encoding="utf-8") as fh:
                raw = json.load(fh)
        else:
            raise ScenarioError(f"unsupported scenario format {suffix!r} (use .toml or .json)")
    except ScenarioError:
        raise
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"{path.name}: parse error: {exc}") from exc
    try:
        return parse_scenario(raw, name=path.stem, source=str(path))
    except ScenarioError as exc:
        raise ScenarioError(f"{path.name}: {exc}") from exc


def expand_devices(raw: Mapping[str, Any]) -> tuple[DeviceConfig, ...]:
    """Expand ``devices`` groups (with ``count``) into DeviceConfig tuples."""
    out: list[DeviceConfig] = []
    for i, group in enumerate(raw["devices"]):
        where = f"devices[{i}]"
        group = _validate_group(group, where)
        try:
            penalty = penalty_from_config(group["penalty"])
            local = delay_from_config(group["local_delay"])
            tx = delay_from_config(group["tx_delay"])
            edge = delay_from_config(group["edge_delay"])
            dev = DeviceConfig(
                penalty=penalty,
                local_delay=local,
                tx_delay=tx,
                edge_delay=edge,
                e_local=float(group["e_local"]),
                e_tx=float(group["e_tx"]),
                e_budget=float(group["e_budget"]),
            )
        except ValueError as exc:
            raise ScenarioError(f"{where}: {exc}") from exc
        out.extend([dev] * group["count"])
    return tuple(out)


def build_system(
    raw: Mapping[str, Any],
    *,
    seed: int | None = None,
    horizon: int | None = None,
    V: float | None = None,
) -> SystemConfig:
    """Build a :class:`SystemConfig` from a raw scenario mapping.

    Keyword overrides take precedence over the mapping (command-line flags
    are applied here; sweep overrides are applied to the mapping first).
    """
    devices = expand_devices(raw)
    try:
        return SystemConfig(
            devices=devices,
            channels=int(raw["channels"]),
            V=float(V if V is not None else raw["V"]),
            horizon=int(horizon if horizon is not None else raw["horizon"]),
            seed=int(seed if seed is not None else raw["seed"]),
            h0=int(raw.get("h0", 1)),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc


def _broadcast_probs(values: Any, raw: Mapping[str, Any], n_devices: int, where: str) -> list[float]:
    """Broadcast a scalar / per-group list / per-device list to n_devices."""
    groups: Sequence[Mapping[str, Any]] = raw["devices"]
    counts = [int(g.get("count", 1)) for g in groups]
    if isinstance(values, (int, float)) and not isinstance(values, bool):
        return [float(values)] * n_devices
    if isinstance(values, list):
        if len(values) == len(groups):
            out: list[float] = []
            for val, cnt in zip(values, counts):
                out.extend([float(val)] * cnt)
            return out
        if len(values) == n_devices:
            return [float(v) for v in values]
        _fail(
            where,
            f"list length {len(values)} matches neither the {len(groups)} device "
            f"groups nor the {n_devices} expanded devices",
        )
    _fail(where, f"expected a number or list, got {values!r}")
    raise AssertionError("unreachable")


def make_policy(
    raw: Mapping[str, Any],
    *,
    policy_name: str | None = None,
    p_local: Sequence[float] | float | None = None,
    p_offload: Sequence[float] | float | None = None,
):
    """Build the policy object a scenario mapping asks for.

    ``policy_name`` overrides the mapping's ``policy`` field; explicit
    probability arguments override the ``[randomized]`` table.
    """
    name = policy_name if policy_name is not None else raw.get("policy", "maxweight")
    if name == "maxweight":
        return MaxWeightPolicy()
    if name == "maxreduction":
        return MaxReductionPolicy()
    if name != "randomized":
        _fail("policy", f"unknown policy {name!r} (expected one of {list(POLICY_NAMES)})")

    n_devices = sum(int(g.get("count", 1)) for g in raw["devices"])
    rnd = raw.get("randomized")
    if p_local is None:
        if rnd is None:
            _fail(
                "randomized",
                "policy 'randomized' needs a [randomized] table with p_local/p_offload "
                "(or explicit probabilities)",
            )
        p_local = rnd["p_local"]
    if p_offload is None:
        if rnd is None:
            _fail("randomized", "missing p_offload")
        p_offload = rnd["p_offload"]
    pl = _broadcast_probs(p_local, raw, n_devices, "randomized.p_local")
    pt = _broadcast_probs(p_offload, raw, n_devices, "randomized.p_offload")
    try:
        return RandomizedPolicy(p_local=tuple(pl), p_offload=tuple(pt))
    except ValueError as exc:
        raise ScenarioError(f"randomized: {exc}") from exc
