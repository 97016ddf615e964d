"""Scheduling policies.

The max-weight scheduler picks, each slot, the feasible action set maximizing

    sum_local (W_l(h)/Dl - V*e_local*q) + sum_offload (W_t(h)/Dt - V*e_tx*q)

over idle devices with at most the free channels offloading.  It does so by
thresholding each mode against its energy price and walking offload
candidates in decreasing index order; the brute-force enumerator below is the
reference it is tested against.

The max-reduction baseline swaps the priority masses W/D for the amortized
penalty reduction R(h) (identical control flow otherwise).  The randomized
policy draws independent intents per idle device and resolves channel
contention by a uniformly random subset.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .engine import Action, SimState, Stage, SystemModel
from .rng import TAG_POLICY, RngBundle

BRUTE_FORCE_MAX_IDLE = 12


class TooLargeSearch(ValueError):
    """Brute-force enumeration requested over too many idle devices."""


@dataclass(frozen=True)
class IndexEntry:
    """Priorities of one idle device at the decision point."""

    device: int
    h: int
    q: float
    wl: float  # W_l(h)/Dl
    wt: float  # W_t(h)/Dt
    in_cl: bool
    in_ct: bool
    index: float


def _entry(n: int, h: int, q: float, wl: float, wt: float, model: SystemModel) -> IndexEntry:
    thl = model.vel[n] * q
    tht = model.vet[n] * q
    in_cl = wl >= thl
    in_ct = wt >= tht
    if in_cl and in_ct:
        index = wt - wl + (model.vel[n] - model.vet[n]) * q
    elif in_ct:
        index = wt - tht
    elif in_cl:
        index = wl - thl
    else:
        index = 0.0
    return IndexEntry(n, h, float(q), float(wl), float(wt), bool(in_cl), bool(in_ct), float(index))


def index_snapshot(state: SimState, model: SystemModel, kind: str = "maxweight") -> list[IndexEntry]:
    """Per-idle-device eligibility and index values (diagnostics and tests)."""
    out = []
    for n, dev in enumerate(state.devices):
        if dev.stage != Stage.IDLE:
            continue
        m = model.devices[n]
        if kind == "maxweight":
            wl, wt = m.wl_over_dl(dev.h), m.wt_over_dt(dev.h)
        elif kind == "maxreduction":
            wl, wt = m.r_local(dev.h), m.r_offload(dev.h)
        else:
            raise ValueError(f"unknown snapshot kind {kind!r}")
        out.append(_entry(n, dev.h, dev.q, wl, wt, model))
    return out


def _threshold_schedule(state: SimState, model: SystemModel, kind: str) -> np.ndarray:
    n_dev = model.n_devices
    actions = np.zeros(n_dev, dtype=np.int8)
    free = model.channels - state.busy_channels
    cand: list[tuple[float, int, bool]] = []
    for n, dev in enumerate(state.devices):
        if dev.stage != Stage.IDLE:
            continue
        m = model.devices[n]
        if kind == "maxweight":
            wl, wt = m.wl_over_dl(dev.h), m.wt_over_dt(dev.h)
        else:
            wl, wt = m.r_local(dev.h), m.r_offload(dev.h)
        q = dev.q
        thl = model.vel[n] * q
        tht = model.vet[n] * q
        in_cl = wl >= thl
        in_ct = wt >= tht
        if in_ct:
            if in_cl:
                index = wt - wl + (model.vel[n] - model.vet[n]) * q
            else:
                index = wt - tht
            cand.append((index, n, in_cl))
        elif in_cl:
            actions[n] = Action.START_LOCAL
    cand.sort(key=lambda t: (-t[0], t[1]))
    for index, n, in_cl in cand:
        if free > 0 and index >= 0.0:
            actions[n] = Action.START_OFFLOAD
            free -= 1
        elif in_cl:
            actions[n] = Action.START_LOCAL
    return actions


def max_weight_schedule(state: SimState, model: SystemModel) -> np.ndarray:
    return _threshold_schedule(state, model, "maxweight")


def max_reduction_schedule(state: SimState, model: SystemModel) -> np.ndarray:
    return _threshold_schedule(state, model, "maxreduction")


def schedule_weight(
    actions: np.ndarray, state: SimState, model: SystemModel, kind: str = "maxweight"
) -> float:
    """Objective value of an action set under the slot-wise weight."""
    total = 0.0
    for n, act in enumerate(actions):
        if act == Action.NONE:
            continue
        dev = state.devices[n]
        m = model.devices[n]
        if kind == "maxweight":
            wl, wt = m.wl_over_dl(dev.h), m.wt_over_dt(dev.h)
        else:
            wl, wt = m.r_local(dev.h), m.r_offload(dev.h)
        if act == Action.START_LOCAL:
            total += wl - model.vel[n] * dev.q
        else:
            total += wt - model.vet[n] * dev.q
    return total


def brute_force_schedule(
    state: SimState, model: SystemModel, kind: str = "maxweight"
) -> tuple[float, np.ndarray]:
    """Exhaustive slot-wise argmax over idle devices (reference oracle)."""
    idle = [n for n, dev in enumerate(state.devices) if dev.stage == Stage.IDLE]
    if len(idle) > BRUTE_FORCE_MAX_IDLE:
        raise TooLargeSearch(f"{len(idle)} idle devices exceed cap {BRUTE_FORCE_MAX_IDLE}")
    free = model.channels - state.busy_channels
    best_w = 0.0
    best = np.zeros(model.n_devices, dtype=np.int8)
    choices = (Action.NONE, Action.START_LOCAL, Action.START_OFFLOAD)
    for combo in product(choices, repeat=len(idle)):
        if sum(1 for c in combo if c == Action.START_OFFLOAD) > free:
            continue
        actions = np.zeros(model.n_devices, dtype=np.int8)
        for n, c in zip(idle, combo):
            actions[n] = c
        w = schedule_weight(actions, state, model, kind)
        if w > best_w:
            best_w = w
            best = actions
    return best_w, best


class MaxWeightPolicy:
    """Algorithm-style scheduler driven by the W/D priorities."""

    name = "maxweight"
    kernel_mode = "tables"
    table_kind = "maxweight"

    def decide(self, state: SimState, model: SystemModel, rng: RngBundle) -> np.ndarray:
        return max_weight_schedule(state, model)

    def build_tables(self, model: SystemModel, upto: int) -> tuple[np.ndarray, np.ndarray]:
        wl = np.stack([t.wl_over_dl_table(upto) for t in model.types])
        wt = np.stack([t.wt_over_dt_table(upto) for t in model.types])
        return wl, wt


class MaxReductionPolicy:
    """Baseline: amortized penalty reduction replaces the W/D priorities."""

    name = "maxreduction"
    kernel_mode = "tables"
    table_kind = "maxreduction"

    def decide(self, state: SimState, model: SystemModel, rng: RngBundle) -> np.ndarray:
        return max_reduction_schedule(state, model)

    def build_tables(self, model: SystemModel, upto: int) -> tuple[np.ndarray, np.ndarray]:
        wl = np.stack([t.r_local_table(upto) for t in model.types])
        wt = np.stack([t.r_offload_table(upto) for t in model.types])
        return wl, wt


class RandomizedPolicy:
    """Independent per-device intents; channel contention resolved uniformly.

    p_local/p_offload may be scalars or per-device arrays; an idle device
    draws one uniform and maps it to local / offload / none.  When offload
    intents exceed the free channels, a uniformly random subset of exactly
    that many intents is granted and the rest stay idle.
    """

    name = "randomized"
    kernel_mode = "randomized"

    def __init__(self, p_local, p_offload):
        self.p_local = np.atleast_1d(np.asarray(p_local, dtype=np.float64))
        self.p_offload = np.atleast_1d(np.asarray(p_offload, dtype=np.float64))
        if np.any(self.p_local < 0) or np.any(self.p_offload < 0):
            raise ValueError("randomized policy: probabilities must be >= 0")
        if np.any(self.p_local + self.p_offload > 1.0 + 1e-12):
            raise ValueError("randomized policy: p_local + p_offload must be <= 1")

    def probs(self, n_devices: int) -> tuple[np.ndarray, np.ndarray]:
        pl = np.broadcast_to(self.p_local, (n_devices,)).astype(np.float64)
        pt = np.broadcast_to(self.p_offload, (n_devices,)).astype(np.float64)
        return pl, pt

    def decide(self, state: SimState, model: SystemModel, rng: RngBundle) -> np.ndarray:
        n_dev = model.n_devices
        pl, pt = self.probs(n_dev)
        actions = np.zeros(n_dev, dtype=np.int8)
        free = model.channels - state.busy_channels
        cand: list[int] = []
        for n, dev in enumerate(state.devices):
            if dev.stage != Stage.IDLE:
                continue
            u = rng.stream(n, TAG_POLICY).next_float()
            if u < pl[n]:
                actions[n] = Action.START_LOCAL
            elif u < pl[n] + pt[n]:
                cand.append(n)
        if len(cand) > free:
            grant = rng.grant_stream()
            arr = list(cand)
            for i in range(free):
                u = grant.next_float()
                j = i + int(u * (len(arr) - i))
                if j >= len(arr):
                    j = len(arr) - 1
                arr[i], arr[j] = arr[j], arr[i]
            winners = arr[:free]
        else:
            winners = cand
        for n in winners:
            actions[n] = Action.START_OFFLOAD
        return actions


class NullPolicy:
    """Never schedules anything."""

    name = "null"
    kernel_mode = None

    def decide(self, state: SimState, model: SystemModel, rng: RngBundle) -> np.ndarray:
        return np.zeros(model.n_devices, dtype=np.int8)


def feasible_randomized_probs(model: SystemModel, budget_fraction: float = 0.9) -> RandomizedPolicy:
    """Local-only randomized policy spending about budget_fraction of e_budget.

    With start probability p per idle slot and mean local delay Dl, a renewal
    cycle is (1/p - 1) idle slots plus Dl busy ones, so the long-run energy
    rate is e_local*Dl*p / (1 + p*(Dl - 1)).  Solving rate = target for p
    (with target = budget_fraction*e_budget) keeps the policy strictly inside
    the feasible class the lower bound covers.
    """
    n = model.n_devices
    pl = np.zeros(n)
    for i in range(n):
        target = budget_fraction * model.e_budget[i]
        dl = model.devices[i].mean_dl
        e = model.e_local[i]
        denom = e * dl - target * (dl - 1.0)
        if denom <= 0.0 or target / denom >= 1.0:
            pl[i] = 1.0  # budget never binds even when always busy
        else:
            pl[i] = target / denom
    return RandomizedPolicy(pl, np.zeros(n))
