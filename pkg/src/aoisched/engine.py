"""Slotted-time simulation engine.

One slot proceeds as: policy observes state -> actions applied -> energy
charged -> virtual queues updated -> stage countdown -> completions -> AoI
update for the next slot.  AoI follows the status-update recurrence: on the
slot after a round completes, h equals the round's total latency (d+1 with the
engine's d counter, which starts at 0 when a round is applied and increments
on busy non-completing slots); otherwise h grows by one.

A round is Local(D_l) slots of on-device compute, or Transmit(D_t) slots
holding one of the M channels followed by EdgeCompute(D_e) slots off-channel
(D_e may sample 0, completing in the transmit-final slot).  Energy e_local or
e_tx is charged per busy slot of the respective stage; edge compute is free.
The per-device virtual queue tracks budget overdraw: q' = max(q - e_budget +
E, 0).

`run` drives a policy for a horizon and returns a RunTrace.  Long runs with
the bundled policies are dispatched to a compiled kernel (see kernels.py)
that reproduces this loop exactly; parity is pinned by tests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Protocol

import numpy as np

from .delays import DelayDistribution, convolve
from .penalty import (
    ExtendedPenalty,
    PenaltyFunction,
    expected_F_of_delay,
    w_local,
    w_local_vec,
    w_offload,
    w_offload_vec,
)
from .rng import (
    TAG_EDGE_DELAY,
    TAG_LOCAL_DELAY,
    TAG_TX_DELAY,
    RngBundle,
)

log = logging.getLogger("aoisched.engine")

ENERGY_WINDOW = 1000  # slots per moving-average window in traces


class InfeasibleAction(ValueError):
    """A schedule directive violates device or channel state."""


class Stage(IntEnum):
    IDLE = 0
    LOCAL = 1
    TRANSMIT = 2
    EDGE = 3


class Action(IntEnum):
    NONE = 0
    START_LOCAL = 1
    START_OFFLOAD = 2


STAGE_NAMES = {
    Stage.IDLE: "idle",
    Stage.LOCAL: "local",
    Stage.TRANSMIT: "transmit",
    Stage.EDGE: "edge",
}


@dataclass(frozen=True)
class DeviceConfig:
    local_delay: DelayDistribution
    tx_delay: DelayDistribution
    edge_delay: DelayDistribution
    e_local: float
    e_tx: float
    e_budget: float
    penalty: PenaltyFunction

    def __post_init__(self):
        if self.local_delay.min_value() < 1:
            raise ValueError("device: local_delay support must start at >= 1")
        if self.tx_delay.min_value() < 1:
            raise ValueError("device: tx_delay support must start at >= 1")
        if self.edge_delay.min_value() < 0:
            raise ValueError("device: edge_delay support must start at >= 0")
        if self.e_local < 0 or self.e_tx < 0:
            raise ValueError("device: per-slot energies must be >= 0")
        if self.e_budget <= 0:
            raise ValueError("device: e_budget must be > 0")


@dataclass(frozen=True)
class SystemConfig:
    devices: tuple[DeviceConfig, ...]
    channels: int
    V: float
    horizon: int
    seed: int
    h0: int = 1

    def __post_init__(self):
        if len(self.devices) == 0:
            raise ValueError("system: need at least one device")
        if self.channels < 1:
            raise ValueError("system: channels must be >= 1")
        if self.V <= 0:
            raise ValueError("system: V must be > 0")
        if self.horizon < 1:
            raise ValueError("system: horizon must be >= 1")
        if self.h0 < 1:
            raise ValueError("system: h0 must be >= 1")


class DeviceModel:
    """Per-device derived quantities shared by policies and the bound solver."""

    def __init__(self, cfg: DeviceConfig):
        self.cfg = cfg
        self.ext = ExtendedPenalty(cfg.penalty)
        self.mean_dl = cfg.local_delay.mean()
        self.mean_dt = cfg.tx_delay.mean()
        self.mean_de = cfg.edge_delay.mean()
        self.ef_local = expected_F_of_delay(self.ext, cfg.local_delay)
        offload_pmf = convolve(
            cfg.tx_delay.pmf_support(), cfg.edge_delay.pmf_support()
        )
        self.ef_offload = expected_F_of_delay(self.ext, offload_pmf)
        # completion-delay PMFs and the resting penalty E[f(D)], used by the
        # myopic reduction index
        self._rl_d = np.array([d for d, _ in cfg.local_delay.pmf_support()], dtype=np.int64)
        self._rl_p = np.array([p for _, p in cfg.local_delay.pmf_support()], dtype=np.float64)
        self._rt_d = np.array([d for d, _ in offload_pmf], dtype=np.int64)
        self._rt_p = np.array([p for _, p in offload_pmf], dtype=np.float64)
        self.ext.ensure(int(max(self._rl_d.max(), self._rt_d.max())) + 1)
        fv = self.ext._fv
        self._rl_const = 0.0
        for d, p in zip(self._rl_d, self._rl_p):
            self._rl_const += p * fv[d]
        self._rt_const = 0.0
        for d, p in zip(self._rt_d, self._rt_p):
            self._rt_const += p * fv[d]

    # -- scheduling priorities ----------------------------------------------

    def w_local(self, x: float) -> float:
        return w_local(self.ext, self.mean_dl, self.ef_local, x)

    def w_offload(self, x: float) -> float:
        return w_offload(self.ext, self.mean_dt, self.mean_de, self.ef_offload, x)

    def wl_over_dl(self, h: int) -> float:
        return self.w_local(h) / self.mean_dl

    def wt_over_dt(self, h: int) -> float:
        return self.w_offload(h) / self.mean_dt

    def r_local(self, h: int) -> float:
        """Expected penalty drop when a local update completes: E[f(h+D)-f(D)]."""
        self.ext.ensure(h + int(self._rl_d.max()))
        fv = self.ext._fv
        acc = 0.0
        for d, p in zip(self._rl_d, self._rl_p):
            acc += p * fv[h + d]
        return acc - self._rl_const

    def r_offload(self, h: int) -> float:
        """Expected penalty drop when an offloaded update completes."""
        self.ext.ensure(h + int(self._rt_d.max()))
        fv = self.ext._fv
        acc = 0.0
        for d, p in zip(self._rt_d, self._rt_p):
            acc += p * fv[h + d]
        return acc - self._rt_const

    def f(self, h: int) -> float:
        return self.ext.eval(h)

    # -- vectorized table builders (bit-identical to the scalar forms) ------

    def wl_over_dl_table(self, upto: int) -> np.ndarray:
        x = np.arange(upto + 1, dtype=np.float64)
        return w_local_vec(self.ext, self.mean_dl, self.ef_local, x) / self.mean_dl

    def wt_over_dt_table(self, upto: int) -> np.ndarray:
        x = np.arange(upto + 1, dtype=np.float64)
        return (
            w_offload_vec(self.ext, self.mean_dt, self.mean_de, self.ef_offload, x)
            / self.mean_dt
        )

    def r_local_table(self, upto: int) -> np.ndarray:
        self.ext.ensure(upto + int(self._rl_d.max()))
        fv = self.ext._fv
        out = np.zeros(upto + 1, dtype=np.float64)
        for d, p in zip(self._rl_d, self._rl_p):
            out += p * fv[d : d + upto + 1]
        return out - self._rl_const

    def r_offload_table(self, upto: int) -> np.ndarray:
        self.ext.ensure(upto + int(self._rt_d.max()))
        fv = self.ext._fv
        out = np.zeros(upto + 1, dtype=np.float64)
        for d, p in zip(self._rt_d, self._rt_p):
            out += p * fv[d : d + upto + 1]
        return out - self._rt_const

    def f_table(self, upto: int) -> np.ndarray:
        self.ext.ensure(upto)
        return self.ext._fv[: upto + 1].copy()


class SystemModel:
    """SystemConfig plus derived per-device models and kernel-ready arrays."""

    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg
        n = len(cfg.devices)
        self.n_devices = n
        # deduplicate devices sharing (penalty, delays): they share tables
        type_key = {}
        self.type_id = np.empty(n, dtype=np.int64)
        self.types: list[DeviceModel] = []
        self.devices: list[DeviceModel] = []
        for i, dev in enumerate(cfg.devices):
            key = (dev.penalty, dev.local_delay, dev.tx_delay, dev.edge_delay)
            t = type_key.get(key)
            if t is None:
                t = len(self.types)
                type_key[key] = t
                self.types.append(DeviceModel(dev))
            self.type_id[i] = t
            self.devices.append(self.types[t])
        self.e_local = np.array([d.e_local for d in cfg.devices])
        self.e_tx = np.array([d.e_tx for d in cfg.devices])
        self.e_budget = np.array([d.e_budget for d in cfg.devices])
        self.vel = cfg.V * self.e_local
        self.vet = cfg.V * self.e_tx

    @property
    def V(self) -> float:
        return self.cfg.V

    @property
    def channels(self) -> int:
        return self.cfg.channels


class DeviceState:
    __slots__ = ("h", "d", "stage", "remaining", "q", "energy_total", "offload_round")

    def __init__(self, h0: int):
        self.h = h0
        self.d = 0
        self.stage = Stage.IDLE
        self.remaining = 0
        self.q = 0.0
        self.energy_total = 0.0
        self.offload_round = False


class SimState:
    """Mutable world state between slots."""

    def __init__(self, cfg: SystemConfig):
        self.k = 0  # slots completed so far
        self.devices = [DeviceState(cfg.h0) for _ in cfg.devices]
        self.busy_channels = 0
        self.last_completions: list[tuple[int, int, int, bool]] = []
        self.last_energy: list[float] = [0.0] * len(cfg.devices)


class Policy(Protocol):  # pragma: no cover - typing aid
    name: str

    def decide(self, state: SimState, model: SystemModel, rng: RngBundle) -> np.ndarray: ...


def apply_actions(
    state: SimState, actions: np.ndarray, model: SystemModel, rng: RngBundle
) -> SimState:
    """Start rounds for the directives issued this slot.

    Directives for busy devices and offload grants beyond the free channels
    raise InfeasibleAction.
    """
    free = model.channels - state.busy_channels
    n_offload = 0
    for n, act in enumerate(actions):
        if act == Action.NONE:
            continue
        dev = state.devices[n]
        if dev.stage != Stage.IDLE:
            raise InfeasibleAction(f"device {n}: directive {int(act)} while busy")
        if act == Action.START_LOCAL:
            dev.stage = Stage.LOCAL
            dev.remaining = model.devices[n].cfg.local_delay.sample(
                rng.stream(n, TAG_LOCAL_DELAY)
            )
            dev.offload_round = False
        elif act == Action.START_OFFLOAD:
            n_offload += 1
            if n_offload > free:
                raise InfeasibleAction(
                    f"device {n}: offload grant exceeds free channels ({free})"
                )
            dev.stage = Stage.TRANSMIT
            dev.remaining = model.devices[n].cfg.tx_delay.sample(
                rng.stream(n, TAG_TX_DELAY)
            )
            dev.offload_round = True
            state.busy_channels += 1
        else:
            raise InfeasibleAction(f"device {n}: unknown directive {act!r}")
    return state


def advance_slot(state: SimState, model: SystemModel, rng: RngBundle) -> SimState:
    """Charge energy, update queues, count down stages, and update AoI."""
    state.last_completions = []
    for n, dev in enumerate(state.devices):
        if dev.stage == Stage.LOCAL:
            e = model.e_local[n]
        elif dev.stage == Stage.TRANSMIT:
            e = model.e_tx[n]
        else:
            e = 0.0
        dev.energy_total += e
        state.last_energy[n] = e
        qn = dev.q - model.e_budget[n] + e
        dev.q = qn if qn > 0.0 else 0.0
        completed = False
        if dev.stage != Stage.IDLE:
            dev.remaining -= 1
            if dev.remaining == 0:
                if dev.stage == Stage.TRANSMIT:
                    state.busy_channels -= 1
                    de = model.devices[n].cfg.edge_delay.sample(
                        rng.stream(n, TAG_EDGE_DELAY)
                    )
                    if de == 0:
                        completed = True
                    else:
                        dev.stage = Stage.EDGE
                        dev.remaining = de
                else:
                    completed = True
        if completed:
            latency = dev.d + 1
            state.last_completions.append((n, dev.h, latency, dev.offload_round))
            dev.h = latency
            dev.d = 0
            dev.stage = Stage.IDLE
        else:
            dev.h += 1
            if dev.stage != Stage.IDLE:
                dev.d += 1
    state.k += 1
    return state


@dataclass
class StateRecords:
    """Per-slot snapshots (observation point: after apply, before advance)."""

    h: np.ndarray
    d: np.ndarray
    stage: np.ndarray
    q: np.ndarray
    energy: np.ndarray


@dataclass
class RunTrace:
    """Accumulated outputs of one run."""

    horizon: int
    n_devices: int
    seed: int
    policy_name: str
    V: float
    pen_slot: np.ndarray  # [K] total penalty per slot
    pen_win: np.ndarray  # [W, N] penalty sums per window
    en_win: np.ndarray  # [W, N] energy sums per window
    win_len: int
    win_counts: np.ndarray  # [W] slots per window (last may be partial)
    peaks: list[np.ndarray]  # per device: AoI at each completion
    latencies: list[np.ndarray]  # per device: total round latency
    offload_flags: list[np.ndarray]  # per device: round used the edge path
    energy_total: np.ndarray  # [N]
    final_h: np.ndarray
    final_d: np.ndarray
    final_q: np.ndarray
    final_stage: np.ndarray
    records: Optional[StateRecords] = None
    meta: dict = field(default_factory=dict)

    @property
    def rounds_per_device(self) -> np.ndarray:
        return np.array([len(p) for p in self.peaks], dtype=np.int64)


def _n_windows(horizon: int) -> int:
    return (horizon + ENERGY_WINDOW - 1) // ENERGY_WINDOW


def _window_counts(horizon: int) -> np.ndarray:
    w = _n_windows(horizon)
    counts = np.full(w, ENERGY_WINDOW, dtype=np.int64)
    rem = horizon - (w - 1) * ENERGY_WINDOW
    counts[-1] = rem
    return counts


def run(
    cfg: SystemConfig,
    policy,
    *,
    record: bool = False,
    engine: str = "auto",
) -> RunTrace:
    """Simulate `policy` for cfg.horizon slots.

    engine: "auto" picks the compiled kernel for bundled policies, falling
    back to the reference loop; "python" or "kernel" force a path.
    """
    model = SystemModel(cfg)
    kernel_mode = getattr(policy, "kernel_mode", None)
    use_kernel = engine == "kernel" or (engine == "auto" and kernel_mode is not None)
    if use_kernel:
        if kernel_mode is None:
            raise ValueError(f"policy {policy!r} has no kernel support")
        from . import kernels

        return kernels.run_kernel(cfg, model, policy, record=record)
    return _run_python(cfg, model, policy, record=record)


def _run_python(
    cfg: SystemConfig, model: SystemModel, policy, *, record: bool
) -> RunTrace:
    n = model.n_devices
    K = cfg.horizon
    rng = RngBundle(cfg.seed, n)
    state = SimState(cfg)
    w_total = _n_windows(K)
    pen_slot = np.zeros(K)
    pen_win = np.zeros((w_total, n))
    en_win = np.zeros((w_total, n))
    peaks = [[] for _ in range(n)]
    lats = [[] for _ in range(n)]
    offl = [[] for _ in range(n)]
    records = None
    if record:
        records = StateRecords(
            h=np.zeros((K, n), dtype=np.int64),
            d=np.zeros((K, n), dtype=np.int64),
            stage=np.zeros((K, n), dtype=np.int8),
            q=np.zeros((K, n)),
            energy=np.zeros((K, n)),
        )
    devices = model.devices
    for k in range(K):
        w = k // ENERGY_WINDOW
        tot = 0.0
        for i in range(n):
            fh = devices[i].f(state.devices[i].h)
            tot += fh
            pen_win[w, i] += fh
        pen_slot[k] = tot
        actions = policy.decide(state, model, rng)
        apply_actions(state, actions, model, rng)
        if record:
            for i, dev in enumerate(state.devices):
                records.h[k, i] = dev.h
                records.d[k, i] = dev.d
                records.stage[k, i] = int(dev.stage)
                records.q[k, i] = dev.q
        advance_slot(state, model, rng)
        for i in range(n):
            en_win[w, i] += state.last_energy[i]
        if record:
            for i in range(n):
                records.energy[k, i] = state.last_energy[i]
        for i, peak, latency, was_offload in state.last_completions:
            peaks[i].append(peak)
            lats[i].append(latency)
            offl[i].append(was_offload)
    return RunTrace(
        horizon=K,
        n_devices=n,
        seed=cfg.seed,
        policy_name=getattr(policy, "name", type(policy).__name__),
        V=cfg.V,
        pen_slot=pen_slot,
        pen_win=pen_win,
        en_win=en_win,
        win_len=ENERGY_WINDOW,
        win_counts=_window_counts(K),
        peaks=[np.array(p, dtype=np.int64) for p in peaks],
        latencies=[np.array(v, dtype=np.int64) for v in lats],
        offload_flags=[np.array(v, dtype=bool) for v in offl],
        energy_total=np.array([d.energy_total for d in state.devices]),
        final_h=np.array([d.h for d in state.devices], dtype=np.int64),
        final_d=np.array([d.d for d in state.devices], dtype=np.int64),
        final_q=np.array([d.q for d in state.devices]),
        final_stage=np.array([int(d.stage) for d in state.devices], dtype=np.int8),
        records=records,
        meta={"engine": "python"},
    )
