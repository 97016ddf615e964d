"""Deterministic random streams for the simulator.

Every stochastic object in a run draws from a SplitMix64 stream keyed by
(master seed, device index, stream tag).  The same generator is implemented
inside the numba kernel, so the pure-Python engine and the fast path consume
identical sequences.  Samplers draw exactly one uniform per sample (even for
deterministic delays), which keeps the two engines in lockstep.

Stream tags:
    0  local-compute delay
    1  transmission delay
    2  edge-compute delay
    3  policy intents (randomized policy, per device)
    4  channel granting (randomized policy, shared; device index 0)
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# SplitMix64 constants (Steele, Lea & Flood; used by SplittableRandom).
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Key-mixing multipliers for the split rule.
_DEV_SALT = 0xD6E8FEB86659FD93
_TAG_SALT = 0xCA01F9DD51B143DF
_REP_SALT = 0x9FB21C651E98DF25

TAG_LOCAL_DELAY = 0
TAG_TX_DELAY = 1
TAG_EDGE_DELAY = 2
TAG_POLICY = 3
TAG_GRANT = 4

_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


def mix64(z: int) -> int:
    """Finalizing mixer of SplitMix64 (bijective on 64-bit ints)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def stream_seed(master: int, device: int, tag: int) -> int:
    """Split rule: state_0 = mix64(mix64(master + C1*(device+1)) + C2*(tag+1))."""
    s = mix64((master + _DEV_SALT * (device + 1)) & MASK64)
    return mix64((s + _TAG_SALT * (tag + 1)) & MASK64)


def replication_seed(master: int, replication: int) -> int:
    """Derive an independent master seed for a replication index."""
    return mix64((master + _REP_SALT * (replication + 1)) & MASK64)


class Stream:
    """A single SplitMix64 stream.

    next_u64 advances the state by the fixed gamma and mixes; next_float
    maps the top 53 bits to [0, 1).
    """

    __slots__ = ("state",)

    def __init__(self, state: int):
        self.state = state & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & MASK64
        return mix64(self.state)

    def next_float(self) -> float:
        return (self.next_u64() >> 11) * _INV_2_53

    def uniforms(self, n: int) -> np.ndarray:
        """Vectorized batch of n uniforms; advances the state by n steps."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + steps * np.uint64(_GAMMA)
        self.state = int(z[-1]) if n else self.state
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53


class RngBundle:
    """All streams of one run, keyed by (device, tag), created lazily."""

    def __init__(self, master: int, n_devices: int):
        self.master = int(master)
        self.n_devices = n_devices
        self._streams: dict[tuple[int, int], Stream] = {}

    def stream(self, device: int, tag: int) -> Stream:
        key = (device, tag)
        st = self._streams.get(key)
        if st is None:
            st = Stream(stream_seed(self.master, device, tag))
            self._streams[key] = st
        return st

    def grant_stream(self) -> Stream:
        return self.stream(0, TAG_GRANT)

    def state_vector(self, tags: tuple[int, ...]) -> np.ndarray:
        """uint64 state array laid out [device, tag] for the kernel.

        Reflects current stream states so a kernel chunk continues exactly
        where the Python side (or the previous chunk) stopped.
        """
        out = np.empty(self.n_devices * len(tags), dtype=np.uint64)
        for n in range(self.n_devices):
            for j, tag in enumerate(tags):
                out[n * len(tags) + j] = self.stream(n, tag).state
        return out

    def load_state_vector(self, tags: tuple[int, ...], states: np.ndarray) -> None:
        for n in range(self.n_devices):
            for j, tag in enumerate(tags):
                self.stream(n, tag).state = int(states[n * len(tags) + j])
