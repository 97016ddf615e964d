"""Age-penalty algebra.

A penalty function f maps an integer age x >= 0 to a non-negative,
non-decreasing penalty.  The extended penalty interpolates f linearly between
consecutive integers (and is flat at f(0) left of zero), which makes the
cumulative penalty differentiable and gives the scheduling priorities a closed
form:

    W_local(x)   = x*ft(x + Dl - 1) - (Ft(x + Dl - 1) - E[F(D_l - 1)])
    W_offload(x) = x*ft(x + Dt + De - 1) - (Ft(x + Dt + De - 1) - E[F(D_t + D_e - 1)])

where ft is the extended penalty, F(h) the prefix sum of f with F(-1) = 0, and
Ft(h) its running integral.  Both W functions are non-negative and
non-decreasing for non-decreasing f.

Evaluations are table-backed: prefix arrays grow on demand (values are
deterministic, so concurrent readers are safe; growth is amortized doubling).
Arguments beyond the hard cap raise TooLargeError, which callers treat as
"reject this trial point".
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

XMAX_DEFAULT = 10**7


class TooLargeError(ValueError):
    """Penalty evaluation requested beyond the configured age cap."""


class TailTruncationWarning(UserWarning):
    """An enumerated PMF left out tail mass (unbounded support truncated)."""


class PenaltyFunction:
    """Base class: subclasses implement values() on integer age arrays."""

    def values(self, xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: int) -> float:
        return float(self.values(np.asarray([x], dtype=np.float64))[0])


@dataclass(frozen=True)
class LinearPenalty(PenaltyFunction):
    c: float = 1.0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("linear penalty: c must be >= 0")

    def values(self, xs: np.ndarray) -> np.ndarray:
        return self.c * xs


@dataclass(frozen=True)
class SquarePenalty(PenaltyFunction):
    c: float = 1.0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("square penalty: c must be >= 0")

    def values(self, xs: np.ndarray) -> np.ndarray:
        return self.c * xs * xs


@dataclass(frozen=True)
class PowerPenalty(PenaltyFunction):
    alpha: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("power penalty: alpha must be >= 0")
        if self.p <= 0:
            raise ValueError("power penalty: p must be > 0")

    def values(self, xs: np.ndarray) -> np.ndarray:
        return self.alpha * np.power(xs, self.p)


@dataclass(frozen=True)
class CompositePenalty(PenaltyFunction):
    """f(x) = 1 - (a*x + 1)^(-b): a bounded miss-probability style penalty."""

    a: float
    b: float

    def __post_init__(self):
        if self.a < 0:
            raise ValueError("composite penalty: a must be >= 0")
        if self.b <= 0:
            raise ValueError("composite penalty: b must be > 0")

    def values(self, xs: np.ndarray) -> np.ndarray:
        return 1.0 - np.power(self.a * xs + 1.0, -self.b)


_PENALTY_KINDS = {
    "linear": (LinearPenalty, ("c",)),
    "square": (SquarePenalty, ("c",)),
    "power": (PowerPenalty, ("alpha", "p")),
    "composite": (CompositePenalty, ("a", "b")),
}


def penalty_from_config(cfg: Mapping) -> PenaltyFunction:
    """Build a penalty from a {kind: ..., params...} mapping."""
    if "kind" not in cfg:
        raise ValueError("penalty: missing 'kind'")
    kind = cfg["kind"]
    if kind not in _PENALTY_KINDS:
        raise ValueError(
            f"penalty: unknown kind {kind!r} (expected one of {sorted(_PENALTY_KINDS)})"
        )
    cls, fields = _PENALTY_KINDS[kind]
    kwargs = {}
    for name in fields:
        if name not in cfg:
            raise ValueError(f"penalty[{kind}]: missing field '{name}'")
        kwargs[name] = float(cfg[name])
    extra = set(cfg) - {"kind", *fields}
    if extra:
        raise ValueError(f"penalty[{kind}]: unexpected fields {sorted(extra)}")
    return cls(**kwargs)


class ExtendedPenalty:
    """Table-backed f, extended f, and their cumulative forms.

    Prefix arrays cover ages 0..n and grow by doubling.  All scalar queries
    index the same arrays that vectorized table builders use, so both paths
    produce bit-identical values.
    """

    def __init__(self, f: PenaltyFunction, initial: int = 4096, xmax: int = XMAX_DEFAULT):
        self.f = f
        self.xmax = xmax
        self._fv = np.empty(0)
        self._Fs = np.empty(0)
        self._Ft = np.empty(0)
        self.ensure(min(initial, xmax))

    @property
    def size(self) -> int:
        return len(self._fv)

    def ensure(self, n: int) -> None:
        """Make ages 0..n (inclusive) addressable."""
        if n < self.size:
            return
        if n > self.xmax:
            raise TooLargeError(f"age {n} exceeds cap {self.xmax}")
        n = min(max(n, 2 * self.size, 64), self.xmax)
        xs = np.arange(n + 1, dtype=np.float64)
        fv = self.f.values(xs)
        Fs = np.cumsum(fv)
        Ft = np.empty_like(fv)
        Ft[0] = 0.0
        np.cumsum(0.5 * (fv[1:] + fv[:-1]), out=Ft[1:])
        self._fv, self._Fs, self._Ft = fv, Fs, Ft

    # -- scalar queries ----------------------------------------------------

    def eval(self, x: int) -> float:
        """f at an integer age."""
        self.ensure(x)
        return float(self._fv[x])

    def f_tilde(self, x: float) -> float:
        """Piecewise-linear extension; f(0) left of zero."""
        if x < 0.0:
            return float(self._fv[0])
        m = int(x)
        t = x - m
        self.ensure(m + 1)
        fv = self._fv
        return float(fv[m] + t * (fv[m + 1] - fv[m]))

    def F(self, h: int) -> float:
        """Prefix sum of f over 0..h; F(-1) = 0."""
        if h < 0:
            return 0.0
        self.ensure(h)
        return float(self._Fs[h])

    def F_tilde(self, h: float) -> float:
        """Integral of the extended penalty over [0, h]."""
        if h < 0.0:
            raise ValueError("F_tilde domain is h >= 0")
        m = int(h)
        t = h - m
        self.ensure(m + 1)
        fv, Ft = self._fv, self._Ft
        return float(Ft[m] + t * fv[m] + 0.5 * t * t * (fv[m + 1] - fv[m]))

    # -- vectorized queries (same expressions as the scalar path) ----------

    def f_tilde_vec(self, x: np.ndarray) -> np.ndarray:
        x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
        m = np.floor(x).astype(np.int64)
        t = x - m
        self.ensure(int(m.max()) + 1 if m.size else 0)
        fv = self._fv
        return fv[m] + t * (fv[m + 1] - fv[m])

    def F_tilde_vec(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=np.float64)
        if h.size and h.min() < 0.0:
            raise ValueError("F_tilde domain is h >= 0")
        m = np.floor(h).astype(np.int64)
        t = h - m
        self.ensure(int(m.max()) + 1 if m.size else 0)
        fv, Ft = self._fv, self._Ft
        return Ft[m] + t * fv[m] + 0.5 * t * t * (fv[m + 1] - fv[m])

    def values(self, xs: np.ndarray) -> np.ndarray:
        """f on integer ages (table slice)."""
        hi = int(np.max(xs)) if np.size(xs) else 0
        self.ensure(hi)
        return self._fv[np.asarray(xs, dtype=np.int64)]


def w_local(ext: ExtendedPenalty, mean_dl: float, ef_local: float, x: float) -> float:
    """Priority mass of a local update at age x (expected-delay offset baked in)."""
    arg = x + (mean_dl - 1.0)
    ft = ext.f_tilde(arg)
    Ft = ext.F_tilde(arg)
    return x * ft - (Ft - ef_local)


def w_offload(
    ext: ExtendedPenalty, mean_dt: float, mean_de: float, ef_offload: float, x: float
) -> float:
    """Priority mass of an offloaded update at age x."""
    arg = x + (mean_dt + mean_de - 1.0)
    ft = ext.f_tilde(arg)
    Ft = ext.F_tilde(arg)
    return x * ft - (Ft - ef_offload)


def w_local_vec(
    ext: ExtendedPenalty, mean_dl: float, ef_local: float, x: np.ndarray
) -> np.ndarray:
    arg = x + (mean_dl - 1.0)
    ft = ext.f_tilde_vec(arg)
    Ft = ext.F_tilde_vec(arg)
    return x * ft - (Ft - ef_local)


def w_offload_vec(
    ext: ExtendedPenalty, mean_dt: float, mean_de: float, ef_offload: float, x: np.ndarray
) -> np.ndarray:
    arg = x + (mean_dt + mean_de - 1.0)
    ft = ext.f_tilde_vec(arg)
    Ft = ext.F_tilde_vec(arg)
    return x * ft - (Ft - ef_offload)


def expected_F_of_delay(ext: ExtendedPenalty, delay, eps: float = 1e-15) -> float:
    """E[F(D - 1)] for a delay distribution or an explicit (value, prob) PMF.

    F(-1) = 0, so a zero delay contributes nothing.  Emits
    TailTruncationWarning when the PMF's mass falls short of 1 by more than
    1e-13 (an unbounded support was truncated).
    """
    if hasattr(delay, "pmf_support"):
        pmf = delay.pmf_support(eps)
    else:
        pmf = list(delay)
    total = 0.0
    mass = 0.0
    for value, prob in pmf:
        total += prob * ext.F(int(value) - 1)
        mass += prob
    if 1.0 - mass > 1e-13:
        warnings.warn(
            f"PMF mass {mass:.17g} short of 1; expectation ignores the truncated tail",
            TailTruncationWarning,
            stacklevel=2,
        )
    return total
