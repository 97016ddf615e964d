"""Integer delay distributions for compute and transmission stages.

Every distribution enumerates its PMF (unbounded tails truncated at a total
mass of eps, default 1e-12) and samples by inverse-CDF lookup with exactly one
uniform draw, so sampling is reproducible across the pure-Python engine and
the compiled kernel given the same stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .rng import Stream

PMF_EPS_DEFAULT = 1e-15


class DelayDistribution:
    bounded: bool = True

    def mean(self) -> float:
        raise NotImplementedError

    def min_value(self) -> int:
        raise NotImplementedError

    def pmf_support(self, eps: float = PMF_EPS_DEFAULT) -> list[tuple[int, float]]:
        """Sorted (value, prob) pairs with total mass >= 1 - eps."""
        raise NotImplementedError

    def sampler_table(self, eps: float = PMF_EPS_DEFAULT) -> tuple[np.ndarray, np.ndarray]:
        """(values, cdf) arrays for inverse-CDF sampling."""
        cached = getattr(self, "_sampler", None)
        if cached is not None and cached[0] == eps:
            return cached[1], cached[2]
        pmf = self.pmf_support(eps)
        values = np.array([v for v, _ in pmf], dtype=np.int64)
        cdf = np.cumsum(np.array([p for _, p in pmf], dtype=np.float64))
        object.__setattr__(self, "_sampler", (eps, values, cdf))
        return values, cdf

    def sample(self, stream: Stream) -> int:
        """Draw one value; always consumes exactly one uniform."""
        values, cdf = self.sampler_table()
        u = stream.next_float()
        idx = int(np.searchsorted(cdf, u, side="right"))
        if idx >= len(values):
            idx = len(values) - 1
        return int(values[idx])


@dataclass(frozen=True)
class Deterministic(DelayDistribution):
    d: int

    def __post_init__(self):
        if self.d < 0 or self.d != int(self.d):
            raise ValueError("deterministic delay: d must be an integer >= 0")

    def mean(self) -> float:
        return float(self.d)

    def min_value(self) -> int:
        return self.d

    def pmf_support(self, eps: float = PMF_EPS_DEFAULT) -> list[tuple[int, float]]:
        return [(self.d, 1.0)]


@dataclass(frozen=True)
class UniformInt(DelayDistribution):
    a: int
    b: int

    def __post_init__(self):
        if self.a < 0 or self.b < self.a:
            raise ValueError("uniform delay: need 0 <= a <= b")

    def mean(self) -> float:
        return 0.5 * (self.a + self.b)

    def min_value(self) -> int:
        return self.a

    def pmf_support(self, eps: float = PMF_EPS_DEFAULT) -> list[tuple[int, float]]:
        n = self.b - self.a + 1
        p = 1.0 / n
        return [(v, p) for v in range(self.a, self.b + 1)]


@dataclass(frozen=True)
class PoissonShifted(DelayDistribution):
    """min + Poisson(mean - min); the mean parameter is the distribution mean."""

    mean_value: float
    min: int = 1
    bounded = False

    def __post_init__(self):
        if self.min < 0:
            raise ValueError("poisson delay: min must be >= 0")
        if self.mean_value < self.min:
            raise ValueError("poisson delay: mean must be >= min")

    def mean(self) -> float:
        return float(self.mean_value)

    def min_value(self) -> int:
        return self.min

    def pmf_support(self, eps: float = PMF_EPS_DEFAULT) -> list[tuple[int, float]]:
        rate = self.mean_value - self.min
        if rate == 0.0:
            return [(self.min, 1.0)]
        out = []
        p = math.exp(-rate)
        cum = 0.0
        k = 0
        while cum < 1.0 - eps:
            out.append((self.min + k, p))
            cum += p
            k += 1
            p *= rate / k
            if k > 10_000_000:  # pragma: no cover - guards a runaway rate
                raise ValueError("poisson delay: support enumeration did not converge")
        return out


@dataclass(frozen=True)
class GeometricOn(DelayDistribution):
    """P(D = min + k) = p * (1-p)^k; mean = min + (1-p)/p."""

    p: float
    min: int = 1
    bounded = False

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0):
            raise ValueError("geometric delay: p must be in (0, 1]")
        if self.min < 0:
            raise ValueError("geometric delay: min must be >= 0")

    @classmethod
    def from_mean(cls, mean: float, min: int = 1) -> "GeometricOn":
        if mean < min:
            raise ValueError("geometric delay: mean must be >= min")
        return cls(p=1.0 / (mean - min + 1.0), min=min)

    def mean(self) -> float:
        return self.min + (1.0 - self.p) / self.p

    def min_value(self) -> int:
        return self.min

    def pmf_support(self, eps: float = PMF_EPS_DEFAULT) -> list[tuple[int, float]]:
        out = []
        q = 1.0
        k = 0
        # After k terms the tail mass is (1-p)^k.
        while q > eps:
            out.append((self.min + k, self.p * q))
            q *= 1.0 - self.p
            k += 1
            if k > 10_000_000:  # pragma: no cover
                raise ValueError("geometric delay: support enumeration did not converge")
        return out


def convolve(
    pmf_a: list[tuple[int, float]], pmf_b: list[tuple[int, float]]
) -> list[tuple[int, float]]:
    """PMF of the sum of two independent integer delays."""
    acc: dict[int, float] = {}
    for va, pa in pmf_a:
        for vb, pb in pmf_b:
            v = va + vb
            acc[v] = acc.get(v, 0.0) + pa * pb
    return sorted(acc.items())


_DELAY_KINDS = {"det", "deterministic", "uniform", "poisson", "geometric"}


def delay_from_config(cfg: Mapping) -> DelayDistribution:
    """Build a delay distribution from a {kind: ..., params...} mapping."""
    if "kind" not in cfg:
        raise ValueError("delay: missing 'kind'")
    kind = cfg["kind"]
    if kind not in _DELAY_KINDS:
        raise ValueError(f"delay: unknown kind {kind!r} (expected one of {sorted(_DELAY_KINDS)})")
    fields = set(cfg) - {"kind"}
    if kind in ("det", "deterministic"):
        if fields != {"d"}:
            raise ValueError("delay[det]: exactly field 'd' required")
        return Deterministic(d=int(cfg["d"]))
    if kind == "uniform":
        if fields != {"a", "b"}:
            raise ValueError("delay[uniform]: exactly fields 'a', 'b' required")
        return UniformInt(a=int(cfg["a"]), b=int(cfg["b"]))
    if kind == "poisson":
        if not fields <= {"mean", "min"}:
            raise ValueError("delay[poisson]: fields are 'mean' and optional 'min'")
        if "mean" not in fields:
            raise ValueError("delay[poisson]: missing field 'mean'")
        return PoissonShifted(mean_value=float(cfg["mean"]), min=int(cfg.get("min", 1)))
    # geometric: parameterized by p or by mean (mean matched to a uniform's mean)
    if "p" in fields:
        if not fields <= {"p", "min"}:
            raise ValueError("delay[geometric]: fields are 'p' and optional 'min'")
        return GeometricOn(p=float(cfg["p"]), min=int(cfg.get("min", 1)))
    if "mean" in fields:
        if not fields <= {"mean", "min"}:
            raise ValueError("delay[geometric]: fields are 'mean' and optional 'min'")
        return GeometricOn.from_mean(float(cfg["mean"]), min=int(cfg.get("min", 1)))
    raise ValueError("delay[geometric]: need field 'p' or 'mean'")
