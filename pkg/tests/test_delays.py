"""Integer delay laws: moments, support enumeration, convolution, sampling.

Closed-form means are checked against enumerated supports, and samplers are
checked against their own PMFs with standard-error gates so a seed change
cannot silently pass a broken table.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from aoisched.delays import (
    Deterministic,
    GeometricOn,
    PoissonShifted,
    UniformInt,
    convolve,
    delay_from_config,
)
from aoisched.rng import Stream


# ---------------------------------------------------------------------------
# moments and support


def test_deterministic_basics():
    d = Deterministic(3)
    assert d.mean() == 3.0
    assert d.min_value() == 3
    assert d.pmf_support() == [(3, 1.0)]
    s = Stream(5)
    assert all(d.sample(s) == 3 for _ in range(100))


def test_uniform_pmf_three_point():
    d = UniformInt(1, 3)
    support = d.pmf_support()
    assert [v for v, _ in support] == [1, 2, 3]
    for _, p in support:
        assert p == pytest.approx(1.0 / 3.0, abs=1e-15)


def test_uniform_mean_closed_form():
    assert UniformInt(1, 15).mean() == pytest.approx(8.0, abs=1e-12)
    assert UniformInt(3, 7).mean() == pytest.approx(5.0, abs=1e-12)


def test_geometric_mean_and_support():
    d = GeometricOn(0.5, min=1)
    assert d.mean() == pytest.approx(2.0, abs=1e-12)
    support = d.pmf_support()
    assert support[0][0] == 1
    assert support[0][1] == pytest.approx(0.5, abs=1e-12)
    assert support[1][1] == pytest.approx(0.25, abs=1e-12)


def test_geometric_from_mean_round_trip():
    d = GeometricOn.from_mean(8.0, min=1)
    assert d.mean() == pytest.approx(8.0, abs=1e-9)
    assert d.min_value() == 1


def test_poisson_shifted_mean_and_floor():
    d = PoissonShifted(8.0, min=1)
    assert d.mean() == pytest.approx(8.0, abs=1e-9)
    assert d.min_value() == 1
    assert all(v >= 1 for v, _ in d.pmf_support())


@pytest.mark.parametrize(
    "law",
    [
        Deterministic(2),
        UniformInt(1, 15),
        UniformInt(3, 7),
        PoissonShifted(8.0, min=1),
        PoissonShifted(20.0, min=10),
        GeometricOn(0.25, min=1),
        GeometricOn.from_mean(5.5, min=1),
    ],
)
def test_enumerated_mean_matches_closed_form(law):
    support = law.pmf_support()
    mass = sum(p for _, p in support)
    enumerated = sum(v * p for v, p in support)
    assert mass == pytest.approx(1.0, abs=1e-12)
    assert enumerated == pytest.approx(law.mean(), abs=1e-9)


def test_pmf_values_are_sorted_and_positive():
    for law in (PoissonShifted(8.0), GeometricOn(0.3)):
        support = law.pmf_support()
        values = [v for v, _ in support]
        assert values == sorted(values)
        assert all(p > 0.0 for _, p in support)


# ---------------------------------------------------------------------------
# convolution


def test_convolve_deterministic_pair():
    got = convolve(Deterministic(2).pmf_support(), Deterministic(1).pmf_support())
    assert got == [(3, 1.0)]


def test_convolve_uniform_with_point_mass():
    got = convolve(UniformInt(1, 2).pmf_support(), Deterministic(1).pmf_support())
    assert [v for v, _ in got] == [2, 3]
    assert [p for _, p in got] == pytest.approx([0.5, 0.5], abs=1e-15)


def test_convolve_uniform_with_itself():
    got = convolve(UniformInt(1, 2).pmf_support(), UniformInt(1, 2).pmf_support())
    assert [v for v, _ in got] == [2, 3, 4]
    assert [p for _, p in got] == pytest.approx([0.25, 0.5, 0.25], abs=1e-15)


def test_convolve_mass_and_mean_are_additive():
    a = UniformInt(1, 3).pmf_support()
    b = PoissonShifted(4.0).pmf_support()
    got = convolve(a, b)
    assert sum(p for _, p in got) == pytest.approx(1.0, abs=1e-9)
    mean = sum(v * p for v, p in got)
    assert mean == pytest.approx(2.0 + 4.0, abs=1e-6)


# ---------------------------------------------------------------------------
# sampling


def test_uniform_empirical_mean():
    d = UniformInt(1, 15)
    s = Stream(314159)
    n = 1_000_000
    total = sum(d.sample(s) for _ in range(n))
    assert total / n == pytest.approx(8.0, abs=0.02)


def test_geometric_first_mass():
    d = GeometricOn(0.5, min=1)
    s = Stream(271828)
    n = 1_000_000
    ones = sum(1 for _ in range(n) if d.sample(s) == 1)
    assert ones / n == pytest.approx(0.5, abs=0.003)


@pytest.mark.parametrize(
    "law",
    [
        UniformInt(1, 3),
        UniformInt(3, 7),
        PoissonShifted(8.0, min=1),
        GeometricOn(0.25, min=1),
    ],
)
def test_sampler_matches_pmf(law):
    """Empirical frequencies within 4 s.e. of the enumerated PMF."""
    n = 1_000_000
    s = Stream(909090)
    counts: dict[int, int] = {}
    for _ in range(n):
        v = law.sample(s)
        counts[v] = counts.get(v, 0) + 1
    for value, prob in law.pmf_support():
        if prob < 1e-5:
            continue
        freq = counts.get(value, 0) / n
        se = math.sqrt(prob * (1.0 - prob) / n)
        assert abs(freq - prob) <= 4.0 * se, (value, freq, prob)


def test_samples_respect_minimum():
    d = PoissonShifted(20.0, min=10)
    s = Stream(17)
    assert all(d.sample(s) >= 10 for _ in range(10_000))


def test_sampling_is_reproducible():
    d = GeometricOn(0.3)
    a = [d.sample(Stream(1234)) for _ in range(1)]
    xs = Stream(1234)
    ys = Stream(1234)
    assert [d.sample(xs) for _ in range(500)] == [d.sample(ys) for _ in range(500)]


# ---------------------------------------------------------------------------
# config round trip


@pytest.mark.parametrize(
    "cfg, mean",
    [
        ({"kind": "deterministic", "d": 4}, 4.0),
        ({"kind": "uniform", "a": 1, "b": 15}, 8.0),
        ({"kind": "poisson", "mean": 8.0, "min": 1}, 8.0),
        ({"kind": "geometric", "mean": 5.5, "min": 1}, 5.5),
    ],
)
def test_delay_from_config(cfg, mean):
    law = delay_from_config(cfg)
    assert law.mean() == pytest.approx(mean, abs=1e-9)


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        UniformInt(5, 2)
    with pytest.raises(ValueError):
        GeometricOn(0.0)
    with pytest.raises(ValueError):
        Deterministic(-1)
