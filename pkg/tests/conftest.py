"""Shared builders and independent oracles for the test suite.

Most tests need a small system wired together from explicit pieces rather
than a scenario file, so the helpers here construct DeviceConfig and
SystemConfig objects with compact keyword defaults. The bottom half holds
slow-but-simple reference solvers (golden section, dense grid search) used
to cross-check the production optimizer.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from aoisched.delays import Deterministic, UniformInt
from aoisched.engine import DeviceConfig, SystemConfig
from aoisched.penalty import LinearPenalty

REPO_ROOT = Path(__file__).resolve().parent.parent
SCENARIO_DIR = REPO_ROOT / "scenarios"


def make_device(
    penalty=None,
    local=None,
    tx=None,
    edge=None,
    e_local: float = 10.0,
    e_tx: float = 1.0,
    e_budget: float = 0.4,
) -> DeviceConfig:
    """One device with Table-style defaults, every piece overridable."""
    return DeviceConfig(
        local_delay=local if local is not None else Deterministic(1),
        tx_delay=tx if tx is not None else Deterministic(1),
        edge_delay=edge if edge is not None else Deterministic(0),
        e_local=e_local,
        e_tx=e_tx,
        e_budget=e_budget,
        penalty=penalty if penalty is not None else LinearPenalty(1.0),
    )


def make_system(
    devices,
    channels: int = 1,
    V: float = 1.0,
    horizon: int = 100,
    seed: int = 1,
    h0: int = 1,
) -> SystemConfig:
    return SystemConfig(
        devices=tuple(devices),
        channels=channels,
        V=V,
        horizon=horizon,
        seed=seed,
        h0=h0,
    )


def two_type_devices(n_per_type: int = 2) -> tuple[DeviceConfig, ...]:
    """A small heterogeneous population: two device types, n of each."""
    type_a = make_device(local=UniformInt(1, 15), tx=UniformInt(1, 3), edge=UniformInt(1, 2))
    type_b = make_device(
        penalty=LinearPenalty(2.0),
        local=UniformInt(1, 10),
        tx=UniformInt(3, 7),
        edge=UniformInt(1, 2),
    )
    return (type_a,) * n_per_type + (type_b,) * n_per_type


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR


# ---------------------------------------------------------------------------
# reference optimizers


def golden_section(fn, lo: float, hi: float, iters: int = 200) -> float:
    """Minimum value of a unimodal scalar function by golden-section search."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return min(fc, fd)


class GridDevice:
    """Dense tabulation of one device's priced objective over the split box."""

    def __init__(self, dev, step: float):
        ticks = np.arange(0.0, 1.0 + step / 2.0, step)
        X, Y = np.meshgrid(ticks, ticks, indexing="ij")
        x = X.ravel()
        y = Y.ravel()
        keep = (x + y <= 1.0 + 1e-12) & (x + y >= step / 2.0)
        self.x = x[keep]
        self.y = y[keep]
        denom = dev.a * self.x + dev.b * self.y
        G = (1.0 + dev.a * dev.c * self.x + dev.b * dev.d * self.y) / denom
        dev.ext.ensure(int(G.max()) + 2)
        Ft = dev.ext.F_tilde_vec(G)
        self.base = denom * Ft - (dev.a * self.x * dev.v + dev.b * self.y * dev.w)
        self.priced_y = dev.ch * self.y

    def minimize(self, alpha: float) -> tuple[float, float, float, float]:
        """(objective, x, y, usage) of the grid point minimizing base + price."""
        i = int(np.argmin(self.base + alpha * self.priced_y))
        return float(self.base[i]), float(self.x[i]), float(self.y[i]), float(self.priced_y[i])


def grid_lower_bound(cfg, step: float = 1e-3, usage_tol: float = 1e-6):
    """Independent reference for the relaxed bound: dense per-device grid
    search inside the same price-bisection shape as the production solver.

    Returns (objective, alpha, usage).
    """
    from aoisched.engine import SystemModel
    from aoisched.lowerbound import device_params

    model = SystemModel(cfg)
    grids = [GridDevice(dev, step) for dev in device_params(model)]
    M = float(model.channels)

    def solve_all(alpha: float):
        obj = 0.0
        usage = 0.0
        for g in grids:
            o, _, _, u = g.minimize(alpha)
            obj += o
            usage += u
        return obj, usage

    obj0, u0 = solve_all(0.0)
    if u0 <= M + usage_tol:
        return obj0, 0.0, u0
    lo, hi = 0.0, 1.0
    for _ in range(200):
        _, u = solve_all(hi)
        if u <= M:
            break
        lo = hi
        hi *= 2.0
    lo_obj, lo_u = solve_all(lo)
    hi_obj, hi_u = solve_all(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= 1e-14 * max(1.0, hi):
            break
        obj_m, u_m = solve_all(mid)
        if u_m > M:
            lo, lo_obj, lo_u = mid, obj_m, u_m
        else:
            hi, hi_obj, hi_u = mid, obj_m, u_m
    if abs(hi_u - M) <= usage_tol or lo_u == hi_u:
        return hi_obj, hi, hi_u
    # blend the bracketing iterates to hit the channel budget exactly
    theta = (M - hi_u) / (lo_u - hi_u)
    theta = min(max(theta, 0.0), 1.0)
    return theta * lo_obj + (1.0 - theta) * hi_obj, hi, theta * lo_u + (1.0 - theta) * hi_u
