"""Convex lower bound on the long-run average AoI penalty.

A device's long-run behavior is summarized by an energy split (x, y) =
(rho_l, rho_t): the fractions of its per-slot budget spent on local compute
and on transmission.  With the shorthand

    a = eb/(e_local*Dl),  b = eb/(e_tx*Dt),  c = Dl - 1,  d = Dt + De - 1

(Dl, Dt, De mean delays, eb the budget), the best expected peak age a split
can achieve is G(x, y) = (1 + a*c*x + b*d*y)/(a*x + b*y), and the device's
relaxed penalty contribution is

    (a*x + b*y) * Ftilde(G(x, y)) - (a*v*x + b*w*y)

where v = E[F(D_local - 1)] and w = E[F(D_tx + D_edge - 1)].  Minimizing the
sum over devices subject to x, y >= 0, x + y <= 1 and the relaxed channel
constraint sum_n y_n*eb_n/e_tx_n <= M is convex.  The solver bisects the
channel price alpha, solving each device's priced problem by projected
gradient descent, and certifies the result against the stationarity identity

    W_t(G-d)/(e_tx*Dt) - W_l(G-c)/(e_local*Dl) = (gamma - nu)/eb + alpha/e_tx

with gamma, nu the multipliers of x >= 0 and y >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .engine import SystemConfig, SystemModel
from .penalty import ExtendedPenalty, TooLargeError, w_local, w_local_vec, w_offload, w_offload_vec

FLOOR_SPLIT = 1e-9
USAGE_TOL = 1e-6


class DegenerateSplit(ValueError):
    """Split with zero update energy: expected peak age is unbounded."""


class NoConvergence(RuntimeError):
    """Solver hit an iteration cap; carries the best iterate found."""

    def __init__(self, message: str, solution: "LowerBoundSolution | None" = None):
        super().__init__(message)
        self.solution = solution


class InsufficientRounds(ValueError):
    """A trace has too few completed rounds for a stable estimate."""


@dataclass(frozen=True)
class P4Device:
    """Per-device constants of the relaxed problem."""

    a: float
    b: float
    c: float
    d: float
    v: float
    w: float
    ch: float  # channel usage per unit rho_t: eb/e_tx
    mean_dl: float
    mean_dt: float
    mean_de: float
    e_local: float
    e_tx: float
    e_budget: float
    ext: ExtendedPenalty


@dataclass
class LowerBoundSolution:
    rho_local: np.ndarray
    rho_offload: np.ndarray
    alpha: float
    objective: float
    channel_usage: float
    kkt_residuals: np.ndarray
    interior: np.ndarray
    per_device_objective: np.ndarray
    peak_age: np.ndarray
    clamped: np.ndarray  # devices whose stationarity ages went negative
    diagnostics: dict = field(default_factory=dict)


@dataclass
class AlphaEstimate:
    """Empirical channel-price estimates recovered from a trace."""

    per_device: np.ndarray
    cv: float
    rounds: np.ndarray


def _model_of(cfg) -> SystemModel:
    if isinstance(cfg, SystemModel):
        return cfg
    if isinstance(cfg, SystemConfig):
        return SystemModel(cfg)
    raise TypeError(f"expected SystemConfig or SystemModel, got {type(cfg).__name__}")


def device_params(model: SystemModel) -> list[P4Device]:
    out = []
    for n in range(model.n_devices):
        m = model.devices[n]
        el = float(model.e_local[n])
        et = float(model.e_tx[n])
        eb = float(model.e_budget[n])
        if el <= 0.0 or et <= 0.0:
            raise ValueError(
                f"device {n}: lower bound needs positive e_local and e_tx"
            )
        out.append(
            P4Device(
                a=eb / (el * m.mean_dl),
                b=eb / (et * m.mean_dt),
                c=m.mean_dl - 1.0,
                d=m.mean_dt + m.mean_de - 1.0,
                v=m.ef_local,
                w=m.ef_offload,
                ch=eb / et,
                mean_dl=m.mean_dl,
                mean_dt=m.mean_dt,
                mean_de=m.mean_de,
                e_local=el,
                e_tx=et,
                e_budget=eb,
                ext=m.ext,
            )
        )
    return out


def expected_peak_age(x: float, y: float, dev: P4Device) -> float:
    """Expected peak age G under an energy split."""
    s = dev.a * x + dev.b * y
    if s <= 0.0:
        raise DegenerateSplit("rho_l + rho_t = 0: no update energy")
    return (1.0 + dev.a * dev.c * x + dev.b * dev.d * y) / s


def device_objective(x: float, y: float, dev: P4Device) -> float:
    """Relaxed long-run penalty contribution of one device."""
    g = expected_peak_age(x, y, dev)
    s = dev.a * x + dev.b * y
    return s * dev.ext.F_tilde(g) - (dev.a * dev.v * x + dev.b * dev.w * y)


# -- compiled inner solver ----------------------------------------------------


@njit(cache=True, inline="always")
def _phi_nb(a, b, c, d, v, w, pr, fv, Ft, x, y):
    s = a * x + b * y
    g = (1.0 + a * c * x + b * d * y) / s
    m = int(g)
    if m + 1 >= fv.shape[0]:
        return 0.0, False
    t = g - m
    Ftg = Ft[m] + t * fv[m] + 0.5 * t * t * (fv[m + 1] - fv[m])
    return s * Ftg - a * v * x - b * w * y + pr * y, True


@njit(cache=True, inline="always")
def _grad_nb(a, b, c, d, v, w, pr, fv, Ft, x, y):
    s = a * x + b * y
    g = (1.0 + a * c * x + b * d * y) / s
    m = int(g)
    if m + 1 >= fv.shape[0]:
        return 0.0, 0.0, False
    t = g - m
    df = fv[m + 1] - fv[m]
    ftg = fv[m] + t * df
    Ftg = Ft[m] + t * fv[m] + 0.5 * t * t * df
    gx = a * (Ftg + ftg * (c - g) - v)
    gy = b * (Ftg + ftg * (d - g) - w) + pr
    return gx, gy, True


@njit(cache=True, inline="always")
def _proj_nb(x, y, floor):
    px = x if x > 0.0 else 0.0
    py = y if y > 0.0 else 0.0
    if px + py > 1.0:
        px = 0.5 * (x - y + 1.0)
        if px < 0.0:
            px = 0.0
        elif px > 1.0:
            px = 1.0
        py = 1.0 - px
    if px + py < floor:
        px = 0.5 * (x - y + floor)
        if px < 0.0:
            px = 0.0
        elif px > floor:
            px = floor
        py = floor - px
    return px, py


@njit(cache=True)
def _pgd_nb(a, b, c, d, v, w, pr, fv, Ft, x0, y0, floor, tol, maxit):
    """Projected gradient with backtracking on the priced device problem.

    Returns (x, y, phi, gradient_map_norm, status): status 0 converged,
    1 iteration cap, 2 penalty table too small for a required peak age.
    """
    x, y = _proj_nb(x0, y0, floor)
    phi, ok = _phi_nb(a, b, c, d, v, w, pr, fv, Ft, x, y)
    if not ok:
        return x, y, 0.0, 0.0, 2
    t = 1.0
    gm = 0.0
    for it in range(maxit):
        gx, gy, ok = _grad_nb(a, b, c, d, v, w, pr, fv, Ft, x, y)
        if not ok:
            return x, y, phi, gm, 2
        accepted = False
        for _ in range(200):
            nx, ny = _proj_nb(x - t * gx, y - t * gy, floor)
            dx = nx - x
            dy = ny - y
            dist2 = dx * dx + dy * dy
            nphi, ok = _phi_nb(a, b, c, d, v, w, pr, fv, Ft, nx, ny)
            if ok and nphi <= phi + gx * dx + gy * dy + dist2 / (2.0 * t) + 1e-15 * (
                1.0 + abs(phi)
            ):
                accepted = True
                break
            t *= 0.5
            if t < 1e-18:
                break
        if not accepted:
            # stalled: either at optimum up to rounding or table overflow
            return x, y, phi, gm, 0
        gm = np.sqrt(dist2) / t
        x = nx
        y = ny
        phi = nphi
        if gm <= tol:
            return x, y, phi, gm, 0
        t *= 1.3
        if t > 1e8:
            t = 1e8
    return x, y, phi, gm, 1


# -- outer solver -------------------------------------------------------------


class _InnerSolver:
    """Per-device priced minimization with warm starts and growing tables."""

    def __init__(self, devs: list[P4Device], inner_tol: float, maxit: int):
        self.devs = devs
        self.inner_tol = inner_tol
        self.maxit = maxit
        n = len(devs)
        self.x = np.full(n, 0.25)
        self.y = np.full(n, 0.25)
        self.statuses = np.zeros(n, dtype=np.int64)
        for dev in devs:
            g_cap = max(
                expected_peak_age(1.0, 0.0, dev), expected_peak_age(0.0, 1.0, dev)
            )
            dev.ext.ensure(min(int(8 * g_cap) + 1024, dev.ext.xmax))

    def solve_all(self, alpha: float) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
        n = len(self.devs)
        xs = np.empty(n)
        ys = np.empty(n)
        phis = np.empty(n)
        usage = 0.0
        for i, dev in enumerate(self.devs):
            pr = alpha * dev.ch
            for attempt in range(4):
                x, y, phi, gm, status = _pgd_nb(
                    dev.a,
                    dev.b,
                    dev.c,
                    dev.d,
                    dev.v,
                    dev.w,
                    pr,
                    dev.ext._fv,
                    dev.ext._Ft,
                    self.x[i],
                    self.y[i],
                    FLOOR_SPLIT,
                    self.inner_tol,
                    self.maxit,
                )
                if status != 2:
                    break
                # the iterate needs ages beyond the table: grow and retry
                dev.ext.ensure(min(4 * dev.ext.size, dev.ext.xmax))
                if dev.ext.size >= dev.ext.xmax:
                    raise TooLargeError(
                        f"device {i}: peak-age table hit cap {dev.ext.xmax}"
                    )
            self.statuses[i] = status
            self.x[i] = x
            self.y[i] = y
            xs[i] = x
            ys[i] = y
            phis[i] = phi
            usage += dev.ch * y
        return xs, ys, usage, phis


def _alpha_seed(devs: list[P4Device]) -> float:
    """Price scale at which offloading loses to its own cost everywhere."""
    seed = 0.0
    for dev in devs:
        h_cap = max(expected_peak_age(1.0, 0.0, dev), expected_peak_age(0.0, 1.0, dev))
        arg = max(h_cap - dev.d, 0.0)
        wt = w_offload(dev.ext, dev.mean_dt, dev.mean_de, dev.w, arg)
        seed = max(seed, wt / dev.mean_dt)
    return seed if seed > 0.0 else 1.0


def kkt_residuals(
    x: np.ndarray, y: np.ndarray, alpha: float, devs: list[P4Device], itol: float = 1e-7
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stationarity residuals with multipliers recovered from active sets.

    Returns (residuals, interior mask, clamped mask); clamped marks devices
    whose stationarity ages G-c or G-d fell below zero (evaluated at zero).
    """
    n = len(devs)
    res = np.zeros(n)
    interior = np.zeros(n, dtype=bool)
    clamped = np.zeros(n, dtype=bool)
    for i, dev in enumerate(devs):
        g = expected_peak_age(x[i], y[i], dev)
        ht = g - dev.d
        hl = g - dev.c
        if ht < 0.0 or hl < 0.0:
            clamped[i] = True
            ht = max(ht, 0.0)
            hl = max(hl, 0.0)
        wt = w_offload(dev.ext, dev.mean_dt, dev.mean_de, dev.w, ht)
        wl = w_local(dev.ext, dev.mean_dl, dev.v, hl)
        lhs = wt / (dev.e_tx * dev.mean_dt) - wl / (dev.e_local * dev.mean_dl)
        price = alpha / dev.e_tx
        if x[i] > itol and y[i] > itol:
            interior[i] = True
            res[i] = abs(lhs - price)
        elif y[i] <= itol and x[i] > itol:
            # nu = eb*(price - lhs) must be >= 0
            res[i] = max(0.0, lhs - price)
        elif x[i] <= itol and y[i] > itol:
            # gamma = eb*(lhs - price) must be >= 0
            res[i] = max(0.0, price - lhs)
        else:
            res[i] = 0.0
    return res, interior, clamped


def solve_p4(
    cfg,
    *,
    tol: float = USAGE_TOL,
    inner_tol: float = 1e-9,
    inner_maxit: int = 100000,
    max_bisect: int = 200,
) -> LowerBoundSolution:
    """Minimize the relaxed system objective under the channel constraint."""
    model = _model_of(cfg)
    M = float(model.channels)
    devs = device_params(model)
    solver = _InnerSolver(devs, inner_tol, inner_maxit)

    x0, y0, u0, _ = solver.solve_all(0.0)
    diagnostics: dict = {"bisect_iters": 0, "degenerate": False}
    if u0 <= M + tol:
        alpha = 0.0
        xs, ys, usage = x0, y0, u0
    else:
        lo, u_lo, lo_xy = 0.0, u0, (x0, y0)
        hi = _alpha_seed(devs)
        doubles = 0
        while True:
            xh, yh, u_hi, _ = solver.solve_all(hi)
            if u_hi <= M:
                break
            lo, u_lo, lo_xy = hi, u_hi, (xh, yh)
            hi *= 2.0
            doubles += 1
            if doubles > 80:
                raise NoConvergence(
                    f"channel price bracket not found below {hi:.3e}"
                )
        hi_xy = (xh, yh)
        exact = False
        for it in range(max_bisect):
            diagnostics["bisect_iters"] = it + 1
            if hi - lo <= 1e-15 * max(1.0, hi):
                break
            mid = 0.5 * (lo + hi)
            xm, ym, um, _ = solver.solve_all(mid)
            if abs(um - M) <= tol and mid * abs(um - M) <= tol:
                alpha, xs, ys, usage, exact = mid, xm, ym, um, True
                break
            if um > M:
                lo, u_lo, lo_xy = mid, um, (xm, ym)
            else:
                hi, u_hi, hi_xy = mid, um, (xm, ym)
        if not exact:
            # the dual is flat across a usage jump: blend the two bracket
            # solutions (both near-optimal at alpha ~ hi) to hit usage = M
            alpha = hi
            if u_lo > u_hi:
                theta = (M - u_hi) / (u_lo - u_hi)
                theta = min(max(theta, 0.0), 1.0)
            else:
                theta = 0.0
            xs = theta * lo_xy[0] + (1.0 - theta) * hi_xy[0]
            ys = theta * lo_xy[1] + (1.0 - theta) * hi_xy[1]
            usage = float(sum(d.ch * yv for d, yv in zip(devs, ys)))
            if theta > 0.0:
                diagnostics["degenerate"] = True

    per_dev = np.array([device_objective(xs[i], ys[i], d) for i, d in enumerate(devs)])
    peak = np.array([expected_peak_age(xs[i], ys[i], d) for i, d in enumerate(devs)])
    res, interior, clamped = kkt_residuals(xs, ys, alpha, devs)
    diagnostics["slack"] = abs(alpha * (usage - M))
    diagnostics["inner_status"] = solver.statuses.copy()
    sol = LowerBoundSolution(
        rho_local=np.asarray(xs, dtype=np.float64),
        rho_offload=np.asarray(ys, dtype=np.float64),
        alpha=float(alpha),
        objective=float(per_dev.sum()),
        channel_usage=float(usage),
        kkt_residuals=res,
        interior=interior,
        per_device_objective=per_dev,
        peak_age=peak,
        clamped=clamped,
        diagnostics=diagnostics,
    )
    if np.any(solver.statuses == 1):
        raise NoConvergence("inner solver hit its iteration cap", sol)
    if usage > M + max(tol, 1e-9 * M):
        raise NoConvergence(
            f"channel usage {usage:.9f} exceeds {M:.0f} after bisection", sol
        )
    return sol


def verify_kkt(sol: LowerBoundSolution, cfg) -> np.ndarray:
    """Recompute stationarity residuals of a solution against a config."""
    devs = device_params(_model_of(cfg))
    res, _, _ = kkt_residuals(sol.rho_local, sol.rho_offload, sol.alpha, devs)
    return res


def estimate_alpha(trace, cfg, min_rounds: int = 100) -> AlphaEstimate:
    """Channel-price estimates from logged peak ages.

    Plugs each round's peak age into the stationarity identity solved for
    alpha (ages below zero clamped): consistent schedulers produce tightly
    clustered per-device means, so the cross-device coefficient of variation
    measures how uniformly a policy prices the channel.
    """
    model = _model_of(cfg)
    rounds = np.array([len(p) for p in trace.peaks], dtype=np.int64)
    short = np.nonzero(rounds < min_rounds)[0]
    if short.size:
        raise InsufficientRounds(
            f"devices {short.tolist()} have fewer than {min_rounds} rounds"
        )
    means = np.empty(model.n_devices)
    for n in range(model.n_devices):
        m = model.devices[n]
        et = float(model.e_tx[n])
        el = float(model.e_local[n])
        peaks = trace.peaks[n].astype(np.float64)
        ht = np.maximum(peaks - (m.mean_dt + m.mean_de - 1.0), 0.0)
        hl = np.maximum(peaks - (m.mean_dl - 1.0), 0.0)
        wt = w_offload_vec(m.ext, m.mean_dt, m.mean_de, m.ef_offload, ht)
        wl = w_local_vec(m.ext, m.mean_dl, m.ef_local, hl)
        est = wt / m.mean_dt - (et / (el * m.mean_dl)) * wl
        means[n] = est.mean()
    mu = means.mean()
    cv = float(np.std(means) / mu) if mu != 0.0 else float("inf")
    return AlphaEstimate(per_device=means, cv=cv, rounds=rounds)
