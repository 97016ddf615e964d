"""Trace analytics and report writers.

summarize() turns a RunTrace into steady-state numbers (warm-up discarded,
window-aligned), drift_constant() computes the bound constant

    B = (V/2) * sum_n (max(e_local, e_tx) - e_budget)^2,

prop1_bound_check() evaluates the performance-ratio inequality in its power
regime, and fit_composite() recovers (a, b) of g(x) = (a*x + 1)^(-b) from
profiling points by damped Gauss-Newton.  CSV writers emit deterministic
byte-stable files (shortest round-trip float formatting, fixed column order).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .delays import Deterministic
from .engine import RunTrace, SystemConfig, SystemModel
from .lowerbound import (
    AlphaEstimate,
    InsufficientRounds,
    LowerBoundSolution,
    estimate_alpha,
)
from .penalty import LinearPenalty, PowerPenalty, SquarePenalty


class RegimeMismatch(ValueError):
    """Scenario is outside the regime a bound or formula requires."""


class FitDiverged(RuntimeError):
    """Curve fit failed to converge within the iteration cap."""


@dataclass
class RunMetrics:
    """Steady-state summary of one run."""

    per_device_penalty: np.ndarray
    total_penalty: float
    per_device_energy: np.ndarray
    energy_series: np.ndarray  # [W, N] per-window mean energy
    window_ends: np.ndarray  # [W] last slot index (1-based) of each window
    rounds_local: np.ndarray
    rounds_offload: np.ndarray
    peak_histogram: np.ndarray  # counts indexed by peak age, all devices
    alpha: Optional[AlphaEstimate]
    drift_B: float
    warmup_slots: int
    slots_counted: int
    win_len: int


def _model_of(cfg) -> SystemModel:
    if isinstance(cfg, SystemModel):
        return cfg
    return SystemModel(cfg)


def drift_constant(cfg) -> float:
    model = _model_of(cfg)
    worst = np.maximum(model.e_local, model.e_tx) - model.e_budget
    return 0.5 * model.V * float(np.sum(worst * worst))


def summarize(trace: RunTrace, cfg, warmup: float = 0.1, alpha_min_rounds: int = 100) -> RunMetrics:
    """Post-warm-up averages; warm-up is rounded down to a window boundary."""
    if not 0.0 <= warmup <= 0.9:
        raise ValueError("warmup fraction must be within [0, 0.9]")
    model = _model_of(cfg)
    k_total = trace.horizon
    start_w = int(round(warmup * k_total)) // trace.win_len
    counts = trace.win_counts
    counted = int(counts[start_w:].sum())
    pen = trace.pen_win[start_w:].sum(axis=0) / counted
    energy = trace.en_win[start_w:].sum(axis=0) / counted
    series = trace.en_win / counts[:, None]
    window_ends = np.cumsum(counts)
    rounds_local = np.array(
        [int((~f).sum()) for f in trace.offload_flags], dtype=np.int64
    )
    rounds_offload = np.array([int(f.sum()) for f in trace.offload_flags], dtype=np.int64)
    all_peaks = (
        np.concatenate(trace.peaks)
        if any(len(p) for p in trace.peaks)
        else np.zeros(0, dtype=np.int64)
    )
    hist = np.bincount(all_peaks) if all_peaks.size else np.zeros(0, dtype=np.int64)
    try:
        alpha = estimate_alpha(trace, model, min_rounds=alpha_min_rounds)
    except InsufficientRounds:
        alpha = None
    return RunMetrics(
        per_device_penalty=pen,
        total_penalty=float(pen.sum()),
        per_device_energy=energy,
        energy_series=series,
        window_ends=window_ends,
        rounds_local=rounds_local,
        rounds_offload=rounds_offload,
        peak_histogram=hist,
        alpha=alpha,
        drift_B=drift_constant(model),
        warmup_slots=start_w * trace.win_len,
        slots_counted=counted,
        win_len=trace.win_len,
    )


# -- performance-ratio inequality ---------------------------------------------


@dataclass
class Prop1Report:
    p: float
    B: float
    lhs: float
    rhs: float
    satisfied: bool
    margin: float
    ratio: Optional[float] = None  # J/J*, filled for p = 1
    ratio_bound: Optional[float] = None  # 2 + 2*sqrt(B/J* + 1), p = 1


def _power_exponent(penalty) -> Optional[float]:
    if isinstance(penalty, LinearPenalty):
        return 1.0
    if isinstance(penalty, SquarePenalty):
        return 2.0
    if isinstance(penalty, PowerPenalty):
        return float(penalty.p)
    return None


def check_power_regime(cfg) -> float:
    """Validate the pure-power unit-delay regime; returns the shared exponent."""
    model = _model_of(cfg)
    exps = set()
    for n, dev in enumerate(model.cfg.devices):
        p = _power_exponent(dev.penalty)
        if p is None:
            raise RegimeMismatch(f"device {n}: penalty {dev.penalty!r} is not a pure power")
        exps.add(p)
        if dev.local_delay != Deterministic(1) or dev.tx_delay != Deterministic(1):
            raise RegimeMismatch(f"device {n}: local/tx delays must be deterministic 1")
        if dev.edge_delay != Deterministic(0):
            raise RegimeMismatch(f"device {n}: edge delay must be deterministic 0")
    if len(exps) != 1:
        raise RegimeMismatch(f"devices mix penalty exponents {sorted(exps)}")
    return exps.pop()


def prop1_bound_check(
    metrics: RunMetrics, lb: LowerBoundSolution, cfg, p: Optional[float] = None
) -> Prop1Report:
    """Evaluate (J/(p+1))^(p+1) <= J* (B/p + J)^p for a power-regime run."""
    regime_p = check_power_regime(cfg)
    if p is not None and p != regime_p:
        raise RegimeMismatch(f"requested exponent {p} but scenario uses {regime_p}")
    p = regime_p
    J = metrics.total_penalty
    j_star = lb.objective
    B = metrics.drift_B
    lhs = (J / (p + 1.0)) ** (p + 1.0)
    rhs = j_star * (B / p + J) ** p
    report = Prop1Report(
        p=p,
        B=B,
        lhs=lhs,
        rhs=rhs,
        satisfied=bool(lhs <= rhs * (1.0 + 1e-12)),
        margin=rhs - lhs,
    )
    if p == 1.0:
        report.ratio = J / j_star
        report.ratio_bound = 2.0 + 2.0 * math.sqrt(B / j_star + 1.0)
    return report


# -- penalty-profile fitting ---------------------------------------------------


@dataclass
class FitResult:
    a: float
    b: float
    rmse: float
    iterations: int
    converged: bool
    at_boundary: bool  # a parameter pinned at 0: constant data, no identifiable curve


def fit_composite(
    points: Iterable[tuple[float, float]],
    *,
    a0: float = 0.05,
    b0: float = 0.5,
    max_iter: int = 200,
    tol: float = 1e-12,
) -> FitResult:
    """Least-squares fit of g(x) = (a*x + 1)^(-b) to (age, probability) points."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 5:
        raise ValueError(f"fit needs at least 5 points, got {len(pts)}")
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if np.any(ys < 0.0) or np.any(ys > 1.0):
        raise ValueError("success probabilities must lie in [0, 1]")
    a, b = float(a0), float(b0)
    lam = 1e-8

    def sse_of(aa: float, bb: float) -> float:
        return float(np.sum(((aa * xs + 1.0) ** (-bb) - ys) ** 2))

    sse = sse_of(a, b)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        base = a * xs + 1.0
        g = base ** (-b)
        r = g - ys
        ja = -b * xs * base ** (-b - 1.0)
        jb = -g * np.log(base)
        jtj = np.array(
            [[np.dot(ja, ja), np.dot(ja, jb)], [np.dot(ja, jb), np.dot(jb, jb)]]
        )
        jtr = np.array([np.dot(ja, r), np.dot(jb, r)])
        step_ok = False
        for _ in range(60):
            try:
                delta = np.linalg.solve(jtj + lam * np.eye(2), -jtr)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None and np.all(np.isfinite(delta)):
                na = max(a + float(delta[0]), 0.0)
                nb = max(b + float(delta[1]), 0.0)
                nsse = sse_of(na, nb)
                if nsse <= sse * (1.0 + 1e-15) + 1e-300:
                    step_ok = True
                    break
            lam *= 10.0
            if lam > 1e12:
                break
        if not step_ok:
            # no productive step exists; flat gradient means we are done
            converged = bool(np.max(np.abs(jtr)) <= 1e-10 * (1.0 + sse))
            break
        moved = max(abs(na - a), abs(nb - b))
        a, b, sse = na, nb, nsse
        lam = max(lam * 0.1, 1e-14)
        if moved <= tol * (1.0 + abs(a) + abs(b)):
            converged = True
            break
    if not converged and not math.isfinite(sse):
        raise FitDiverged(f"fit diverged after {it} iterations")
    if not converged and it >= max_iter:
        raise FitDiverged(f"no convergence in {max_iter} iterations (sse={sse:.3e})")
    rmse = math.sqrt(sse / len(pts))
    return FitResult(
        a=a,
        b=b,
        rmse=rmse,
        iterations=it,
        converged=converged,
        at_boundary=bool(a <= 1e-10 or b <= 1e-10),
    )


# -- CSV writers ---------------------------------------------------------------


def fmt_value(v) -> str:
    """Deterministic cell formatting: shortest round-trip floats."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: list[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt_value(v) for v in row) + "\n")


SUMMARY_HEADER = [
    "scenario",
    "label",
    "policy",
    "replication",
    "seed",
    "device",
    "penalty_mean",
    "energy_mean",
    "rounds_local",
    "rounds_offload",
    "alpha_hat",
]


def summary_rows(meta: dict, m: RunMetrics) -> list[list]:
    base = [meta["scenario"], meta["label"], meta["policy"], meta["replication"], meta["seed"]]
    rows = []
    n = len(m.per_device_penalty)
    for i in range(n):
        alpha_hat = m.alpha.per_device[i] if m.alpha is not None else ""
        rows.append(
            base
            + [
                i,
                m.per_device_penalty[i],
                m.per_device_energy[i],
                m.rounds_local[i],
                m.rounds_offload[i],
                alpha_hat,
            ]
        )
    rows.append(
        base
        + [
            "ALL",
            m.total_penalty,
            float(m.per_device_energy.mean()),
            int(m.rounds_local.sum()),
            int(m.rounds_offload.sum()),
            m.alpha.cv if m.alpha is not None else "",
        ]
    )
    return rows


ENERGY_SERIES_HEADER = [
    "scenario",
    "label",
    "policy",
    "replication",
    "window_end",
    "device",
    "energy_mean",
]


def energy_series_rows(meta: dict, m: RunMetrics) -> list[list]:
    base = [meta["scenario"], meta["label"], meta["policy"], meta["replication"]]
    rows = []
    w_total, n = m.energy_series.shape
    for w in range(w_total):
        for i in range(n):
            rows.append(base + [int(m.window_ends[w]), i, m.energy_series[w, i]])
    return rows


ALPHA_CV_HEADER = [
    "scenario",
    "label",
    "policy",
    "replication",
    "device",
    "alpha_hat",
    "rounds",
    "cv",
]


def alpha_cv_rows(meta: dict, m: RunMetrics) -> list[list]:
    if m.alpha is None:
        return []
    base = [meta["scenario"], meta["label"], meta["policy"], meta["replication"]]
    rows = []
    for i in range(len(m.alpha.per_device)):
        rows.append(base + [i, m.alpha.per_device[i], int(m.alpha.rounds[i]), ""])
    rows.append(base + ["ALL", float(m.alpha.per_device.mean()), int(m.alpha.rounds.sum()), m.alpha.cv])
    return rows


SWEEP_HEADER = [
    "scenario",
    "label",
    "policy",
    "replications",
    "penalty_mean",
    "penalty_stderr",
    "energy_mean",
    "alpha_cv_mean",
    "lower_bound",
]


def sweep_row(
    scenario: str,
    label: str,
    policy: str,
    per_rep_penalty: list[float],
    per_rep_energy: list[float],
    per_rep_cv: list[float],
    lower_bound: Optional[float],
) -> list:
    pen = np.asarray(per_rep_penalty, dtype=np.float64)
    stderr = float(pen.std(ddof=1) / math.sqrt(len(pen))) if len(pen) > 1 else 0.0
    cvs = [c for c in per_rep_cv if c == c]  # drop NaN
    return [
        scenario,
        label,
        policy,
        len(pen),
        float(pen.mean()),
        stderr,
        float(np.mean(per_rep_energy)),
        float(np.mean(cvs)) if cvs else "",
        lower_bound if lower_bound is not None else "",
    ]


TRACE_HEADER = ["slot", "device", "h", "d", "stage", "q", "energy"]


def trace_rows(trace: RunTrace):
    if trace.records is None:
        raise ValueError("trace.csv needs a run with record=True")
    r = trace.records
    k_total, n = r.h.shape
    for k in range(k_total):
        for i in range(n):
            yield [k, i, int(r.h[k, i]), int(r.d[k, i]), int(r.stage[k, i]), r.q[k, i], r.energy[k, i]]
