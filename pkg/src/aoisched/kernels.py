"""Compiled fast path for long simulations.

Replays the reference loop in engine.py slot for slot: identical SplitMix64
streams, identical inverse-CDF sampling, identical priority thresholds read
from prefix tables, identical insertion order.  Parity with the Python loop
is pinned by tests; the kernel exists only to make 10^6-slot runs cheap.

The loop runs in chunks so the priority/penalty tables (indexed by AoI) can
grow between chunks: within one chunk AoI rises by at most one per slot and
resets never increase it, so a table sized to max(h) + chunk slots is safe.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .engine import (
    ENERGY_WINDOW,
    RunTrace,
    StateRecords,
    SystemConfig,
    SystemModel,
    _n_windows,
    _window_counts,
)
from .rng import (
    TAG_EDGE_DELAY,
    TAG_LOCAL_DELAY,
    TAG_POLICY,
    TAG_TX_DELAY,
    RngBundle,
)

DEFAULT_CHUNK = 16384

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)
_INV_2_53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def _next_float(rs, i):
    s = rs[i] + _GAMMA
    rs[i] = s
    z = (s ^ (s >> _U30)) * _MIX1
    z = (z ^ (z >> _U27)) * _MIX2
    z = z ^ (z >> _U31)
    return np.float64(z >> _U11) * _INV_2_53


@njit(cache=True, inline="always")
def _draw_delay(rs, ridx, sv, sc, base, ln):
    # inverse-CDF draw; always consumes exactly one uniform
    u = _next_float(rs, ridx)
    lo = 0
    hi = ln
    while lo < hi:
        mid = (lo + hi) >> 1
        if sc[base + mid] > u:
            hi = mid
        else:
            lo = mid + 1
    if lo >= ln:
        lo = ln - 1
    return sv[base + lo]


@njit(cache=True)
def _simulate_chunk(
    slot0,
    n_slots,
    win_len,
    mode,
    channels,
    tid,
    vel,
    vet,
    pl,
    pt,
    f_tbl,
    wl_tbl,
    wt_tbl,
    sv,
    sc,
    soff,
    slen,
    rs,
    grant_idx,
    h,
    d,
    stage,
    remaining,
    rtype,
    q,
    etot,
    busy,
    e_local,
    e_tx,
    e_budget,
    pen_slot,
    pen_win,
    en_win,
    pk_peak,
    pk_lat,
    pk_off,
    cnt,
    rec,
    rec_h,
    rec_d,
    rec_stage,
    rec_q,
    rec_e,
):
    n = h.shape[0]
    act = np.zeros(n, dtype=np.int8)
    cand_I = np.empty(n, dtype=np.float64)
    cand_n = np.empty(n, dtype=np.int64)
    cand_l = np.empty(n, dtype=np.bool_)
    for s in range(n_slots):
        k = slot0 + s
        w = k // win_len
        tot = 0.0
        for i in range(n):
            fh = f_tbl[tid[i], h[i]]
            tot += fh
            pen_win[w, i] += fh
        pen_slot[k] = tot
        free = channels - busy[0]
        ncand = 0
        if mode == 0:
            # threshold policies: local/offload eligibility plus index walk
            for i in range(n):
                act[i] = 0
                if stage[i] == 0:
                    wl = wl_tbl[tid[i], h[i]]
                    wt = wt_tbl[tid[i], h[i]]
                    thl = vel[i] * q[i]
                    tht = vet[i] * q[i]
                    in_cl = wl >= thl
                    in_ct = wt >= tht
                    if in_ct:
                        if in_cl:
                            index = wt - wl + (vel[i] - vet[i]) * q[i]
                        else:
                            index = wt - tht
                        # insertion sort: descending index, ties by device id
                        pos = ncand
                        while pos > 0 and cand_I[pos - 1] < index:
                            cand_I[pos] = cand_I[pos - 1]
                            cand_n[pos] = cand_n[pos - 1]
                            cand_l[pos] = cand_l[pos - 1]
                            pos -= 1
                        cand_I[pos] = index
                        cand_n[pos] = i
                        cand_l[pos] = in_cl
                        ncand += 1
                    elif in_cl:
                        act[i] = 1
            for j in range(ncand):
                i = cand_n[j]
                if free > 0 and cand_I[j] >= 0.0:
                    act[i] = 2
                    free -= 1
                elif cand_l[j]:
                    act[i] = 1
        else:
            # randomized policy: independent intents, uniform channel grant
            for i in range(n):
                act[i] = 0
                if stage[i] == 0:
                    u = _next_float(rs, i * 4 + 3)
                    if u < pl[i]:
                        act[i] = 1
                    elif u < pl[i] + pt[i]:
                        cand_n[ncand] = i
                        ncand += 1
            if ncand > free:
                for i in range(free):
                    u = _next_float(rs, grant_idx)
                    j = i + int(u * (ncand - i))
                    if j >= ncand:
                        j = ncand - 1
                    tmp = cand_n[i]
                    cand_n[i] = cand_n[j]
                    cand_n[j] = tmp
                for i in range(free):
                    act[cand_n[i]] = 2
            else:
                for i in range(ncand):
                    act[cand_n[i]] = 2
        # apply directives (sample stage durations)
        for i in range(n):
            a = act[i]
            if a == 1:
                stage[i] = 1
                remaining[i] = _draw_delay(rs, i * 4 + 0, sv, sc, soff[i, 0], slen[i, 0])
                rtype[i] = 0
            elif a == 2:
                stage[i] = 2
                remaining[i] = _draw_delay(rs, i * 4 + 1, sv, sc, soff[i, 1], slen[i, 1])
                rtype[i] = 1
                busy[0] += 1
        if rec == 1:
            for i in range(n):
                rec_h[k, i] = h[i]
                rec_d[k, i] = d[i]
                rec_stage[k, i] = stage[i]
                rec_q[k, i] = q[i]
        # advance: energy, queue, countdown, completion, AoI
        for i in range(n):
            st = stage[i]
            if st == 1:
                e = e_local[i]
            elif st == 2:
                e = e_tx[i]
            else:
                e = 0.0
            etot[i] += e
            en_win[w, i] += e
            if rec == 1:
                rec_e[k, i] = e
            qn = q[i] - e_budget[i] + e
            q[i] = qn if qn > 0.0 else 0.0
            completed = False
            if st != 0:
                remaining[i] -= 1
                if remaining[i] == 0:
                    if st == 2:
                        busy[0] -= 1
                        de = _draw_delay(rs, i * 4 + 2, sv, sc, soff[i, 2], slen[i, 2])
                        if de == 0:
                            completed = True
                        else:
                            stage[i] = 3
                            remaining[i] = de
                    else:
                        completed = True
            if completed:
                c = cnt[i]
                pk_peak[i, c] = h[i]
                pk_lat[i, c] = d[i] + 1
                pk_off[i, c] = rtype[i]
                cnt[i] = c + 1
                h[i] = d[i] + 1
                d[i] = 0
                stage[i] = 0
            else:
                h[i] += 1
                if stage[i] != 0:
                    d[i] += 1


def _sampler_pools(model: SystemModel):
    """Flattened (values, cdf) pools plus per-device offsets for 3 stage tags."""
    n = model.n_devices
    sv_parts: list[np.ndarray] = []
    sc_parts: list[np.ndarray] = []
    soff = np.zeros((n, 3), dtype=np.int64)
    slen = np.zeros((n, 3), dtype=np.int64)
    pool_key: dict[tuple[int, int], tuple[int, int]] = {}
    off = 0
    for i in range(n):
        t = int(model.type_id[i])
        dcfg = model.devices[i].cfg
        for j, dist in enumerate((dcfg.local_delay, dcfg.tx_delay, dcfg.edge_delay)):
            got = pool_key.get((t, j))
            if got is None:
                values, cdfv = dist.sampler_table()
                got = (off, len(values))
                pool_key[(t, j)] = got
                sv_parts.append(np.ascontiguousarray(values, dtype=np.int64))
                sc_parts.append(np.ascontiguousarray(cdfv, dtype=np.float64))
                off += len(values)
            soff[i, j], slen[i, j] = got
    return np.concatenate(sv_parts), np.concatenate(sc_parts), soff, slen


def run_kernel(
    cfg: SystemConfig,
    model: SystemModel,
    policy,
    *,
    record: bool = False,
    chunk: int = DEFAULT_CHUNK,
) -> RunTrace:
    """Run `policy` on the compiled loop; mirrors engine._run_python exactly."""
    n = model.n_devices
    K = cfg.horizon
    if policy.kernel_mode == "tables":
        mode = 0
    elif policy.kernel_mode == "randomized":
        mode = 1
    else:
        raise ValueError(f"policy {policy!r} has no kernel mode")

    rng = RngBundle(cfg.seed, n)
    rs = np.empty(n * 4 + 1, dtype=np.uint64)
    rs[: n * 4] = rng.state_vector(
        (TAG_LOCAL_DELAY, TAG_TX_DELAY, TAG_EDGE_DELAY, TAG_POLICY)
    )
    rs[n * 4] = np.uint64(rng.grant_stream().state)
    grant_idx = n * 4

    sv, sc, soff, slen = _sampler_pools(model)
    tid = np.ascontiguousarray(model.type_id, dtype=np.int64)
    vel = np.ascontiguousarray(model.vel, dtype=np.float64)
    vet = np.ascontiguousarray(model.vet, dtype=np.float64)
    e_local = np.ascontiguousarray(model.e_local, dtype=np.float64)
    e_tx = np.ascontiguousarray(model.e_tx, dtype=np.float64)
    e_budget = np.ascontiguousarray(model.e_budget, dtype=np.float64)
    if mode == 1:
        pl, pt = policy.probs(n)
        pl = np.ascontiguousarray(pl, dtype=np.float64)
        pt = np.ascontiguousarray(pt, dtype=np.float64)
    else:
        pl = np.zeros(n)
        pt = np.zeros(n)

    def build_tables(upto: int):
        f_tbl = np.stack([t.f_table(upto) for t in model.types])
        if mode == 0:
            wl_tbl, wt_tbl = policy.build_tables(model, upto)
            wl_tbl = np.ascontiguousarray(wl_tbl, dtype=np.float64)
            wt_tbl = np.ascontiguousarray(wt_tbl, dtype=np.float64)
        else:
            wl_tbl = np.zeros((1, 1))
            wt_tbl = np.zeros((1, 1))
        return np.ascontiguousarray(f_tbl, dtype=np.float64), wl_tbl, wt_tbl

    h = np.full(n, cfg.h0, dtype=np.int64)
    d = np.zeros(n, dtype=np.int64)
    stage = np.zeros(n, dtype=np.int8)
    remaining = np.zeros(n, dtype=np.int64)
    rtype = np.zeros(n, dtype=np.int8)
    q = np.zeros(n)
    etot = np.zeros(n)
    busy = np.zeros(1, dtype=np.int64)

    w_total = _n_windows(K)
    pen_slot = np.zeros(K)
    pen_win = np.zeros((w_total, n))
    en_win = np.zeros((w_total, n))
    pk_peak = np.empty((n, chunk), dtype=np.int64)
    pk_lat = np.empty((n, chunk), dtype=np.int64)
    pk_off = np.empty((n, chunk), dtype=np.int8)
    cnt = np.zeros(n, dtype=np.int64)
    peaks: list[list[np.ndarray]] = [[] for _ in range(n)]
    lats: list[list[np.ndarray]] = [[] for _ in range(n)]
    offl: list[list[np.ndarray]] = [[] for _ in range(n)]

    rec = 1 if record else 0
    if record:
        rec_h = np.zeros((K, n), dtype=np.int64)
        rec_d = np.zeros((K, n), dtype=np.int64)
        rec_stage = np.zeros((K, n), dtype=np.int8)
        rec_q = np.zeros((K, n))
        rec_e = np.zeros((K, n))
    else:
        rec_h = np.zeros((1, 1), dtype=np.int64)
        rec_d = np.zeros((1, 1), dtype=np.int64)
        rec_stage = np.zeros((1, 1), dtype=np.int8)
        rec_q = np.zeros((1, 1))
        rec_e = np.zeros((1, 1))

    f_tbl, wl_tbl, wt_tbl = build_tables(int(cfg.h0) + chunk + 4)
    n_chunks = 0
    slot0 = 0
    while slot0 < K:
        n_slots = min(chunk, K - slot0)
        need = int(h.max()) + n_slots + 2
        if need >= f_tbl.shape[1]:
            f_tbl, wl_tbl, wt_tbl = build_tables(need + chunk)
        cnt[:] = 0
        _simulate_chunk(
            slot0,
            n_slots,
            ENERGY_WINDOW,
            mode,
            cfg.channels,
            tid,
            vel,
            vet,
            pl,
            pt,
            f_tbl,
            wl_tbl,
            wt_tbl,
            sv,
            sc,
            soff,
            slen,
            rs,
            grant_idx,
            h,
            d,
            stage,
            remaining,
            rtype,
            q,
            etot,
            busy,
            e_local,
            e_tx,
            e_budget,
            pen_slot,
            pen_win,
            en_win,
            pk_peak,
            pk_lat,
            pk_off,
            cnt,
            rec,
            rec_h,
            rec_d,
            rec_stage,
            rec_q,
            rec_e,
        )
        for i in range(n):
            c = int(cnt[i])
            if c:
                peaks[i].append(pk_peak[i, :c].copy())
                lats[i].append(pk_lat[i, :c].copy())
                offl[i].append(pk_off[i, :c].copy())
        slot0 += n_slots
        n_chunks += 1

    def _cat(parts: list[np.ndarray], dtype) -> np.ndarray:
        if parts:
            return np.concatenate(parts)
        return np.empty(0, dtype=dtype)

    records = None
    if record:
        records = StateRecords(h=rec_h, d=rec_d, stage=rec_stage, q=rec_q, energy=rec_e)
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
        peaks=[_cat(p, np.int64) for p in peaks],
        latencies=[_cat(p, np.int64) for p in lats],
        offload_flags=[_cat(p, np.int8).astype(bool) for p in offl],
        energy_total=etot,
        final_h=h.copy(),
        final_d=d.copy(),
        final_q=q.copy(),
        final_stage=stage.copy(),
        records=records,
        meta={"engine": "kernel", "chunks": n_chunks},
    )
