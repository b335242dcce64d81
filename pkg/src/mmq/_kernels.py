"""Jitted event loops for exact trajectory sampling.

These kernels are resume-safe: they check storage capacity before drawing
any randomness, so a caller can grow arrays and call again without
disturbing the random stream.
"""
import numpy as np
from numba import njit

STATUS_DONE = 0
STATUS_CHAIN_FULL = 1
STATUS_EVENTS_FULL = 2
STATUS_POP_CAP = 3


@njit(cache=True, nogil=True)
def chain_path_kernel(exit_rates, jump_cum, horizon, t, j, m, times, states, rng):
    """Sample jump epochs of a chain until ``horizon`` or storage is full."""
    cap = times.shape[0]
    d = jump_cum.shape[1]
    while True:
        r = exit_rates[j]
        if r <= 0.0:
            return m, STATUS_DONE, horizon, j
        if m >= cap:
            return m, STATUS_CHAIN_FULL, t, j
        t = t + rng.standard_exponential() / r
        if t >= horizon:
            return m, STATUS_DONE, horizon, j
        u = rng.random()
        nj = d - 1
        for c in range(d):
            if u < jump_cum[j, c]:
                nj = c
                break
        j = nj
        times[m] = t
        states[m] = j
        m += 1


@njit(cache=True, nogil=True)
def h_recursion(prop, x, y):
    # y[g+1] = prop @ y[g] + (x[g+1] - x[g]), written out for small L
    n_q = x.shape[1]
    for g in range(x.shape[0] - 1):
        for k in range(n_q):
            acc = x[g + 1, k] - x[g, k]
            for l in range(n_q):
                acc += prop[k, l] * y[g, l]
            y[g + 1, k] = acc


@njit(cache=True, nogil=True)
def _fold(gocc, gqocc, occ_win, q, g):
    # Flush window occupancy into cell g; valid only while q is unchanged
    # since the window opened.
    for jj in range(occ_win.shape[0]):
        w = occ_win[jj]
        if w != 0.0:
            gocc[g, jj] += w
            for k in range(q.shape[0]):
                gqocc[g, jj, k] += w * q[k]
            occ_win[jj] = 0.0


@njit(cache=True, nogil=True)
def _dep_rate(mu_out, q, j):
    s = 0.0
    for k in range(q.shape[0]):
        s += mu_out[j, k] * q[k]
    return s


@njit(cache=True, nogil=True)
def network_kernel(
    horizon,
    h,
    n_cells,
    chain_exit,
    chain_cum,
    lam_eff,
    arr_sum,
    mu_eff,
    mu_out,
    pop_cap,
    q,
    occ_win,
    st_f,
    st_i,
    gq,
    gocc,
    gqocc,
    garr,
    gxfer,
    chain_times,
    chain_states,
    ev_times,
    ev_src,
    ev_dst,
    record_chain,
    record_events,
    rng,
):
    """Merged-race event loop for one trajectory of (chain, queues).

    Every event re-races fresh exponentials over the chain jump, all
    arrival streams, and all per-job transfer streams; this is exact
    because the clocks are memoryless and rates change only at events.
    Occupancy is accumulated per grid cell; queue-weighted occupancy is
    folded at queue events and cell boundaries, where q is constant over
    the window being flushed.
    """
    d = chain_exit.shape[0]
    n_q = q.shape[0]
    t = st_f[0]
    j = st_i[0]
    g = st_i[1]
    n_chain = st_i[2]
    n_ev = st_i[3]
    pop = np.int64(0)
    for k in range(n_q):
        pop += q[k]
    dep = _dep_rate(mu_out, q, j)

    while True:
        if record_chain and n_chain >= chain_times.shape[0]:
            break_status = STATUS_CHAIN_FULL
            st_f[0] = t
            st_i[0] = j
            st_i[1] = g
            st_i[2] = n_chain
            st_i[3] = n_ev
            return break_status
        if record_events and n_ev >= ev_times.shape[0]:
            st_f[0] = t
            st_i[0] = j
            st_i[1] = g
            st_i[2] = n_chain
            st_i[3] = n_ev
            return STATUS_EVENTS_FULL

        total = chain_exit[j] + arr_sum[j] + dep
        if total <= 0.0:
            te = horizon
        else:
            te = t + rng.standard_exponential() / total

        if te >= horizon:
            # Fill occupancy and grid reads up to the horizon, then stop.
            while g < n_cells:
                b = h * (g + 1)
                if b > horizon:
                    break
                occ_win[j] += b - t
                t = b
                _fold(gocc, gqocc, occ_win, q, g)
                g += 1
                for k in range(n_q):
                    gq[g, k] = q[k]
            if horizon > t:
                occ_win[j] += horizon - t
                t = horizon
            if n_cells > 0:
                cell = g if g < n_cells else n_cells - 1
                _fold(gocc, gqocc, occ_win, q, cell)
            while g < n_cells:
                g += 1
                for k in range(n_q):
                    gq[g, k] = q[k]
            st_f[0] = t
            st_i[0] = j
            st_i[1] = g
            st_i[2] = n_chain
            st_i[3] = n_ev
            return STATUS_DONE

        v = rng.random() * total

        # Advance occupancy from t to te, crossing cell boundaries.
        while g < n_cells:
            b = h * (g + 1)
            if b > te:
                break
            occ_win[j] += b - t
            t = b
            _fold(gocc, gqocc, occ_win, q, g)
            g += 1
            for k in range(n_q):
                gq[g, k] = q[k]
        occ_win[j] += te - t
        t = te

        if v < chain_exit[j]:
            u = v / chain_exit[j]
            nj = d - 1
            for c in range(d):
                if u < chain_cum[j, c]:
                    nj = c
                    break
            if record_chain:
                chain_times[n_chain] = te
                chain_states[n_chain] = nj
                n_chain += 1
            j = nj
            dep = _dep_rate(mu_out, q, j)
            continue
        v -= chain_exit[j]

        # Queue event: q is about to change, so flush the window first.
        cell = g if g < n_cells else n_cells - 1
        _fold(gocc, gqocc, occ_win, q, cell)

        src = np.int64(-2)
        dst = np.int64(-2)
        for k in range(n_q):
            if v < lam_eff[j, k]:
                src = -1
                dst = k
                break
            v -= lam_eff[j, k]
        if src == -2:
            for k in range(n_q):
                blk = mu_out[j, k] * q[k]
                if v >= blk:
                    v -= blk
                    continue
                qk = np.float64(q[k])
                for l in range(n_q):
                    r = mu_eff[j, k, l] * qk
                    if v < r:
                        src = k
                        dst = l
                        break
                    v -= r
                if src == -2:
                    # Round-off inside this block: take its largest stream.
                    best = -1.0
                    for l in range(n_q):
                        r = mu_eff[j, k, l] * qk
                        if r > best:
                            best = r
                            src = k
                            dst = l
                break
        if src == -2:
            # Round-off spill past every category: take the largest stream.
            best = -1.0
            for k in range(n_q):
                if lam_eff[j, k] > best:
                    best = lam_eff[j, k]
                    src = -1
                    dst = k
                for l in range(n_q):
                    r = mu_eff[j, k, l] * q[k]
                    if r > best:
                        best = r
                        src = k
                        dst = l

        if src == -1:
            q[dst] += 1
            pop += 1
            garr[cell, dst] += 1
        else:
            q[src] -= 1
            q[dst] += 1
            gxfer[cell, src, dst] += 1
        dep = _dep_rate(mu_out, q, j)
        if record_events:
            ev_times[n_ev] = te
            ev_src[n_ev] = src
            ev_dst[n_ev] = dst
            n_ev += 1
        if pop > pop_cap:
            st_f[0] = t
            st_i[0] = j
            st_i[1] = g
            st_i[2] = n_chain
            st_i[3] = n_ev
            return STATUS_POP_CAP
