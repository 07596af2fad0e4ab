"""JIT-compiled event loops.

All kernels take a ``numpy.random.Generator`` and draw from it directly, so
a run is fully determined by the generator's seed.  Times are real (not
diffusion) time throughout.
"""
import numpy as np
from numba import njit

# columns of the integral vectors
F_TIME = 0
F_IDLE = 1
F_CENTERED = 2
F_Q2 = 3
F_QBAR3 = 4
F_QBAR3_POS = 5
F_IDLE_ZERO = 6
F_EXCESS_POS = 7
F_EXCESS_POS_SQ = 8
F_INV_EXCESS = 9
N_FUNCTIONALS = 10

# columns of per-cycle suprema
SUP_IDLE = 0
SUP_Q2 = 1
SUP_QBAR3 = 2
SUP_CENTERED = 3
N_SUPS = 4

STATUS_OK = 0
STATUS_WATCHDOG = 1
STATUS_ALARM = 2


@njit(inline="always")
def _arrive(q, top, n):
    j = 0
    while q[j] == n:
        j += 1
    q[j] += 1
    if j + 1 > top:
        top = j + 1
    return j, top


@njit(inline="always")
def _depart(q, top, u):
    # level index i (0-based) is the largest with q[i] > u, u uniform on [0, q[0])
    i = 0
    while i + 1 < top and q[i + 1] > u:
        i += 1
    q[i] -= 1
    if q[i] == 0:
        top = i
    return i, top


@njit(inline="always")
def _accumulate(acc, w, idle, centered, q2, qbar3, inv_excess):
    acc[F_TIME] += w
    acc[F_IDLE] += w * idle
    acc[F_CENTERED] += w * centered
    acc[F_Q2] += w * q2
    acc[F_QBAR3] += w * qbar3
    if qbar3 > 0:
        acc[F_QBAR3_POS] += w
    if idle == 0:
        acc[F_IDLE_ZERO] += w
    if centered > 0:
        acc[F_EXCESS_POS] += w * centered
        acc[F_EXCESS_POS_SQ] += w * centered * centered
        acc[F_INV_EXCESS] += w * inv_excess


@njit(cache=True)
def jsq_path(rng, q, top, n, lam, t_end, t_warm, grid_dt, n_grid, queue_scale,
             tau_idle, tau_q2, tau_s, alarm_level, hist, hist_offset,
             trans_up, trans_down):
    """Simulate the occupancy chain on ``[0, t_end]``.

    ``q`` is modified in place and holds the final state.  Integrals cover
    ``[t_warm, t_end]``; grid samples and the cumulative idle and inverse-X
    integrals cover ``[0, t_end]`` from time 0.
    """
    acc = np.zeros(N_FUNCTIONALS)
    grid = np.zeros((n_grid, 6))  # I, Q2, Qbar3, S, cum I ds, cum ds/X (real time)
    hit_idle = np.full(tau_idle.shape[0], -1.0)
    hit_q2 = np.full(tau_q2.shape[0], -1.0)
    hit_s = np.full(tau_s.shape[0], -1.0)
    s = 0
    for k in range(top):
        s += q[k]
    t = 0.0
    cum_idle = 0.0
    cum_inv = 0.0
    events = 0
    g = 0
    status = STATUS_OK
    hsize = hist.shape[0]
    tsize = trans_up.shape[0]
    while True:
        idle = n - q[0]
        q2 = q[1] if top > 1 else 0
        for k in range(tau_idle.shape[0]):
            if hit_idle[k] < 0 and idle == tau_idle[k]:
                hit_idle[k] = t
        for k in range(tau_q2.shape[0]):
            if hit_q2[k] < 0 and q2 == tau_q2[k]:
                hit_q2[k] = t
        for k in range(tau_s.shape[0]):
            if hit_s[k] < 0 and s == tau_s[k]:
                hit_s[k] = t
        if t >= t_end:
            break
        busy = q[0]
        rate = lam + busy
        dt = rng.standard_exponential() / rate
        t_next = t + dt
        if t_next > t_end:
            t_next = t_end
        centered = s - n
        qbar3 = s - busy - q2
        inv_excess = queue_scale / centered if centered > 0 else 0.0
        while g < n_grid and g * grid_dt < t_next:
            tg = g * grid_dt
            grid[g, 0] = idle
            grid[g, 1] = q2
            grid[g, 2] = qbar3
            grid[g, 3] = s
            grid[g, 4] = cum_idle + idle * (tg - t)
            grid[g, 5] = cum_inv + inv_excess * (tg - t)
            g += 1
        cum_idle += idle * (t_next - t)
        cum_inv += inv_excess * (t_next - t)
        lo = t if t > t_warm else t_warm
        if t_next > lo:
            w = t_next - lo
            _accumulate(acc, w, idle, centered, q2, qbar3, inv_excess)
            h = centered + hist_offset
            if h < 0:
                h = 0
            elif h >= hsize:
                h = hsize - 1
            hist[h] += w
        if t + dt > t_end:
            t = t_end
            continue
        t = t_next
        u = rng.random() * rate
        events += 1
        if u < lam:
            j, top = _arrive(q, top, n)
            if s < tsize:
                trans_up[s] += 1
            s += 1
            if top > alarm_level:
                status = STATUS_ALARM
                break
        else:
            i, top = _depart(q, top, u - lam)
            s -= 1
            if s < tsize:
                trans_down[s] += 1
    while g < n_grid and g * grid_dt <= t_end:
        tg = g * grid_dt
        grid[g, 0] = n - q[0]
        grid[g, 1] = q[1] if top > 1 else 0
        grid[g, 2] = s - q[0] - grid[g, 1]
        grid[g, 3] = s
        grid[g, 4] = cum_idle
        grid[g, 5] = cum_inv
        g += 1
    return acc, grid[:g], hit_idle, hit_q2, hit_s, top, t, events, status


@njit(cache=True)
def jsq_cycles(rng, n, lam, lo, hi, n_cycles, max_events, alarm_level, hist, hist_offset):
    """Regenerative cycles from the state ``(I=0, Q2=hi, Qbar3=0)``.

    A cycle alternates a down-crossing of ``Q2`` to ``lo`` and an up-crossing
    back to ``hi`` until the up-crossing finds no queue of length 3 or more.
    """
    q = np.zeros(alarm_level + 2, dtype=np.int64)
    theta = np.zeros(n_cycles)
    k_bar = np.zeros(n_cycles, dtype=np.int64)
    n_events = np.zeros(n_cycles, dtype=np.int64)
    sigma = np.zeros((n_cycles, 2))
    integrals = np.zeros((n_cycles, N_FUNCTIONALS))
    sups = np.zeros((n_cycles, N_SUPS))
    hsize = hist.shape[0]
    status = STATUS_OK
    done = 0
    for c in range(n_cycles):
        q[:] = 0
        q[0] = n
        q[1] = hi
        top = 2 if hi > 0 else 1
        s = n + hi
        t = 0.0
        events = 0
        down = True
        pairs = 0
        a_idle = 0.0
        a_cent = 0.0
        a_q2 = 0.0
        a_q3 = 0.0
        a_q3pos = 0.0
        a_idle0 = 0.0
        a_pos = 0.0
        a_pos2 = 0.0
        sup_idle = 0
        sup_q2 = hi
        sup_q3 = 0
        sup_cent = hi
        busy = n
        q2 = hi
        while True:
            idle = n - busy
            centered = s - n
            qbar3 = centered + idle - q2
            rate = lam + busy
            dt = rng.standard_exponential() / rate
            t += dt
            a_idle += dt * idle
            a_cent += dt * centered
            a_q2 += dt * q2
            if qbar3 > 0:
                a_q3 += dt * qbar3
                a_q3pos += dt
            if idle == 0:
                a_idle0 += dt
            if centered > 0:
                a_pos += dt * centered
                a_pos2 += dt * (centered * centered)
            h = centered + hist_offset
            if h < 0:
                h = 0
            elif h >= hsize:
                h = hsize - 1
            hist[h] += dt
            u = rng.random() * rate
            events += 1
            if u < lam:
                j, top = _arrive(q, top, n)
                s += 1
                if top > alarm_level:
                    status = STATUS_ALARM
                    break
                if j == 0:
                    busy += 1
                elif j == 1:
                    q2 += 1
                    if q2 > sup_q2:
                        sup_q2 = q2
                elif s - busy - q2 > sup_q3:
                    sup_q3 = s - busy - q2
                if s - n > sup_cent:
                    sup_cent = s - n
            else:
                i, top = _depart(q, top, u - lam)
                s -= 1
                if i == 0:
                    busy -= 1
                    if n - busy > sup_idle:
                        sup_idle = n - busy
                elif i == 1:
                    q2 -= 1
            if down:
                if q2 <= lo:
                    down = False
                    if pairs == 0:
                        sigma[c, 0] = t
            elif q2 >= hi:
                pairs += 1
                if pairs == 1:
                    sigma[c, 1] = t
                if s - busy - q2 == 0:
                    break
                down = True
            if events >= max_events:
                status = STATUS_WATCHDOG
                break
        if status != STATUS_OK:
            break
        acc = integrals[c]
        acc[F_TIME] = t
        acc[F_IDLE] = a_idle
        acc[F_CENTERED] = a_cent
        acc[F_Q2] = a_q2
        acc[F_QBAR3] = a_q3
        acc[F_QBAR3_POS] = a_q3pos
        acc[F_IDLE_ZERO] = a_idle0
        acc[F_EXCESS_POS] = a_pos
        acc[F_EXCESS_POS_SQ] = a_pos2
        sups[c, SUP_IDLE] = sup_idle
        sups[c, SUP_Q2] = sup_q2
        sups[c, SUP_QBAR3] = sup_q3
        sups[c, SUP_CENTERED] = sup_cent
        theta[c] = t
        k_bar[c] = pairs
        n_events[c] = events
        done += 1
    return theta[:done], k_bar[:done], n_events[:done], sigma[:done], integrals[:done], sups[:done], status


@njit(cache=True)
def birth_death_path(rng, x0, up, mu, servers, reflect, t_end, t_warm, hist, offset,
                     trans_up, trans_down):
    """Birth-death chain with birth rate ``up`` and death rate ``mu * min(x, servers)``.

    Without reflection the death rate is ``mu`` everywhere and the chain
    walks on all integers.  ``hist[x + offset]`` receives the time spent in
    ``x`` after ``t_warm``, clipped into the end bins.
    """
    x = x0
    t = 0.0
    hsize = hist.shape[0]
    tsize = trans_up.shape[0]
    area = 0.0
    events = 0
    while t < t_end:
        if reflect:
            d = mu * (x if x < servers else servers)
        else:
            d = mu
        rate = up + d
        dt = rng.standard_exponential() / rate
        t_next = t + dt if t + dt < t_end else t_end
        lo = t if t > t_warm else t_warm
        if t_next > lo:
            h = x + offset
            if h < 0:
                h = 0
            elif h >= hsize:
                h = hsize - 1
            hist[h] += t_next - lo
            area += (t_next - lo) * x
        if t + dt >= t_end:
            t = t_end
            break
        t = t_next
        events += 1
        k = x + offset
        if rng.random() * rate < up:
            if 0 <= k < tsize:
                trans_up[k] += 1
            x += 1
        else:
            x -= 1
            if 0 <= k - 1 < tsize:
                trans_down[k - 1] += 1
    return x, area, events


@njit(cache=True)
def jsq_mmn_coupled(rng, q, top, s_mmn, n, lam, t_end, grid_dt, n_grid, alarm_level):
    """JSQ and M/M/N driven by one uniformized event stream of rate ``lam + n``.

    An arrival hits both systems; a potential departure with mark ``v`` in
    ``[0, n)`` completes a JSQ task iff ``v < Q1`` and an M/M/N task iff
    ``v < min(S, n)``.  Returns the smallest observed ``S_jsq - S_mmn``.
    """
    s = 0
    for k in range(top):
        s += q[k]
    rate = lam + n
    t = 0.0
    min_gap = s - s_mmn
    grid = np.zeros((n_grid, 2))
    g = 0
    events = 0
    status = STATUS_OK
    while True:
        dt = rng.standard_exponential() / rate
        while g < n_grid and g * grid_dt < t + dt and g * grid_dt <= t_end:
            grid[g, 0] = s
            grid[g, 1] = s_mmn
            g += 1
        t += dt
        if t > t_end:
            break
        events += 1
        u = rng.random() * rate
        if u < lam:
            j, top = _arrive(q, top, n)
            s += 1
            s_mmn += 1
            if top > alarm_level:
                status = STATUS_ALARM
                break
        else:
            v = u - lam
            if v < q[0]:
                i, top = _depart(q, top, v)
                s -= 1
            busy_mmn = s_mmn if s_mmn < n else n
            if v < busy_mmn:
                s_mmn -= 1
        if s - s_mmn < min_gap:
            min_gap = s - s_mmn
    return min_gap, grid[:g], s_mmn, top, events, status


@njit(cache=True)
def jsq_idle_bound_coupled(rng, q, top, ib, n, lam, b_level, stop_q2, t_end, alarm_level):
    """JSQ idle count against the dominating birth-death process.

    Uniformized at rate ``lam + n``.  A mark ``v`` in ``[b_level, n)`` raises
    the bounding process; the JSQ idle count rises iff ``v`` lies in
    ``[Q2, Q1)``, which sits inside that interval while ``Q2 > b_level``.
    Stops at ``t_end`` or when ``Q2`` first equals ``stop_q2``.
    """
    rate = lam + n
    t = 0.0
    min_gap = ib - (n - q[0])
    events = 0
    status = STATUS_OK
    while q[1] != stop_q2:
        dt = rng.standard_exponential() / rate
        t += dt
        if t > t_end:
            t = t_end
            break
        events += 1
        u = rng.random() * rate
        if u < lam:
            j, top = _arrive(q, top, n)
            if ib > 0:
                ib -= 1
            if top > alarm_level:
                status = STATUS_ALARM
                break
        else:
            v = u - lam
            if v < q[0]:
                i, top = _depart(q, top, v)
            if v >= b_level:
                ib += 1
        gap = ib - (n - q[0])
        if gap < min_gap:
            min_gap = gap
    return min_gap, t, ib, top, events, status
