"""Hot numeric kernels.

All kernels work on a dense instance layout:

``kv[j, l]``
    node count of level ``l`` for job ``j`` (ascending, ``nl[j]`` valid levels)
``inc[j, l]``
    progress one step on level ``l`` adds, normalised by the job's demand
    (``p * speed(k) / d``); a job's objective term at a step is
    ``min(1, cumulative inc)``
``x[t, j]``
    chosen level of job ``j`` at step ``t``

Decisions are searched step-major: depth ``d`` maps to ``t = d // J``,
``j = d % J``.
"""

import numpy as np

from ._accel import USE_JIT, jit

NEG_INF = -np.inf
TIE_TOL = 1e-12


@jit
def objective_levels(x, inc):
    T, J = x.shape
    total = 0.0
    for j in range(J):
        c = 0.0
        for t in range(T):
            c += inc[j, x[t, j]]
            total += min(1.0, c)
    return total


@jit
def job_objective(x, inc, j):
    T = x.shape[0]
    c = 0.0
    total = 0.0
    for t in range(T):
        c += inc[j, x[t, j]]
        total += min(1.0, c)
    return total


@jit
def upper_hull(kv, nl, inc):
    """Indices of the upper concave hull of ``(kv[j, l], inc[j, l])`` per job."""
    J, L = kv.shape
    hidx = np.zeros((J, L), dtype=np.int64)
    hn = np.zeros(J, dtype=np.int64)
    for j in range(J):
        n = 0
        for l in range(nl[j]):
            while n >= 2:
                a = hidx[j, n - 2]
                b = hidx[j, n - 1]
                # drop b unless it lies strictly above the chord a -> l
                cross = (kv[j, b] - kv[j, a]) * (inc[j, l] - inc[j, a]) - (
                    inc[j, b] - inc[j, a]
                ) * (kv[j, l] - kv[j, a])
                if cross >= 0.0:
                    n -= 1
                else:
                    break
            hidx[j, n] = l
            n += 1
        hn[j] = n
    return hidx, hn


@jit
def hull_segments(kv, inc, hidx, hn):
    """Envelope segments sorted by slope, descending.

    Returns parallel arrays (job, slope, width in nodes).  Within one job the
    slopes strictly decrease, so the global order keeps each job's segments in
    hull order.
    """
    J = hn.shape[0]
    S = 0
    for j in range(J):
        if hn[j] > 1:
            S += hn[j] - 1
    seg_j = np.zeros(S, dtype=np.int64)
    seg_slope = np.zeros(S, dtype=np.float64)
    seg_dk = np.zeros(S, dtype=np.float64)
    s = 0
    for j in range(J):
        for h in range(hn[j] - 1):
            a = hidx[j, h]
            b = hidx[j, h + 1]
            dk = float(kv[j, b] - kv[j, a])
            seg_j[s] = j
            seg_dk[s] = dk
            seg_slope[s] = (inc[j, b] - inc[j, a]) / dk
            s += 1
    order = np.argsort(-seg_slope, kind="mergesort")
    return seg_j[order], seg_slope[order], seg_dk[order]


@jit
def future_bound(t1, j1, cum, used_t1, kv, inc, cap, T, seg_j, seg_slope, seg_dk, val):
    """Upper bound on the objective terms not yet fixed.

    Steps before ``t1`` are fixed for every job and step ``t1`` for jobs
    below ``j1``; ``cum`` holds each job's normalised progress through its
    last fixed step.  Each remaining step term is bounded on its own: the
    free steps of a job up to that term are pooled (concave envelope plus
    Jensen), the capacity of those steps is pooled, and the resulting
    separable concave program is solved exactly as a fractional knapsack.
    ``val`` is scratch space of length J.
    """
    J = kv.shape[0]
    total = 0.0
    for tau in range(t1, T):
        pool = float(cap - used_t1) + float(tau - t1) * cap
        need = 0.0
        term = 0.0
        for j in range(J):
            m = tau - t1 + (1 if j >= j1 else 0)
            if m == 0:
                val[j] = 2.0  # fixed term, already counted by the caller
                continue
            v0 = cum[j] + m * inc[j, 0]
            need += m * kv[j, 0]
            if v0 >= 1.0:
                term += 1.0
                val[j] = 2.0
            else:
                term += v0
                val[j] = v0
        budget = pool - need
        if budget < -1e-9:
            return NEG_INF
        for s in range(seg_j.shape[0]):
            if budget <= 0.0:
                break
            j = seg_j[s]
            if val[j] >= 1.0:
                continue
            m = tau - t1 + (1 if j >= j1 else 0)
            width = m * seg_dk[s]
            if width > budget:
                width = budget
            gain = seg_slope[s] * width
            room = 1.0 - val[j]
            if gain >= room:
                gain = room
                width = room / seg_slope[s]
            val[j] += gain
            term += gain
            budget -= width
        total += term
    return total


@jit
def root_bound(kv, nl, inc, cap, T):
    J = kv.shape[0]
    hidx, hn = upper_hull(kv, nl, inc)
    seg_j, seg_slope, seg_dk = hull_segments(kv, inc, hidx, hn)
    cum = np.zeros(J, dtype=np.float64)
    val = np.zeros(J, dtype=np.float64)
    return future_bound(0, 0, cum, 0, kv, inc, cap, T, seg_j, seg_slope, seg_dk, val)


@jit
def _job_dual_best(j, kv, nl, inc, lam, T, xbuf, xbest):
    """max over job j's level vectors of objective minus priced node use.

    Enumerates every vector; once the job's progress reaches its demand the
    remaining steps are pinned to the lowest level (prices are non-negative,
    so anything else is dominated).
    """
    best = -np.inf
    for t in range(T):
        xbuf[t] = 0
    while True:
        c = 0.0
        val = 0.0
        capped_at = T
        for t in range(T):
            c += inc[j, xbuf[t]]
            val += min(1.0, c) - lam[t] * kv[j, xbuf[t]]
            if c >= 1.0 and capped_at == T:
                capped_at = t
        if val > best:
            best = val
            for t in range(T):
                xbest[t] = xbuf[t]
        # odometer increment, last step fastest; skip digits past the cap
        q = T - 1
        while q > capped_at:
            xbuf[q] = 0
            q -= 1
        while q >= 0:
            xbuf[q] += 1
            if xbuf[q] < nl[j]:
                break
            xbuf[q] = 0
            q -= 1
        if q < 0:
            break
    return best


@jit
def lagrangian_bound(kv, nl, inc, cap, T, lower, iters):
    """Best Lagrangian upper bound found by projected subgradient steps.

    Prices the per-step capacity rows with multipliers ``lam >= 0``; every
    multiplier vector yields a valid bound, the smallest seen is returned
    together with its multipliers.  ``lower`` is a known feasible objective
    used for Polyak step lengths.
    """
    J = kv.shape[0]
    lam = np.zeros(T, dtype=np.float64)
    best_lam = np.zeros(T, dtype=np.float64)
    usage = np.zeros(T, dtype=np.float64)
    xbuf = np.zeros(T, dtype=np.int64)
    xbest = np.zeros(T, dtype=np.int64)
    best_ub = np.inf
    theta = 1.0
    stall = 0
    for it in range(iters):
        ub = 0.0
        for t in range(T):
            ub += lam[t] * cap
            usage[t] = 0.0
        for j in range(J):
            ub += _job_dual_best(j, kv, nl, inc, lam, T, xbuf, xbest)
            for t in range(T):
                usage[t] += kv[j, xbest[t]]
        if ub < best_ub - 1e-12:
            best_ub = ub
            for t in range(T):
                best_lam[t] = lam[t]
            stall = 0
        else:
            stall += 1
            if stall >= 4:
                theta *= 0.5
                stall = 0
        norm = 0.0
        slack_ok = True
        for t in range(T):
            g = cap - usage[t]
            if g < 0.0 or (lam[t] > 0.0 and g > 0.0):
                slack_ok = False
            if lam[t] > 0.0 or g < 0.0:
                norm += g * g
        if slack_ok or norm == 0.0 or theta < 1e-6:
            break
        gap = ub - lower
        if gap < 1e-9:
            gap = 1e-9
        step = theta * gap / norm
        for t in range(T):
            lam[t] = max(0.0, lam[t] - step * (cap - usage[t]))
    return best_ub, best_lam


@jit
def _refresh_job_gains(x, inc, nl, j, gains):
    """gains[t, j, l] = change in job j's objective if x[t, j] were set to l."""
    T = x.shape[0]
    base = job_objective(x, inc, j)
    for t in range(T):
        keep = x[t, j]
        for l in range(nl[j]):
            if l == keep:
                gains[t, j, l] = 0.0
            else:
                x[t, j] = l
                gains[t, j, l] = job_objective(x, inc, j) - base
        x[t, j] = keep


@jit
def greedy_levels(kv, nl, inc, cap, T, max_passes):
    """Feasible starting incumbent.

    Every job starts on its minimum level.  Upgrades are applied one at a
    time by best objective gain per extra node (multi-level jumps included,
    so a job that needs two doublings to finish is not missed), then
    pairwise exchanges within a step are tried until none improves.
    Returns levels ``x[T, J]`` and a feasibility flag.
    """
    J, L = kv.shape
    x = np.zeros((T, J), dtype=np.int64)
    used = np.zeros(T, dtype=np.int64)
    base_need = 0
    for j in range(J):
        base_need += kv[j, 0]
    for t in range(T):
        used[t] = base_need
    if base_need > cap:
        return x, False
    gains = np.zeros((T, J, L), dtype=np.float64)
    for j in range(J):
        _refresh_job_gains(x, inc, nl, j, gains)

    while True:
        best_r = 0.0
        bt = -1
        bj = -1
        bl = -1
        for t in range(T):
            free = cap - used[t]
            if free <= 0:
                continue
            for j in range(J):
                l0 = x[t, j]
                for l in range(l0 + 1, nl[j]):
                    dn = kv[j, l] - kv[j, l0]
                    if dn > free:
                        break
                    r = gains[t, j, l] / dn
                    if r > best_r + TIE_TOL:
                        best_r = r
                        bt = t
                        bj = j
                        bl = l
        if bt < 0:
            break
        used[bt] += kv[bj, bl] - kv[bj, x[bt, bj]]
        x[bt, bj] = bl
        _refresh_job_gains(x, inc, nl, bj, gains)

    for _ in range(max_passes):
        improved = False
        for t in range(T):
            for j1 in range(J):
                l1cur = x[t, j1]
                for l1 in range(l1cur):
                    freed = kv[j1, l1cur] - kv[j1, l1]
                    avail = freed + cap - used[t]
                    loss = gains[t, j1, l1]
                    done = False
                    for j2 in range(J):
                        if j2 == j1:
                            continue
                        l2cur = x[t, j2]
                        for l2 in range(l2cur + 1, nl[j2]):
                            need = kv[j2, l2] - kv[j2, l2cur]
                            if need > avail:
                                break
                            if loss + gains[t, j2, l2] > 1e-10:
                                used[t] += kv[j2, l2] - kv[j2, l2cur] - freed
                                x[t, j1] = l1
                                x[t, j2] = l2
                                _refresh_job_gains(x, inc, nl, j1, gains)
                                _refresh_job_gains(x, inc, nl, j2, gains)
                                improved = True
                                done = True
                                break
                        if done:
                            break
                    if done:
                        break
                # plain upgrades into leftover capacity
                l1cur = x[t, j1]
                for l in range(nl[j1] - 1, l1cur, -1):
                    if kv[j1, l] - kv[j1, l1cur] <= cap - used[t] and gains[t, j1, l] > 1e-10:
                        used[t] += kv[j1, l] - kv[j1, l1cur]
                        x[t, j1] = l
                        _refresh_job_gains(x, inc, nl, j1, gains)
                        improved = True
                        break
        if not improved:
            break
    return x, True


@jit
def bnb_init_state(J, T):
    D = J * T
    istate = np.zeros(4, dtype=np.int64)  # depth, explored nodes, finished, improvements
    lev = np.full(D, -1, dtype=np.int64)
    assigned = np.zeros(D, dtype=np.int64)
    used = np.zeros(T, dtype=np.int64)
    cum = np.zeros(J, dtype=np.float64)
    cumprev = np.zeros(D, dtype=np.float64)
    op = np.zeros(D + 1, dtype=np.float64)
    nodebound = np.zeros(D, dtype=np.float64)
    return istate, lev, assigned, used, cum, cumprev, op, nodebound


@jit
def bnb_run(kv, nl, inc, sufmin, cap, T, seg_j, seg_slope, seg_dk,
            istate, lev, assigned, used, cum, cumprev, op, nodebound,
            fstate, bestx, node_chunk, gap_target):
    """Advance a depth-first branch-and-bound by at most ``node_chunk`` nodes.

    Resumable: the whole search state lives in the passed arrays.
    ``fstate`` = [incumbent objective, largest pruned bound].  Levels are
    tried from the largest node count down.  Returns True once the tree is
    exhausted.
    """
    J = kv.shape[0]
    D = J * T
    val = np.zeros(J, dtype=np.float64)
    d = istate[0]
    explored = 0
    while explored < node_chunk:
        if d < 0:
            istate[2] = 1
            break
        t = d // J
        j = d - t * J
        if assigned[d] == 1:
            l = lev[d]
            used[t] -= kv[j, l]
            cum[j] = cumprev[d]
            assigned[d] = 0
            l -= 1
        else:
            l = nl[j] - 1
        room = cap - used[t] - sufmin[j + 1]
        while l >= 0 and kv[j, l] > room:
            l -= 1
        if l < 0:
            lev[d] = -1
            d -= 1
            continue
        lev[d] = l
        assigned[d] = 1
        used[t] += kv[j, l]
        cumprev[d] = cum[j]
        cum[j] += inc[j, l]
        op[d + 1] = op[d] + min(1.0, cum[j])
        explored += 1
        best = fstate[0]
        if d == D - 1:
            if op[D] > best + TIE_TOL:
                fstate[0] = op[D]
                for q in range(D):
                    bestx[q] = lev[q]
                istate[3] += 1
            continue
        t1 = (d + 1) // J
        j1 = (d + 1) - t1 * J
        b = op[d + 1] + future_bound(t1, j1, cum, used[t1], kv, inc, cap, T,
                                     seg_j, seg_slope, seg_dk, val)
        nodebound[d] = b
        slack = gap_target * abs(best)
        if slack < 1e-9:
            slack = 1e-9
        if b <= best + slack:
            if b > fstate[1]:
                fstate[1] = b
            continue
        d += 1
        assigned[d] = 0
    istate[0] = d
    istate[1] += explored
    return istate[2] == 1


@jit
def accrue_seconds(served, rate, target, max_seconds):
    """Accrue per-second progress until a job reaches its target.

    Adds ``rate`` to ``served`` once per simulated second, for at most
    ``max_seconds`` seconds, and stops after the first second in which any
    job reaches ``target``.  Returns the number of seconds simulated.
    """
    n = served.shape[0]
    for s in range(max_seconds):
        hit = False
        for i in range(n):
            served[i] += rate[i]
            if served[i] >= target[i]:
                hit = True
        if hit:
            return s + 1
    return max_seconds


def _accrue_seconds_numpy(served, rate, target, max_seconds):
    for s in range(max_seconds):
        served += rate
        if (served >= target).any():
            return s + 1
    return max_seconds


# The loop form is slow when uncompiled; the vectorised twin performs the
# same float additions in the same order, so both paths agree bit for bit.
accrue = accrue_seconds if USE_JIT else _accrue_seconds_numpy
