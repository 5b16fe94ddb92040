"""Compiled core loop for the population chain.

Everything in here works on flat numpy arrays so that numba can compile it.
The Python-facing wrappers live in :mod:`sweepsim.model`.

State layout
------------
counts  int64[cap]      X_k for absolute type k
w       float64[cap]    (1+s)**k
istate  int64[6]        lo, hi, n_events, next_cleared, n_recorded, coherence_checks
fstate  float64[5]      time, kahan compensation, cached S, max relative S drift,
                        cached Q = sum w_k X_k^2
trk     float64[5, cap] online stopping times (NaN = not yet), rows TRK_*
mcount  int64[cap]      M_k, initial count plus mutations into k
thr     float64[4, cap] thresholds for the TRK_EST..TRK_TAU rows (strict ">")
"""
import numpy as np
from numba import njit

KIND_REPL = 0
KIND_MUT = 1

# kernel return codes
ST_RUNNING = 0
ST_HORIZON = 1
ST_CONDITION = 2
ST_ABSORBED = 3
ST_EVENT_CAP = 4
ST_NEED_CAPACITY = 5
ST_BUFFER_FULL = 6
ST_STEP_LIMIT = 7
ST_INVARIANT = 8

# stop predicates understood by the kernel
STOP_NONE = 0
STOP_ESTABLISHED = 1
STOP_CLEARED = 2
STOP_ALPHA = 3
STOP_FIXED_OR_LOST = 4

TRK_EST = 0
TRK_ALPHA = 1
TRK_STAR = 2
TRK_TAU = 3
TRK_CLEARED = 4

I_LO, I_HI, I_NEV, I_NEXT, I_NREC, I_CHECKS = range(6)
F_T, F_COMP, F_S, F_DRIFT, F_Q = range(5)

COHERENCE_EVERY = 10_000


@njit(cache=True, error_model="numpy")
def total_rates(counts, w, lo, hi, S, n_pop, mu):
    """Return (replacement rate, mutation rate) summed over all
    composition-changing events.  Self-replacements are never included."""
    rep = 0.0
    for k in range(lo, hi + 1):
        x = counts[k]
        if x > 0 and x < n_pop:
            rep += x * (S - w[k] * x)
    return rep / S, mu * n_pop


@njit(cache=True, error_model="numpy")
def select_event(counts, w, lo, hi, S, n_pop, mu, rep, mut, u):
    """Pick (kind, dying/mutating type, new type) proportionally to rate.

    A single uniform drives both stages: the position of ``u`` inside the
    chosen dying type's slice is itself uniform and picks the parent."""
    target = u * (rep + mut)
    if target < mut:
        v = target / mu
        acc = 0.0
        i = -1
        for k in range(lo, hi + 1):
            x = counts[k]
            if x > 0:
                i = k
                acc += x
                if v < acc:
                    break
        return KIND_MUT, i, i + 1

    v = (target - mut) * S
    acc = 0.0
    prev = 0.0
    i = -1
    for k in range(lo, hi + 1):
        x = counts[k]
        if x > 0 and x < n_pop:
            i = k
            prev = acc
            acc += x * (S - w[k] * x)
            if v < acc:
                break
    frac = (v - prev) / (acc - prev)
    if frac >= 1.0:
        frac = 0.9999999999999999
    elif frac < 0.0:
        frac = 0.0
    v = frac * (S - w[i] * counts[i])
    acc = 0.0
    j = -1
    for k in range(lo, hi + 1):
        if k != i and counts[k] > 0:
            j = k
            acc += w[k] * counts[k]
            if v < acc:
                break
    return KIND_REPL, i, j


@njit(cache=True, error_model="numpy")
def _stop_met(stop_kind, stop_k, trk, counts, n_pop):
    if stop_kind == STOP_NONE or stop_k >= counts.shape[0]:
        return False
    if stop_kind == STOP_ESTABLISHED:
        return not np.isnan(trk[TRK_EST, stop_k])
    if stop_kind == STOP_CLEARED:
        return not np.isnan(trk[TRK_CLEARED, stop_k])
    if stop_kind == STOP_ALPHA:
        return not np.isnan(trk[TRK_ALPHA, stop_k])
    if stop_kind == STOP_FIXED_OR_LOST:
        x = counts[stop_k]
        return x == 0 or x == n_pop
    return False


@njit(cache=True, error_model="numpy")
def init_trackers(counts, trk, mcount, thr, t0):
    """Evaluate every stopping-time predicate on the initial state.

    Returns the first type k whose cleared time T_k' is still unknown."""
    cap = counts.shape[0]
    for k in range(cap):
        x = counts[k]
        mcount[k] = x
        if x > thr[TRK_EST, k]:
            trk[TRK_EST, k] = t0
        if x > thr[TRK_ALPHA, k]:
            trk[TRK_ALPHA, k] = t0
        if x > thr[TRK_STAR, k]:
            trk[TRK_STAR, k] = t0
        if x > thr[TRK_TAU, k]:
            trk[TRK_TAU, k] = t0
    trk[TRK_CLEARED, 0] = t0
    nxt = 1
    while nxt < cap and counts[nxt - 1] == 0:
        trk[TRK_CLEARED, nxt] = t0
        nxt += 1
    return nxt


@njit(cache=True, error_model="numpy")
def advance(counts, w, istate, fstate, trk, mcount, thr,
            rec_t, rec_kind, rec_i, rec_j,
            n_pop, mu, stop_kind, stop_k, t_max, max_events, max_steps,
            record, debug, rng):
    cap = counts.shape[0]
    lo = istate[I_LO]
    hi = istate[I_HI]
    nev = istate[I_NEV]
    nxt = istate[I_NEXT]
    nrec = istate[I_NREC]
    t = fstate[F_T]
    comp = fstate[F_COMP]
    S = fstate[F_S]
    steps = 0
    status = ST_RUNNING
    Q = fstate[F_Q]

    while True:
        if _stop_met(stop_kind, stop_k, trk, counts, n_pop):
            status = ST_CONDITION
            break
        if nev >= max_events:
            status = ST_EVENT_CAP
            break
        if steps >= max_steps:
            status = ST_STEP_LIMIT
            break
        if mu > 0.0 and hi + 1 >= cap:
            status = ST_NEED_CAPACITY
            break
        if record and nrec >= rec_t.shape[0]:
            status = ST_BUFFER_FULL
            break

        if counts[lo] == n_pop:
            rep = 0.0
        else:
            rep = n_pop - Q / S
        mut = mu * n_pop
        total = rep + mut
        if total <= 0.0:
            status = ST_ABSORBED
            break

        dt = rng.exponential() / total
        y = dt - comp
        tn = t + y
        if tn > t_max:
            t = t_max
            comp = 0.0
            status = ST_HORIZON
            break
        comp = (tn - t) - y
        t = tn

        kind, i, j = select_event(counts, w, lo, hi, S, n_pop, mu, rep, mut,
                                  rng.random())
        Q += w[i] * (1 - 2 * counts[i]) + w[j] * (2 * counts[j] + 1)
        counts[i] -= 1
        counts[j] += 1
        S += w[j] - w[i]
        if j > hi:
            hi = j
        if j < lo:
            lo = j
        if counts[i] == 0:
            while counts[lo] == 0:
                lo += 1
            while counts[hi] == 0:
                hi -= 1
        nev += 1
        steps += 1

        if record:
            rec_t[nrec] = t
            rec_kind[nrec] = kind
            rec_i[nrec] = i
            rec_j[nrec] = j
            nrec += 1

        x = counts[j]
        if x > thr[TRK_EST, j] and np.isnan(trk[TRK_EST, j]):
            trk[TRK_EST, j] = t
        if x > thr[TRK_ALPHA, j] and np.isnan(trk[TRK_ALPHA, j]):
            trk[TRK_ALPHA, j] = t
        if x > thr[TRK_STAR, j] and np.isnan(trk[TRK_STAR, j]):
            trk[TRK_STAR, j] = t
        if kind == KIND_MUT:
            mcount[j] += 1
            if mcount[j] > thr[TRK_TAU, j] and np.isnan(trk[TRK_TAU, j]):
                trk[TRK_TAU, j] = t
        while nxt < cap and counts[nxt - 1] == 0:
            trk[TRK_CLEARED, nxt] = t
            nxt += 1

        if nev % COHERENCE_EVERY == 0:
            exact = 0.0
            Q = 0.0
            for k in range(lo, hi + 1):
                exact += w[k] * counts[k]
                Q += w[k] * counts[k] * counts[k]
            drift = abs(S - exact) / exact
            if drift > fstate[F_DRIFT]:
                fstate[F_DRIFT] = drift
            S = exact
            istate[I_CHECKS] += 1

        if debug:
            tot = 0
            bad = counts[i] < 0
            for k in range(cap):
                tot += counts[k]
            if bad or tot != n_pop:
                status = ST_INVARIANT
                break

    istate[I_LO] = lo
    istate[I_HI] = hi
    istate[I_NEV] = nev
    istate[I_NEXT] = nxt
    istate[I_NREC] = nrec
    fstate[F_T] = t
    fstate[F_COMP] = comp
    fstate[F_S] = S
    fstate[F_Q] = Q
    return status


@njit(cache=True, error_model="numpy")
def absorption_batch(init, w, thr, n_pop, stop_k, n_runs, max_events, rng,
                     out_fixed, out_time, out_events):
    """Repeated runs with mu = 0 from ``init`` until X_stop_k is 0 or N.

    out_fixed: 1 fixed, 0 lost, -1 event cap."""
    cap = init.shape[0]
    counts = np.empty(cap, dtype=np.int64)
    trk = np.empty((5, cap))
    mcount = np.empty(cap, dtype=np.int64)
    istate = np.zeros(6, dtype=np.int64)
    fstate = np.zeros(5)
    dummy_t = np.empty(0)
    dummy_k = np.empty(0, dtype=np.int8)
    dummy_i = np.empty(0, dtype=np.int32)
    for r in range(n_runs):
        counts[:] = init
        trk[:, :] = np.nan
        lo = 0
        while counts[lo] == 0:
            lo += 1
        hi = cap - 1
        while counts[hi] == 0:
            hi -= 1
        istate[:] = 0
        istate[I_LO] = lo
        istate[I_HI] = hi
        fstate[:] = 0.0
        S = 0.0
        Q = 0.0
        for k in range(cap):
            S += w[k] * counts[k]
            Q += w[k] * counts[k] * counts[k]
        fstate[F_S] = S
        fstate[F_Q] = Q
        istate[I_NEXT] = init_trackers(counts, trk, mcount, thr, 0.0)
        st = advance(counts, w, istate, fstate, trk, mcount, thr,
                     dummy_t, dummy_k, dummy_i, dummy_i, n_pop, 0.0,
                     STOP_FIXED_OR_LOST, stop_k, np.inf, max_events, 2**62,
                     False, False, rng)
        if st == ST_CONDITION:
            out_fixed[r] = 1 if counts[stop_k] == n_pop else 0
        else:
            out_fixed[r] = -1
        out_time[r] = fstate[F_T]
        out_events[r] = istate[I_NEV]
