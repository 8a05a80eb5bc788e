"""Compiled inner loops.

Each ``advance_*`` function consumes one block of pre-drawn events
``(dts, sites, us)`` starting at ``pos`` and stops either at the end of the
block or at the first event later than ``horizon``.  It returns the new
position and current time; the caller commits them back to the
:class:`~toomsim.dynamics.EventStream`.  Semantics are identical to the
pure-Python path in :mod:`toomsim.dynamics` (same float operations, same
no-op conventions), which the test-suite checks trajectory by trajectory.
"""
import numpy as np
from numba import njit

# Slots of the coupled-run state vector.
FRONT, FRONT_UNW, COUNT, WRAPPED, COALESCED, TAG_RING, TAG_UNW, TAG_SIGN, SAMPLE, MIN_GAP = range(10)
N_COUPLED_STATE = 10


@njit(cache=True, inline="always")
def _target_right(spins, x, eta):
    L = spins.shape[0]
    y = x + 1
    for _ in range(L - 1):
        if y == L:
            y = 0
        if spins[y] != eta:
            return y
        y += 1
    return -1


@njit(cache=True, inline="always")
def _due(k, sample_dt, tn, horizon, stop):
    # Grid time k is sampled before the next event, or at the horizon itself.
    tk = (k + 1) * sample_dt
    return tk <= horizon if stop else tk < tn


@njit(cache=True)
def target_right(spins, x, eta):
    return _target_right(spins, x, eta)


@njit(cache=True)
def advance_plain(spins, dts, sites, us, pos, t, horizon, lam_plus):
    n = dts.shape[0]
    executed = 0
    while pos < n:
        tn = t + dts[pos]
        if tn > horizon:
            break
        t = tn
        x = sites[pos]
        eta = 1 if us[pos] < lam_plus else -1
        pos += 1
        if spins[x] != eta:
            continue
        y = _target_right(spins, x, eta)
        if y < 0:
            continue
        spins[x] = -eta
        spins[y] = eta
        executed += 1
    return pos, t, executed


@njit(cache=True, inline="always")
def _push(ring, unw, tsign, x, y, eta, L):
    """Push-particle update for an executed ``eta`` jump ``x -> y``."""
    span = y - x
    if span < 0:
        span += L
    if eta == tsign:
        d = ring - x
        if d < 0:
            d += L
        if d < span:
            ring += 1
            if ring == L:
                ring = 0
            return ring, unw + 1, 1
        return ring, unw, 0
    if y == ring:
        return x, unw - span, -span
    return ring, unw, 0


@njit(cache=True)
def push_update(ring, unw, tsign, x, y, eta, L):
    return _push(ring, unw, tsign, x, y, eta, L)


@njit(cache=True)
def tagged_drift_rate(spins, ring, tsign, lam_plus):
    """Conditional drift of a push particle: sum over events of rate * displacement."""
    L = spins.shape[0]
    a = 0
    z = ring
    while a < L and spins[z] == tsign:
        a += 1
        z -= 1
        if z < 0:
            z = L - 1
    if a == L:
        return 0.0
    b = 0
    z = ring - 1
    if z < 0:
        z = L - 1
    while spins[z] == -tsign:
        b += 1
        z -= 1
        if z < 0:
            z = L - 1
    lam_same = lam_plus if tsign > 0 else 1.0 - lam_plus
    return lam_same * a - (1.0 - lam_same) * 0.5 * b * (b + 1)


@njit(cache=True)
def advance_tagged(spins, dts, sites, us, pos, t, horizon, lam_plus, tag, acc,
                   sample_dt, samples_y, samples_h, bins_g, bins_g2, env_offsets, env_plus, state):
    """Dynamics plus one push particle and grid sampling.

    ``tag`` holds ``[ring, unwrapped, sign]``; ``acc`` accumulates
    ``[sum of displacement**2, number of tagged-particle jumps]``.  Sample
    ``k`` is taken at time ``(k + 1) * sample_dt``; ``bins_g[k]`` and ``bins_g2[k]`` sum the
    displacements and squared displacements of jumps falling in
    ``(k * sample_dt, (k + 1) * sample_dt]``.
    """
    L = spins.shape[0]
    n = dts.shape[0]
    K = samples_y.shape[0]
    n_env = env_offsets.shape[0]
    ring = tag[0]
    unw = tag[1]
    tsign = tag[2]
    k = state[0]
    while pos < n:
        tn = t + dts[pos]
        stop = tn > horizon
        while k < K and _due(k, sample_dt, tn, horizon, stop):
            samples_y[k] = unw
            samples_h[k] = tagged_drift_rate(spins, ring, tsign, lam_plus)
            for j in range(n_env):
                z = (ring + env_offsets[j]) % L
                if spins[z] == 1:
                    env_plus[j] += 1
            k += 1
        if stop:
            break
        t = tn
        x = sites[pos]
        eta = 1 if us[pos] < lam_plus else -1
        pos += 1
        if spins[x] != eta:
            continue
        y = _target_right(spins, x, eta)
        if y < 0:
            continue
        ring, unw, d = _push(ring, unw, tsign, x, y, eta, L)
        spins[x] = -eta
        spins[y] = eta
        if d != 0:
            acc[0] += d * d
            acc[1] += 1
            if k < K:
                bins_g[k] += d
                bins_g2[k] += d * d
    tag[0] = ring
    tag[1] = unw
    state[0] = k
    return pos, t


@njit(cache=True)
def advance_observables(spins, dts, sites, us, pos, t, horizon, lam_plus, edges, counts, site0, additive):
    """Dynamics plus edge-crossing counts and the integral of ``spin(site0)``.

    ``counts[e, 0]`` / ``counts[e, 1]`` count executed ``+`` / ``-`` jumps
    whose span ``(origin, target]`` contains edge ``edges[e]``.
    """
    L = spins.shape[0]
    n = dts.shape[0]
    n_edges = edges.shape[0]
    while pos < n:
        tn = t + dts[pos]
        if tn > horizon:
            additive[0] += spins[site0] * (horizon - t)
            break
        additive[0] += spins[site0] * (tn - t)
        t = tn
        x = sites[pos]
        eta = 1 if us[pos] < lam_plus else -1
        pos += 1
        if spins[x] != eta:
            continue
        y = _target_right(spins, x, eta)
        if y < 0:
            continue
        span = y - x
        if span < 0:
            span += L
        for e in range(n_edges):
            d = edges[e] - x
            if d < 0:
                d += L
            if 1 <= d <= span:
                if eta > 0:
                    counts[e, 0] += 1
                else:
                    counts[e, 1] += 1
        spins[x] = -eta
        spins[y] = eta
    return pos, t


@njit(cache=True, inline="always")
def _refresh_site(s1, s2, diff, z, st, limit):
    old = diff[z]
    new = (s1[z] - s2[z]) // 2
    if new == old:
        return
    diff[z] = new
    L = s1.shape[0]
    if old == 0:
        st[COUNT] += 1
        fd = z - st[FRONT]
        if fd < 0:
            fd += L
        if fd >= limit:
            st[WRAPPED] = 1
    elif new == 0:
        st[COUNT] -= 1
    else:
        # in-place sign flip: one discrepancy removed and one created here
        pass


@njit(cache=True)
def advance_coupled(s1, s2, diff, dts, sites, us, pos, t, horizon, lam_plus, st,
                    creation_limit, sample_dt, samp_front, samp_y, samp_count):
    """Two replicas on one event stream, with discrepancy and front tracking.

    ``st`` is the state vector indexed by the module-level slot constants.
    ``st[TAG_SIGN] == 0`` means no tagged particle.  Newly created
    discrepancies whose forward distance from the front reaches
    ``creation_limit`` (or the tagged particle, when present) flag the
    run as wrapped.
    """
    L = s1.shape[0]
    n = dts.shape[0]
    K = samp_front.shape[0]
    tsign = st[TAG_SIGN]
    while pos < n:
        tn = t + dts[pos]
        stop = tn > horizon
        k = st[SAMPLE]
        while k < K and _due(k, sample_dt, tn, horizon, stop):
            samp_front[k] = st[FRONT_UNW]
            samp_y[k] = st[TAG_UNW]
            samp_count[k] = st[COUNT]
            k += 1
        st[SAMPLE] = k
        if stop:
            break
        t = tn
        x = sites[pos]
        eta = 1 if us[pos] < lam_plus else -1
        pos += 1
        y1 = -1
        y2 = -1
        if s1[x] == eta:
            y1 = _target_right(s1, x, eta)
        if s2[x] == eta:
            y2 = _target_right(s2, x, eta)
        if y1 < 0 and y2 < 0:
            continue
        if y1 >= 0:
            if tsign != 0:
                r, u, d = _push(st[TAG_RING], st[TAG_UNW], tsign, x, y1, eta, L)
                st[TAG_RING] = r
                st[TAG_UNW] = u
            s1[x] = -eta
            s1[y1] = eta
        if y2 >= 0:
            s2[x] = -eta
            s2[y2] = eta
        if st[COUNT] == 0:
            continue
        lim = creation_limit
        if tsign != 0:
            room = L - (st[FRONT_UNW] - st[TAG_UNW])
            if room < lim:
                lim = room
        _refresh_site(s1, s2, diff, x, st, lim)
        if y1 >= 0:
            _refresh_site(s1, s2, diff, y1, st, lim)
        if y2 >= 0 and y2 != y1:
            _refresh_site(s1, s2, diff, y2, st, lim)
        if st[COUNT] == 0:
            st[COALESCED] = 1
        elif diff[st[FRONT]] == 0:
            f = st[FRONT]
            dist = 0
            while diff[f] == 0:
                f += 1
                dist += 1
                if f == L:
                    f = 0
            st[FRONT] = f
            st[FRONT_UNW] += dist
        if tsign != 0 and st[COUNT] > 0:
            gap = st[FRONT_UNW] - st[TAG_UNW]
            if gap < st[MIN_GAP]:
                st[MIN_GAP] = gap
    return pos, t
