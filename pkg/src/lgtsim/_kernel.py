"""Array kernel for the mirror-descent flow on a fixed tree topology.

The tree is compiled to flat arrays indexed by position (non-root nodes
only, children before parents).  Each step solves the tree-structured
multiplier system exactly, advances the state, and re-imposes conservation.

Step sizes adapt to the relative coordinate change, but the revised
weights span many orders of magnitude (the birth term eps*2^(-j) can be
~1e-30), so two stabilizers keep the step count bounded:

* coordinates whose frozen-multiplier relaxation rate ``B`` is fast on the
  chosen dt are moved with the exact exponential decay toward their local
  equilibrium instead of an Euler step (limited to an ``eta`` fraction of
  ``x+delta`` per step, so multipliers stay quasi-static), and
* "spectator" coordinates, whose revised weight is negligible relative to
  the rest of the tree, are excluded from step-size control entirely; any
  motion there is free to the cost ledger and invisible to the potential.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

GROW_MODE = 0
DRAIN_MODE = 1

STATUS_OK = 0
STATUS_STEP_BUDGET = 1
STATUS_NOT_CONVERGED = 2

_LN2 = math.log(2.0)


@njit(cache=True)
def _solve(parent, topo, n_children, x, delta, wt, grow, wtp, alpha, beta, s_alpha, s_beta, lam, dlam, xdot):
    """Exact multiplier solve by affine elimination along the tree.

    Writes lam (0.0 at leaves), the parent-child multiplier differences
    dlam, and xdot; returns lam at the root.  Every internal constraint
    sum_children x' = x' (x'_{c_r} = 0 at the root) holds by construction.

    Revised weights span many orders of magnitude, so the subtree response
    coefficients and the differences lam_parent - lam_u are formed in
    cancellation-free shapes (beta = c*S_beta/(S_beta+c) and
    dlam = (S_beta*lam_p - g + S_alpha)/(S_beta+c)); computing them from
    the lam values directly would drown cheap edges' rates in roundoff.
    """
    n = parent.shape[0]
    root_alpha = 0.0
    root_beta = 0.0
    for i in range(n):
        s_alpha[i] = 0.0
        s_beta[i] = 0.0
    for i in range(n):
        u = topo[i]
        cu = (x[u] + delta[u]) / wt[u]
        gu = -2.0 * x[u] * wtp / wt[u] if u == grow else 0.0
        if n_children[u] == 0:
            al = gu
            be = cu
        else:
            denom = s_beta[u] + cu
            al = (gu * s_beta[u] + cu * s_alpha[u]) / denom
            be = cu * s_beta[u] / denom
        alpha[u] = al
        beta[u] = be
        p = parent[u]
        if p >= 0:
            s_alpha[p] += al
            s_beta[p] += be
        else:
            root_alpha = al
            root_beta = be
    lam_root = -root_alpha / root_beta
    for i in range(n - 1, -1, -1):
        u = topo[i]
        p = parent[u]
        lam_p = lam_root if p < 0 else lam[p]
        cu = (x[u] + delta[u]) / wt[u]
        gu = -2.0 * x[u] * wtp / wt[u] if u == grow else 0.0
        if n_children[u] == 0:
            lam[u] = 0.0
            dl = lam_p
        else:
            dl = (s_beta[u] * lam_p - gu + s_alpha[u]) / (s_beta[u] + cu)
            lam[u] = lam_p - dl
        dlam[u] = dl
        xdot[u] = gu + cu * dl
    return lam_root


@njit(cache=True)
def evolve(
    parent,
    topo,
    n_children,
    delta,
    w_true,
    wt_static,
    coef,
    x,
    grow,
    mode,
    horizon,
    cap,
    min_dt,
    eta,
    spect_floor,
    drain_tol,
    max_steps,
    sample_ts,
    x_samples,
    lam_samples,
    lam_root_samples,
    t_samples,
):
    """Advance the flow for one continuous (or drain) step.

    Returns (status, t_end, service, movement, n_steps, min_lam,
    max_resid, n_samples).  ``x`` is updated in place.
    """
    n = parent.shape[0]
    alpha = np.empty(n)
    beta = np.empty(n)
    s_alpha = np.empty(n)
    s_beta = np.empty(n)
    lam = np.zeros(n)
    dlam = np.empty(n)
    xdot = np.empty(n)
    x_new = np.empty(n)
    child_sum = np.empty(n)
    factor = np.empty(n)
    wt = wt_static.copy()

    w0_grow = w_true[grow]
    wt0_grow = wt_static[grow]
    n_sample_slots = sample_ts.shape[0]

    t = 0.0
    service = 0.0
    movement = 0.0
    steps = 0
    min_lam = np.inf
    max_resid = 0.0
    si = 0
    ns = 0
    status = STATUS_OK
    # dt may at most double per step: transients that start far below every
    # accuracy scale (tiny revised weights) then ramp out geometrically
    # instead of either crawling or jumping the whole horizon at once
    dt_prev = max(min_dt, horizon * 1e-9)

    while True:
        if mode == GROW_MODE:
            # wt_static[grow] = coef*(w0 + birth), so this is coef*(w0 + t + birth)
            wt[grow] = wt0_grow + coef[grow] * t
            wtp = coef[grow]
        else:
            wt[grow] = wt0_grow * math.exp(_LN2 * t)
            wtp = _LN2 * wt[grow]

        lam_root = _solve(
            parent, topo, n_children, x, delta, wt, grow, wtp,
            alpha, beta, s_alpha, s_beta, lam, dlam, xdot,
        )
        if lam_root < min_lam:
            min_lam = lam_root
        for u in range(n):
            if n_children[u] > 0 and lam[u] < min_lam:
                min_lam = lam[u]

        if mode == GROW_MODE and si < n_sample_slots and t >= sample_ts[si] - 1e-12:
            for u in range(n):
                x_samples[ns, u] = x[u]
                lam_samples[ns, u] = lam[u]
            lam_root_samples[ns] = lam_root
            t_samples[ns] = t
            ns += 1
            si += 1

        if mode == GROW_MODE:
            if t >= horizon - 1e-15:
                break
        else:
            if x[grow] <= drain_tol:
                break
            if t >= horizon:
                status = STATUS_NOT_CONVERGED
                break
        if steps >= max_steps:
            status = STATUS_STEP_BUDGET
            break

        wt_max = wt[0]
        for u in range(1, n):
            if wt[u] > wt_max:
                wt_max = wt[u]
        spect_abs = spect_floor * wt_max

        dt = horizon - t
        if mode == DRAIN_MODE and dt > 1.0:
            dt = 1.0  # at most one doubling of the virtual weight per step
        if dt > 2.0 * dt_prev:
            dt = 2.0 * dt_prev
        for u in range(n):
            if wt[u] <= spect_abs:
                continue
            r = abs(xdot[u])
            if r > 0.0:
                lim = cap * (x[u] + delta[u]) / r
                if lim < dt:
                    dt = lim
        if mode == GROW_MODE and si < n_sample_slots:
            gap = sample_ts[si] - t
            if gap > 1e-12 and gap < dt:
                dt = gap
        floor = min_dt if min_dt < horizon - t else horizon - t
        if dt < floor:
            dt = floor
        dt_prev = dt

        for u in range(n):
            dl = dlam[u]
            wtp_u = wtp if u == grow else 0.0
            bu = (2.0 * wtp_u - dl) / wt[u]
            if bu > 0.0 and bu * dt > 1.5:
                x_eq = delta[u] * dl / (2.0 * wtp_u - dl)
                move = (x[u] - x_eq) * (1.0 - math.exp(-bu * dt))
                limit = eta * (x[u] + delta[u])
                if move > limit:
                    move = limit
                elif move < -limit:
                    move = -limit
                xn = x[u] - move
            else:
                move = xdot[u] * dt
                limit = 0.5 * (x[u] + delta[u])
                if move > limit:
                    move = limit
                elif move < -limit:
                    move = -limit
                xn = x[u] + move
            if xn < 0.0:
                xn = 0.0
            x_new[u] = xn

        for u in range(n):
            child_sum[u] = 0.0
        for u in range(n):
            p = parent[u]
            if p >= 0:
                child_sum[p] += x_new[u]
        for i in range(n - 1, -1, -1):
            u = topo[i]
            p = parent[u]
            if p < 0:
                x_new[u] = 1.0
            elif factor[p] >= 0.0:
                x_new[u] *= factor[p]
            else:
                x_new[u] = x_new[p] * delta[u] / delta[p]
            if n_children[u] > 0:
                factor[u] = x_new[u] / child_sum[u] if child_sum[u] > 0.0 else -1.0

        resid = 0.0
        for u in range(n):
            child_sum[u] = 0.0
        for u in range(n):
            p = parent[u]
            if p >= 0:
                child_sum[p] += x_new[u]
        for u in range(n):
            if n_children[u] > 0:
                r = abs(child_sum[u] - x_new[u])
                if r > resid:
                    resid = r
        if resid > max_resid:
            max_resid = resid

        mv = 0.0
        if mode == GROW_MODE:
            service += 0.5 * (x[grow] + x_new[grow]) * dt
            w_grow_mid = w0_grow + t + 0.5 * dt
            for u in range(n):
                w_u = w_grow_mid if u == grow else w_true[u]
                mv += w_u * abs(x_new[u] - x[u])
        else:
            for u in range(n):
                mv += w_true[u] * abs(x_new[u] - x[u])
        movement += mv

        for u in range(n):
            x[u] = x_new[u]
        t += dt
        steps += 1

    return status, t, service, movement, steps, min_lam, max_resid, ns
