"""Jitted DOP853 kernel for the two-center-two-body flow.

The state vector is (Q3, v3, Q4r, v4) where Q4r is the traveler's position
relative to the center it currently orbits; ``c4x`` is that center's x
coordinate (0 for Q2, -chi for Q1).  Keeping Q4 relative to the near center
avoids losing ~log10(chi) digits on the far side.

Coefficients are Hairer's, taken from scipy so they are not retyped here.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dc

_NS = _dc.N_STAGES
A = np.ascontiguousarray(_dc.A[:_NS, :_NS])
B = np.ascontiguousarray(_dc.B)
C = np.ascontiguousarray(_dc.C[:_NS])
E3 = np.ascontiguousarray(_dc.E3)
E5 = np.ascontiguousarray(_dc.E5)

# event kinds
EV_X4 = 1  # x of Q4 (absolute) minus value
EV_RELDIST = 2  # |Q3 - Q4| minus value
EV_R1 = 3  # |Q4 - Q1| minus value
EV_PERI3 = 4  # Q3 . v3 (radial velocity of Q3 about Q2)
EV_X3 = 5  # x of Q3 minus value

# statuses
ST_EVENT = 0
ST_TMAX = 1
ST_COLLISION = 2
ST_ESCAPE = 3
ST_UNDERFLOW = 4
ST_MAXSTEPS = 5

DIST_FLOOR = 1e-12


@njit(cache=True)
def rhs(y, mu, chi, c4x, q4_frozen, out):
    """Accelerations for the rescaled Hamiltonian; returns the smallest pair distance."""
    x3, y3 = y[0], y[1]
    x4a, y4a = y[4] + c4x, y[5]
    dmin = 1e300
    # Q3 about Q2
    r = math.sqrt(x3 * x3 + y3 * y3)
    dmin = min(dmin, r)
    r3 = r * r * r
    ax3 = -x3 / r3
    ay3 = -y3 / r3
    # Q4 about Q2
    dx2 = y[4] + c4x
    r = math.sqrt(dx2 * dx2 + y4a * y4a)
    dmin = min(dmin, r)
    r3 = r * r * r
    ax4 = -dx2 / r3
    ay4 = -y4a / r3
    if math.isfinite(chi):
        dx = x3 + chi
        r = math.sqrt(dx * dx + y3 * y3)
        dmin = min(dmin, r)
        r3 = r * r * r
        ax3 -= dx / r3
        ay3 -= y3 / r3
        dx1 = y[4] + (c4x + chi)
        r = math.sqrt(dx1 * dx1 + y4a * y4a)
        dmin = min(dmin, r)
        r3 = r * r * r
        ax4 -= dx1 / r3
        ay4 -= y4a / r3
    if mu != 0.0:
        dx = x3 - x4a
        dy = y3 - y4a
        r = math.sqrt(dx * dx + dy * dy)
        dmin = min(dmin, r)
        r3 = r * r * r
        ax3 -= mu * dx / r3
        ay3 -= mu * dy / r3
        ax4 += mu * dx / r3
        ay4 += mu * dy / r3
    out[0] = y[2]
    out[1] = y[3]
    out[2] = ax3
    out[3] = ay3
    if q4_frozen:
        out[4] = 0.0
        out[5] = 0.0
        out[6] = 0.0
        out[7] = 0.0
    else:
        out[4] = y[6]
        out[5] = y[7]
        out[6] = ax4
        out[7] = ay4
    return dmin


@njit(cache=True)
def energy(y, mu, chi, c4x):
    x3, y3 = y[0], y[1]
    x4a, y4a = y[4] + c4x, y[5]
    H = 0.5 * (y[2] * y[2] + y[3] * y[3] + y[6] * y[6] + y[7] * y[7])
    H -= 1.0 / math.sqrt(x3 * x3 + y3 * y3)
    H -= 1.0 / math.sqrt(x4a * x4a + y4a * y4a)
    if math.isfinite(chi):
        H -= 1.0 / math.sqrt((x3 + chi) ** 2 + y3 * y3)
        dx1 = y[4] + (c4x + chi)
        H -= 1.0 / math.sqrt(dx1 * dx1 + y4a * y4a)
    if mu != 0.0:
        H -= mu / math.sqrt((x3 - x4a) ** 2 + (y3 - y4a) ** 2)
    return H


@njit(cache=True)
def event_value(kind, value, y, chi, c4x):
    if kind == EV_X4:
        return y[4] + c4x - value
    if kind == EV_RELDIST:
        dx = y[0] - (y[4] + c4x)
        dy = y[1] - y[5]
        return math.sqrt(dx * dx + dy * dy) - value
    if kind == EV_R1:
        dx = y[4] + (c4x + chi)
        return math.sqrt(dx * dx + y[5] * y[5]) - value
    if kind == EV_PERI3:
        return y[0] * y[2] + y[1] * y[3]
    if kind == EV_X3:
        return y[0] - value
    return 1.0


@njit(cache=True)
def _step(y, f0, h, mu, chi, c4x, frz, K, ynew, fnew, dy):
    """One DOP853 step of size h; the raw increment goes to dy, returns the pair floor distance."""
    n = y.shape[0]
    tmp = np.empty(n)
    for i in range(n):
        K[0, i] = f0[i]
    for s in range(1, _NS):
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += A[s, j] * K[j, i]
            tmp[i] = y[i] + h * acc
        rhs(tmp, mu, chi, c4x, frz, K[s])
    for i in range(n):
        acc = 0.0
        for j in range(_NS):
            acc += B[j] * K[j, i]
        dy[i] = h * acc
        ynew[i] = y[i] + dy[i]
    dmin = rhs(ynew, mu, chi, c4x, frz, fnew)
    for i in range(n):
        K[_NS, i] = fnew[i]
    return dmin


@njit(cache=True)
def _error_norm(y, ynew, K, h, rtol, atol):
    n = y.shape[0]
    e5 = 0.0
    e3 = 0.0
    for i in range(n):
        sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
        a5 = 0.0
        a3 = 0.0
        for j in range(_NS + 1):
            a5 += E5[j] * K[j, i]
            a3 += E3[j] * K[j, i]
        e5 += (a5 / sc) ** 2
        e3 += (a3 / sc) ** 2
    if e5 == 0.0 and e3 == 0.0:
        return 0.0
    return abs(h) * e5 / math.sqrt((e5 + 0.01 * e3) * n)


@njit(cache=True)
def integrate(
    y0,
    t0,
    mu,
    chi,
    c4x,
    frz,
    events,
    t_max,
    rtol,
    atol,
    h0,
    max_steps,
    esc_radius,
    ev_tol,
    rec_every,
    rec,
):
    """Integrate until an event, t_max, or a failure.

    ``events`` is an (m, 3) array of (kind, value, direction).  Direction +1
    fires on increasing crossings, -1 on decreasing, 0 on either.  An event
    whose function starts within ``ev_tol`` of zero cannot fire on the first
    step, so restarting from a section state does not retrigger it.

    Returns (status, event_index, t, y, h, nsteps, nrec, min_rel, t_min_rel, H0, Hmax_dev).
    """
    n = y0.shape[0]
    y = y0.copy()
    comp = np.zeros(n)
    f = np.empty(n)
    fnew = np.empty(n)
    ynew = np.empty(n)
    dyv = np.empty(n)
    K = np.empty((_NS + 1, n))
    dmin = rhs(y, mu, chi, c4x, frz, f)
    m = events.shape[0]
    g0 = np.empty(m)
    g1 = np.empty(m)
    for k in range(m):
        g0[k] = event_value(int(events[k, 0]), events[k, 1], y, chi, c4x)
    H0 = energy(y, mu, chi, c4x)
    Hdev = 0.0
    t = t0
    direction = 1.0 if t_max >= t0 else -1.0
    h = h0 * direction
    if h == 0.0:
        h = 1e-3 * direction
    nsteps = 0
    nrec = 0
    # relative distance bookkeeping
    dx = y[0] - (y[4] + c4x)
    dy = y[1] - y[5]
    min_rel = math.sqrt(dx * dx + dy * dy)
    t_min_rel = t
    if dmin < DIST_FLOOR:
        return ST_COLLISION, -1, t, y, h, nsteps, nrec, min_rel, t_min_rel, H0, Hdev
    if t == t_max:
        return ST_TMAX, -1, t, y, h, nsteps, nrec, min_rel, t_min_rel, H0, Hdev
    first = True
    while True:
        if nsteps >= max_steps:
            return ST_MAXSTEPS, -1, t, y, h, nsteps, nrec, min_rel, t_min_rel, H0, Hdev
        hit_tmax = False
        if (t + h - t_max) * direction > 0:
            h = t_max - t
            hit_tmax = True
        if abs(h) < 1e-15 * max(1.0, abs(t)):
            return ST_UNDERFLOW, -1, t, y, h, nsteps, nrec, min_rel, t_min_rel, H0, Hdev
        dstep = _step(y, f, h, mu, chi, c4x, frz, K, ynew, fnew, dyv)
        err = _error_norm(y, ynew, K, h, rtol, atol)
        if not (err <= 1.0) or dstep < DIST_FLOOR:
            if dstep < DIST_FLOOR and err <= 1.0:
                return ST_COLLISION, -1, t, y, h, nsteps, nrec, min_rel, t_min_rel, H0, Hdev
            fac = 0.2
            if err == err and err > 0:
                fac = max(0.2, 0.9 * err ** (-1.0 / 8.0))
            h *= fac
            continue
        # accepted: compensated update of y
        for i in range(n):
            inc = dyv[i] + comp[i]
            yi = y[i] + inc
            comp[i] = inc - (yi - y[i])
            ynew[i] = yi
        nsteps += 1
        # event scan
        fired = -1
        for k in range(m):
            g1[k] = event_value(int(events[k, 0]), events[k, 1], ynew, chi, c4x)
            if first and abs(g0[k]) <= ev_tol:
                continue
            dr = events[k, 2]
            up = g0[k] < 0.0 and g1[k] >= 0.0
            down = g0[k] > 0.0 and g1[k] <= 0.0
            if (dr >= 0 and up) or (dr <= 0 and down):
                fired = k
                break
        if fired >= 0:
            # Illinois iteration on the sub-step fraction, re-stepping from y
            kind = int(events[fired, 0])
            val = events[fired, 1]
            a, b = 0.0, 1.0
            ga, gb = g0[fired], g1[fired]
            side = 0
            ytry = ynew.copy()
            ftry = np.empty(n)
            Kt = np.empty((_NS + 1, n))
            dyt = np.empty(n)
            for it in range(200):
                th = b - gb * (b - a) / (gb - ga)
                if not (th > a and th < b):
                    th = 0.5 * (a + b)
                _step(y, f, th * h, mu, chi, c4x, frz, Kt, ytry, ftry, dyt)
                gt = event_value(kind, val, ytry, chi, c4x)
                if abs(gt) <= 1e-14 * max(1.0, abs(val)) or (b - a) * abs(h) < 1e-16 * max(1.0, abs(t)):
                    break
                if (gt > 0) == (gb > 0):
                    b, gb = th, gt
                    if side == 1:
                        ga *= 0.5
                    side = 1
                else:
                    a, ga = th, gt
                    if side == -1:
                        gb *= 0.5
                    side = -1
            t = t + th * h
            Hn = energy(ytry, mu, chi, c4x)
            Hdev = max(Hdev, abs(Hn - H0))
            return ST_EVENT, fired, t, ytry, h, nsteps, nrec, min_rel, t_min_rel, H0, Hdev
        t = t + h
        for i in range(n):
            y[i] = ynew[i]
            f[i] = fnew[i]
        for k in range(m):
            g0[k] = g1[k]
        first = False
        dx = y[0] - (y[4] + c4x)
        dy = y[1] - y[5]
        drel = math.sqrt(dx * dx + dy * dy)
        if drel < min_rel:
            min_rel = drel
            t_min_rel = t
        Hn = energy(y, mu, chi, c4x)
        dH = abs(Hn - H0)
        if dH > Hdev:
            Hdev = dH
        if rec_every > 0 and nsteps % rec_every == 0 and nrec < rec.shape[0]:
            rec[nrec, 0] = t
            for i in range(n):
                rec[nrec, 1 + i] = y[i]
            rec[nrec, 9] = Hn
            nrec += 1
        if esc_radius > 0:
            x4a = y[4] + c4x
            if math.sqrt(x4a * x4a + y[5] * y[5]) > esc_radius:
                return ST_ESCAPE, -1, t, y, h, nsteps, nrec, min_rel, t_min_rel, H0, Hdev
        if hit_tmax:
            return ST_TMAX, -1, t, y, h, nsteps, nrec, min_rel, t_min_rel, H0, Hdev
        if err == 0.0:
            fac = 10.0
        else:
            fac = min(10.0, max(0.2, 0.9 * err ** (-1.0 / 8.0)))
        h *= fac
