"""Hot numeric kernels, each in a numba flavour and a pure numpy flavour.

The ``*_jit`` functions are scalar loops compiled by :func:`berthtrack._accel.njit`;
the ``*_np`` functions are the fallback used when numba is disabled. Public
callers go through the unsuffixed dispatch names at the bottom of the module.

Vessel state arrays are ordered ``(x0, y0, psi, u, vm, r)``; actuator arrays
``(delta_p, delta_s, n_p, n_bt)`` in degrees and rps.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


def _nearest_point_py(segs, qx, qy):
    best = np.inf
    bx_ = 0.0
    by_ = 0.0
    bi = -1
    for i in range(segs.shape[0]):
        ax = segs[i, 0]
        ay = segs[i, 1]
        dx = segs[i, 2] - ax
        dy = segs[i, 3] - ay
        l2 = dx * dx + dy * dy
        t = 0.0
        if l2 > 0.0:
            t = ((qx - ax) * dx + (qy - ay) * dy) / l2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
        px = ax + t * dx
        py = ay + t * dy
        d2 = (px - qx) * (px - qx) + (py - qy) * (py - qy)
        if d2 < best:
            best = d2
            bx_ = px
            by_ = py
            bi = i
    return bx_, by_, bi


nearest_point_jit = njit(_nearest_point_py)


def nearest_point_np(segs, qx, qy):
    ax = segs[:, 0]
    ay = segs[:, 1]
    dx = segs[:, 2] - ax
    dy = segs[:, 3] - ay
    l2 = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(l2 > 0.0, ((qx - ax) * dx + (qy - ay) * dy) / l2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    px = ax + t * dx
    py = ay + t * dy
    d2 = (px - qx) * (px - qx) + (py - qy) * (py - qy)
    i = int(np.argmin(d2))
    return float(px[i]), float(py[i]), i


@njit
def nearest_points_jit(segs, qs):
    n = qs.shape[0]
    out = np.empty((n, 2))
    idx = np.empty(n, dtype=np.int64)
    for k in range(n):
        px, py, i = nearest_point_jit(segs, qs[k, 0], qs[k, 1])
        out[k, 0] = px
        out[k, 1] = py
        idx[k] = i
    return out, idx


def nearest_points_np(segs, qs):
    out = np.empty((len(qs), 2))
    idx = np.empty(len(qs), dtype=np.int64)
    for k, (qx, qy) in enumerate(qs):
        px, py, i = nearest_point_np(segs, qx, qy)
        out[k] = px, py
        idx[k] = i
    return out, idx


def _ellipse_hits_py(segs, starts, bbox, cx, cy, psi, a, b):
    c = math.cos(psi)
    s = math.sin(psi)
    reach = a if a > b else b
    for p in range(starts.shape[0] - 1):
        if (bbox[p, 0] > cx + reach or bbox[p, 2] < cx - reach
                or bbox[p, 1] > cy + reach or bbox[p, 3] < cy - reach):
            continue
        inside = False
        for i in range(starts[p], starts[p + 1]):
            x1 = segs[i, 0] - cx
            y1 = segs[i, 1] - cy
            x2 = segs[i, 2] - cx
            y2 = segs[i, 3] - cy
            X1 = (x1 * c + y1 * s) / a
            Y1 = (-x1 * s + y1 * c) / b
            X2 = (x2 * c + y2 * s) / a
            Y2 = (-x2 * s + y2 * c) / b
            dx = X2 - X1
            dy = Y2 - Y1
            l2 = dx * dx + dy * dy
            t = 0.0
            if l2 > 0.0:
                t = -(X1 * dx + Y1 * dy) / l2
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            px = X1 + t * dx
            py = Y1 + t * dy
            if px * px + py * py <= 1.0:
                return True
            if (Y1 > 0.0) != (Y2 > 0.0):
                xint = X1 - Y1 * dx / dy
                if xint > 0.0:
                    inside = not inside
        if inside:
            return True
    return False


ellipse_hits_jit = njit(_ellipse_hits_py)


def ellipse_hits_np(segs, starts, bbox, cx, cy, psi, a, b):
    if len(segs) == 0:
        return False
    c = math.cos(psi)
    s = math.sin(psi)
    x1 = segs[:, 0] - cx
    y1 = segs[:, 1] - cy
    x2 = segs[:, 2] - cx
    y2 = segs[:, 3] - cy
    X1 = (x1 * c + y1 * s) / a
    Y1 = (-x1 * s + y1 * c) / b
    X2 = (x2 * c + y2 * s) / a
    Y2 = (-x2 * s + y2 * c) / b
    dx = X2 - X1
    dy = Y2 - Y1
    l2 = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(l2 > 0.0, -(X1 * dx + Y1 * dy) / l2, 0.0)
        t = np.clip(t, 0.0, 1.0)
        px = X1 + t * dx
        py = Y1 + t * dy
        if np.any(px * px + py * py <= 1.0):
            return True
        straddle = (Y1 > 0.0) != (Y2 > 0.0)
        xint = np.where(straddle, X1 - Y1 * dx / np.where(straddle, dy, 1.0), -1.0)
    crossing = (straddle & (xint > 0.0)).astype(np.int64)
    counts = np.add.reduceat(crossing, starts[:-1])
    return bool(np.any(counts % 2 == 1))


def _make_mark_free(hits):
    def mark_free(ell, cell, i0, j0, free):
        """Flag grid cells touched by any ellipse row (cx, cy, heading, a, b)."""
        segs = np.empty((4, 4))
        starts = np.zeros(2, dtype=np.int64)
        starts[1] = 4
        bbox = np.empty((1, 4))
        ni = free.shape[0]
        nj = free.shape[1]
        for k in range(ell.shape[0]):
            cx = ell[k, 0]
            cy = ell[k, 1]
            rr = max(ell[k, 3], ell[k, 4])
            for i in range(int(math.floor((cx - rr) / cell)), int(math.floor((cx + rr) / cell)) + 1):
                for j in range(int(math.floor((cy - rr) / cell)), int(math.floor((cy + rr) / cell)) + 1):
                    a = i - i0
                    b = j - j0
                    if a < 0 or b < 0 or a >= ni or b >= nj or free[a, b]:
                        continue
                    x0 = i * cell
                    y0 = j * cell
                    x1 = x0 + cell
                    y1 = y0 + cell
                    segs[0, 0] = x0; segs[0, 1] = y0; segs[0, 2] = x1; segs[0, 3] = y0
                    segs[1, 0] = x1; segs[1, 1] = y0; segs[1, 2] = x1; segs[1, 3] = y1
                    segs[2, 0] = x1; segs[2, 1] = y1; segs[2, 2] = x0; segs[2, 3] = y1
                    segs[3, 0] = x0; segs[3, 1] = y1; segs[3, 2] = x0; segs[3, 3] = y0
                    bbox[0, 0] = x0; bbox[0, 1] = y0; bbox[0, 2] = x1; bbox[0, 3] = y1
                    if hits(segs, starts, bbox, cx, cy, ell[k, 2], ell[k, 3], ell[k, 4]):
                        free[a, b] = True
    return mark_free


mark_free_py = _make_mark_free(_ellipse_hits_py)
mark_free_jit = njit(_make_mark_free(ellipse_hits_jit))


# ---------------------------------------------------------------------------
# vessel dynamics
# ---------------------------------------------------------------------------

# indices into the packed parameter vector (see DynamicsConfig.pack)
P_M, P_IZ, P_MX, P_MY, P_JZ, P_L = 0, 1, 2, 3, 4, 5
P_RHO, P_DP, P_KT, P_TP, P_KAPPA, P_AINT = 6, 7, 8, 9, 10, 11
P_YR, P_XR, P_CL, P_CD = 12, 13, 14, 15
P_CBT, P_XBT, P_UBT = 16, 17, 18
P_XU, P_XUU, P_YV, P_YVV, P_NR, P_NRR = 19, 20, 21, 22, 23, 24
P_RHOA, P_AF, P_AL = 25, 26, 27
P_MODE, P_DECAY = 28, 29
N_PARAMS = 30

MODE_ZERO = 0.0
MODE_SURROGATE = 1.0
MODE_LINEAR = 2.0


def _interp_periodic(tab, ang):
    # tab sampled every 10 deg on [0, 360]
    a = ang % (2.0 * math.pi)
    f = a / (2.0 * math.pi) * (tab.shape[0] - 1)
    i = int(f)
    if i >= tab.shape[0] - 1:
        i = tab.shape[0] - 2
    w = f - i
    return tab[i] * (1.0 - w) + tab[i + 1] * w


_interp_periodic_jit = njit(_interp_periodic)


def _make_forces(interp):
    def forces(u, v, r, psi, dp, ds, n_p, n_bt, wspeed, wdir, P, wtab):
        # propeller jet vectored by each rudder
        thrust = P[P_RHO] * n_p * n_p * P[P_DP] ** 4 * P[P_KT] * (1.0 - P[P_TP])
        half = 0.5 * thrust
        th_p = P[P_KAPPA] * math.radians(dp)
        th_s = P[P_KAPPA] * math.radians(ds)
        fy_p = half * math.sin(th_p)
        fy_s = half * math.sin(th_s)
        # a rudder pushing its jet towards the other rudder loses efficiency
        att_p = 1.0 - P[P_AINT] if fy_p > 0.0 else 1.0
        att_s = 1.0 - P[P_AINT] if fy_s < 0.0 else 1.0
        fx_p = half * math.cos(th_p) * att_p
        fx_s = half * math.cos(th_s) * att_s
        fy_p *= att_p
        fy_s *= att_s
        # lift/drag from forward inflow
        uu = u * abs(u)
        sdp = math.sin(math.radians(dp))
        sds = math.sin(math.radians(ds))
        fy_p += P[P_CL] * uu * sdp
        fy_s += P[P_CL] * uu * sds
        fx_p -= P[P_CD] * uu * sdp * sdp
        fx_s -= P[P_CD] * uu * sds * sds
        X = fx_p + fx_s
        Y = fy_p + fy_s
        N = P[P_XR] * Y + P[P_YR] * (fx_p - fx_s)
        # bow thruster, fading with speed
        ybt = P[P_CBT] * n_bt * abs(n_bt) * math.exp(-abs(u) / P[P_UBT])
        Y += ybt
        N += P[P_XBT] * ybt
        # hull damping (surge, cross-flow sway and yaw)
        X -= P[P_XU] * u + P[P_XUU] * u * abs(u)
        Y -= P[P_YV] * v + P[P_YVV] * v * abs(v)
        N -= P[P_NR] * r + P[P_NRR] * r * abs(r)
        # wind; wdir is the earth-fixed direction the wind comes from
        if wspeed > 0.0:
            we = -wspeed * math.cos(wdir)
            wn = -wspeed * math.sin(wdir)
            c = math.cos(psi)
            s = math.sin(psi)
            ax = we * c + wn * s - u
            ay = -we * s + wn * c - v
            ua2 = ax * ax + ay * ay
            if ua2 > 0.0:
                gam = math.atan2(-ay, -ax)
                q = 0.5 * P[P_RHOA] * ua2
                X += q * P[P_AF] * interp(wtab[0], gam)
                Y += q * P[P_AL] * interp(wtab[1], gam)
                N += q * P[P_AL] * P[P_L] * interp(wtab[2], gam)
        return X, Y, N
    return forces


_forces_py = _make_forces(_interp_periodic)
_forces_jit = njit(_make_forces(_interp_periodic_jit))


def _make_deriv(forces):
    def deriv(x, dp, ds, n_p, n_bt, wspeed, wdir, P, wtab, out):
        psi = x[2]
        u = x[3]
        v = x[4]
        r = x[5]
        c = math.cos(psi)
        s = math.sin(psi)
        out[0] = u * c - v * s
        out[1] = u * s + v * c
        out[2] = r
        mode = P[P_MODE]
        if mode == MODE_ZERO:
            out[3] = 0.0
            out[4] = 0.0
            out[5] = 0.0
        elif mode == MODE_LINEAR:
            k = P[P_DECAY]
            out[3] = -k * u
            out[4] = -k * v
            out[5] = -k * r
        else:
            X, Y, N = forces(u, v, r, psi, dp, ds, n_p, n_bt, wspeed, wdir, P, wtab)
            mxx = P[P_M] + P[P_MX]
            myy = P[P_M] + P[P_MY]
            # Munk moment keeps the inviscid part energy-conserving
            N -= (P[P_MY] - P[P_MX]) * u * v
            out[3] = (X + myy * v * r) / mxx
            out[4] = (Y - mxx * u * r) / myy
            out[5] = N / (P[P_IZ] + P[P_JZ])
    return deriv


_deriv_py = _make_deriv(_forces_py)
_deriv_jit = njit(_make_deriv(_forces_jit))


def _rudder(delta, cmd, K, tau):
    step = K * tau
    d = cmd - delta
    if d > step:
        d = step
    elif d < -step:
        d = -step
    return delta + d


_rudder_jit = njit(_rudder)


def _make_integrate(deriv, rudder):
    def integrate(x0, act0, cmd, P, wtab, K, h, wind_speeds, wdir, noise):
        nsub = wind_speeds.shape[0]
        x = x0.copy()
        act = act0.copy()
        path = np.empty((nsub, 6))
        k1 = np.empty(6)
        k2 = np.empty(6)
        k3 = np.empty(6)
        k4 = np.empty(6)
        tmp = np.empty(6)
        n_p = cmd[2]
        n_bt = cmd[3]
        for i in range(nsub):
            dp0 = act[0]
            ds0 = act[1]
            w = wind_speeds[i]
            dp_h = rudder(dp0, cmd[0], K, 0.5 * h)
            ds_h = rudder(ds0, cmd[1], K, 0.5 * h)
            dp_1 = rudder(dp0, cmd[0], K, h)
            ds_1 = rudder(ds0, cmd[1], K, h)
            deriv(x, dp0, ds0, n_p, n_bt, w, wdir, P, wtab, k1)
            for j in range(6):
                tmp[j] = x[j] + 0.5 * h * k1[j]
            deriv(tmp, dp_h, ds_h, n_p, n_bt, w, wdir, P, wtab, k2)
            for j in range(6):
                tmp[j] = x[j] + 0.5 * h * k2[j]
            deriv(tmp, dp_h, ds_h, n_p, n_bt, w, wdir, P, wtab, k3)
            for j in range(6):
                tmp[j] = x[j] + h * k3[j]
            deriv(tmp, dp_1, ds_1, n_p, n_bt, w, wdir, P, wtab, k4)
            for j in range(6):
                x[j] = x[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) + noise[i, j]
            act[0] = dp_1
            act[1] = ds_1
            act[2] = n_p
            act[3] = n_bt
            for j in range(6):
                path[i, j] = x[j]
        return x, act, path
    return integrate


integrate_py = _make_integrate(_deriv_py, _rudder)
integrate_jit = njit(_make_integrate(_deriv_jit, _rudder_jit))


def state_derivative_py(x, act, wspeed, wdir, P, wtab):
    out = np.empty(6)
    _deriv_py(np.asarray(x, dtype=float), act[0], act[1], act[2], act[3], wspeed, wdir, P, wtab, out)
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    nearest_point = nearest_point_jit
    nearest_points = nearest_points_jit
    ellipse_hits = ellipse_hits_jit
    mark_free = mark_free_jit
    integrate = integrate_jit
else:
    nearest_point = nearest_point_np
    nearest_points = nearest_points_np
    ellipse_hits = ellipse_hits_np
    mark_free = mark_free_py
    integrate = integrate_py
