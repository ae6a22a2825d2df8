"""Pure-Python/numpy fallback for the integration kernels.

Mirrors ``_kernels.pyx`` step for step so the two backends agree to
round-off. Used when the compiled extension is unavailable or when
``LONGBURN_PURE_PYTHON`` is set.
"""

import numpy as np

# Fehlberg 7(8) tableau
C = np.array([0.0, 2 / 27, 1 / 9, 1 / 6, 5 / 12, 1 / 2, 5 / 6, 1 / 6, 2 / 3, 1 / 3, 1.0, 0.0, 1.0])
A = np.zeros((13, 13))
A[1, :1] = [2 / 27]
A[2, :2] = [1 / 36, 1 / 12]
A[3, :3] = [1 / 24, 0, 1 / 8]
A[4, :4] = [5 / 12, 0, -25 / 16, 25 / 16]
A[5, :5] = [1 / 20, 0, 0, 1 / 4, 1 / 5]
A[6, :6] = [-25 / 108, 0, 0, 125 / 108, -65 / 27, 125 / 54]
A[7, :7] = [31 / 300, 0, 0, 0, 61 / 225, -2 / 9, 13 / 900]
A[8, :8] = [2, 0, 0, -53 / 6, 704 / 45, -107 / 9, 67 / 90, 3]
A[9, :9] = [-91 / 108, 0, 0, 23 / 108, -976 / 135, 311 / 54, -19 / 60, 17 / 6, -1 / 12]
A[10, :10] = [2383 / 4100, 0, 0, -341 / 164, 4496 / 1025, -301 / 82, 2133 / 4100, 45 / 82, 45 / 164, 18 / 41]
A[11, :11] = [3 / 205, 0, 0, 0, 0, -6 / 41, -3 / 205, -3 / 41, 3 / 41, 6 / 41, 0]
A[12, :12] = [-1777 / 4100, 0, 0, -341 / 164, 4496 / 1025, -289 / 82, 2193 / 4100, 51 / 82, 33 / 164, 12 / 41, 0, 1]
B8 = np.array([0, 0, 0, 0, 0, 34 / 105, 9 / 35, 9 / 35, 9 / 280, 9 / 280, 0, 41 / 840, 41 / 840])
ERR = 41 / 840  # err = ERR * (k1 + k11 - k12 - k13) * h

MODE_STATE = 0
MODE_VARIATIONAL = 1
_NY = {MODE_STATE: 6, MODE_VARIATIONAL: 60}


def _skew(a):
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def vvlh_matrix(r, v):
    rn = np.sqrt(r @ r)
    h = np.cross(r, v)
    hn = np.sqrt(h @ h)
    z = -r / rn
    y = -h / hn
    x = np.cross(y, z)
    return np.column_stack((x, y, z))


def gravity(r, mu, j2, re, zonal):
    r2 = r @ r
    rn = np.sqrt(r2)
    acc = -mu / (r2 * rn) * r
    if zonal == 2:
        k = -1.5 * j2 * mu * re * re / (r2 * r2 * rn)
        f = 1.0 - 5.0 * r[2] * r[2] / r2
        acc = acc + k * r * np.array([f, f, f + 2.0])
    return acc


def gravity_gradient(r, mu, j2, re, zonal):
    r2 = r @ r
    rn = np.sqrt(r2)
    G = mu / (r2 * rn) * (3.0 * np.outer(r, r) / r2 - np.eye(3))
    if zonal == 2:
        k = -1.5 * j2 * mu * re * re / (r2 * r2 * rn)
        z = r[2]
        f = 1.0 - 5.0 * z * z / r2
        g = np.array([f, f, f + 2.0])
        df = 10.0 * z * z * r / (r2 * r2)
        df[2] -= 10.0 * z / r2
        G = G + k * (np.diag(g) - 5.0 * np.outer(r * g, r) / r2 + np.outer(r, df))
    return G


def thrust_jacobian(r, v, u):
    """Partials of C(r, v) @ u with respect to r and v."""
    rn = np.sqrt(r @ r)
    rh = r / rn
    h = np.cross(r, v)
    hn = np.sqrt(h @ h)
    hh = h / hn
    Prh = np.eye(3) - np.outer(rh, rh)
    Phh = np.eye(3) - np.outer(hh, hh)
    vx = _skew(v)
    rx = _skew(r)
    dZ_dr = -Prh / rn
    dY_dr = Phh @ vx / hn
    dY_dv = -Phh @ rx / hn
    dX_dr = _skew(rh) @ Phh @ vx / hn + _skew(hh) @ Prh / rn
    dX_dv = -_skew(rh) @ Phh @ rx / hn
    d_dr = u[0] * dX_dr + u[1] * dY_dr + u[2] * dZ_dr
    d_dv = u[0] * dX_dv + u[1] * dY_dv
    return d_dr, d_dv


def _rhs(y, force, u, thrust_on, sens_on, mode):
    mu, j2, re, zonal = force[0], force[1], force[2], int(force[3])
    r = y[0:3]
    v = y[3:6]
    dy = np.empty_like(y)
    dy[0:3] = v
    acc = gravity(r, mu, j2, re, zonal)
    if thrust_on or (mode == MODE_VARIATIONAL and sens_on):
        Cm = vvlh_matrix(r, v)
    if thrust_on:
        acc = acc + Cm @ u
    dy[3:6] = acc
    if mode == MODE_VARIATIONAL:
        Ar = gravity_gradient(r, mu, j2, re, zonal)
        Av = None
        if thrust_on:
            d_dr, Av = thrust_jacobian(r, v, u)
            Ar = Ar + d_dr
        phi = y[6:42].reshape(6, 6)
        S = y[42:60].reshape(6, 3)
        dphi = np.empty((6, 6))
        dphi[0:3] = phi[3:6]
        dphi[3:6] = Ar @ phi[0:3]
        dS = np.empty((6, 3))
        dS[0:3] = S[3:6]
        dS[3:6] = Ar @ S[0:3]
        if Av is not None:
            dphi[3:6] += Av @ phi[3:6]
            dS[3:6] += Av @ S[3:6]
        if sens_on:
            dS[3:6] += Cm
        dy[6:42] = dphi.ravel()
        dy[42:60] = dS.ravel()
    return dy


def _stops(t0, times, thrust, sens):
    direction = 1.0 if times[-1] >= t0 else -1.0
    extra = []
    if len(thrust) == 5:
        extra += [thrust[0], thrust[1]]
    if len(sens) == 2:
        extra += [sens[0], sens[1]]
    t_end = times[-1]
    pts = set(float(t) for t in times)
    for t in extra:
        if direction * (t - t0) > 0 and direction * (t_end - t) > 0:
            pts.add(float(t))
    return sorted(pts, key=lambda t: direction * t), direction


def integrate(y0, t0, times, force, thrust, sens, mode, rtol, atol, max_steps=10_000_000):
    """Integrate from ``t0`` and return the state at every entry of ``times``.

    ``times`` must be monotone and lie on one side of ``t0``. Integration
    steps land exactly on every requested time and on the thrust/sensitivity
    window edges, so no step straddles a discontinuity.
    """
    y0 = np.asarray(y0, dtype=float)
    times = np.asarray(times, dtype=float)
    thrust = np.asarray(thrust, dtype=float)
    sens = np.asarray(sens, dtype=float)
    ny = _NY[mode]
    out = np.empty((len(times), ny))
    if len(times) == 0:
        return out, 0
    stops, direction = _stops(t0, times, thrust, sens)
    u = thrust[2:5] if len(thrust) == 5 else np.zeros(3)
    y = y0.copy()
    t = t0
    h_prop = direction * min(60.0, max(abs(stops[-1] - t0), 1e-3))
    nfev = 0
    nsteps = 0
    k = np.empty((13, ny))
    results = {}
    for b in stops:
        if b == t:
            results[b] = y.copy()
            continue
        mid = 0.5 * (t + b)
        thrust_on = len(thrust) == 5 and min(thrust[0], thrust[1]) < mid < max(thrust[0], thrust[1])
        sens_on = len(sens) == 2 and min(sens[0], sens[1]) < mid < max(sens[0], sens[1])
        while t != b:
            remaining = b - t
            clamped = abs(remaining) <= abs(h_prop) * 1.000001
            h = remaining if clamped else h_prop
            for s in range(13):
                ys = y + h * (A[s, :s] @ k[:s]) if s else y
                k[s] = _rhs(ys, force, u, thrust_on, sens_on, mode)
            nfev += 13
            ynew = y + h * (B8 @ k)
            err_vec = ERR * h * (k[0, :6] + k[10, :6] - k[11, :6] - k[12, :6])
            scale = atol + rtol * np.maximum(np.abs(y[:6]), np.abs(ynew[:6]))
            err = np.max(np.abs(err_vec) / scale)
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** (-1.0 / 8.0)))
            if err <= 1.0:
                y = ynew
                t = b if clamped else t + h
                h_new = h * fac
                h_prop = h_new if not clamped or abs(h_new) > abs(h_prop) else h_prop
            else:
                h_prop = h * fac
            nsteps += 1
            if nsteps > max_steps:
                raise RuntimeError("step limit exceeded")
            if abs(h_prop) < 1e-9:
                raise RuntimeError(f"step size underflow at t={t}")
        results[b] = y.copy()
    for i, tt in enumerate(times):
        out[i] = results[float(tt)]
    return out, nfev
