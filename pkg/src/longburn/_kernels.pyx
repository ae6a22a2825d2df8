# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled integration kernels.

Same contract as ``_kernels_py``: Fehlberg 7(8) with local extrapolation,
steps forced onto requested output times and thrust/sensitivity window
edges, error control on the six orbital-state components only.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, pow, fmin, fmax

cnp.import_array()

cdef enum:
    NSTAGE = 13
    NYMAX = 60

cdef double C_[NSTAGE]
cdef double A_[NSTAGE][NSTAGE]
cdef double B8_[NSTAGE]
cdef double ERR_ = 41.0 / 840.0


cdef void _init_tableau():
    cdef int i, j
    for i in range(NSTAGE):
        for j in range(NSTAGE):
            A_[i][j] = 0.0
    C_[:] = [0.0, 2.0 / 27, 1.0 / 9, 1.0 / 6, 5.0 / 12, 0.5, 5.0 / 6, 1.0 / 6, 2.0 / 3, 1.0 / 3, 1.0, 0.0, 1.0]
    A_[1][0] = 2.0 / 27
    A_[2][0] = 1.0 / 36; A_[2][1] = 1.0 / 12
    A_[3][0] = 1.0 / 24; A_[3][2] = 1.0 / 8
    A_[4][0] = 5.0 / 12; A_[4][2] = -25.0 / 16; A_[4][3] = 25.0 / 16
    A_[5][0] = 1.0 / 20; A_[5][3] = 1.0 / 4; A_[5][4] = 1.0 / 5
    A_[6][0] = -25.0 / 108; A_[6][3] = 125.0 / 108; A_[6][4] = -65.0 / 27; A_[6][5] = 125.0 / 54
    A_[7][0] = 31.0 / 300; A_[7][4] = 61.0 / 225; A_[7][5] = -2.0 / 9; A_[7][6] = 13.0 / 900
    A_[8][0] = 2.0; A_[8][3] = -53.0 / 6; A_[8][4] = 704.0 / 45; A_[8][5] = -107.0 / 9
    A_[8][6] = 67.0 / 90; A_[8][7] = 3.0
    A_[9][0] = -91.0 / 108; A_[9][3] = 23.0 / 108; A_[9][4] = -976.0 / 135; A_[9][5] = 311.0 / 54
    A_[9][6] = -19.0 / 60; A_[9][7] = 17.0 / 6; A_[9][8] = -1.0 / 12
    A_[10][0] = 2383.0 / 4100; A_[10][3] = -341.0 / 164; A_[10][4] = 4496.0 / 1025
    A_[10][5] = -301.0 / 82; A_[10][6] = 2133.0 / 4100; A_[10][7] = 45.0 / 82
    A_[10][8] = 45.0 / 164; A_[10][9] = 18.0 / 41
    A_[11][0] = 3.0 / 205; A_[11][5] = -6.0 / 41; A_[11][6] = -3.0 / 205; A_[11][7] = -3.0 / 41
    A_[11][8] = 3.0 / 41; A_[11][9] = 6.0 / 41
    A_[12][0] = -1777.0 / 4100; A_[12][3] = -341.0 / 164; A_[12][4] = 4496.0 / 1025
    A_[12][5] = -289.0 / 82; A_[12][6] = 2193.0 / 4100; A_[12][7] = 51.0 / 82
    A_[12][8] = 33.0 / 164; A_[12][9] = 12.0 / 41; A_[12][11] = 1.0
    B8_[:] = [0.0, 0.0, 0.0, 0.0, 0.0, 34.0 / 105, 9.0 / 35, 9.0 / 35, 9.0 / 280, 9.0 / 280,
              0.0, 41.0 / 840, 41.0 / 840]


_init_tableau()


cdef struct Force:
    double mu
    double j2
    double re
    int zonal


cdef inline void _cross(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline void _skew(const double* a, double m[3][3]) noexcept nogil:
    m[0][0] = 0.0; m[0][1] = -a[2]; m[0][2] = a[1]
    m[1][0] = a[2]; m[1][1] = 0.0; m[1][2] = -a[0]
    m[2][0] = -a[1]; m[2][1] = a[0]; m[2][2] = 0.0


cdef inline void _matmul3(double a[3][3], double b[3][3], double out[3][3]) noexcept nogil:
    cdef int i, j
    for i in range(3):
        for j in range(3):
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j]


cdef void _vvlh(const double* r, const double* v, double Cm[3][3]) noexcept nogil:
    cdef double h[3]
    cdef double x[3]
    cdef double y[3]
    cdef double z[3]
    cdef double rn, hn
    cdef int i
    rn = sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
    _cross(r, v, h)
    hn = sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2])
    for i in range(3):
        z[i] = -r[i] / rn
        y[i] = -h[i] / hn
    _cross(y, z, x)
    for i in range(3):
        Cm[i][0] = x[i]
        Cm[i][1] = y[i]
        Cm[i][2] = z[i]


cdef void _gravity(const double* r, Force* f, double* acc) noexcept nogil:
    cdef double r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2]
    cdef double rn = sqrt(r2)
    cdef double c = -f.mu / (r2 * rn)
    cdef double k, g
    acc[0] = c * r[0]
    acc[1] = c * r[1]
    acc[2] = c * r[2]
    if f.zonal == 2:
        k = -1.5 * f.j2 * f.mu * f.re * f.re / (r2 * r2 * rn)
        g = 1.0 - 5.0 * r[2] * r[2] / r2
        acc[0] += k * r[0] * g
        acc[1] += k * r[1] * g
        acc[2] += k * r[2] * (g + 2.0)


cdef void _gravity_gradient(const double* r, Force* f, double G[3][3]) noexcept nogil:
    cdef double r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2]
    cdef double rn = sqrt(r2)
    cdef double c = f.mu / (r2 * rn)
    cdef double k, z, fz
    cdef double g[3]
    cdef double df[3]
    cdef int i, j
    for i in range(3):
        for j in range(3):
            G[i][j] = c * (3.0 * r[i] * r[j] / r2 - (1.0 if i == j else 0.0))
    if f.zonal == 2:
        k = -1.5 * f.j2 * f.mu * f.re * f.re / (r2 * r2 * rn)
        z = r[2]
        fz = 1.0 - 5.0 * z * z / r2
        g[0] = fz; g[1] = fz; g[2] = fz + 2.0
        for j in range(3):
            df[j] = 10.0 * z * z * r[j] / (r2 * r2)
        df[2] -= 10.0 * z / r2
        for i in range(3):
            for j in range(3):
                G[i][j] += k * ((g[i] if i == j else 0.0) - 5.0 * r[i] * g[i] * r[j] / r2 + r[i] * df[j])


cdef void _thrust_jacobian(const double* r, const double* v, const double* u,
                           double Dr[3][3], double Dv[3][3]) noexcept nogil:
    cdef double h[3]
    cdef double rh[3]
    cdef double hh[3]
    cdef double rn, hn
    cdef double Prh[3][3]
    cdef double Phh[3][3]
    cdef double vx[3][3]
    cdef double rx[3][3]
    cdef double rhx[3][3]
    cdef double hhx[3][3]
    cdef double PhhVx[3][3]
    cdef double PhhRx[3][3]
    cdef double t1[3][3]
    cdef double t2[3][3]
    cdef double t3[3][3]
    cdef int i, j
    rn = sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
    _cross(r, v, h)
    hn = sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2])
    for i in range(3):
        rh[i] = r[i] / rn
        hh[i] = h[i] / hn
    for i in range(3):
        for j in range(3):
            Prh[i][j] = (1.0 if i == j else 0.0) - rh[i] * rh[j]
            Phh[i][j] = (1.0 if i == j else 0.0) - hh[i] * hh[j]
    _skew(v, vx)
    _skew(r, rx)
    _skew(rh, rhx)
    _skew(hh, hhx)
    _matmul3(Phh, vx, PhhVx)
    _matmul3(Phh, rx, PhhRx)
    _matmul3(rhx, PhhVx, t1)
    _matmul3(hhx, Prh, t2)
    _matmul3(rhx, PhhRx, t3)
    for i in range(3):
        for j in range(3):
            # dX/dr, dY/dr, dZ/dr and dX/dv, dY/dv weighted by the thrust components
            Dr[i][j] = (u[0] * (t1[i][j] / hn + t2[i][j] / rn)
                        + u[1] * PhhVx[i][j] / hn
                        - u[2] * Prh[i][j] / rn)
            Dv[i][j] = -u[0] * t3[i][j] / hn - u[1] * PhhRx[i][j] / hn


cdef void _rhs(const double* y, double* dy, Force* f, const double* u,
               int thrust_on, int sens_on, int mode) noexcept nogil:
    cdef double acc[3]
    cdef double Cm[3][3]
    cdef double G[3][3]
    cdef double Dr[3][3]
    cdef double Dv[3][3]
    cdef int i, j, m
    cdef const double* phi
    cdef const double* S
    cdef double s
    for i in range(3):
        dy[i] = y[3 + i]
    _gravity(y, f, acc)
    if thrust_on or (mode == 1 and sens_on):
        _vvlh(y, y + 3, Cm)
    if thrust_on:
        for i in range(3):
            acc[i] += Cm[i][0] * u[0] + Cm[i][1] * u[1] + Cm[i][2] * u[2]
    for i in range(3):
        dy[3 + i] = acc[i]
    if mode != 1:
        return
    _gravity_gradient(y, f, G)
    if thrust_on:
        _thrust_jacobian(y, y + 3, u, Dr, Dv)
        for i in range(3):
            for j in range(3):
                G[i][j] += Dr[i][j]
    phi = y + 6
    S = y + 42
    # phi row-major 6x6: rows 0-2 position, rows 3-5 velocity
    for j in range(6):
        for i in range(3):
            dy[6 + i * 6 + j] = phi[(3 + i) * 6 + j]
            s = G[i][0] * phi[j] + G[i][1] * phi[6 + j] + G[i][2] * phi[12 + j]
            if thrust_on:
                s += Dv[i][0] * phi[18 + j] + Dv[i][1] * phi[24 + j] + Dv[i][2] * phi[30 + j]
            dy[6 + (3 + i) * 6 + j] = s
    for j in range(3):
        for i in range(3):
            dy[42 + i * 3 + j] = S[(3 + i) * 3 + j]
            s = G[i][0] * S[j] + G[i][1] * S[3 + j] + G[i][2] * S[6 + j]
            if thrust_on:
                s += Dv[i][0] * S[9 + j] + Dv[i][1] * S[12 + j] + Dv[i][2] * S[15 + j]
            if sens_on:
                s += Cm[i][j]
            dy[42 + (3 + i) * 3 + j] = s


cdef int _advance(double* y, double* t_ptr, double b, double* h_prop, int ny, Force* f,
                  const double* u, int thrust_on, int sens_on, int mode,
                  double rtol, double atol, long* nfev, long max_steps) noexcept nogil:
    """Integrate y from *t_ptr to b; returns 0 on success."""
    cdef double k[NSTAGE][NYMAX]
    cdef double ys[NYMAX]
    cdef double ynew[NYMAX]
    cdef double t = t_ptr[0]
    cdef double h, remaining, err, e, sc, fac, acc_sum, h_new
    cdef int clamped, s, j, i
    cdef long steps = 0
    while t != b:
        remaining = b - t
        clamped = fabs(remaining) <= fabs(h_prop[0]) * 1.000001
        h = remaining if clamped else h_prop[0]
        for s in range(NSTAGE):
            if s == 0:
                _rhs(y, k[0], f, u, thrust_on, sens_on, mode)
            else:
                for i in range(ny):
                    acc_sum = 0.0
                    for j in range(s):
                        acc_sum += A_[s][j] * k[j][i]
                    ys[i] = y[i] + h * acc_sum
                _rhs(ys, k[s], f, u, thrust_on, sens_on, mode)
        nfev[0] += NSTAGE
        for i in range(ny):
            acc_sum = 0.0
            for j in range(5, NSTAGE):
                acc_sum += B8_[j] * k[j][i]
            ynew[i] = y[i] + h * acc_sum
        err = 0.0
        for i in range(6):
            e = fabs(ERR_ * h * (k[0][i] + k[10][i] - k[11][i] - k[12][i]))
            sc = atol + rtol * fmax(fabs(y[i]), fabs(ynew[i]))
            if e / sc > err:
                err = e / sc
        if err == 0.0:
            fac = 5.0
        else:
            fac = fmin(5.0, fmax(0.2, 0.9 * pow(err, -0.125)))
        if err <= 1.0:
            for i in range(ny):
                y[i] = ynew[i]
            if clamped:
                t = b
            else:
                t = t + h
            h_new = h * fac
            if (not clamped) or fabs(h_new) > fabs(h_prop[0]):
                h_prop[0] = h_new
        else:
            h_prop[0] = h * fac
        steps += 1
        if steps > max_steps:
            t_ptr[0] = t
            return 1
        if fabs(h_prop[0]) < 1e-9:
            t_ptr[0] = t
            return 2
    t_ptr[0] = t
    return 0


def integrate(y0, double t0, times, force, thrust, sens, int mode, double rtol, double atol,
              long max_steps=10_000_000):
    """Integrate from ``t0`` and return the state at every entry of ``times``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y0a = np.ascontiguousarray(y0, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ta = np.ascontiguousarray(times, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fa = np.ascontiguousarray(force, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tha = np.ascontiguousarray(thrust, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sa = np.ascontiguousarray(sens, dtype=np.float64)
    cdef int ny = 6 if mode == 0 else 60
    cdef Py_ssize_t m = ta.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((m, ny), dtype=np.float64)
    if m == 0:
        return out, 0
    if y0a.shape[0] != ny:
        raise ValueError(f"state length {y0a.shape[0]} does not match mode {mode}")
    cdef Force f
    f.mu = fa[0]
    f.j2 = fa[1]
    f.re = fa[2]
    f.zonal = <int>fa[3]
    cdef int has_thrust = tha.shape[0] == 5
    cdef int has_sens = sa.shape[0] == 2
    cdef double u[3]
    u[0] = tha[2] if has_thrust else 0.0
    u[1] = tha[3] if has_thrust else 0.0
    u[2] = tha[4] if has_thrust else 0.0
    cdef double direction = 1.0 if ta[m - 1] >= t0 else -1.0
    cdef double t_end = ta[m - 1]

    extra = []
    if has_thrust:
        extra += [tha[0], tha[1]]
    if has_sens:
        extra += [sa[0], sa[1]]
    pts = set(ta.tolist())
    for x in extra:
        if direction * (x - t0) > 0 and direction * (t_end - x) > 0:
            pts.add(float(x))
    stops = sorted(pts, reverse=direction < 0)
    cdef Py_ssize_t i, j
    index = {}
    for i in range(m):
        index.setdefault(float(ta[i]), []).append(i)

    cdef double y[NYMAX]
    for i in range(ny):
        y[i] = y0a[i]
    cdef double t = t0
    cdef double span = fabs(t_end - t0)
    cdef double h_prop = direction * fmin(60.0, fmax(span, 1e-3))
    cdef long nfev = 0
    cdef double b, mid
    cdef int thrust_on, sens_on, status
    cdef double lo, hi
    for bb in stops:
        b = bb
        if b != t:
            mid = 0.5 * (t + b)
            thrust_on = 0
            sens_on = 0
            if has_thrust:
                lo = fmin(tha[0], tha[1]); hi = fmax(tha[0], tha[1])
                thrust_on = lo < mid < hi
            if has_sens:
                lo = fmin(sa[0], sa[1]); hi = fmax(sa[0], sa[1])
                sens_on = lo < mid < hi
            with nogil:
                status = _advance(y, &t, b, &h_prop, ny, &f, u, thrust_on, sens_on, mode,
                                  rtol, atol, &nfev, max_steps)
            if status == 1:
                raise RuntimeError("step limit exceeded")
            if status == 2:
                raise RuntimeError(f"step size underflow at t={t}")
        if bb in index:
            for i in index[bb]:
                for j in range(ny):
                    out[i, j] = y[j]
    return out, nfev
