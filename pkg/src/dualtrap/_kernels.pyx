# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled RK4 integrators for ions in a time-dependent axial potential.

Voltages (or a well position) are piecewise cubics: ``coef[k, p, j]`` is the
coefficient of ``u**p`` for channel ``j`` on segment ``k``, with ``u`` the time
since the start of the segment.
"""
from libc.math cimport exp, fabs, floor

DEF MAXCH = 16

cdef inline double sech2(double x) noexcept nogil:
    cdef double e = exp(-2.0 * fabs(x))
    return 4.0 * e / ((1.0 + e) * (1.0 + e))


cdef inline void channels(const double[:, :, ::1] coef, double t0, double h, double t,
                          int nch, double* out) noexcept nogil:
    cdef Py_ssize_t nseg = coef.shape[0]
    cdef Py_ssize_t k = <Py_ssize_t> floor((t - t0) / h)
    cdef double u
    cdef int j
    if k < 0:
        k = 0
    elif k >= nseg:
        k = nseg - 1
    u = t - t0 - k * h
    for j in range(nch):
        out[j] = coef[k, 0, j] + u * (coef[k, 1, j] + u * (coef[k, 2, j] + u * coef[k, 3, j]))


cdef inline double slope(const double[:, ::1] edges, double alpha, double w, double beta, double wt,
                         double* volts, double z) noexcept nogil:
    """dU/dz at z for the given electrode voltages."""
    cdef double s = 0.0, ea, eb
    cdef Py_ssize_t i
    for i in range(edges.shape[0]):
        ea = (1.0 - beta) * sech2((z - edges[i, 0]) / w) / w + beta * sech2((z - edges[i, 0]) / wt) / wt
        eb = (1.0 - beta) * sech2((z - edges[i, 1]) / w) / w + beta * sech2((z - edges[i, 1]) / wt) / wt
        s += volts[i] * (ea - eb)
    return 0.5 * alpha * s


cdef inline void accel(const double[:, ::1] edges, double alpha, double w, double beta, double wt,
                       double qm, double kc, double* volts, int n, double* z, double* a) noexcept nogil:
    cdef double r, f
    a[0] = -qm * slope(edges, alpha, w, beta, wt, volts, z[0])
    if n == 2:
        a[1] = -qm * slope(edges, alpha, w, beta, wt, volts, z[1])
        r = z[1] - z[0]
        f = kc / (r * r)
        a[0] -= f
        a[1] += f


def integrate_electrodes(const double[:, :, ::1] coef, double t0, double h,
                         const double[:, ::1] edges, double alpha, double w, double beta, double ratio,
                         double qm, double kc, double[::1] z, double[::1] v,
                         double dt, long nsteps, long stride, double zlo, double zhi,
                         double[:, ::1] out_z, double[:, ::1] out_v):
    """Advance ``z, v`` in place by ``nsteps`` RK4 steps; record every ``stride``-th state.

    Returns ``(status, step)``: status 0 ok, 1 an ion left ``[zlo, zhi]``,
    2 two ions swapped order.
    """
    cdef int n = z.shape[0]
    cdef int nch = coef.shape[2]
    cdef double wt = w * ratio
    cdef double volts0[MAXCH]
    cdef double volts1[MAXCH]
    cdef double volts2[MAXCH]
    cdef double zc[2]
    cdef double vc[2]
    cdef double zt[2]
    cdef double k1z[2], k1v[2], k2z[2], k2v[2], k3z[2], k3v[2], k4z[2], k4v[2]
    cdef long step, rec = 0
    cdef int i, status = 0
    cdef double t
    if nch > MAXCH or n > 2 or n < 1:
        raise ValueError("unsupported problem size")
    for i in range(n):
        zc[i] = z[i]
        vc[i] = v[i]
    with nogil:
        for i in range(n):
            out_z[0, i] = zc[i]
            out_v[0, i] = vc[i]
        rec = 1
        for step in range(nsteps):
            t = t0 + step * dt
            channels(coef, t0, h, t, nch, volts0)
            channels(coef, t0, h, t + 0.5 * dt, nch, volts1)
            channels(coef, t0, h, t + dt, nch, volts2)
            accel(edges, alpha, w, beta, wt, qm, kc, volts0, n, zc, k1v)
            for i in range(n):
                k1z[i] = vc[i]
                zt[i] = zc[i] + 0.5 * dt * k1z[i]
            accel(edges, alpha, w, beta, wt, qm, kc, volts1, n, zt, k2v)
            for i in range(n):
                k2z[i] = vc[i] + 0.5 * dt * k1v[i]
                zt[i] = zc[i] + 0.5 * dt * k2z[i]
            accel(edges, alpha, w, beta, wt, qm, kc, volts1, n, zt, k3v)
            for i in range(n):
                k3z[i] = vc[i] + 0.5 * dt * k2v[i]
                zt[i] = zc[i] + dt * k3z[i]
            accel(edges, alpha, w, beta, wt, qm, kc, volts2, n, zt, k4v)
            for i in range(n):
                k4z[i] = vc[i] + dt * k3v[i]
                zc[i] += dt / 6.0 * (k1z[i] + 2.0 * k2z[i] + 2.0 * k3z[i] + k4z[i])
                vc[i] += dt / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i])
                if zc[i] < zlo or zc[i] > zhi or zc[i] != zc[i]:
                    status = 1
            if n == 2 and zc[1] <= zc[0]:
                status = 2
            if status != 0:
                break
            if (step + 1) % stride == 0:
                for i in range(n):
                    out_z[rec, i] = zc[i]
                    out_v[rec, i] = vc[i]
                rec += 1
    for i in range(n):
        z[i] = zc[i]
        v[i] = vc[i]
    return status, (step + 1 if status == 0 else step)


def integrate_harmonic(const double[:, :, ::1] coef, double t0, double h, double omega2,
                       double[::1] z, double[::1] v, double dt, long nsteps, long stride,
                       double[:, ::1] out_z, double[:, ::1] out_v):
    """Single ion in an ideal harmonic well whose centre follows channel 0 of ``coef``."""
    cdef double c0[1]
    cdef double c1[1]
    cdef double c2[1]
    cdef double zc = z[0], vc = v[0], t
    cdef double k1z, k1v, k2z, k2v, k3z, k3v, k4z, k4v
    cdef long step, rec = 1
    with nogil:
        out_z[0, 0] = zc
        out_v[0, 0] = vc
        for step in range(nsteps):
            t = t0 + step * dt
            channels(coef, t0, h, t, 1, c0)
            channels(coef, t0, h, t + 0.5 * dt, 1, c1)
            channels(coef, t0, h, t + dt, 1, c2)
            k1z = vc
            k1v = -omega2 * (zc - c0[0])
            k2z = vc + 0.5 * dt * k1v
            k2v = -omega2 * (zc + 0.5 * dt * k1z - c1[0])
            k3z = vc + 0.5 * dt * k2v
            k3v = -omega2 * (zc + 0.5 * dt * k2z - c1[0])
            k4z = vc + dt * k3v
            k4v = -omega2 * (zc + dt * k3z - c2[0])
            zc += dt / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
            vc += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
            if (step + 1) % stride == 0:
                out_z[rec, 0] = zc
                out_v[rec, 0] = vc
                rec += 1
    z[0] = zc
    v[0] = vc
    return 0, nsteps
