"""Pure-Python twins of the compiled RK4 kernels (same signatures, same arithmetic)."""
import math


def _sech2(x):
    e = math.exp(-2.0 * abs(x))
    return 4.0 * e / ((1.0 + e) * (1.0 + e))


def _channels(coef, t0, h, t, nch):
    nseg = len(coef)
    k = int(math.floor((t - t0) / h))
    k = min(max(k, 0), nseg - 1)
    u = t - t0 - k * h
    c = coef[k]
    return [c[0][j] + u * (c[1][j] + u * (c[2][j] + u * c[3][j])) for j in range(nch)]


def _slope(edges, alpha, w, beta, wt, volts, z):
    s = 0.0
    for (a, b), vi in zip(edges, volts):
        ea = (1.0 - beta) * _sech2((z - a) / w) / w + beta * _sech2((z - a) / wt) / wt
        eb = (1.0 - beta) * _sech2((z - b) / w) / w + beta * _sech2((z - b) / wt) / wt
        s += vi * (ea - eb)
    return 0.5 * alpha * s


def _accel(edges, alpha, w, beta, wt, qm, kc, volts, zs):
    a = [-qm * _slope(edges, alpha, w, beta, wt, volts, x) for x in zs]
    if len(zs) == 2:
        r = zs[1] - zs[0]
        f = kc / (r * r)
        a[0] -= f
        a[1] += f
    return a


def integrate_electrodes(coef, t0, h, edges, alpha, w, beta, ratio, qm, kc, z, v,
                         dt, nsteps, stride, zlo, zhi, out_z, out_v):
    n = z.shape[0]
    nch = coef.shape[2]
    if n > 2 or n < 1:
        raise ValueError("unsupported problem size")
    coef = coef.tolist()
    edges = [tuple(e) for e in edges.tolist()]
    wt = w * ratio
    zc = [float(x) for x in z]
    vc = [float(x) for x in v]
    out_z[0, :n] = zc
    out_v[0, :n] = vc
    rec = 1
    status = 0
    step = 0
    half = 0.5 * dt
    for step in range(nsteps):
        t = t0 + step * dt
        v0 = _channels(coef, t0, h, t, nch)
        v1 = _channels(coef, t0, h, t + half, nch)
        v2 = _channels(coef, t0, h, t + dt, nch)
        k1v = _accel(edges, alpha, w, beta, wt, qm, kc, v0, zc)
        k1z = vc
        k2v = _accel(edges, alpha, w, beta, wt, qm, kc, v1, [zc[i] + half * k1z[i] for i in range(n)])
        k2z = [vc[i] + half * k1v[i] for i in range(n)]
        k3v = _accel(edges, alpha, w, beta, wt, qm, kc, v1, [zc[i] + half * k2z[i] for i in range(n)])
        k3z = [vc[i] + half * k2v[i] for i in range(n)]
        k4v = _accel(edges, alpha, w, beta, wt, qm, kc, v2, [zc[i] + dt * k3z[i] for i in range(n)])
        k4z = [vc[i] + dt * k3v[i] for i in range(n)]
        zc = [zc[i] + dt / 6.0 * (k1z[i] + 2.0 * k2z[i] + 2.0 * k3z[i] + k4z[i]) for i in range(n)]
        vc = [vc[i] + dt / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]) for i in range(n)]
        if any(x < zlo or x > zhi or x != x for x in zc):
            status = 1
        if n == 2 and zc[1] <= zc[0]:
            status = 2
        if status:
            break
        if (step + 1) % stride == 0:
            out_z[rec, :n] = zc
            out_v[rec, :n] = vc
            rec += 1
    z[:] = zc
    v[:] = vc
    return status, (step + 1 if status == 0 else step)


def integrate_harmonic(coef, t0, h, omega2, z, v, dt, nsteps, stride, out_z, out_v):
    c = coef[:, :, 0].tolist()
    nseg = len(c)

    def centre(t):
        k = min(max(int(math.floor((t - t0) / h)), 0), nseg - 1)
        u = t - t0 - k * h
        q = c[k]
        return q[0] + u * (q[1] + u * (q[2] + u * q[3]))

    zc, vc = float(z[0]), float(v[0])
    out_z[0, 0] = zc
    out_v[0, 0] = vc
    rec = 1
    half = 0.5 * dt
    for step in range(nsteps):
        t = t0 + step * dt
        c0, c1, c2 = centre(t), centre(t + half), centre(t + dt)
        k1z = vc
        k1v = -omega2 * (zc - c0)
        k2z = vc + half * k1v
        k2v = -omega2 * (zc + half * k1z - c1)
        k3z = vc + half * k2v
        k3v = -omega2 * (zc + half * k2z - c1)
        k4z = vc + dt * k3v
        k4v = -omega2 * (zc + dt * k3z - c2)
        zc += dt / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        vc += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        if (step + 1) % stride == 0:
            out_z[rec, 0] = zc
            out_v[rec, 0] = vc
            rec += 1
    z[0] = zc
    v[0] = vc
    return 0, nsteps
