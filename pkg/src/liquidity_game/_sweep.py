"""Compiled backward sweep of the broker coefficient ODEs.

Loop-level transcription of :func:`liquidity_game.broker_ode.coefficient_rhs`
(the einsum version stays the readable reference and the two are checked
against each other in the tests). Index names follow the reference: ``i``
is the owning broker, ``r`` and ``s`` are coefficient indices and ``j`` is
summed over.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def workspace(n):
    return (np.empty(n), np.empty(n), np.empty(n), np.empty(n), np.empty(n),
            np.empty((n, n, n)), np.empty((n, n, n)), np.empty((n, n)), np.empty((n, n)))


@njit(cache=True)
def _rhs_one(st, out, n, b, k, c, kap, phi, th_u, eta_u, rho, th, eta, w0, w1, ws):
    nn2 = n * n
    oF, oG, oM, oV = 0, n, 2 * n, 3 * n
    oD = 4 * n
    oW = oD + nn2
    oX = oW + nn2
    oZ = oX + nn2
    oN = oZ + nn2
    oP = oN + nn2 * n
    oY = oP + nn2 * n

    K, Bk, dd, xd, sumByi, Nm, Pm, yi, Nj = ws
    for j in range(n):
        K[j] = 0.5 / k[j]
        Bk[j] = b[j] * K[j]
        dd[j] = st[oD + j * n + j]
        xd[j] = st[oX + j * n + j]
    S0 = 0.0
    S1 = 0.0
    for j in range(n):
        S0 += w0[j]
        S1 += w1[j]

    for i in range(n):
        for r in range(n):
            for s in range(n):
                Nm[i, r, s] = st[oN + (i * n + r) * n + s] + st[oN + (i * n + s) * n + r]
                Pm[i, r, s] = st[oP + (i * n + r) * n + s] + st[oP + (i * n + s) * n + r]
    y = st[oY:oY + nn2 * n].reshape((n, n, n))
    # Nj[j, r] = N^j_{r,j}; with j renamed i it is also N^i_{r,i}
    for i in range(n):
        for r in range(n):
            yi[i, r] = y[i, i, r]
            Nj[i, r] = Nm[i, r, i]
    Nri = Nj
    d = st[oD:oD + nn2].reshape((n, n))
    w = st[oW:oW + nn2].reshape((n, n))
    x = st[oX:oX + nn2].reshape((n, n))
    z = st[oZ:oZ + nn2].reshape((n, n))
    eta2 = eta * eta

    sumBdd = 0.0
    sumBxd = 0.0
    for j in range(n):
        sumBdd += Bk[j] * dd[j]
        sumBxd += Bk[j] * xd[j]
    for s in range(n):
        sumByi[s] = 0.0
        for j in range(n):
            sumByi[s] += Bk[j] * yi[j, s]

    for i in range(n):
        g = st[oG + i]
        m = st[oM + i]
        v = st[oV + i]
        acc = eta2 * m
        for j in range(n):
            for l in range(n):
                acc += 0.5 * rho[j, l] * eta_u[j] * eta_u[l] * Pm[i, j, l]
        out[oF + i] = -acc

        acc = kap[i] * w1[i] ** 2 - 0.5 * K[i] * dd[i] ** 2 + 2.0 * S1 * g
        for j in range(n):
            acc += d[i, j] * K[j] * dd[j] - d[i, j] * w1[j]
        out[oG + i] = -acc

        acc = kap[i] * w0[i] ** 2 - 2.0 * th * m - 0.5 * K[i] * xd[i] ** 2 + S0 * v
        for j in range(n):
            acc += x[i, j] * K[j] * xd[j] - x[i, j] * w0[j]
        out[oM + i] = -acc

        acc = 2.0 * kap[i] * w0[i] * w1[i] - th * v + S1 * v - K[i] * dd[i] * xd[i] + 2.0 * S0 * g
        for j in range(n):
            acc += (d[i, j] * K[j] * xd[j] + x[i, j] * K[j] * dd[j]
                    - d[i, j] * w0[j] - x[i, j] * w1[j])
        out[oV + i] = -acc

        for r in range(n):
            delta = 1.0 if r == i else 0.0
            # d
            acc = (delta * (sumBdd - Bk[i] * dd[i]) + d[i, r] * Bk[r] - Nri[i, r] * K[i] * dd[i]
                   + S1 * d[i, r])
            for j in range(n):
                acc += Nm[i, r, j] * K[j] * dd[j] + d[i, j] * K[j] * Nj[j, r] - Nm[i, r, j] * w1[j]
            out[oD + i * n + r] = -acc
            # w
            acc = -d[i, r] - K[i] * dd[i] * yi[i, r] - th_u[r] * w[i, r] + S1 * w[i, r]
            for j in range(n):
                acc += d[i, j] * K[j] * yi[j, r] + y[i, j, r] * K[j] * dd[j] - y[i, j, r] * w1[j]
            out[oW + i * n + r] = -acc
            # x
            acc = (delta * (1.0 - Bk[i] * xd[i] + sumBxd) - th * x[i, r] + x[i, r] * Bk[r]
                   - Nri[i, r] * K[i] * xd[i] + S0 * d[i, r])
            for j in range(n):
                acc += -Nm[i, r, j] * w0[j] + Nm[i, r, j] * K[j] * xd[j] + x[i, j] * K[j] * Nj[j, r]
            out[oX + i * n + r] = -acc
            # z
            acc = -x[i, r] - (th + th_u[r]) * z[i, r] - K[i] * xd[i] * yi[i, r] + S0 * w[i, r]
            for j in range(n):
                acc += -y[i, j, r] * w0[j] + x[i, j] * K[j] * yi[j, r] + y[i, j, r] * K[j] * xd[j]
            out[oZ + i * n + r] = -acc

            Tn = b[r] * Bk[r] - Bk[i] * Nri[i, r]
            for j in range(n):
                Tn += Bk[j] * Nj[j, r]
            for s in range(n):
                own = 1.0 if (r == i and s == i) else 0.0
                # n
                acc = (-(phi[i] + 0.5 * b[i] * Bk[i]) * own + (Tn if s == i else 0.0)
                       + Nm[i, r, s] * Bk[s] - 0.5 * Nri[i, r] * K[i] * Nri[i, s])
                for j in range(n):
                    acc += Nm[i, r, j] * K[j] * Nj[j, s]
                out[oN + (i * n + r) * n + s] = -acc
                # p
                acc = (c[i] * own - th_u[s] * Pm[i, r, s] - y[i, s, r]
                       - 0.5 * yi[i, r] * K[i] * yi[i, s])
                for j in range(n):
                    acc += y[i, j, r] * K[j] * yi[j, s]
                out[oP + (i * n + r) * n + s] = -acc
                # y
                acc = (delta * (sumByi[s] - Bk[i] * yi[i, s]) - Nm[i, r, s] - th_u[s] * y[i, r, s]
                       - Nri[i, r] * K[i] * yi[i, s] + y[i, r, s] * Bk[r])
                for j in range(n):
                    acc += Nm[i, r, j] * K[j] * yi[j, s] + Nj[j, r] * K[j] * y[i, j, s]
                out[oY + (i * n + r) * n + s] = -acc


@njit(cache=True)
def rhs_batch(state, b, k, c, kap, phi, th_u, eta_u, rho, th, eta, w0, w1):
    B, size = state.shape
    n = b.shape[1]
    out = np.empty((B, size))
    ws = workspace(n)
    for a in range(B):
        _rhs_one(state[a], out[a], n, b[a], k[a], c[a], kap[a], phi[a], th_u[a], eta_u[a],
                 rho[a], th[a], eta[a], w0[a], w1[a], ws)
    return out


@njit(cache=True)
def sweep(state, b, k, c, kap, phi, th_u, eta_u, rho, th, eta, w0, w1, w0m, w1m, dt, rk4, history):
    """Backward sweep in place; returns (first failing step or -1, failing member).

    ``history`` of shape (n_steps + 1, B, size) is filled when it has a
    nonzero leading dimension.
    """
    n_steps = w0.shape[0] - 1
    B, size = state.shape
    n = b.shape[1]
    store = history.shape[0] > 0
    k1 = np.empty(size)
    k2 = np.empty(size)
    k3 = np.empty(size)
    k4 = np.empty(size)
    tmp = np.empty(size)
    ws = workspace(n)
    # members are independent, so each one is swept to t=0 before the next
    for a in range(B):
        st = state[a]
        ba, ka, ca, kapa, phia, thua, etaua, rhoa = b[a], k[a], c[a], kap[a], phi[a], th_u[a], eta_u[a], rho[a]
        tha, etaa = th[a], eta[a]
        w0a = np.ascontiguousarray(w0[:, a, :])
        w1a = np.ascontiguousarray(w1[:, a, :])
        if rk4:
            w0ma = np.ascontiguousarray(w0m[:, a, :])
            w1ma = np.ascontiguousarray(w1m[:, a, :])
        else:
            w0ma = w0a
            w1ma = w1a
        if store:
            history[n_steps, a] = st
        for step in range(n_steps - 1, -1, -1):
            _rhs_one(st, k1, n, ba, ka, ca, kapa, phia, thua, etaua, rhoa, tha, etaa,
                     w0a[step + 1], w1a[step + 1], ws)
            if not rk4:
                for q in range(size):
                    st[q] -= dt * k1[q]
            else:
                for q in range(size):
                    tmp[q] = st[q] - 0.5 * dt * k1[q]
                _rhs_one(tmp, k2, n, ba, ka, ca, kapa, phia, thua, etaua, rhoa, tha, etaa,
                         w0ma[step], w1ma[step], ws)
                for q in range(size):
                    tmp[q] = st[q] - 0.5 * dt * k2[q]
                _rhs_one(tmp, k3, n, ba, ka, ca, kapa, phia, thua, etaua, rhoa, tha, etaa,
                         w0ma[step], w1ma[step], ws)
                for q in range(size):
                    tmp[q] = st[q] - dt * k3[q]
                _rhs_one(tmp, k4, n, ba, ka, ca, kapa, phia, thua, etaua, rhoa, tha, etaa,
                         w0a[step], w1a[step], ws)
                for q in range(size):
                    st[q] -= dt / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q])
            for q in range(size):
                if not np.isfinite(st[q]):
                    return step, a
            if store:
                history[step, a] = st
    return -1, -1
