"""Independent reference computations used only by the test-suite."""

import numpy as np

from liquidity_game.broker_ode import FAMILIES, BrokerInputs, coefficient_rhs, pack, unpack


def named_to_matrix(fam, n):
    """Map named coefficients of every broker to (f, A) with h = f + z' A z.

    State order z = (alpha, qI, q_1..q_N, u_1..u_N).
    """
    D = 2 + 2 * n
    A = np.zeros((n, D, D))
    iq = 2 + np.arange(n)
    iu = 2 + n + np.arange(n)
    for i in range(n):
        M = np.zeros((D, D))
        M[0, 0] = fam["m"][i]
        M[1, 1] = fam["g"][i]
        M[np.ix_(iq, iq)] = fam["n"][i]
        M[np.ix_(iu, iu)] = fam["p"][i]
        M[1, iq] = fam["d"][i]
        M[1, 0] = fam["v"][i]
        M[1, iu] = fam["w"][i]
        M[0, iq] = fam["x"][i]
        M[np.ix_(iq, iu)] = fam["y"][i]
        M[0, iu] = fam["z"][i]
        # upper/lower placement does not matter once symmetrised
        A[i] = 0.5 * (M + M.T)
    return np.array(fam["f"]), A


def matrix_rhs(f, A, p, omega0, omega1):
    """d/dt of (f, A) by matching monomials of the reduced HJB directly."""
    n = p.n_brokers
    D = 2 + 2 * n
    iq = 2 + np.arange(n)
    iu = 2 + n + np.arange(n)
    e = np.eye(D)
    wv = [omega0[j] * e[0] + omega1[j] * e[1] for j in range(n)]

    F = np.zeros((D, D))
    F[0, 0] = -p.theta
    F[1] = sum(wv)
    for j in range(n):
        F[iq[j]] = -(e[iu[j]] + wv[j])
        F[iu[j], iu[j]] = -p.theta_u[j]

    dA = np.zeros_like(A)
    df = np.zeros(n)
    for i in range(n):
        M = np.zeros((D, D))
        M += 0.5 * (np.outer(e[0], e[iq[i]]) + np.outer(e[iq[i]], e[0]))
        M -= p.phi[i] * np.outer(e[iq[i]], e[iq[i]])
        M += p.kappa[i] * np.outer(wv[i], wv[i])
        M += p.c[i] * np.outer(e[iu[i]], e[iu[i]])
        M += F.T @ A[i] + A[i] @ F
        for j in range(n):
            ell = 2 * A[j] @ e[iq[j]] + p.b[j] * e[iq[j]]
            lam = 2 * A[i] @ e[iq[j]] + p.b[j] * e[iq[i]]
            M += (np.outer(ell, lam) + np.outer(lam, ell)) / (4 * p.k[j])
        lam_i = 2 * A[i] @ e[iq[i]] + p.b[i] * e[iq[i]]
        M -= np.outer(lam_i, lam_i) / (4 * p.k[i])
        dA[i] = -M
        cov = p.rho * np.outer(p.eta_u, p.eta_u)
        df[i] = -(p.eta ** 2 * A[i][0, 0] + np.sum(cov * A[i][np.ix_(iu, iu)]))
    return df, dA


def printed_rhs(state, inputs: BrokerInputs, omega0, omega1):
    """The coefficient system exactly as typeset, including suspect terms.

    Differs from :func:`coefficient_rhs` only in the d, w and p families.
    """
    n = inputs.n
    out = unpack(coefficient_rhs(state, inputs, omega0, omega1), n)
    F = unpack(state, n)
    d, w, y, nn = F["d"], F["w"], F["y"], F["n"]
    K = 0.5 / inputs.k
    Bk = inputs.b * K
    dd = np.einsum("Aii->Ai", d)
    yi = np.einsum("Aiis->Ais", y)
    S1 = omega1.sum(axis=1)[:, None]
    eye = np.eye(n)
    dK = d * K[:, None, :]

    # d: printed coefficient b_i/k_i on d^i_i inside the delta_{r,i} bracket
    out["d"] = out["d"] - (-(Bk * dd)[:, :, None] * eye[None])
    # w: printed omega_1^j d_r^i and d_j^i y^i_{j,r}
    out["w"] = (out["w"]
                + S1[:, :, None] * w - S1[:, :, None] * d
                + np.einsum("Aij,Ajr->Air", dK, yi) - np.einsum("Aij,Aijr->Air", dK, y))
    # p: printed y^i_{r,j} y^j_{j,s}
    out["p"] = (out["p"]
                + np.einsum("Aijr,Ajs->Airs", y * K[:, None, :, None], yi)
                - np.einsum("Airj,Ajs->Airs", y * K[:, None, None, :], yi))
    return pack(out, n)


def random_families(n, rng, scale=1.0):
    shapes = {"f": (n,), "g": (n,), "m": (n,), "v": (n,), "d": (n, n), "w": (n, n),
              "x": (n, n), "z": (n, n), "n": (n, n, n), "p": (n, n, n), "y": (n, n, n)}
    return {name: scale * rng.standard_normal(shapes[name]) for name in FAMILIES}
