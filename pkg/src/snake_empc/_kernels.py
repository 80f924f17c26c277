"""Compiled inner loops for the solver.

These mirror :class:`snake_empc.ocp.Dynamics` (rollout, cost, adjoint
gradient) fused with the augmented-Lagrangian penalty so one call returns
the merit value and its gradient.  Tests check them against the numpy
implementation and against finite differences of ``model.step``.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def rollout(phi0, v0, vt0, vn0, U, keep, ts, dt, dn, kc, ks, M, phi, v, vt, vn):
    N, nj = U.shape
    for i in range(nj):
        phi[0, i] = phi0[i]
        v[0, i] = v0[i] * keep[i]
    vt[0] = vt0
    vn[0] = vn0
    for k in range(N):
        s = 0.0
        shape = 0.0
        for i in range(nj):
            s += phi[k, i]
            acc = 0.0
            for j in range(nj):
                acc += M[i, j] * v[k, j]
            shape += phi[k, i] * acc
        vt[k + 1] = dt * vt[k] + kc * vn[k] * s - ks * shape
        vn[k + 1] = dn * vn[k] + kc * vt[k] * s
        for i in range(nj):
            phi[k + 1, i] = phi[k, i] + ts * v[k, i]
            v[k + 1, i] = v[k, i] + ts * U[k, i] * keep[i]


@njit(cache=True)
def merit(
    W, u_max, phi0, v0, vt0, vn0, keep, ts, dt, dn, kc, ks, M, gamma,
    phi_max, v_max, phi_lim, v_lim, mu_phi, mu_v, rho, want_grad, grad,
):
    """Augmented-Lagrangian merit in scaled inputs ``W = U / u_max``.

    ``mu_phi`` / ``mu_v`` have shape (2, N, nj): multipliers of the upper and
    lower normalized margins at k = 1..N.  Returns ``(merit, cost,
    max_violation)``; fills ``grad`` (d merit / d W) when ``want_grad``.
    """
    N, nj = W.shape
    U = W * u_max
    phi = np.empty((N + 1, nj))
    v = np.empty((N + 1, nj))
    vt = np.empty(N + 1)
    vn = np.empty(N + 1)
    rollout(phi0, v0, vt0, vn0, U, keep, ts, dt, dn, kc, ks, M, phi, v, vt, vn)

    cost = 0.0
    for k in range(N + 1):
        cost -= vt[k]
    energy = 0.0
    for k in range(N):
        for i in range(nj):
            energy += U[k, i] * U[k, i] * keep[i]
    cost += gamma * energy

    pen = 0.0
    viol = 0.0
    w_phi = np.zeros((N + 1, nj))
    w_v = np.zeros((N + 1, nj))
    pl = phi_lim / phi_max
    vl = v_lim / v_max
    for k in range(N + 1):
        for i in range(nj):
            over = abs(phi[k, i]) - phi_max
            if over > viol:
                viol = over
            over = abs(v[k, i]) - v_max
            if over > viol:
                viol = over
    for k in range(1, N + 1):
        for i in range(nj):
            p = phi[k, i] / phi_max
            q = v[k, i] / v_max
            mu = mu_phi[0, k - 1, i]
            y_up = max(0.0, mu + rho * (p - pl))
            pen += (y_up * y_up - mu * mu) / (2 * rho)
            mu = mu_phi[1, k - 1, i]
            y_lo = max(0.0, mu + rho * (-p - pl))
            pen += (y_lo * y_lo - mu * mu) / (2 * rho)
            w_phi[k, i] = (y_up - y_lo) / phi_max
            mu = mu_v[0, k - 1, i]
            y_up = max(0.0, mu + rho * (q - vl))
            pen += (y_up * y_up - mu * mu) / (2 * rho)
            mu = mu_v[1, k - 1, i]
            y_lo = max(0.0, mu + rho * (-q - vl))
            pen += (y_lo * y_lo - mu * mu) / (2 * rho)
            w_v[k, i] = (y_up - y_lo) / v_max

    if want_grad:
        # cost adjoint through v_t / v_n, accumulated onto w_phi, w_v
        lt = -1.0
        ln = 0.0
        for k in range(N - 1, -1, -1):
            s = 0.0
            for i in range(nj):
                s += phi[k, i]
            base = lt * kc * vn[k] + ln * kc * vt[k]
            for i in range(nj):
                mv = 0.0
                mtp = 0.0
                for j in range(nj):
                    mv += M[i, j] * v[k, j]
                    mtp += M[j, i] * phi[k, j]
                w_phi[k, i] += base - lt * ks * mv
                w_v[k, i] += -lt * ks * mtp
            lt, ln = -1.0 + lt * dt + ln * kc * s, lt * kc * s + ln * dn
        # double-integrator pullback
        for i in range(nj):
            lam_phi = 0.0
            lam_v = 0.0
            for k in range(N, 0, -1):
                # here lam_phi = lam_phi(k+1), lam_v = lam_v(k+1)
                lam_v = w_v[k, i] + ts * lam_phi + lam_v
                lam_phi = w_phi[k, i] + lam_phi
                # lam_v now lam_v(k): gradient of u(k-1)
                grad[k - 1, i] = (ts * lam_v + 2.0 * gamma * U[k - 1, i]) * u_max * keep[i]
    return cost + pen, cost, viol


@njit(cache=True)
def projected_gradient(
    W, max_iter, grad_tol, stall_tol, stall_window, armijo_c,
    u_max, phi0, v0, vt0, vn0, keep, ts, dt, dn, kc, ks, M, gamma,
    phi_max, v_max, phi_lim, v_lim, mu_phi, mu_v, rho, history,
):
    """Minimize the merit over the box ``[-1, 1]`` starting at ``W`` (in place).

    Barzilai-Borwein trial step, Armijo backtracking along the projection
    arc.  ``history`` (length >= max_iter + 1) receives the accepted merit
    values.  Returns ``(iterations, converged)``.
    """
    N, nj = W.shape
    g = np.empty((N, nj))
    g_prev = np.empty((N, nj))
    W_prev = np.empty((N, nj))
    W_new = np.empty((N, nj))
    scratch = np.empty((N, nj))
    val = merit(W, u_max, phi0, v0, vt0, vn0, keep, ts, dt, dn, kc, ks, M, gamma,
                phi_max, v_max, phi_lim, v_lim, mu_phi, mu_v, rho, True, g)[0]
    history[0] = val
    alpha = 1.0
    it = 0
    while it < max_iter:
        pg = 0.0
        for k in range(N):
            for i in range(nj):
                p = min(1.0, max(-1.0, W[k, i] - g[k, i])) - W[k, i]
                if abs(p) > pg:
                    pg = abs(p)
        if pg <= grad_tol:
            return it, True
        if it >= stall_window:
            drop = history[it - stall_window] - history[it]
            if drop <= stall_tol * max(1.0, abs(history[it])):
                return it, True
        if it > 0:
            sy = 0.0
            ss = 0.0
            for k in range(N):
                for i in range(nj):
                    s = W[k, i] - W_prev[k, i]
                    y = g[k, i] - g_prev[k, i]
                    sy += s * y
                    ss += s * s
            if sy > 1e-16:
                alpha = ss / sy
            else:
                alpha = min(alpha * 2.0, 1e4)
        alpha = min(max(alpha, 1e-8), 1e6)
        t = alpha
        accepted = False
        for _ in range(40):
            dec = 0.0
            for k in range(N):
                for i in range(nj):
                    wn = min(1.0, max(-1.0, W[k, i] - t * g[k, i]))
                    W_new[k, i] = wn
                    dec += g[k, i] * (wn - W[k, i])
            if dec >= 0.0:
                break
            v_new = merit(W_new, u_max, phi0, v0, vt0, vn0, keep, ts, dt, dn, kc, ks, M,
                          gamma, phi_max, v_max, phi_lim, v_lim, mu_phi, mu_v, rho,
                          False, scratch)[0]
            if v_new <= val + armijo_c * dec:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return it, True
        it += 1
        W_prev[:, :] = W
        g_prev[:, :] = g
        W[:, :] = W_new
        val = merit(W, u_max, phi0, v0, vt0, vn0, keep, ts, dt, dn, kc, ks, M, gamma,
                    phi_max, v_max, phi_lim, v_lim, mu_phi, mu_v, rho, True, g)[0]
        history[it] = val
    return it, False
