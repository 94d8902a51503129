"""Compiled inner loops shared by the plant, learning and evaluation modules.

Everything here works on flat float64 arrays so numba can compile it.  The
public, validated entry points live in :mod:`rloc.plants`,
:mod:`rloc.learning` and :mod:`rloc.evaluation`.
"""

import math

import numpy as np
from numba import njit

ARM = 0
CARTPOLE = 1

# selection rules for switched LQR roll-outs
RULE_TABLE = 0
RULE_NEAREST = 1
RULE_FIXED = 2
RULE_EGREEDY = 3

PI = math.pi
TWO_PI = 2.0 * math.pi
ZD_REST = 1e-9  # cart speed treated as zero by Coulomb friction


@njit(cache=True)
def wrap_angle(a):
    """Map an angle onto (-pi, pi]."""
    return a - TWO_PI * math.ceil((a - PI) / TWO_PI)


@njit(cache=True)
def arm_rhs(x, u, c, out):
    # c = l1, l2, m1, m2, c1, c2, i1, i2, b11, b12, b21, b22
    d1 = x[2]
    d2 = x[3]
    l1 = c[0]
    m2 = c[3]
    i1 = c[6]
    i2 = c[7]
    h = m2 * l1 * c[5]
    cs = math.cos(x[1])
    sn = math.sin(x[1])
    m11 = i1 + i2 + m2 * l1 * l1 + 2.0 * h * cs
    m12 = i2 + h * cs
    m22 = i2
    r1 = u[0] + h * sn * d2 * (2.0 * d1 + d2) - (c[8] * d1 + c[9] * d2)
    r2 = u[1] - h * sn * d1 * d1 - (c[10] * d1 + c[11] * d2)
    det = m11 * m22 - m12 * m12
    out[0] = d1
    out[1] = d2
    out[2] = (m22 * r1 - m12 * r2) / det
    out[3] = (m11 * r2 - m12 * r1) / det


@njit(cache=True)
def cartpole_rhs(x, u, c, out):
    # c = l, m_p, m_c, g, B_p, B_c ; theta = 0 is upright
    l = c[0]
    mp = c[1]
    zd = x[1]
    thd = x[3]
    sn = math.sin(x[2])
    cs = math.cos(x[2])
    m11 = mp + c[2]
    m12 = mp * l * cs
    m22 = mp * l * l
    # Coulomb friction; rounding-level speeds count as rest
    sgn = 0.0
    if zd > ZD_REST:
        sgn = 1.0
    elif zd < -ZD_REST:
        sgn = -1.0
    r1 = u[0] + mp * l * thd * thd * sn - c[5] * sgn
    r2 = mp * c[3] * l * sn - c[4] * thd
    det = m11 * m22 - m12 * m12
    out[0] = zd
    out[1] = (m22 * r1 - m12 * r2) / det
    out[2] = thd
    out[3] = (m11 * r2 - m12 * r1) / det


@njit(cache=True)
def rhs(kind, x, u, c, out):
    if kind == ARM:
        arm_rhs(x, u, c, out)
    else:
        cartpole_rhs(x, u, c, out)


@njit(cache=True)
def constrain(kind, x):
    """Wrap the pole angle, or clamp arm joints to [0, pi]."""
    if kind == CARTPOLE:
        x[2] = wrap_angle(x[2])
    else:
        for j in range(2):
            if x[j] < 0.0:
                x[j] = 0.0
                if x[j + 2] < 0.0:
                    x[j + 2] = 0.0
            elif x[j] > PI:
                x[j] = PI
                if x[j + 2] > 0.0:
                    x[j + 2] = 0.0


@njit(cache=True)
def rk4(kind, x, u, c, dt, out):
    n = x.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    rhs(kind, x, u, c, k1)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k1[i]
    rhs(kind, tmp, u, c, k2)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k2[i]
    rhs(kind, tmp, u, c, k3)
    for i in range(n):
        tmp[i] = x[i] + dt * k3[i]
    rhs(kind, tmp, u, c, k4)
    for i in range(n):
        out[i] = x[i] + dt * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0


@njit(cache=True)
def all_finite(x):
    for i in range(x.shape[0]):
        if not math.isfinite(x[i]):
            return False
    return True


@njit(cache=True)
def cell_of(x, dims, lo, hi, bins, periodic):
    """Row-major cell index of ``x`` over the discretised dimensions."""
    idx = 0
    for j in range(dims.shape[0]):
        v = x[dims[j]]
        width = (hi[j] - lo[j]) / bins[j]
        if periodic[j]:
            v = lo[j] + (v - lo[j]) - TWO_PI * math.floor((v - lo[j]) / TWO_PI)
            b = int(math.floor((v - lo[j]) / width)) % bins[j]
        else:
            b = int(math.floor((v - lo[j]) / width))
            if b < 0:
                b = 0
            elif b >= bins[j]:
                b = bins[j] - 1
        idx = idx * bins[j] + b
    return idx


@njit(cache=True)
def error_vector(x, target, wrap, out):
    for i in range(x.shape[0]):
        e = x[i] - target[i]
        if wrap[i]:
            e = wrap_angle(e)
        out[i] = e


@njit(cache=True)
def quad_cost(err, u, W, Z):
    s = 0.0
    n = err.shape[0]
    for i in range(n):
        for j in range(n):
            s += err[i] * W[i, j] * err[j]
    m = u.shape[0]
    for i in range(m):
        for j in range(m):
            s += u[i] * Z[i, j] * u[j]
    return 0.5 * s


@njit(cache=True)
def egreedy(q_row, eps, r_tie, r_explore, r_pick):
    """epsilon-greedy draw from three uniforms in [0, 1).

    The greedy action (ties broken uniformly) gets 1 - eps, every other
    action eps / (n - 1).
    """
    n = q_row.shape[0]
    if n == 1:
        return 0
    best = q_row[0]
    for a in range(1, n):
        if q_row[a] > best:
            best = q_row[a]
    n_best = 0
    for a in range(n):
        if q_row[a] == best:
            n_best += 1
    k = int(r_tie * n_best)
    if k >= n_best:
        k = n_best - 1
    greedy = 0
    for a in range(n):
        if q_row[a] == best:
            if k == 0:
                greedy = a
                break
            k -= 1
    if r_explore >= eps:
        return greedy
    j = int(r_pick * (n - 1))
    if j >= n - 1:
        j = n - 2
    if j >= greedy:
        j += 1
    return j


@njit(cache=True)
def nearest_centre(x, centres, dims, periodic):
    best = 0
    best_d = np.inf
    for i in range(centres.shape[0]):
        d = 0.0
        for j in range(dims.shape[0]):
            e = x[dims[j]] - centres[i, dims[j]]
            if periodic[j]:
                e = wrap_angle(e)
            d += e * e
        if d < best_d:
            best_d = d
            best = i
    return best


@njit(cache=True)
def rollout(kind, c, dt, umin, umax, x0, n_steps, gains, target, wrap, W, Z,
            rule, table, centres, fixed, eps, q, uniforms,
            dims, lo, hi, bins, periodic, noise,
            states, controls, costs, cells, actions):
    """Closed-loop simulation under a switched LQR policy.

    ``cells[k]``/``actions[k]`` describe the state before step ``k``;
    ``costs[k]`` is the stage cost of step ``k`` times ``dt``.  Returns the
    number of completed steps; fewer than ``n_steps`` means the state went
    non-finite.  ``noise`` has zero rows when the simulation is noise free.
    """
    l = x0.shape[0]
    m = gains.shape[1]
    x = x0.copy()
    nxt = np.empty(l)
    err = np.empty(l)
    u = np.empty(m)
    states[0, :] = x
    s = cell_of(x, dims, lo, hi, bins, periodic)
    n_dec = 0
    a = 0
    if rule == RULE_TABLE:
        a = table[s]
    elif rule == RULE_FIXED:
        a = fixed
    elif rule == RULE_EGREEDY:
        a = egreedy(q[s], eps, uniforms[0, 0], uniforms[0, 1], uniforms[0, 2])
        n_dec = 1
    for k in range(n_steps):
        if rule == RULE_NEAREST:
            a = nearest_centre(x, centres, dims, periodic)
        cells[k] = s
        actions[k] = a
        error_vector(x, target, wrap, err)
        for i in range(m):
            v = 0.0
            for j in range(l):
                v -= gains[a, i, j] * err[j]
            if v > umax[i]:
                v = umax[i]
            elif v < umin[i]:
                v = umin[i]
            u[i] = v
        controls[k, :] = u
        costs[k] = quad_cost(err, u, W, Z) * dt
        rk4(kind, x, u, c, dt, nxt)
        if noise.shape[0] > 0:
            for i in range(l):
                nxt[i] += noise[k, i]
        constrain(kind, nxt)
        if not all_finite(nxt):
            return k
        x[:] = nxt
        states[k + 1, :] = x
        s_new = cell_of(x, dims, lo, hi, bins, periodic)
        if s_new != s:
            s = s_new
            if rule == RULE_TABLE:
                a = table[s]
            elif rule == RULE_EGREEDY:
                a = egreedy(q[s], eps, uniforms[n_dec, 0], uniforms[n_dec, 1],
                            uniforms[n_dec, 2])
                n_dec += 1
    return n_steps


@njit(cache=True)
def rollout_batch(kind, c, dt, umin, umax, starts, n_steps, gains, target, wrap,
                  W, Z, rule, table, centres, fixed_per_start,
                  dims, lo, hi, bins, periodic, total_cost, finals, completed):
    """Noise-free roll-outs from many starts, keeping only summaries."""
    l = starts.shape[1]
    m = gains.shape[1]
    states = np.empty((n_steps + 1, l))
    controls = np.empty((n_steps, m))
    costs = np.empty(n_steps)
    cells = np.empty(n_steps, dtype=np.int64)
    actions = np.empty(n_steps, dtype=np.int64)
    q = np.zeros((1, 1))
    uniforms = np.zeros((1, 3))
    noise = np.zeros((0, l))
    for i in range(starts.shape[0]):
        done = rollout(kind, c, dt, umin, umax, starts[i], n_steps, gains, target,
                       wrap, W, Z, rule, table, centres, fixed_per_start[i], 0.0,
                       q, uniforms, dims, lo, hi, bins, periodic, noise,
                       states, controls, costs, cells, actions)
        total_cost[i] = costs[:min(done + 1, n_steps)].sum()
        finals[i, :] = states[done]
        completed[i] = done


@njit(cache=True)
def open_loop_batch(kind, c, dt, umin, umax, starts, sequences, noise, states, ok):
    """Every control sequence applied to every start; record = start * n_seq + seq.

    ``noise`` is (n_records, n_steps - 1, l) or has zero records for noise-free runs.
    """
    n_seq = sequences.shape[0]
    n_tr = sequences.shape[1]
    l = starts.shape[1]
    m = sequences.shape[2]
    u = np.empty(m)
    nxt = np.empty(l)
    for i in range(starts.shape[0]):
        for j in range(n_seq):
            r = i * n_seq + j
            x = starts[i].copy()
            constrain(kind, x)
            states[r, 0, :] = x
            ok[r] = True
            for k in range(n_tr):
                for q in range(m):
                    v = sequences[j, k, q]
                    if v > umax[q]:
                        v = umax[q]
                    elif v < umin[q]:
                        v = umin[q]
                    u[q] = v
                rk4(kind, x, u, c, dt, nxt)
                if noise.shape[0] > 0:
                    for q in range(l):
                        nxt[q] += noise[r, k, q]
                constrain(kind, nxt)
                if not all_finite(nxt):
                    ok[r] = False
                    break
                x[:] = nxt
                states[r, k + 1, :] = x


@njit(cache=True)
def kalman_smooth(X, U, A, B, Q, R, V0):
    """Kalman filter + RTS smoother for many equal-length segments with C = I.

    Covariances do not depend on the data, so they are propagated once and
    shared; only the means are per segment.  Returns the log-likelihood,
    smoothed means (S, T, l), smoothed covariances (T, l, l) and the lag-one
    cross covariances Cov(z_{t+1}, z_t) (T - 1, l, l).
    """
    S, T, l = X.shape
    I = np.eye(l)
    Qm = np.diag(Q)
    Rm = np.diag(R)
    At = np.ascontiguousarray(A.T)
    Bt = np.ascontiguousarray(B.T)
    mu_p = np.empty((S, T, l))
    mu_f = np.empty((S, T, l))
    P_p = np.empty((T, l, l))
    P_f = np.empty((T, l, l))
    mu_p[:, 0, :] = X[:, 0, :]
    P_p[0] = V0
    ll = 0.0
    log2pi = math.log(2.0 * math.pi)
    for t in range(T):
        Sig = P_p[t] + Rm
        Sig_inv = np.linalg.inv(Sig)
        Kt = P_p[t] @ Sig_inv
        sign, logdet = np.linalg.slogdet(Sig)
        Ktt = np.ascontiguousarray(Kt.T)
        for s in range(S):
            innov = X[s, t] - mu_p[s, t]
            ll -= 0.5 * (innov @ Sig_inv @ innov)
            mu_f[s, t] = mu_p[s, t] + innov @ Ktt
        ll -= 0.5 * S * (logdet + l * log2pi)
        Pf = (I - Kt) @ P_p[t]
        P_f[t] = 0.5 * (Pf + Pf.T)
        if t + 1 < T:
            for s in range(S):
                mu_p[s, t + 1] = mu_f[s, t] @ At + U[s, t] @ Bt
            P_p[t + 1] = A @ P_f[t] @ At + Qm
    mu_s = np.empty((S, T, l))
    P_s = np.empty((T, l, l))
    P_c = np.empty((max(T - 1, 0), l, l))
    mu_s[:, T - 1, :] = mu_f[:, T - 1, :]
    P_s[T - 1] = P_f[T - 1]
    for t in range(T - 2, -1, -1):
        J = P_f[t] @ At @ np.linalg.inv(P_p[t + 1])
        Jt = np.ascontiguousarray(J.T)
        for s in range(S):
            mu_s[s, t] = mu_f[s, t] + (mu_s[s, t + 1] - mu_p[s, t + 1]) @ Jt
        Ps = P_f[t] + J @ (P_s[t + 1] - P_p[t + 1]) @ Jt
        P_s[t] = 0.5 * (Ps + Ps.T)
        P_c[t] = P_s[t + 1] @ Jt
    return ll, mu_s, P_s, P_c
