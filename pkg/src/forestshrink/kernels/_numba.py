"""Numba-compiled kernels; loop-level twins of ``_numpy``."""
import numpy as np
from numba import njit

UNPENALIZED, LASSO, RIDGE, FROZEN = 0, 1, 2, 3


@njit(cache=True, error_model="numpy")
def cox_loglik(eta, event, risk_start, d):
    n = eta.size
    m = -np.inf
    for i in range(n):
        if eta[i] > m:
            m = eta[i]
    r0 = np.empty(n)
    acc = 0.0
    for i in range(n - 1, -1, -1):
        acc += np.exp(eta[i] - m)
        r0[i] = acc
    ll = 0.0
    for i in range(n):
        ll += event[i] * eta[i]
    for s in range(risk_start.size):
        ll -= d[s] * (np.log(r0[risk_start[s]]) + m)
    return ll


@njit(cache=True, error_model="numpy")
def cox_derivatives(X, eta, event, risk_start, d, n_le, want_hessian):
    n, q = X.shape
    m = -np.inf
    for i in range(n):
        if eta[i] > m:
            m = eta[i]
    w = np.empty(n)
    for i in range(n):
        w[i] = np.exp(eta[i] - m)
    # nonzero pattern of each row; designs here are sparse 0/1 indicators
    nz = np.empty((n, q), dtype=np.int64)
    nnz = np.zeros(n, dtype=np.int64)
    for i in range(n):
        c = 0
        for j in range(q):
            if X[i, j] != 0.0:
                nz[i, c] = j
                c += 1
        nnz[i] = c
    n_u = risk_start.size
    s0 = np.empty(n_u)
    s1 = np.empty((n_u, q))
    acc0 = 0.0
    acc1 = np.zeros(q)
    s = n_u - 1
    for i in range(n - 1, -1, -1):
        acc0 += w[i]
        for c in range(nnz[i]):
            j = nz[i, c]
            acc1[j] += X[i, j] * w[i]
        while s >= 0 and risk_start[s] == i:
            s0[s] = acc0
            for j in range(q):
                s1[s, j] = acc1[j]
            s -= 1
    ll = 0.0
    grad = np.zeros(q)
    for i in range(n):
        if event[i] != 0.0:
            ll += event[i] * eta[i]
            for c in range(nnz[i]):
                j = nz[i, c]
                grad[j] += event[i] * X[i, j]
    ratio = np.empty(n_u)
    for s in range(n_u):
        ratio[s] = d[s] / s0[s]
        ll -= d[s] * (np.log(s0[s]) + m)
        for j in range(q):
            grad[j] -= ratio[s] * s1[s, j]
    if not want_hessian:
        return ll, grad, np.zeros((0, 0))
    cum = np.zeros(n_u + 1)
    for s in range(n_u):
        cum[s + 1] = cum[s] + ratio[s]
    info = np.zeros((q, q))
    for i in range(n):
        wi = w[i] * cum[n_le[i]]
        if wi == 0.0:
            continue
        for a in range(nnz[i]):
            ja = nz[i, a]
            va = X[i, ja] * wi
            for b in range(a, nnz[i]):
                jb = nz[i, b]
                info[ja, jb] += va * X[i, jb]
    # the dense rank-n_u correction goes through BLAS
    scaled = np.empty((n_u, q))
    for s in range(n_u):
        f = np.sqrt(d[s]) / s0[s]
        for j in range(q):
            scaled[s, j] = s1[s, j] * f
    corr = scaled.T @ scaled
    for a in range(q):
        for b in range(a + 1, q):
            info[b, a] = info[a, b]
    return ll, grad, info - corr


@njit(cache=True, error_model="numpy")
def _group_step(b, pen_code, lam, eps, g):
    return _group_step_into(b, pen_code, lam, eps, g, np.empty(g.size))


@njit(cache=True, error_model="numpy")
def _group_step_into(b, pen_code, lam, eps, g, kinks):
    c0 = 0.0
    c1 = 0.0
    m = 0
    for pos in range(g.size):
        k = g[pos]
        if k < 0:
            break
        sgn = 1.0 if pos == 0 else -1.0
        code = pen_code[k]
        if code == LASSO:
            kinks[m] = -b[k] if pos == 0 else b[k]
            m += 1
        else:
            w = lam if code == RIDGE else eps
            c0 += 2.0 * w * b[k] * sgn
            c1 += 2.0 * w
    # insertion sort; groups hold a handful of members
    for i in range(1, m):
        v = kinks[i]
        j = i - 1
        while j >= 0 and kinks[j] > v:
            kinks[j + 1] = kinks[j]
            j -= 1
        kinks[j + 1] = v
    for i in range(m + 1):
        # open interval with i kinks to the left
        level = c0 + lam * (2 * i - m)
        if c1 > 0.0:
            t = -level / c1
            if (i == 0 or t > kinks[i - 1]) and (i == m or t < kinks[i]):
                return t
        if i < m:
            at = c0 + c1 * kinks[i]
            if at + lam * (2 * i - m) <= 0.0 <= at + lam * (2 * i + 2 - m):
                return kinks[i]
    return 0.0


@njit(cache=True, error_model="numpy")
def _group_penalty(b, pen_code, lam, eps, g, t):
    val = 0.0
    for pos in range(g.size):
        k = g[pos]
        if k < 0:
            break
        x = b[k] + t if pos == 0 else b[k] - t
        code = pen_code[k]
        if code == LASSO:
            val += lam * abs(x)
        elif code == RIDGE:
            val += lam * x * x
        else:
            val += eps * x * x
    return val


@njit(cache=True, error_model="numpy")
def null_moves(H, r, b, pen_code, lam, eps, groups):
    """Loop twin of ``_numpy.null_moves``."""
    q = b.size
    biggest = 0.0
    kinks = np.empty(groups.shape[1])
    for gi in range(groups.shape[0]):
        g = groups[gi]
        skip = False
        for pos in range(g.size):
            if g[pos] >= 0 and pen_code[g[pos]] == FROZEN:
                skip = True
        if skip:
            continue
        t = _group_step_into(b, pen_code, lam, eps, g, kinks)
        if t == 0.0 or not _group_penalty(b, pen_code, lam, eps, g, t) < _group_penalty(b, pen_code, lam, eps, g, 0.0):
            continue
        for pos in range(g.size):
            k = g[pos]
            if k < 0:
                break
            delta = t if pos == 0 else -t
            b[k] += delta
            for i in range(q):
                r[i] += H[i, k] * delta
        if abs(t) > biggest:
            biggest = abs(t)
    return biggest


@njit(cache=True, error_model="numpy")
def quad_cd(H, G, beta, beta0, pen_code, lam, eps, tol, max_sweeps, groups):
    q = beta.size
    b = beta.copy()
    r = G.copy()
    for i in range(q):
        for j in range(q):
            r[i] += H[i, j] * (b[j] - beta0[j])
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        max_change = 0.0
        for j in range(q):
            a = H[j, j]
            old = b[j]
            c = a * old - r[j]
            code = pen_code[j]
            if code == LASSO:
                if a > 0:
                    mag = abs(c) - lam
                    new = 0.0 if mag <= 0 else np.sign(c) * mag / a
                else:
                    new = 0.0
            elif code == RIDGE:
                new = c / (a + 2.0 * lam)
            elif code == FROZEN:
                new = 0.0
            else:
                new = c / (a + 2.0 * eps)
            delta = new - old
            if delta != 0.0:
                b[j] = new
                for i in range(q):
                    r[i] += H[i, j] * delta
                if abs(delta) > max_change:
                    max_change = abs(delta)
        moved = null_moves(H, r, b, pen_code, lam, eps, groups)
        if moved > max_change:
            max_change = moved
        if max_change < tol:
            break
    return b, sweeps


@njit(cache=True, error_model="numpy")
def hs_loglik_grad(sub_idx, z, beta0, alpha, beta, eta0, m_basis, i_basis, c, event):
    n, p = sub_idx.shape
    K = alpha.size
    M = c.size
    d_alpha = np.zeros(K)
    d_beta = np.zeros(K)
    d_c = np.zeros(M)
    ll = 0.0
    d_b0 = 0.0
    d_e0 = 0.0
    for i in range(n):
        lp = beta0 * z[i]
        for j in range(p):
            k = sub_idx[i, j]
            lp += alpha[k] + z[i] * beta[k]
        w = np.exp(eta0 + lp)
        ibar = 0.0
        for m in range(M):
            ibar += i_basis[i, m] * c[m]
        r = event[i] - w * ibar
        ll -= w * ibar
        if event[i] > 0:
            mbar = 0.0
            for m in range(M):
                mbar += m_basis[i, m] * c[m]
            ll += eta0 + lp + np.log(mbar)
            for m in range(M):
                d_c[m] += m_basis[i, m] / mbar
        for m in range(M):
            d_c[m] -= w * i_basis[i, m]
        d_b0 += r * z[i]
        d_e0 += r
        for j in range(p):
            k = sub_idx[i, j]
            d_alpha[k] += r
            d_beta[k] += r * z[i]
    return ll, d_b0, d_alpha, d_beta, d_e0, d_c


@njit(cache=True, error_model="numpy")
def standardize_grid(u, member, H0, h0):
    arms, n = u.shape
    K = member.shape[0]
    G = H0.size
    S = np.empty((arms, K, G))
    F = np.empty((arms, K, G))
    E = np.empty((n, G))
    mu = np.empty((K, n))
    for a in range(arms):
        for i in range(n):
            ui = u[a, i]
            for g in range(G):
                E[i, g] = np.exp(-H0[g] * ui)
            for k in range(K):
                mu[k, i] = member[k, i] * ui
        S[a] = member @ E
        Fa = mu @ E
        for k in range(K):
            for g in range(G):
                Fa[k, g] *= h0[g]
        F[a] = Fa
    return S, F


@njit(cache=True, error_model="numpy")
def penalty_value(b, codes, lam, eps):
    val = 0.0
    for j in range(b.size):
        code = codes[j]
        if code == UNPENALIZED:
            val += eps * b[j] * b[j]
        elif code == LASSO:
            val += lam * abs(b[j])
        elif code == RIDGE:
            val += lam * b[j] * b[j]
    return val


@njit(cache=True, error_model="numpy")
def _matvec(X, b):
    n, q = X.shape
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(q):
            acc += X[i, j] * b[j]
        out[i] = acc
    return out


@njit(cache=True, error_model="numpy")
def cd_path(Xs, event, risk_start, d, n_le, codes, lambdas, beta_init, eps, tol, max_sweeps,
            refresh, hist_cap, groups):
    q = Xs.shape[1]
    n_lam = lambdas.size
    coefs = np.zeros((n_lam, q))
    lls = np.zeros(n_lam)
    outers = np.zeros(n_lam, dtype=np.int64)
    sweeps_out = np.zeros(n_lam, dtype=np.int64)
    history = np.zeros(hist_cap)
    n_hist = 0
    beta = beta_init.copy()
    info = np.zeros((q, q))
    b_info = np.full(q, np.inf)
    for li in range(n_lam):
        lam = lambdas[li]
        c = codes.copy()
        if np.isinf(lam):
            for j in range(q):
                if c[j] == LASSO or c[j] == RIDGE:
                    c[j] = FROZEN
            lam = 0.0
        for j in range(q):
            if c[j] == FROZEN:
                beta[j] = 0.0
        eta = _matvec(Xs, beta)
        f = -cox_loglik(eta, event, risk_start, d) + penalty_value(beta, c, lam, eps)
        history[0] = f
        n_hist = 1
        sweeps = 0
        outer = 0
        while True:
            outer += 1
            stale = False
            for j in range(q):
                if abs(beta[j] - b_info[j]) > refresh:
                    stale = True
                    break
            ll, grad, new_info = cox_derivatives(Xs, eta, event, risk_start, d, n_le, stale)
            if stale:
                info = new_info
                b_info = beta.copy()
            new, used = quad_cd(info, -grad, beta, beta, c, lam, eps, tol * 1e-2, max_sweeps - sweeps, groups)
            sweeps += used
            step = new - beta
            t = 1.0
            failed = False
            while True:
                cand = beta + t * step
                eta_c = _matvec(Xs, cand)
                fc = -cox_loglik(eta_c, event, risk_start, d) + penalty_value(cand, c, lam, eps)
                if fc <= f:
                    break
                t *= 0.5
                if t < 1e-12:
                    cand = beta
                    eta_c = eta
                    fc = f
                    failed = True
                    break
            if failed:
                fresh = True
                for j in range(q):
                    if b_info[j] != beta[j]:
                        fresh = False
                        break
                if not fresh:
                    b_info = np.full(q, np.inf)
                    continue
            change = 0.0
            for j in range(q):
                if abs(cand[j] - beta[j]) > change:
                    change = abs(cand[j] - beta[j])
            beta = cand
            eta = eta_c
            f = fc
            if n_hist < hist_cap:
                history[n_hist] = f
                n_hist += 1
            if not np.isfinite(f):
                return coefs, lls, outers, sweeps_out, history, n_hist, 2
            if change < tol:
                break
            if sweeps >= max_sweeps:
                return coefs, lls, outers, sweeps_out, history, n_hist, 1
        coefs[li] = beta
        lls[li] = cox_loglik(eta, event, risk_start, d)
        outers[li] = outer
        sweeps_out[li] = sweeps
    return coefs, lls, outers, sweeps_out, history, n_hist, 0


@njit(cache=True, error_model="numpy")
def hs_log_posterior(theta, sub_idx, z, event, m_basis, i_basis, K, use_hs, prior):
    t_sd = prior[0]
    m_sd = prior[1]
    i_sd = prior[2]
    l_df = prior[3]
    g_df = prior[4]
    g_scale = prior[5]
    s_shape = prior[6]
    s_rate = prior[7]
    conc = prior[8]
    d = theta.size
    grad = np.zeros(d)
    beta0 = theta[0]
    alpha = theta[1:1 + K].copy()
    pos = 1 + K
    if use_hs:
        e_pos = pos + 2 * K + 2
        log_tau = theta[pos + 2 * K]
        log_c2 = theta[pos + 2 * K + 1]
    else:
        e_pos = pos
        log_tau = 0.0
        log_c2 = 0.0
    eta0 = theta[e_pos]
    M = d - e_pos - 1
    nu = theta[e_pos + 1:].copy()
    mx = -np.inf
    for m in range(M):
        if nu[m] > mx:
            mx = nu[m]
    tot = 0.0
    for m in range(M):
        tot += np.exp(nu[m] - mx)
    log_norm = mx + np.log(tot)
    c = np.empty(M)
    sum_log_c = 0.0
    for m in range(M):
        lc = nu[m] - log_norm
        c[m] = np.exp(lc)
        sum_log_c += lc
    beta = np.zeros(K)
    scale = np.zeros(K)
    share_q = np.zeros(K)
    share_c2 = np.zeros(K)
    if use_hs:
        c2 = np.exp(log_c2)
        for k in range(K):
            u = 2.0 * (log_tau + theta[pos + K + k]) - log_c2
            share_q[k] = 1.0 / (1.0 + np.exp(-u))
            share_c2[k] = 1.0 / (1.0 + np.exp(u))
            scale[k] = np.sqrt(c2 * share_q[k])
            beta[k] = theta[pos + k] * scale[k]
    ll, d_b0, d_alpha, d_beta, d_eta0, d_c = hs_loglik_grad(
        sub_idx, z, beta0, alpha, beta, eta0, m_basis, i_basis, c, event
    )
    lp = ll - 0.5 * (beta0 / t_sd) ** 2 - 0.5 * (eta0 / i_sd) ** 2
    grad[0] = d_b0 - beta0 / (t_sd * t_sd)
    for k in range(K):
        lp -= 0.5 * (alpha[k] / m_sd) ** 2
        grad[1 + k] = d_alpha[k] - alpha[k] / (m_sd * m_sd)
    grad[e_pos] = d_eta0 - eta0 / (i_sd * i_sd)
    s = 0.0
    for m in range(M):
        s += nu[m]
    s /= np.sqrt(M)
    lp += conc * sum_log_c - 0.5 * s * s
    cdc = 0.0
    for m in range(M):
        cdc += c[m] * d_c[m]
    for m in range(M):
        grad[e_pos + 1 + m] = c[m] * (d_c[m] - cdc) + conc * (1.0 - M * c[m]) - s / np.sqrt(M)
    if use_hs:
        g_tau = 0.0
        g_c2 = 0.0
        for k in range(K):
            zk = theta[pos + k]
            ll_k = theta[pos + K + k]
            dbs = d_beta[k] * beta[k]
            grad[pos + k] = d_beta[k] * scale[k] - zk
            lp -= 0.5 * zk * zk
            s2 = np.exp(2.0 * ll_k)
            lp += -(l_df + 1.0) / 2.0 * np.log1p(s2 / l_df) + ll_k
            g_lam = dbs * share_c2[k]
            grad[pos + K + k] = g_lam - (l_df + 1.0) * s2 / (l_df + s2) + 1.0
            g_tau += g_lam
            g_c2 += dbs * share_q[k]
        t2 = np.exp(2.0 * log_tau)
        gs2 = g_df * g_scale * g_scale
        lp += -(g_df + 1.0) / 2.0 * np.log1p(t2 / gs2) + log_tau
        grad[pos + 2 * K] = g_tau - (g_df + 1.0) * t2 / (gs2 + t2) + 1.0
        lp += -s_shape * log_c2 - s_rate * np.exp(-log_c2)
        grad[pos + 2 * K + 1] = 0.5 * g_c2 - s_shape + s_rate * np.exp(-log_c2)
    if not np.isfinite(lp):
        return -np.inf, np.zeros(d)
    for j in range(d):
        if not np.isfinite(grad[j]):
            return -np.inf, np.zeros(d)
    return lp, grad
