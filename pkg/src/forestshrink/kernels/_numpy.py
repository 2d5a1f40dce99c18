"""Vectorized numpy implementations of the hot kernels.

Every function here has a loop-based twin in ``_numba`` with an identical
signature; the two are tested against each other.
"""
import numpy as np

UNPENALIZED, LASSO, RIDGE, FROZEN = 0, 1, 2, 3


def cox_loglik(eta, event, risk_start, d):
    """Breslow partial log-likelihood for subjects sorted by ascending time."""
    m = eta.max() if eta.size else 0.0
    w = np.exp(eta - m)
    r0 = np.cumsum(w[::-1])[::-1]
    s0 = r0[risk_start]
    return float(np.dot(event, eta) - np.dot(d, np.log(s0) + m))


def cox_derivatives(X, eta, event, risk_start, d, n_le, want_hessian):
    """Log-likelihood, gradient and observed information (negative Hessian).

    Inputs are sorted by ascending time.  ``risk_start[s]`` is the first
    sorted index whose time is >= the s-th unique event time, ``d[s]`` its
    event count, and ``n_le[i]`` the number of unique event times <= time i.
    """
    m = eta.max()
    w = np.exp(eta - m)
    r0 = np.cumsum(w[::-1])[::-1]
    s0 = r0[risk_start]
    xw = X * w[:, None]
    r1 = np.cumsum(xw[::-1], axis=0)[::-1]
    s1 = r1[risk_start]
    ratio = d / s0
    loglik = float(np.dot(event, eta) - np.dot(d, np.log(s0) + m))
    grad = event @ X - ratio @ s1
    if not want_hessian:
        return loglik, grad, np.zeros((0, 0))
    cum = np.concatenate([[0.0], np.cumsum(ratio)])[n_le]
    W = w * cum
    a = s1 * np.sqrt(d)[:, None] / s0[:, None]
    info = X.T @ (X * W[:, None]) - a.T @ a
    return loglik, grad, info


def _group_step(b, pen_code, lam, eps, g):
    """Minimizer ``t`` of the penalty along ``e_anchor - sum(e_members)``.

    The derivative in ``t`` is ``c0 + c1*t + lam * sum(sign(t - kink))``: the
    quadratic terms give the affine part and every lasso coordinate a unit
    step at the ``t`` where it crosses zero.  The root is located by scanning
    the sorted kinks.
    """
    c0 = 0.0
    c1 = 0.0
    kinks = np.empty(g.size)
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
    kinks = np.sort(kinks[:m])
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


def null_moves(H, r, b, pen_code, lam, eps, groups):
    """Exact penalty minimization along known null directions of the quadratic.

    Row ``g`` of ``groups`` lists an anchor column followed by member columns
    (padded with -1) such that the anchor column equals the sum of the member
    columns of the design.  Moving by ``t`` along ``e_anchor - sum(e_members)``
    leaves every linear predictor unchanged, so only the penalty varies and its
    minimizer is available in closed form.  Single-coordinate updates can
    barely move along these directions.  Updates ``b`` and ``r`` in place and
    returns the largest coordinate change.
    """
    q = b.size
    biggest = 0.0
    for gi in range(groups.shape[0]):
        g = groups[gi]
        skip = False
        for pos in range(g.size):
            if g[pos] >= 0 and pen_code[g[pos]] == FROZEN:
                skip = True
        if skip:
            continue
        t = _group_step(b, pen_code, lam, eps, g)
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


def quad_cd(H, G, beta, beta0, pen_code, lam, eps, tol, max_sweeps, groups):
    """Cyclic coordinate descent on a penalized quadratic model.

    Minimizes ``G.(b - beta0) + 0.5 (b - beta0)' H (b - beta0) + pen(b)`` where
    ``pen`` is ``lam*|b_j|`` (lasso), ``lam*b_j**2`` (ridge), ``eps*b_j**2``
    (unpenalized) or pins ``b_j = 0`` (frozen), starting from ``beta``.
    After every sweep the null directions in ``groups`` are resolved with
    :func:`null_moves`.  Returns the minimizer and the number of sweeps used.
    """
    b = beta.copy()
    r = G + H @ (b - beta0)
    q = b.size
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
                new = np.sign(c) * max(abs(c) - lam, 0.0) / a if a > 0 else 0.0
            elif code == RIDGE:
                new = c / (a + 2.0 * lam)
            elif code == FROZEN:
                new = 0.0
            else:
                new = c / (a + 2.0 * eps)
            delta = new - old
            if delta != 0.0:
                b[j] = new
                r += H[:, j] * delta
                if abs(delta) > max_change:
                    max_change = abs(delta)
        max_change = max(max_change, null_moves(H, r, b, pen_code, lam, eps, groups))
        if max_change < tol:
            break
    return b, sweeps


def hs_loglik_grad(sub_idx, z, beta0, alpha, beta, eta0, m_basis, i_basis, c, event):
    """Full log-likelihood of the spline-baseline Cox model and its gradient.

    Hazard of subject i is ``exp(eta0 + lp_i) * (m_basis[i] @ c)`` with
    ``lp_i = beta0*z_i + sum_j alpha[k_ij] + z_i*sum_j beta[k_ij]``.
    Returns (loglik, d_beta0, d_alpha, d_beta, d_eta0, d_c).
    """
    K = alpha.size
    lp = beta0 * z + alpha[sub_idx].sum(axis=1) + z * beta[sub_idx].sum(axis=1)
    w = np.exp(eta0 + lp)
    ibar = i_basis @ c
    mbar = m_basis @ c
    ev = event > 0
    ll = float(np.sum(eta0 + lp[ev] + np.log(mbar[ev])) - np.dot(w, ibar))
    r = event - w * ibar
    p = sub_idx.shape[1]
    flat = sub_idx.ravel()
    d_alpha = np.bincount(flat, weights=np.repeat(r, p), minlength=K)
    d_beta = np.bincount(flat, weights=np.repeat(r * z, p), minlength=K)
    d_c = (m_basis[ev] / mbar[ev, None]).sum(axis=0) - w @ i_basis
    return ll, float(np.dot(r, z)), d_alpha, d_beta, float(r.sum()), d_c


def standardize_grid(u, member, H0, h0):
    """Subgroup sums of exp(-H0*u_i) and h0*u_i*exp(-H0*u_i) for each forced arm.

    ``u`` has shape (arms, n) holding exp(lp) per subject and ``member`` is the
    (K, n) 0/1 subgroup membership matrix.  Returns two arrays of shape
    (arms, K, G).  Division by subgroup sizes is left to the caller.
    """
    arms = u.shape[0]
    K = member.shape[0]
    S = np.empty((arms, K, H0.size))
    F = np.empty((arms, K, H0.size))
    for a in range(arms):
        E = np.exp(-np.outer(u[a], H0))
        S[a] = member @ E
        F[a] = ((member * u[a][None, :]) @ E) * h0[None, :]
    return S, F


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


def cd_path(Xs, event, risk_start, d, n_le, codes, lambdas, beta_init, eps, tol, max_sweeps,
            refresh, hist_cap, groups):
    """Proximal-Newton coordinate descent along a sequence of penalties.

    Each outer iteration builds a quadratic model of the negative partial
    log-likelihood at the current coefficients, minimizes the penalized model
    with :func:`quad_cd`, then backtracks until the penalized objective does
    not increase.  The information matrix is recomputed only when the
    coefficients have moved more than ``refresh`` (max norm) since it was last
    evaluated; the gradient is always exact.  An infinite penalty freezes the
    penalized coordinates at zero.  Consecutive penalties are warm-started.

    Returns ``(coefs, loglik, outer, sweeps, history, n_hist, status)`` where
    ``history[:n_hist]`` holds the objective trace of the last penalty and
    ``status`` is 0 on success, 1 when ``max_sweeps`` is exhausted and 2 when
    the objective becomes non-finite.
    """
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
            c[(c == LASSO) | (c == RIDGE)] = FROZEN
            lam = 0.0
        beta[c == FROZEN] = 0.0
        eta = Xs @ beta
        f = -cox_loglik(eta, event, risk_start, d) + penalty_value(beta, c, lam, eps)
        history[0] = f
        n_hist = 1
        sweeps = 0
        outer = 0
        while True:
            outer += 1
            stale = float(np.max(np.abs(beta - b_info))) > refresh if q else False
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
                eta_c = Xs @ cand
                fc = -cox_loglik(eta_c, event, risk_start, d) + penalty_value(cand, c, lam, eps)
                if fc <= f:
                    break
                t *= 0.5
                if t < 1e-12:
                    cand, eta_c, fc, failed = beta, eta, f, True
                    break
            if failed and not np.array_equal(b_info, beta):
                b_info = np.full(q, np.inf)
                continue
            change = float(np.max(np.abs(cand - beta))) if q else 0.0
            beta, eta, f = cand, eta_c, fc
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


def _log_softmax(nu):
    m = nu.max()
    e = np.exp(nu - m)
    return nu - m - np.log(e.sum())


def hs_log_posterior(theta, sub_idx, z, event, m_basis, i_basis, K, use_hs, prior):
    """Log posterior and gradient of the spline-baseline horseshoe Cox model.

    ``theta`` is laid out as ``[beta0, alpha(K), z(K), log_lambda(K), log_tau,
    log_c2, eta0, nu(M)]``; the four horseshoe blocks are absent when
    ``use_hs`` is false.  ``prior`` holds ``(treatment_sd, main_sd,
    intercept_sd, local_df, global_df, global_scale, slab_shape, slab_rate,
    dirichlet_concentration)``.  Returns ``(-inf, zeros)`` when not finite.
    """
    t_sd, m_sd, i_sd, l_df, g_df, g_scale, s_shape, s_rate, conc = prior
    d = theta.size
    grad = np.zeros(d)
    beta0 = theta[0]
    alpha = theta[1:1 + K]
    pos = 1 + K
    if use_hs:
        zz = theta[pos:pos + K]
        log_lam = theta[pos + K:pos + 2 * K]
        log_tau = theta[pos + 2 * K]
        log_c2 = theta[pos + 2 * K + 1]
        e_pos = pos + 2 * K + 2
    else:
        e_pos = pos
    eta0 = theta[e_pos]
    nu = theta[e_pos + 1:]
    M = nu.size
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        log_c = _log_softmax(nu)
        c = np.exp(log_c)
        if use_hs:
            u = 2.0 * (log_tau + log_lam) - log_c2
            share_q = 1.0 / (1.0 + np.exp(-u))
            share_c2 = 1.0 / (1.0 + np.exp(u))
            scale = np.sqrt(np.exp(log_c2) * share_q)
            beta = zz * scale
        else:
            beta = np.zeros(K)
        ll, d_b0, d_alpha, d_beta, d_eta0, d_c = hs_loglik_grad(
            sub_idx, z, beta0, alpha, beta, eta0, m_basis, i_basis, c, event
        )
        lp = ll - 0.5 * (beta0 / t_sd) ** 2 - 0.5 * np.sum((alpha / m_sd) ** 2) - 0.5 * (eta0 / i_sd) ** 2
        grad[0] = d_b0 - beta0 / t_sd**2
        grad[1:1 + K] = d_alpha - alpha / m_sd**2
        grad[e_pos] = d_eta0 - eta0 / i_sd**2
        s = nu.sum() / np.sqrt(M)
        lp += conc * np.sum(log_c) - 0.5 * s * s
        grad[e_pos + 1:] = c * (d_c - np.dot(c, d_c)) + conc * (1.0 - M * c) - s / np.sqrt(M)
        if use_hs:
            dbs = d_beta * beta
            grad[pos:pos + K] = d_beta * scale - zz
            lp -= 0.5 * np.sum(zz * zz)
            s2 = np.exp(2.0 * log_lam)
            lp += np.sum(-(l_df + 1.0) / 2.0 * np.log1p(s2 / l_df) + log_lam)
            g_lam = dbs * share_c2
            grad[pos + K:pos + 2 * K] = g_lam - (l_df + 1.0) * s2 / (l_df + s2) + 1.0
            t2 = np.exp(2.0 * log_tau)
            lp += -(g_df + 1.0) / 2.0 * np.log1p(t2 / (g_df * g_scale**2)) + log_tau
            grad[pos + 2 * K] = np.sum(g_lam) - (g_df + 1.0) * t2 / (g_df * g_scale**2 + t2) + 1.0
            lp += -s_shape * log_c2 - s_rate * np.exp(-log_c2)
            grad[pos + 2 * K + 1] = 0.5 * np.sum(dbs * share_q) - s_shape + s_rate * np.exp(-log_c2)
    if not (np.isfinite(lp) and np.all(np.isfinite(grad))):
        return -np.inf, np.zeros(d)
    return float(lp), grad
