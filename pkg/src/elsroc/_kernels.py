"""Hot numeric kernels.

Every kernel here is plain numpy-compatible Python. With numba enabled
(see :mod:`elsroc._accel`) the loop-form kernels are compiled with
``njit``; otherwise the vectorised ``*_vec`` variants stand in where the
loop form would be slow in the interpreter. The optimizer drivers are a
single source used by both backends, so the two paths run the same
algorithm and differ only in floating-point summation order.

Variance parameters are optimised on ``(log sd_p, log sd_q, atanh rho)``
with the mean profiled out by generalised least squares.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

LOG_SD_MIN = -15.0
LOG_SD_MAX = 15.0
ATANH_RHO_MAX = 12.0
RIDGE = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# t_alpha inverse for 0 < alpha < 2
# ---------------------------------------------------------------------------


@njit
def _softplus(s):
    if s > 0.0:
        return s + math.log1p(math.exp(-s))
    return math.log1p(math.exp(s))


@njit
def _sigmoid(s):
    if s >= 0.0:
        return 1.0 / (1.0 + math.exp(-s))
    e = math.exp(s)
    return e / (1.0 + e)


@njit
def _t_inv_scalar(alpha, z):
    # Solve in logit coordinates s: t = (2-a)*softplus(s) - a*softplus(-s),
    # whose slope lies in [min(a, 2-a), max(a, 2-a)].
    b = 2.0 - alpha
    m = min(alpha, b)
    s = z / b if z > 0.0 else z / alpha
    f = b * _softplus(s) - alpha * _softplus(-s) - z
    if f == 0.0:
        return _sigmoid(s)
    r = abs(f) / m
    lo = s - r
    hi = s + r
    for _ in range(100):
        fs = b * _softplus(s) - alpha * _softplus(-s) - z
        if fs > 0.0:
            hi = min(hi, s)
        else:
            lo = max(lo, s)
        d = b * _sigmoid(s) + alpha * _sigmoid(-s)
        s_new = s - fs / d
        if not (lo <= s_new <= hi):
            s_new = 0.5 * (lo + hi)
        if abs(s_new - s) <= 1e-15 * (1.0 + abs(s)):
            s = s_new
            break
        s = s_new
    return _sigmoid(s)


@njit
def _t_inv_loop(alpha, z):
    out = np.empty(z.shape[0])
    for i in range(z.shape[0]):
        out[i] = _t_inv_scalar(alpha, z[i])
    return out


def _t_inv_vec(alpha, z):
    z = np.asarray(z, dtype=float)
    b = 2.0 - alpha
    m = min(alpha, b)

    def g(s):
        return b * np.logaddexp(0.0, s) - alpha * np.logaddexp(0.0, -s) - z

    s = np.where(z > 0.0, z / b, z / alpha)
    f0 = g(s)
    r = np.abs(f0) / m
    lo, hi = s - r, s + r
    for _ in range(100):
        fs = g(s)
        hi = np.where(fs > 0.0, np.minimum(hi, s), hi)
        lo = np.where(fs > 0.0, lo, np.maximum(lo, s))
        ex = 0.5 * (1.0 + np.tanh(0.5 * s))
        d = b * ex + alpha * (1.0 - ex)
        s_new = s - fs / d
        bad = (s_new < lo) | (s_new > hi)
        s_new = np.where(bad, 0.5 * (lo + hi), s_new)
        done = np.all(np.abs(s_new - s) <= 1e-15 * (1.0 + np.abs(s)))
        s = s_new
        if done:
            break
    return 0.5 * (1.0 + np.tanh(0.5 * s))


def t_inv(alpha, z):
    """Elementwise inverse of ``t_alpha`` for ``0 < alpha < 2`` on a 1-d array."""
    z = np.ascontiguousarray(z, dtype=float)
    if USE_NUMBA:
        return _t_inv_loop(float(alpha), z)
    return _t_inv_vec(float(alpha), z)


# ---------------------------------------------------------------------------
# Profile (RE)ML objective for z_i ~ N(mu, Sigma + D_i)
# ---------------------------------------------------------------------------


@njit
def unpack(x):
    """Clipped (var_p, var_q, cov) from unconstrained parameters."""
    lp = min(max(x[0], LOG_SD_MIN), LOG_SD_MAX)
    lq = min(max(x[1], LOG_SD_MIN), LOG_SD_MAX)
    a = min(max(x[2], -ATANH_RHO_MAX), ATANH_RHO_MAX)
    return math.exp(2.0 * lp), math.exp(2.0 * lq), math.tanh(a) * math.exp(lp + lq)


@njit
def _objective_loop(x, z, D, reml):
    vp, vq, c = unpack(x)
    n = z.shape[0]
    s00 = 0.0
    s01 = 0.0
    s11 = 0.0
    b0 = 0.0
    b1 = 0.0
    logdet = 0.0
    for i in range(n):
        a = vp + D[i, 0] + RIDGE
        d = vq + D[i, 1] + RIDGE
        det = a * d - c * c
        if det <= 0.0:
            return np.inf
        w00 = d / det
        w01 = -c / det
        w11 = a / det
        s00 += w00
        s01 += w01
        s11 += w11
        b0 += w00 * z[i, 0] + w01 * z[i, 1]
        b1 += w01 * z[i, 0] + w11 * z[i, 1]
        logdet += math.log(det)
    dets = s00 * s11 - s01 * s01
    if dets <= 0.0:
        return np.inf
    mu0 = (s11 * b0 - s01 * b1) / dets
    mu1 = (s00 * b1 - s01 * b0) / dets
    q = 0.0
    for i in range(n):
        a = vp + D[i, 0] + RIDGE
        d = vq + D[i, 1] + RIDGE
        det = a * d - c * c
        r0 = z[i, 0] - mu0
        r1 = z[i, 1] - mu1
        q += (d * r0 * r0 - 2.0 * c * r0 * r1 + a * r1 * r1) / det
    if reml:
        return 0.5 * logdet + 0.5 * math.log(dets) + 0.5 * q + (n - 1) * LOG_2PI
    return 0.5 * logdet + 0.5 * q + n * LOG_2PI


def _objective_vec(x, z, D, reml):
    vp, vq, c = unpack(x)
    n = z.shape[0]
    a = vp + D[:, 0] + RIDGE
    d = vq + D[:, 1] + RIDGE
    det = a * d - c * c
    if np.any(det <= 0.0):
        return np.inf
    w00, w01, w11 = d / det, -c / det, a / det
    s00, s01, s11 = w00.sum(), w01.sum(), w11.sum()
    b0 = np.sum(w00 * z[:, 0] + w01 * z[:, 1])
    b1 = np.sum(w01 * z[:, 0] + w11 * z[:, 1])
    dets = s00 * s11 - s01 * s01
    if dets <= 0.0:
        return np.inf
    mu0 = (s11 * b0 - s01 * b1) / dets
    mu1 = (s00 * b1 - s01 * b0) / dets
    r0 = z[:, 0] - mu0
    r1 = z[:, 1] - mu1
    q = np.sum(w00 * r0 * r0 + 2.0 * w01 * r0 * r1 + w11 * r1 * r1)
    logdet = np.sum(np.log(det))
    if reml:
        return 0.5 * logdet + 0.5 * math.log(dets) + 0.5 * q + (n - 1) * LOG_2PI
    return 0.5 * logdet + 0.5 * q + n * LOG_2PI


objective_loop = _objective_loop
objective_vec = _objective_vec
_objective = _objective_loop if USE_NUMBA else _objective_vec


# ---------------------------------------------------------------------------
# Optimizer: multi-start Nelder-Mead, then damped Newton polish
# ---------------------------------------------------------------------------


@njit
def nelder_mead(x0, step, z, D, reml, maxiter, ftol, xtol):
    """Minimise the profile objective from ``x0``; returns (x, f, iters, converged)."""
    k = x0.shape[0]
    sim = np.empty((k + 1, k))
    fs = np.empty(k + 1)
    sim[0] = x0
    fs[0] = _objective(x0, z, D, reml)
    for j in range(k):
        v = x0.copy()
        v[j] += step
        sim[j + 1] = v
        fs[j + 1] = _objective(v, z, D, reml)
    it = 0
    converged = False
    while it < maxiter:
        order = np.argsort(fs)
        sim = sim[order]
        fs = fs[order]
        fspread = 0.0
        xspread = 0.0
        for j in range(1, k + 1):
            fspread = max(fspread, abs(fs[j] - fs[0]))
            for m in range(k):
                xspread = max(xspread, abs(sim[j, m] - sim[0, m]))
        if fspread <= ftol and xspread <= xtol:
            converged = True
            break
        it += 1
        cen = np.zeros(k)
        for j in range(k):
            cen += sim[j]
        cen /= k
        xr = cen + (cen - sim[k])
        fr = _objective(xr, z, D, reml)
        if fr < fs[0]:
            xe = cen + 2.0 * (cen - sim[k])
            fe = _objective(xe, z, D, reml)
            if fe < fr:
                sim[k] = xe
                fs[k] = fe
            else:
                sim[k] = xr
                fs[k] = fr
        elif fr < fs[k - 1]:
            sim[k] = xr
            fs[k] = fr
        else:
            if fr < fs[k]:
                xc = cen + 0.5 * (xr - cen)
                fc = _objective(xc, z, D, reml)
                accept = fc <= fr
            else:
                xc = cen + 0.5 * (sim[k] - cen)
                fc = _objective(xc, z, D, reml)
                accept = fc < fs[k]
            if accept:
                sim[k] = xc
                fs[k] = fc
            else:
                for j in range(1, k + 1):
                    sim[j] = sim[0] + 0.5 * (sim[j] - sim[0])
                    fs[j] = _objective(sim[j], z, D, reml)
    best = np.argmin(fs)
    return sim[best].copy(), fs[best], it, converged


@njit
def _fd_grad_hess(x, f0, z, D, reml, hg, hh):
    k = x.shape[0]
    g = np.empty(k)
    H = np.empty((k, k))
    for i in range(k):
        xp = x.copy()
        xm = x.copy()
        xp[i] += hg
        xm[i] -= hg
        g[i] = (_objective(xp, z, D, reml) - _objective(xm, z, D, reml)) / (2.0 * hg)
        xp = x.copy()
        xm = x.copy()
        xp[i] += hh
        xm[i] -= hh
        H[i, i] = (_objective(xp, z, D, reml) - 2.0 * f0 + _objective(xm, z, D, reml)) / (hh * hh)
    for i in range(k):
        for j in range(i + 1, k):
            xpp = x.copy()
            xpm = x.copy()
            xmp = x.copy()
            xmm = x.copy()
            xpp[i] += hh
            xpp[j] += hh
            xpm[i] += hh
            xpm[j] -= hh
            xmp[i] -= hh
            xmp[j] += hh
            xmm[i] -= hh
            xmm[j] -= hh
            v = (
                _objective(xpp, z, D, reml)
                - _objective(xpm, z, D, reml)
                - _objective(xmp, z, D, reml)
                + _objective(xmm, z, D, reml)
            ) / (4.0 * hh * hh)
            H[i, j] = v
            H[j, i] = v
    return g, H


@njit
def _fd_grad(x, z, D, reml, h):
    g = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (_objective(xp, z, D, reml) - _objective(xm, z, D, reml)) / (2.0 * h)
    return g


@njit
def newton_polish(x0, z, D, reml, maxiter):
    """Damped Newton with finite-difference derivatives.

    A step is taken when it lowers f, or when f is flat to rounding and the
    gradient shrinks; the latter lets the last digits of x converge.
    """
    x = x0.copy()
    f = _objective(x, z, D, reml)
    it = 0
    for it in range(maxiter):
        g, H = _fd_grad_hess(x, f, z, D, reml, 1e-5, 1e-4)
        gn = np.max(np.abs(g))
        evals, evecs = np.linalg.eigh(H)
        scale = max(np.max(np.abs(evals)), 1e-300)
        for j in range(evals.shape[0]):
            evals[j] = max(abs(evals[j]), 1e-8 * scale, 1e-12)
        step = -(evecs @ ((evecs.T @ g) / evals))
        t = 1.0
        improved = False
        flat = 1e-13 * (1.0 + abs(f))
        for _ in range(40):
            xn = x + t * step
            fn = _objective(xn, z, D, reml)
            if fn < f:
                improved = True
                break
            if fn <= f + flat and np.max(np.abs(_fd_grad(xn, z, D, reml, 1e-5))) < 0.5 * gn:
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        x = xn
        f = fn
        # the objective gain is quadratic in the error, so test the step
        if t * np.max(np.abs(step)) < 1e-10:
            break
    return x, f, it


@njit
def fit_profile(starts, z, D, reml, maxiter, ftol):
    """Best of several Nelder-Mead starts, restarted once and Newton-polished.

    Returns (x, f, total_iterations, converged).
    """
    best_x = starts[0].copy()
    best_f = np.inf
    best_conv = False
    total = 0
    for s in range(starts.shape[0]):
        x, f, it, conv = nelder_mead(starts[s], 0.5, z, D, reml, maxiter, ftol, 1e-7)
        total += it
        if f < best_f:
            best_x = x
            best_f = f
            best_conv = conv
    x, f, it, conv = nelder_mead(best_x, 0.05, z, D, reml, maxiter, ftol, 1e-9)
    total += it
    if f <= best_f:
        best_x = x
        best_f = f
        best_conv = best_conv or conv
    x, f, it = newton_polish(best_x, z, D, reml, 50)
    total += it
    if f <= best_f + 1e-13 * (1.0 + abs(best_f)):
        best_x = x
        best_f = f
    return best_x, best_f, total, best_conv


@njit
def refit_local(x0, z, D, reml):
    """Warm-started Newton refit for small data perturbations; returns (x, f, ok)."""
    x, f, _ = newton_polish(x0, z, D, reml, 50)
    return x, f, np.isfinite(f)


# ---------------------------------------------------------------------------
# Empirical likelihood dual
# ---------------------------------------------------------------------------


@njit
def _el_value(lam, u):
    n, k = u.shape
    eps = 1.0 / n
    log_eps = math.log(eps)
    tot = 0.0
    for i in range(n):
        t = 1.0
        for m in range(k):
            t += lam[m] * u[i, m]
        if t >= eps:
            tot += math.log(t)
        else:
            tot += log_eps - 1.5 + 2.0 * t / eps - 0.5 * (t / eps) ** 2
    return tot


@njit
def el_dual_newton(u, maxiter):
    """Maximise sum log*(1 + lam'u_i) over lam (Owen's pseudo-log below 1/n).

    Returns (lam, iterations, gradient_norm).
    """
    n, k = u.shape
    eps = 1.0 / n
    lam = np.zeros(k)
    f = _el_value(lam, u)
    gnorm = np.inf
    it = 0
    ridge = 0.0
    for i in range(n):
        for m in range(k):
            ridge += u[i, m] * u[i, m]
    ridge *= 1e-13
    for it in range(1, maxiter + 1):
        g = np.zeros(k)
        H = np.zeros((k, k))
        for i in range(n):
            t = 1.0
            for m in range(k):
                t += lam[m] * u[i, m]
            if t >= eps:
                d1 = 1.0 / t
                d2 = -1.0 / (t * t)
            else:
                d1 = 2.0 / eps - t / (eps * eps)
                d2 = -1.0 / (eps * eps)
            for m in range(k):
                g[m] += d1 * u[i, m]
                for l in range(k):
                    H[m, l] += d2 * u[i, m] * u[i, l]
        gnorm = math.sqrt(np.sum(g * g))
        for m in range(k):
            H[m, m] -= ridge
        step = -np.linalg.solve(H, g)
        t_step = 1.0
        moved = False
        for _ in range(60):
            cand = lam + t_step * step
            fc = _el_value(cand, u)
            # near the optimum f is flat to rounding; accept such steps
            if fc >= f - 1e-15 * (1.0 + abs(f)):
                moved = True
                break
            t_step *= 0.5
        if not moved:
            break
        delta = np.max(np.abs(cand - lam))
        lam = cand
        f = fc
        if delta <= 1e-13 * (1.0 + np.max(np.abs(lam))):
            break
    return lam, it, gnorm
