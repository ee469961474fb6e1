"""Compiled inner loop of the splitting iteration.

Same arithmetic as :func:`admmbeam.hsd.iterate`, fused into one pass per
iteration: sparse triangular solves against SuperLU factors, CSR products
with ``A`` and ``A'``, the cone projection and the ``y`` update.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _csr_matvec(indptr, indices, data, x, out):
    for i in range(out.shape[0]):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * x[indices[p]]
        out[i] = s


@njit(cache=True)
def _lu_solve(rhs, perm_r, perm_c, l_ptr, l_idx, l_val, u_ptr, u_idx, u_val, u_diag, work, out):
    n = rhs.shape[0]
    for i in range(n):
        work[perm_r[i]] = rhs[i]
    # unit lower triangular, strictly-lower entries only
    for j in range(n):
        xj = work[j]
        for p in range(l_ptr[j], l_ptr[j + 1]):
            work[l_idx[p]] -= l_val[p] * xj
    # upper triangular, strictly-upper entries plus separate diagonal
    for j in range(n - 1, -1, -1):
        work[j] /= u_diag[j]
        xj = work[j]
        for p in range(u_ptr[j], u_ptr[j + 1]):
            work[u_idx[p]] -= u_val[p] * xj
    for i in range(n):
        out[i] = work[perm_c[i]]


@njit(cache=True)
def _project_soc(z, start, dim):
    s = 0.0
    for i in range(start + 1, start + dim):
        s += z[i] * z[i]
    nx = np.sqrt(s)
    t = z[start]
    if nx <= -t:
        for i in range(start, start + dim):
            z[i] = 0.0
    elif nx > t:
        a = 0.5 * (1.0 + t / nx)
        z[start] = a * nx
        for i in range(start + 1, start + dim):
            z[i] *= a


@njit(cache=True)
def hsd_chunk(
    x, y, n_iter, alpha,
    a_ptr, a_idx, a_val, at_ptr, at_idx, at_val, b, c, q_nu, q_eta, denom,
    perm_r, perm_c, l_ptr, l_idx, l_val, u_ptr, u_idx, u_val, u_diag,
    zero_idx, nonneg_idx, soc_start, soc_dim,
):
    """Run ``n_iter`` iterations in place on ``(x, y)``."""
    m = b.shape[0]
    n = c.shape[0]
    N = n + m + 1
    w = np.empty(N)
    xt = np.empty(N)
    r = np.empty(n)
    nu = np.empty(n)
    Anu = np.empty(m)
    ATr = np.empty(n)
    work = np.empty(n)
    for _ in range(n_iter):
        for i in range(N):
            w[i] = x[i] + y[i]
        # (I + A'A) nu = w_nu - A' w_eta
        _csr_matvec(at_ptr, at_idx, at_val, w[n:n + m], ATr)
        for i in range(n):
            r[i] = w[i] - ATr[i]
        _lu_solve(r, perm_r, perm_c, l_ptr, l_idx, l_val, u_ptr, u_idx, u_val, u_diag, work, nu)
        _csr_matvec(a_ptr, a_idx, a_val, nu, Anu)
        ctn = 0.0
        for i in range(n):
            ctn += c[i] * nu[i]
        bte = 0.0
        for i in range(m):
            Anu[i] += w[n + i]  # eta of the block solve
            bte += b[i] * Anu[i]
        tau = (w[N - 1] + ctn + bte) / denom
        for i in range(n):
            xt[i] = nu[i] - tau * q_nu[i]
        for i in range(m):
            xt[n + i] = Anu[i] - tau * q_eta[i]
        xt[N - 1] = tau
        if alpha != 1.0:
            for i in range(N):
                xt[i] = alpha * xt[i] + (1.0 - alpha) * x[i]
        for i in range(N):
            x[i] = xt[i] - y[i]
        for i in zero_idx:
            x[i] = 0.0
        for i in nonneg_idx:
            if x[i] < 0.0:
                x[i] = 0.0
        for k in range(soc_start.shape[0]):
            _project_soc(x, soc_start[k], soc_dim[k])
        for i in range(N):
            y[i] = y[i] - xt[i] + x[i]


@njit(cache=True)
def _norm(v):
    s = 0.0
    for i in range(v.shape[0]):
        s += v[i] * v[i]
    return np.sqrt(s)


@njit(cache=True)
def measure(x, y, col_scale, row_scale, sb, sc, a_ptr, a_idx, a_val, at_ptr, at_idx, at_val, b, c):
    """Termination quantities in original units.

    ``(x, y)`` live in the equilibrated coordinates described by
    ``col_scale``, ``row_scale``, ``sb`` and ``sc`` (all ones when no
    scaling is used); ``A``, ``b``, ``c`` are the unscaled data.  Returns
    ``[primal, dual, gap, tau, kappa, b'x_eta, |A'x_eta|, |x_eta|,
    c'x_nu, |A x_nu + s|, |x_nu|]``.
    """
    m = b.shape[0]
    n = c.shape[0]
    N = n + m + 1
    tau = x[N - 1]
    kappa = y[N - 1]
    xn = np.empty(n)
    xe = np.empty(m)
    s = np.empty(m)
    for i in range(n):
        xn[i] = col_scale[i] * x[i] / sb
    for i in range(m):
        xe[i] = row_scale[i] * x[n + i] / sc
        s[i] = y[n + i] / (row_scale[i] * sb)
    Ax = np.empty(m)
    ATe = np.empty(n)
    _csr_matvec(a_ptr, a_idx, a_val, xn, Ax)
    _csr_matvec(at_ptr, at_idx, at_val, xe, ATe)
    cx = 0.0
    for i in range(n):
        cx += c[i] * xn[i]
    by = 0.0
    for i in range(m):
        by += b[i] * xe[i]
    out = np.full(11, np.inf)
    if tau > 0:
        rp = 0.0
        for i in range(m):
            d = Ax[i] / tau + s[i] / tau - b[i]
            rp += d * d
        rd = 0.0
        for i in range(n):
            d = ATe[i] / tau + c[i]
            rd += d * d
        out[0] = np.sqrt(rp) / (1.0 + _norm(b))
        out[1] = np.sqrt(rd) / (1.0 + _norm(c))
        out[2] = abs(cx + by) / tau / (1.0 + abs(cx / tau) + abs(by / tau))
    out[3] = tau
    out[4] = kappa
    out[5] = by
    out[6] = _norm(ATe)
    out[7] = _norm(xe)
    out[8] = cx
    for i in range(m):
        Ax[i] += s[i]
    out[9] = _norm(Ax)
    out[10] = _norm(xn)
    return out
