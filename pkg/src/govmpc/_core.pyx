# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels.

Drop-in replacements for ``govmpc._kernels_py`` with identical semantics and
tolerances; the Cholesky factorizations go straight to LAPACK and the loops
run without interpreter overhead.  Keep the two files in sync.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport HUGE_VAL, exp, fabs, sqrt
from scipy.linalg.cython_lapack cimport dpotrf, dpotrs

cnp.import_array()

GAMMA_MAX = 30.0

cdef enum:
    C_W_VALUE = 0
    C_W_EMPTY = 1
    C_W_ALL = 2

W_VALUE = C_W_VALUE
W_EMPTY = C_W_EMPTY
W_ALL = C_W_ALL


cdef int _build_and_factor(double[:, ::1] H, double[:, ::1] A,
                           double[::1] gamma, double gamma_max,
                           double[::1] eg, double[::1] phi,
                           double[:, ::1] S, double[:, ::1] L) noexcept nogil:
    """S = A' Phi(gamma) A + H, L = its Cholesky factor.  Returns LAPACK info."""
    cdef Py_ssize_t m = A.shape[0]
    cdef Py_ssize_t p = A.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double g, w, max_diag, reg
    cdef int attempt
    cdef char uplo = b'L'
    cdef int n = <int> p, lda = <int> p, info = 0

    for i in range(m):
        g = gamma[i]
        if g > gamma_max:
            g = gamma_max
        elif g < -gamma_max:
            g = -gamma_max
        eg[i] = exp(g)
        phi[i] = eg[i] * eg[i]
    for j in range(p):
        for k in range(p):
            S[j, k] = H[j, k]
    for i in range(m):
        w = phi[i]
        for j in range(p):
            for k in range(j, p):
                S[j, k] += w * A[i, j] * A[i, k]
    for j in range(p):
        for k in range(j):
            S[j, k] = S[k, j]
    for j in range(p):
        for k in range(p):
            L[j, k] = S[j, k]
    # S is symmetric, so the C-order buffer is its own transpose and the
    # LAPACK uplo choice only has to match between dpotrf and dpotrs.
    dpotrf(&uplo, &n, &L[0, 0], &lda, &info)
    if info == 0:
        return 0
    # Roundoff can defeat the factorization when Phi spans many orders of
    # magnitude; escalate a tiny diagonal bump (the refinement pass corrects
    # toward the unregularized system afterwards).
    max_diag = 0.0
    for j in range(p):
        if S[j, j] > max_diag:
            max_diag = S[j, j]
    reg = 1e-14 * max_diag
    for attempt in range(3):
        for j in range(p):
            for k in range(p):
                L[j, k] = S[j, k]
            L[j, j] += reg
        dpotrf(&uplo, &n, &L[0, 0], &lda, &info)
        if info == 0:
            return 0
        reg *= 1e4
    return info


cdef void _solve_refined(double[:, ::1] S, double[:, ::1] L,
                         double[::1] rhs, double[::1] z,
                         double[::1] work) noexcept nogil:
    """z = S^{-1} rhs with iterative refinement to machine level.

    Each pass multiplies the error by roughly cond(S)*eps, so a few passes
    recover full accuracy whenever the factorization is usable at all.
    """
    cdef Py_ssize_t p = S.shape[0]
    cdef Py_ssize_t j, k
    cdef char uplo = b'L'
    cdef int n = <int> p, nrhs = 1, lda = <int> p, ldb = <int> p, info = 0
    cdef double acc, scale, nr, prev, rowsum, srow, zmax
    cdef int it

    for j in range(p):
        z[j] = rhs[j]
    dpotrs(&uplo, &n, &nrhs, &L[0, 0], &lda, &z[0], &ldb, &info)
    scale = 0.0
    srow = 0.0
    zmax = 0.0
    for j in range(p):
        if fabs(rhs[j]) > scale:
            scale = fabs(rhs[j])
        if fabs(z[j]) > zmax:
            zmax = fabs(z[j])
        rowsum = 0.0
        for k in range(p):
            rowsum += fabs(S[j, k])
        if rowsum > srow:
            srow = rowsum
    scale += srow * zmax
    prev = HUGE_VAL
    for it in range(4):
        nr = 0.0
        for j in range(p):
            acc = rhs[j]
            for k in range(p):
                acc -= S[j, k] * z[k]
            work[j] = acc
            if fabs(acc) > nr:
                nr = fabs(acc)
        if nr <= 1e-15 * scale or nr >= prev:
            break
        dpotrs(&uplo, &n, &nrhs, &L[0, 0], &lda, &work[0], &ldb, &info)
        for j in range(p):
            z[j] += work[j]
        prev = nr


cdef void _rhs_a(double[:, ::1] A, double[::1] eg, double[::1] out) noexcept nogil:
    cdef Py_ssize_t m = A.shape[0], p = A.shape[1]
    cdef Py_ssize_t i, j
    for j in range(p):
        out[j] = 0.0
    for i in range(m):
        for j in range(p):
            out[j] += A[i, j] * eg[i]
    for j in range(p):
        out[j] *= 2.0


cdef void _rhs_b(double[:, ::1] A, double[::1] phi, double[::1] b,
                 double[::1] c, double[::1] out) noexcept nogil:
    cdef Py_ssize_t m = A.shape[0], p = A.shape[1]
    cdef Py_ssize_t i, j
    cdef double w
    for j in range(p):
        out[j] = -c[j]
    for i in range(m):
        w = phi[i] * b[i]
        for j in range(p):
            out[j] -= A[i, j] * w
    return


cdef void _pq_from_parts(double[:, ::1] A, double[::1] b, double[::1] eg,
                         double[::1] z_a, double[::1] z_b,
                         double[::1] p_vec, double[::1] q_vec) noexcept nogil:
    cdef Py_ssize_t m = A.shape[0], p = A.shape[1]
    cdef Py_ssize_t i, j
    cdef double ra, rb
    for i in range(m):
        ra = 0.0
        rb = b[i]
        for j in range(p):
            ra += A[i, j] * z_a[j]
            rb += A[i, j] * z_b[j]
        p_vec[i] = 1.0 - eg[i] * ra
        q_vec[i] = -eg[i] * rb


cdef int _max_feasible_w(double[::1] p_vec, double[::1] q_vec, double* w_out) noexcept nogil:
    """Largest w > 0 with |p + q*w| <= 1 rowwise.  Returns a W_* code."""
    cdef Py_ssize_t m = p_vec.shape[0]
    cdef Py_ssize_t i
    cdef double lo = 0.0, hi = HUGE_VAL
    cdef double a, bb, t
    cdef bint any_nz = False
    for i in range(m):
        if q_vec[i] == 0.0:
            if fabs(p_vec[i]) > 1.0:
                w_out[0] = 0.0
                return C_W_EMPTY
            continue
        any_nz = True
        a = (-1.0 - p_vec[i]) / q_vec[i]
        bb = (1.0 - p_vec[i]) / q_vec[i]
        if a > bb:
            t = a
            a = bb
            bb = t
        if a > lo:
            lo = a
        if bb < hi:
            hi = bb
    if not any_nz:
        w_out[0] = HUGE_VAL
        return C_W_ALL
    if hi < lo or hi <= 0.0:
        w_out[0] = 0.0
        return C_W_EMPTY
    w_out[0] = hi
    return C_W_VALUE


def eta_line_parts(H, c, A, b, gamma, double gamma_max=30.0):
    """See ``govmpc._kernels_py.eta_line_parts``."""
    cdef double[:, ::1] H_ = np.ascontiguousarray(H, dtype=np.float64)
    cdef double[::1] c_ = np.ascontiguousarray(c, dtype=np.float64)
    cdef double[:, ::1] A_ = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[::1] b_ = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[::1] g_ = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef Py_ssize_t m = A_.shape[0], p = A_.shape[1]

    eg_np = np.empty(m)
    phi_np = np.empty(m)
    S_np = np.empty((p, p))
    L_np = np.empty((p, p))
    za_np = np.empty(p)
    zb_np = np.empty(p)
    p_np = np.empty(m)
    q_np = np.empty(m)
    rhs_np = np.empty(p)
    work_np = np.empty(p)
    cdef double[::1] eg = eg_np, phi = phi_np, za = za_np, zb = zb_np
    cdef double[::1] pv = p_np, qv = q_np, rhs = rhs_np, work = work_np
    cdef double[:, ::1] S = S_np, L = L_np
    cdef int info

    info = _build_and_factor(H_, A_, g_, gamma_max, eg, phi, S, L)
    if info != 0:
        raise np.linalg.LinAlgError(
            f"Cholesky factorization of A'PhiA + H failed (info={info})")
    _rhs_a(A_, eg, rhs)
    _solve_refined(S, L, rhs, za, work)
    _rhs_b(A_, phi, b_, c_, rhs)
    _solve_refined(S, L, rhs, zb, work)
    _pq_from_parts(A_, b_, eg, za, zb, pv, qv)
    return p_np, q_np, za_np, zb_np


def max_feasible_w(p, q):
    """See ``govmpc._kernels_py.max_feasible_w``."""
    cdef double[::1] p_ = np.ascontiguousarray(p, dtype=np.float64)
    cdef double[::1] q_ = np.ascontiguousarray(q, dtype=np.float64)
    cdef double w = 0.0
    cdef int code = _max_feasible_w(p_, q_, &w)
    return code, w


def longstep_loop(H, c, A, b, gamma0, double eta0, double eta_f,
                  int max_iters, double gamma_max=30.0):
    """See ``govmpc._kernels_py.longstep_loop``."""
    cdef double[:, ::1] H_ = np.ascontiguousarray(H, dtype=np.float64)
    cdef double[::1] c_ = np.ascontiguousarray(c, dtype=np.float64)
    cdef double[:, ::1] A_ = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[::1] b_ = np.ascontiguousarray(b, dtype=np.float64)
    gamma_np = np.array(gamma0, dtype=np.float64, copy=True)
    cdef double[::1] gamma = gamma_np
    cdef Py_ssize_t m = A_.shape[0], p = A_.shape[1]

    eg_np = np.empty(m)
    phi_np = np.empty(m)
    S_np = np.empty((p, p))
    L_np = np.empty((p, p))
    za_np = np.empty(p)
    zb_np = np.empty(p)
    p_np = np.empty(m)
    q_np = np.empty(m)
    d_np = np.empty(m)
    rhs_np = np.empty(p)
    work_np = np.empty(p)
    z_np = np.empty(p)
    cdef double[::1] eg = eg_np, phi = phi_np, za = za_np, zb = zb_np
    cdef double[::1] pv = p_np, qv = q_np, dv = d_np
    cdef double[::1] rhs = rhs_np, work = work_np, z = z_np
    cdef double[:, ::1] S = S_np, L = L_np

    cdef double eta = eta0
    cdef int iters = 0
    cdef bint converged = False
    cdef double se, dinf, alpha, w_hi
    cdef int info, code
    cdef Py_ssize_t i, j

    info = _build_and_factor(H_, A_, gamma, gamma_max, eg, phi, S, L)
    if info != 0:
        raise np.linalg.LinAlgError(
            f"Cholesky factorization of A'PhiA + H failed (info={info})")
    _rhs_a(A_, eg, rhs)
    _solve_refined(S, L, rhs, za, work)
    _rhs_b(A_, phi, b_, c_, rhs)
    _solve_refined(S, L, rhs, zb, work)
    _pq_from_parts(A_, b_, eg, za, zb, pv, qv)

    while True:
        se = sqrt(eta)
        dinf = 0.0
        for i in range(m):
            dv[i] = pv[i] + qv[i] / se
            if fabs(dv[i]) > dinf:
                dinf = fabs(dv[i])
        if eta <= eta_f and dinf <= 1.0:
            converged = True
            break
        if iters >= max_iters:
            break
        iters += 1
        code = _max_feasible_w(pv, qv, &w_hi)
        if code == C_W_ALL:
            # Direction independent of eta; jump straight to the target.
            if eta_f < eta:
                eta = eta_f
        elif code == C_W_VALUE:
            if 1.0 / (w_hi * w_hi) < eta:
                eta = 1.0 / (w_hi * w_hi)
        se = sqrt(eta)
        dinf = 0.0
        for i in range(m):
            dv[i] = pv[i] + qv[i] / se
            if fabs(dv[i]) > dinf:
                dinf = fabs(dv[i])
        alpha = 1.0 if dinf <= 1.0 else dinf * dinf
        for i in range(m):
            gamma[i] += dv[i] / alpha
        info = _build_and_factor(H_, A_, gamma, gamma_max, eg, phi, S, L)
        if info != 0:
            raise np.linalg.LinAlgError(
                f"Cholesky factorization of A'PhiA + H failed (info={info})")
        _rhs_a(A_, eg, rhs)
        _solve_refined(S, L, rhs, za, work)
        _rhs_b(A_, phi, b_, c_, rhs)
        _solve_refined(S, L, rhs, zb, work)
        _pq_from_parts(A_, b_, eg, za, zb, pv, qv)

    se = sqrt(eta)
    for j in range(p):
        z[j] = se * za[j] + zb[j]
    return z_np, gamma_np, eta, d_np, iters, converged


def newton_batch(H, A, gamma, etas, cs, bs, double gamma_max=30.0):
    """See ``govmpc._kernels_py.newton_batch``."""
    cdef double[:, ::1] H_ = np.ascontiguousarray(H, dtype=np.float64)
    cdef double[:, ::1] A_ = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[::1] g_ = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef Py_ssize_t m = A_.shape[0], p = A_.shape[1]
    cdef Py_ssize_t nb = len(etas)

    eg_np = np.empty(m)
    phi_np = np.empty(m)
    S_np = np.empty((p, p))
    L_np = np.empty((p, p))
    rhs_np = np.empty(p)
    work_np = np.empty(p)
    z_np = np.empty(p)
    ds_np = np.empty((nb, m))
    zs_np = np.empty((nb, p))
    cdef double[::1] eg = eg_np, phi = phi_np
    cdef double[::1] rhs = rhs_np, work = work_np, z = z_np
    cdef double[:, ::1] S = S_np, L = L_np
    cdef double[:, ::1] ds = ds_np, zs = zs_np

    cdef int info
    cdef Py_ssize_t i, j, kk
    cdef double se, acc
    cdef double[::1] c_j, b_j

    info = _build_and_factor(H_, A_, g_, gamma_max, eg, phi, S, L)
    if info != 0:
        raise np.linalg.LinAlgError(
            f"Cholesky factorization of A'PhiA + H failed (info={info})")
    at_eg_np = np.empty(p)
    cdef double[::1] at_eg = at_eg_np
    _rhs_a(A_, eg, at_eg)  # holds 2 A' e^gamma

    for kk in range(nb):
        se = sqrt(<double> etas[kk])
        c_j = np.ascontiguousarray(cs[kk], dtype=np.float64)
        b_j = np.ascontiguousarray(bs[kk], dtype=np.float64)
        for j in range(p):
            rhs[j] = se * at_eg[j] - c_j[j]
        for i in range(m):
            acc = phi[i] * b_j[i]
            for j in range(p):
                rhs[j] -= A_[i, j] * acc
        _solve_refined(S, L, rhs, z, work)
        for i in range(m):
            acc = b_j[i]
            for j in range(p):
                acc += A_[i, j] * z[j]
            ds[kk, i] = 1.0 - eg[i] * acc / se
        for j in range(p):
            zs[kk, j] = z[j]
    return ds_np, zs_np


cdef inline double _row_tol(double delta) noexcept nogil:
    return 1e-10 * (1.0 + fabs(delta))


def seidel_lp(alpha, beta, delta, order, double c_weight,
              double s_lo, double s_hi):
    """See ``govmpc._kernels_py.seidel_lp``."""
    cdef double[::1] al = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef double[::1] be = np.ascontiguousarray(beta, dtype=np.float64)
    cdef double[::1] de = np.ascontiguousarray(delta, dtype=np.float64)
    cdef long long[::1] od = np.ascontiguousarray(order, dtype=np.int64)
    cdef Py_ssize_t n = od.shape[0]

    cdef double s = s_lo
    cdef double k = 1.0
    cdef double ai, bi, di, p0s, p0k, us, uk, t_lo, t_hi
    cdef double aa, bb, dd, pa, pb, g, t_star
    cdef Py_ssize_t t, jj, i, j, cidx
    cdef double nan = float("nan")

    # Box rows, in the same order as the pure-Python kernel.
    cdef double box_a[4]
    cdef double box_b[4]
    cdef double box_d[4]
    box_a[0] = 1.0;  box_b[0] = 0.0;  box_d[0] = s_hi
    box_a[1] = -1.0; box_b[1] = 0.0;  box_d[1] = -s_lo
    box_a[2] = 0.0;  box_b[2] = 1.0;  box_d[2] = 1.0
    box_a[3] = 0.0;  box_b[3] = -1.0; box_d[3] = 0.0

    for t in range(n):
        i = od[t]
        ai = al[i]
        bi = be[i]
        di = de[i]
        if ai * s + bi * k <= di + _row_tol(di):
            continue
        if ai == 0.0 and bi == 0.0:
            return False, nan, nan
        if fabs(bi) >= fabs(ai):
            p0s = 0.0
            p0k = di / bi
        else:
            p0s = di / ai
            p0k = 0.0
        us = -bi
        uk = ai
        t_lo = -HUGE_VAL
        t_hi = HUGE_VAL
        for cidx in range(4 + t):
            if cidx < 4:
                aa = box_a[cidx]
                bb = box_b[cidx]
                dd = box_d[cidx]
            else:
                j = od[cidx - 4]
                aa = al[j]
                bb = be[j]
                dd = de[j]
            pa = aa * us + bb * uk
            pb = dd - (aa * p0s + bb * p0k)
            if pa > 0.0:
                if pb / pa < t_hi:
                    t_hi = pb / pa
            elif pa < 0.0:
                if pb / pa > t_lo:
                    t_lo = pb / pa
            elif pb < -_row_tol(dd):
                return False, nan, nan
        if t_lo > t_hi:
            return False, nan, nan
        g = -c_weight * us + uk
        t_star = t_hi if g > 0.0 else t_lo
        s = p0s + t_star * us
        k = p0k + t_star * uk
    return True, s, k
