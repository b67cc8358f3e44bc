"""Pure-NumPy compute kernels.

Reference implementations of the per-iterate hot operations: the weighted
normal-equation solve behind every Newton direction, the homotopy loop, the
batched direction samples used by the governor, and the 2-D incremental LP.
The compiled extension ``govmpc._core`` provides drop-in replacements;
``govmpc._backend`` picks whichever imports.  Semantics and tolerances here
and in the extension must stay identical so the two agree to roundoff.
"""

import math

import numpy as np
from scipy.linalg import cho_factor, cho_solve

#: |gamma| is clipped to this bound before exponentiation so e^{2*gamma}
#: stays comfortably inside double range.
GAMMA_MAX = 30.0

# Codes returned by max_feasible_w.
W_VALUE = 0   # finite largest feasible w
W_EMPTY = 1   # no w > 0 satisfies all rows
W_ALL = 2     # every w > 0 satisfies all rows


def _factor_spd(S):
    """Cholesky with escalating diagonal regularization retries.

    S is positive definite in exact arithmetic but the Phi weights can span
    enough orders of magnitude that roundoff defeats the factorization; a
    tiny diagonal bump restores it, and the refinement pass afterwards
    corrects toward the unregularized system.
    """
    try:
        return cho_factor(S, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    max_diag = float(np.max(np.diag(S)))
    reg = 1e-14 * max_diag
    for _ in range(3):
        try:
            return cho_factor(S + reg * np.eye(S.shape[0]), lower=True,
                              check_finite=False)
        except np.linalg.LinAlgError:
            reg *= 1e4
    raise np.linalg.LinAlgError(
        "Cholesky factorization of A'PhiA + H failed despite regularization")


def _weighted_system(H, A, b, gamma, gamma_max):
    g = np.clip(gamma, -gamma_max, gamma_max)
    eg = np.exp(g)
    phi = eg * eg
    S = A.T @ (phi[:, None] * A) + H
    fac = _factor_spd(S)
    return eg, phi, S, fac


def _solve_refined(S, fac, rhs):
    # Iterative refinement: Phi spans many orders of magnitude and the raw
    # Cholesky solution can lose most of its digits; each pass multiplies
    # the error by roughly cond(S)*eps, so a few passes reach machine level
    # whenever the factorization is usable at all.
    z = cho_solve(fac, rhs, check_finite=False)
    scale = float(np.abs(rhs).max()) + float(np.abs(S).sum(axis=1).max()) * (
        float(np.abs(z).max()) if z.size else 0.0)
    prev = math.inf
    for _ in range(4):
        r = rhs - S @ z
        nr = float(np.abs(r).max()) if r.size else 0.0
        if nr <= 1e-15 * scale or nr >= prev:
            break
        z += cho_solve(fac, r, check_finite=False)
        prev = nr
    return z


def eta_line_parts(H, c, A, b, gamma, gamma_max=GAMMA_MAX):
    """Coefficients of the Newton direction as a function of eta at fixed gamma.

    Returns ``(p, q, z_a, z_b)`` such that ``d(gamma, eta) = p + q / sqrt(eta)``
    and ``z(gamma, eta) = sqrt(eta) * z_a + z_b``, where ``z_a`` and ``z_b``
    solve the positive-definite system ``(A' Phi A + H) z = rhs`` for the two
    right-hand-side pieces ``2 A' e^gamma`` and ``-(c + A' Phi b)``.

    Raises ``numpy.linalg.LinAlgError`` if the factorization fails, which
    signals a violated positivity assumption on ``A' A + H``.
    """
    eg, phi, S, fac = _weighted_system(H, A, b, gamma, gamma_max)
    z_a = _solve_refined(S, fac, 2.0 * (A.T @ eg))
    z_b = _solve_refined(S, fac, -(c + A.T @ (phi * b)))
    p = 1.0 - eg * (A @ z_a)
    q = -eg * (A @ z_b + b)
    return p, q, z_a, z_b


def max_feasible_w(p, q):
    """Largest w > 0 with |p + q*w| <= 1 elementwise.

    Returns ``(code, w)``: ``W_VALUE`` with the finite maximiser, ``W_ALL``
    when every w > 0 is feasible, or ``W_EMPTY`` when none is.  Intervals are
    closed, so touching endpoints count as feasible.
    """
    nz = q != 0.0
    if np.any(np.abs(p[~nz]) > 1.0):
        return W_EMPTY, 0.0
    if not np.any(nz):
        return W_ALL, math.inf
    e1 = (-1.0 - p[nz]) / q[nz]
    e2 = (1.0 - p[nz]) / q[nz]
    lo = float(np.maximum(np.minimum(e1, e2), 0.0).max())
    hi = float(np.maximum(e1, e2).min())
    if hi < lo or hi <= 0.0:
        return W_EMPTY, 0.0
    return W_VALUE, hi


def longstep_loop(H, c, A, b, gamma0, eta0, eta_f, max_iters, gamma_max=GAMMA_MAX):
    """Damped-Newton homotopy loop.

    Repeats: shrink eta as far as the unit-ball condition on the direction
    allows, then take a damped Newton step in gamma.  Terminates once
    ``eta <= eta_f`` and ``|d|_inf <= 1``, or after ``max_iters`` loop
    iterations.

    Returns ``(z, gamma, eta, d, iterations, converged)``.
    """
    gamma = np.array(gamma0, dtype=float, copy=True)
    eta = float(eta0)
    iters = 0
    converged = False
    p, q, z_a, z_b = eta_line_parts(H, c, A, b, gamma, gamma_max)
    while True:
        d = p + q / math.sqrt(eta)
        dinf = float(np.abs(d).max()) if d.size else 0.0
        if eta <= eta_f and dinf <= 1.0:
            converged = True
            break
        if iters >= max_iters:
            break
        iters += 1
        code, w_hi = max_feasible_w(p, q)
        if code == W_ALL:
            # Degenerate: the direction does not depend on eta, so any
            # eta > 0 keeps it in the unit ball.  Jump straight to target.
            eta = min(eta, eta_f)
        elif code == W_VALUE:
            eta = min(eta, 1.0 / (w_hi * w_hi))
        d = p + q / math.sqrt(eta)
        dinf = float(np.abs(d).max()) if d.size else 0.0
        alpha = max(1.0, dinf * dinf)
        gamma += d / alpha
        p, q, z_a, z_b = eta_line_parts(H, c, A, b, gamma, gamma_max)
    z = math.sqrt(eta) * z_a + z_b
    return z, gamma, eta, d, iters, converged


def newton_batch(H, A, gamma, etas, cs, bs, gamma_max=GAMMA_MAX):
    """Newton directions for several (eta, c, b) triples sharing one gamma.

    The weighted system matrix ``A' Phi(gamma) A + H`` is factored once and
    reused for every right-hand side.  Returns ``(ds, zs)`` stacked row-wise.
    """
    eg, phi, S, fac = _weighted_system(H, A, np.zeros(A.shape[0]), gamma, gamma_max)
    at_eg = A.T @ eg
    ds = np.empty((len(etas), A.shape[0]))
    zs = np.empty((len(etas), A.shape[1]))
    for j, (eta_j, c_j, b_j) in enumerate(zip(etas, cs, bs)):
        se = math.sqrt(eta_j)
        z = _solve_refined(S, fac, 2.0 * se * at_eg - (c_j + A.T @ (phi * b_j)))
        ds[j] = 1.0 - eg * (A @ z + b_j) / se
        zs[j] = z
    return ds, zs


def _row_tol(delta):
    return 1e-10 * (1.0 + abs(delta))


def seidel_lp(alpha, beta, delta, order, c_weight, s_lo, s_hi):
    """Maximize ``kappa - c_weight * s`` over ``alpha_i*s + beta_i*kappa <= delta_i``
    plus the box ``s in [s_lo, s_hi]``, ``kappa in [0, 1]``.

    Incremental insertion in the caller-supplied ``order`` (the caller owns
    the shuffle so runs are reproducible).  When a new row cuts off the
    current optimum, the optimum moves onto that row's boundary line and a
    1-D problem over the box plus previously inserted rows is solved there.

    Returns ``(feasible, s, kappa)``.
    """
    s = s_lo  # c_weight >= 0: smallest s, largest kappa is the box optimum
    k = 1.0
    box = ((1.0, 0.0, s_hi), (-1.0, 0.0, -s_lo), (0.0, 1.0, 1.0), (0.0, -1.0, 0.0))
    nan = float("nan")
    for t in range(len(order)):
        i = order[t]
        ai = float(alpha[i])
        bi = float(beta[i])
        di = float(delta[i])
        if ai * s + bi * k <= di + _row_tol(di):
            continue
        if ai == 0.0 and bi == 0.0:
            return False, nan, nan
        # Point on the boundary line and a direction along it.
        if abs(bi) >= abs(ai):
            p0s, p0k = 0.0, di / bi
        else:
            p0s, p0k = di / ai, 0.0
        us, uk = -bi, ai
        t_lo, t_hi = -math.inf, math.inf
        cons = list(box)
        for jj in range(t):
            j = order[jj]
            cons.append((float(alpha[j]), float(beta[j]), float(delta[j])))
        for aa, bb, dd in cons:
            pa = aa * us + bb * uk
            pb = dd - (aa * p0s + bb * p0k)
            if pa > 0.0:
                t_hi = min(t_hi, pb / pa)
            elif pa < 0.0:
                t_lo = max(t_lo, pb / pa)
            elif pb < -_row_tol(dd):
                return False, nan, nan
        if t_lo > t_hi:
            return False, nan, nan
        g = -c_weight * us + uk
        t_star = t_hi if g > 0.0 else t_lo
        s = p0s + t_star * us
        k = p0k + t_star * uk
    return True, s, k
