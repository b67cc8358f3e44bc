"""Tracking-MPC problem construction.

Turns a linear plant with output constraints into a parametric condensed QP:
zero-order-hold discretization, equilibrium parameterization by a reference
command, Riccati/LQR terminal ingredients, the maximal constraint-admissible
set for the LQR loop (used as terminal set), and the condensing of the
finite-horizon problem into ``min 0.5 mu'H mu + mu'(W_x x + W_v v)`` subject
to ``M mu + L_x x + L_v v + b >= 0``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import _backend
from .qp_ldipm import GAMMA_MAX, QpProblem


def _as_matrix(X, rows, cols, name):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape != (rows, cols):
        raise ValueError(f"{name} must be {rows}x{cols}, got {X.shape}")
    return X


class PlantModel:
    """Discrete LTI plant with a constrained output and a tracking output.

    x+ = A x + B u,  y = C x + D u (constrained),  z = E x + F u (tracked).
    """

    def __init__(self, A, B, C, D, E, F):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        self.n = A.shape[0]
        B = np.atleast_2d(np.asarray(B, dtype=float))
        self.n_u = B.shape[1]
        C = np.atleast_2d(np.asarray(C, dtype=float))
        self.n_y = C.shape[0]
        E = np.atleast_2d(np.asarray(E, dtype=float))
        self.n_z = E.shape[0]
        self.A = _as_matrix(A, self.n, self.n, "A")
        self.B = _as_matrix(B, self.n, self.n_u, "B")
        self.C = _as_matrix(C, self.n_y, self.n, "C")
        self.D = _as_matrix(D, self.n_y, self.n_u, "D")
        self.E = _as_matrix(E, self.n_z, self.n, "E")
        self.F = _as_matrix(F, self.n_z, self.n_u, "F")


class ConstraintPolyhedron:
    """Output constraint set {y : Y y <= h}.

    Must be compact with the origin strictly inside: h > 0 elementwise, and
    every coordinate direction bounded (checked by a pair of LPs per
    coordinate).
    """

    def __init__(self, Y, h):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        h = np.asarray(h, dtype=float).ravel()
        if Y.shape[0] != h.size:
            raise ValueError(f"Y has {Y.shape[0]} rows but h has {h.size} entries")
        if h.min() <= 0.0:
            raise ValueError("h must be strictly positive (origin interior)")
        n_y = Y.shape[1]
        for j in range(n_y):
            for sign in (1.0, -1.0):
                cost = np.zeros(n_y)
                cost[j] = -sign  # linprog minimizes
                res = linprog(cost, A_ub=Y, b_ub=h, bounds=[(None, None)] * n_y,
                              method="highs")
                if res.status == 3:
                    raise ValueError(f"constraint set unbounded in coordinate {j}")
                if not res.success:
                    raise ValueError(f"constraint set boundedness check failed: {res.message}")
        self.Y = Y
        self.h = h
        self.q = h.size


@dataclass
class EquilibriumMap:
    """Maps a reference command v to the equilibrium (x, u, z, y) it selects.

    Normalized so G_z is the identity: v lives in tracking-output
    coordinates, which keeps blends v + kappa*(r - v) dimensionally sound.
    """

    G_x: np.ndarray
    G_u: np.ndarray
    G_z: np.ndarray
    G_y: np.ndarray
    n_v: int = field(init=False)

    def __post_init__(self):
        self.n_v = self.G_x.shape[1]


def equilibrium_basis(model: PlantModel) -> EquilibriumMap:
    """Basis of the equilibrium subspace, normalized to G_z = I.

    Equilibria satisfy ``Z [x; u; z] = 0`` with
    ``Z = [[A - I, B, 0], [E, F, -I]]``.  The nullspace is computed by SVD;
    the z-block of the basis must be invertible for the reference to pick a
    unique equilibrium, and the basis is right-multiplied by its inverse.
    """
    n, n_u, n_z = model.n, model.n_u, model.n_z
    Z = np.zeros((n + n_z, n + n_u + n_z))
    Z[:n, :n] = model.A - np.eye(n)
    Z[:n, n:n + n_u] = model.B
    Z[n:, :n] = model.E
    Z[n:, n:n + n_u] = model.F
    Z[n:, n + n_u:] = -np.eye(n_z)
    _, sv, Vt = np.linalg.svd(Z)
    tol = max(Z.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > tol))
    basis = Vt[rank:].T
    n_null = basis.shape[1]
    if n_null == 0:
        raise ValueError("equilibrium subspace is trivial; no reference can be tracked")
    if n_null != n_z:
        raise ValueError(
            f"equilibrium subspace has dimension {n_null}, expected n_z={n_z}; "
            "the reference does not uniquely select equilibria")
    G_z0 = basis[n + n_u:, :]
    if abs(np.linalg.det(G_z0)) < 1e-12:
        raise ValueError("G_z is singular; tracking problem is ill-posed")
    G = basis @ np.linalg.inv(G_z0)
    G_x = G[:n, :]
    G_u = G[n:n + n_u, :]
    G_z = G[n + n_u:, :]
    G_y = model.C @ G_x + model.D @ G_u
    return EquilibriumMap(G_x=G_x, G_u=G_u, G_z=G_z, G_y=G_y)


def discretize(Ac, Bc, T):
    """Zero-order-hold discretization of dx/dt = Ac x + Bc u.

    Exponentiates the augmented matrix [[Ac, Bc], [0, 0]] * T by scaling and
    squaring with a truncated Taylor series (terms added until they fall
    below 1e-16 relative, comfortably past 1e-12).
    """
    if not (T > 0.0):
        raise ValueError("sample period T must be positive")
    Ac = np.atleast_2d(np.asarray(Ac, dtype=float))
    Bc = np.atleast_2d(np.asarray(Bc, dtype=float))
    n = Ac.shape[0]
    n_u = Bc.shape[1]
    M = np.zeros((n + n_u, n + n_u))
    M[:n, :n] = Ac * T
    M[:n, n:] = Bc * T
    norm = np.abs(M).sum(axis=1).max()
    squarings = max(0, int(math.ceil(math.log2(norm)))) + 1 if norm > 0 else 0
    Ms = M / (2.0 ** squarings)
    expm = np.eye(n + n_u)
    term = np.eye(n + n_u)
    for k in range(1, 40):
        term = term @ Ms / k
        expm = expm + term
        if np.abs(term).max() <= 1e-16 * max(1.0, np.abs(expm).max()):
            break
    for _ in range(squarings):
        expm = expm @ expm
    return expm[:n, :n], expm[:n, n:]


@dataclass
class TrackingDesign:
    """Horizon, stage weights, and the Riccati terminal pair (P, K)."""

    N: int
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    K: np.ndarray


def solve_dare(model: PlantModel, Q, R, tol=1e-12, max_iters=100_000):
    """Fixed-point solve of P = Q + A'PA - A'PB(R + B'PB)^{-1}B'PA from P0 = Q.

    Returns (P, K) with K the optimal state-feedback gain.  Non-convergence
    signals a stabilizability violation.
    """
    A, B = model.A, model.B
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    for _ in range(max_iters):
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ K
        P_next = 0.5 * (P_next + P_next.T)
        if not np.isfinite(P_next).all() or np.abs(P_next).max() > 1e150:
            raise ValueError(
                "Riccati iteration diverged; (A, B) may not be stabilizable")
        if np.abs(P_next - P).max() <= tol * max(1.0, np.abs(P).max()):
            P = P_next
            break
        P = P_next
    else:
        raise ValueError("Riccati iteration did not converge; (A, B) may not be stabilizable")
    BtP = B.T @ P
    K = np.linalg.solve(R + BtP @ B, BtP @ A)
    return P, K


def make_tracking_design(model: PlantModel, N, Q, R) -> TrackingDesign:
    """Validate the weights, solve the Riccati equation, and package the design."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if int(N) < 1:
        raise ValueError("horizon N must be at least 1")
    if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() <= 0.0:
        raise ValueError("state weight Q must be positive definite")
    if np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 0.0:
        raise ValueError("input weight R must be positive definite")
    P, K = solve_dare(model, Q, R)
    rho = np.abs(np.linalg.eigvals(model.A - model.B @ K)).max()
    if rho >= 1.0:
        raise ValueError(f"closed loop A - BK is not Schur stable (rho={rho:.6f})")
    return TrackingDesign(N=int(N), Q=Q, R=R, P=P, K=K)


@dataclass
class TerminalSet:
    """Polyhedral terminal set over the augmented vector w = (x, v).

    Rows are ordered as the per-step blocks for k = 0..k_star followed by
    the tightened steady-state block; downstream warm starts rely on this
    ordering being stable.
    """

    H_T: np.ndarray
    h_T: np.ndarray
    k_star: int
    determined: bool


def _lp_max_over_rows(objective, H_rows, h_rows, delta=1e-8, eta_f=1e-10,
                      max_iters=400):
    """max objective'w over {w : H_rows w <= h_rows} via the interior-point
    solver on a delta-regularized problem.

    Returns (value_at_point, certified_bound) where the bound adds the
    solver's suboptimality certificate, or (None, None) when the solve hit
    its iteration limit.
    """
    m = H_rows.shape[0]
    try:
        z, _, eta, d, _, converged = _backend.longstep_loop(
            delta * np.eye(H_rows.shape[1]), -objective, -H_rows, h_rows,
            np.zeros(m), 1.0, eta_f, max_iters, GAMMA_MAX)
    except np.linalg.LinAlgError:
        return None, None
    if not converged:
        return None, None
    val = float(objective @ z)
    return val, val + m * eta + 1e-7


def max_admissible_set(model: PlantModel, design: TrackingDesign,
                       eq_map: EquilibriumMap, constraints: ConstraintPolyhedron,
                       epsilon=1e-6, k_max=500) -> TerminalSet:
    """Maximal constraint-admissible set for the LQR tracking loop.

    Under u = G_u v - K(x - G_x v) the augmented state w = (x, v) evolves as
    w+ = A_w w and the constrained output is y_w = C_w w.  Rows
    ``Y C_w A_w^k w <= h`` are added for k = 0, 1, ... and the steady-state
    rows are tightened to ``Y G_y v <= (1 - epsilon) h`` so the recursion
    determines after finitely many steps.  A candidate row is declared
    redundant only when a certified bound on its maximum over the current
    set stays below its offset; the certificate comes from the in-house
    interior-point solver on a regularized problem, with a cheap decay bound
    tried first.
    """
    if not (0.0 < epsilon < 1.0):
        raise ValueError("epsilon must be in (0, 1)")
    n = model.n
    n_v = eq_map.n_v
    n_w = n + n_v
    K = design.K
    KGxGu = K @ eq_map.G_x + eq_map.G_u
    A_w = np.zeros((n_w, n_w))
    A_w[:n, :n] = model.A - model.B @ K
    A_w[:n, n:] = model.B @ KGxGu
    A_w[n:, n:] = np.eye(n_v)
    C_w = np.hstack([model.C - model.D @ K, model.D @ KGxGu])
    Y, h, q = constraints.Y, constraints.h, constraints.q

    ss_rows = np.hstack([np.zeros((q, n)), Y @ eq_map.G_y])
    ss_h = (1.0 - epsilon) * h
    blocks = [Y @ C_w]
    cur_H = np.vstack([blocks[0], ss_rows])
    cur_h = np.concatenate([h, ss_h])

    # Per-coordinate bounds of the k=0 set, reused by the decay-based
    # redundancy filter.  Infinite entries just disable the filter there.
    coord_bound = np.empty(n_w)
    for j in range(n_w):
        bnd = 0.0
        for sign in (1.0, -1.0):
            e = np.zeros(n_w)
            e[j] = sign
            _, ub = _lp_max_over_rows(e, cur_H, cur_h)
            bnd = math.inf if ub is None else max(bnd, ub)
        coord_bound[j] = bnd

    h_blocks = [h]
    Mk = C_w.copy()
    k_star = None
    for k in range(k_max):
        Mk = Mk @ A_w
        cand = Y @ Mk
        keep = []
        for i in range(q):
            # Decay filter: cand = ss + residual, and the steady-state row is
            # already enforced at (1-eps)h, so a small residual certifies
            # redundancy without an LP.
            diff = np.abs(cand[i] - ss_rows[i])
            active = diff > 0.0
            if np.all(np.isfinite(coord_bound[active])):
                resid = float(diff[active] @ coord_bound[active])
                if ss_h[i] + resid + 1e-9 <= h[i]:
                    continue
            _, ub = _lp_max_over_rows(cand[i], cur_H, cur_h)
            if ub is not None and ub <= h[i]:
                continue
            keep.append(i)
        if not keep:
            k_star = k
            break
        # Only rows that actually cut the set are kept; certified-redundant
        # rows would accumulate as near-duplicates and wreck the
        # conditioning of later redundancy solves without changing the set.
        blocks.append(cand[keep])
        h_blocks.append(h[keep])
        cur_H = np.vstack([cur_H, cand[keep]])
        cur_h = np.concatenate([cur_h, h[keep]])

    determined = k_star is not None
    if not determined:
        k_star = k_max
    H_T = np.vstack(blocks + [ss_rows])
    h_T = np.concatenate(h_blocks + [ss_h])
    return TerminalSet(H_T=H_T, h_T=h_T, k_star=k_star, determined=determined)


class CondensedQP:
    """Parametric condensed MPC problem over theta = (x, v).

    min 0.5 mu'H mu + mu'(W_x x + W_v v)
    s.t. M mu + L_x x + L_v v + b >= 0

    The objective equals the finite-horizon tracking cost up to a term
    independent of mu.  Constraint row order: for each stage i = 0..N-1 the
    output rows, then the terminal rows (recorded in ``row_layout``).
    """

    def __init__(self, H, W_x, W_v, M, L_x, L_v, b, row_layout, n, n_u, n_v):
        self.H = H
        self.W_x = W_x
        self.W_v = W_v
        self.M = M
        self.L_x = L_x
        self.L_v = L_v
        self.b = b
        self.row_layout = row_layout
        self.n = n
        self.n_u = n_u
        self.n_v = n_v
        self.p = H.shape[0]
        self.m = M.shape[0]
        scale = np.abs(H).max()
        if np.abs(H - H.T).max() > 1e-12 * scale:
            raise ValueError("condensed H is not symmetric")
        try:
            np.linalg.cholesky(H)
            np.linalg.cholesky(M.T @ M + H)
        except np.linalg.LinAlgError:
            raise ValueError("condensed problem is not positive definite") from None

    def cost_gradient_vector(self, x, v):
        """Linear cost term c(theta) = W_x x + W_v v."""
        return self.W_x @ x + self.W_v @ v

    def constraint_offset(self, x, v):
        """Constraint offset b(theta) = L_x x + L_v v + b."""
        return self.L_x @ x + self.L_v @ v + self.b

    def problem_at(self, x, v) -> QpProblem:
        """Instantiate the generic QP at a parameter value."""
        return QpProblem(self.H, self.cost_gradient_vector(x, v), self.M,
                         self.constraint_offset(x, v))


def condense(model: PlantModel, design: TrackingDesign, eq_map: EquilibriumMap,
             constraints: ConstraintPolyhedron, terminal: TerminalSet) -> CondensedQP:
    """Eliminate the predicted states and stack the constraints.

    Prediction: xi = S_x x + S_u mu with xi stacked over i = 0..N.  The
    tracking cost sum |xi_i - G_x v|_Q^2 + |mu_i - G_u v|_R^2 + terminal
    becomes 0.5 mu'H mu + mu'(W_x x + W_v v) plus a mu-free remainder, with
    H = 2(S_u'Qbar S_u + Rbar).
    """
    n, n_u = model.n, model.n_u
    N = design.N
    n_v = eq_map.n_v
    A, B = model.A, model.B
    S_x = np.zeros(((N + 1) * n, n))
    S_u = np.zeros(((N + 1) * n, N * n_u))
    S_x[:n] = np.eye(n)
    for i in range(1, N + 1):
        S_x[i * n:(i + 1) * n] = A @ S_x[(i - 1) * n:i * n]
        S_u[i * n:(i + 1) * n] = A @ S_u[(i - 1) * n:i * n]
        S_u[i * n:(i + 1) * n, (i - 1) * n_u:i * n_u] = B
    Qbar = np.zeros(((N + 1) * n, (N + 1) * n))
    for i in range(N):
        Qbar[i * n:(i + 1) * n, i * n:(i + 1) * n] = design.Q
    Qbar[N * n:, N * n:] = design.P
    Rbar = np.kron(np.eye(N), design.R)
    Xbar = np.tile(eq_map.G_x, (N + 1, 1))
    Ubar = np.tile(eq_map.G_u, (N, 1))

    H = 2.0 * (S_u.T @ Qbar @ S_u + Rbar)
    H = 0.5 * (H + H.T)
    W_x = 2.0 * S_u.T @ Qbar @ S_x
    W_v = -2.0 * (S_u.T @ Qbar @ Xbar + Rbar @ Ubar)

    Y, h, q = constraints.Y, constraints.h, constraints.q
    rows_M = []
    rows_Lx = []
    rows_Lv = []
    rows_b = []
    layout = []
    YC = Y @ model.C
    YD = Y @ model.D
    for i in range(N):
        sel = np.zeros((n_u, N * n_u))
        sel[:, i * n_u:(i + 1) * n_u] = np.eye(n_u)
        rows_M.append(-(YC @ S_u[i * n:(i + 1) * n] + YD @ sel))
        rows_Lx.append(-YC @ S_x[i * n:(i + 1) * n])
        rows_Lv.append(np.zeros((q, n_v)))
        rows_b.append(h)
        layout.append(("stage", i, q))
    Hx = terminal.H_T[:, :n]
    Hv = terminal.H_T[:, n:]
    rows_M.append(-Hx @ S_u[N * n:])
    rows_Lx.append(-Hx @ S_x[N * n:])
    rows_Lv.append(-Hv)
    rows_b.append(terminal.h_T)
    layout.append(("terminal", N, terminal.h_T.size))

    return CondensedQP(
        H=H, W_x=W_x, W_v=W_v,
        M=np.vstack(rows_M), L_x=np.vstack(rows_Lx), L_v=np.vstack(rows_Lv),
        b=np.concatenate(rows_b), row_layout=layout,
        n=n, n_u=n_u, n_v=n_v,
    )


def reference_admissible(v, eq_map: EquilibriumMap,
                         constraints: ConstraintPolyhedron, margin=1e-9) -> bool:
    """Whether the steady output of v sits strictly inside the constraints."""
    v = np.asarray(v, dtype=float).ravel()
    return bool(np.all(constraints.Y @ (eq_map.G_y @ v) <= constraints.h - margin))


def phase1_feasible(qp: CondensedQP, x, v, tol=1e-7, delta=1e-8):
    """Slack-minimization feasibility check for an arbitrary initial state.

    Solves min 0.5*delta*|(mu, t)|^2 + t  s.t.  M mu + b(theta) + t >= 0,
    t >= 0 with one extra interior-point solve; theta is feasible when the
    minimal uniform slack lift t* is (numerically) zero.
    """
    b_vec = qp.constraint_offset(np.asarray(x, float), np.asarray(v, float))
    m, p = qp.m, qp.p
    A_aug = np.zeros((m + 1, p + 1))
    A_aug[:m, :p] = qp.M
    A_aug[:m, p] = 1.0
    A_aug[m, p] = 1.0
    b_aug = np.concatenate([b_vec, [0.0]])
    c_aug = np.zeros(p + 1)
    c_aug[p] = 1.0
    z, _, _, _, _, converged = _backend.longstep_loop(
        delta * np.eye(p + 1), c_aug, A_aug, b_aug,
        np.zeros(m + 1), 1.0, 1e-10, 400, GAMMA_MAX)
    if not converged:
        return False
    return float(z[p]) <= tol
