"""Log-domain interior-point method for dense convex QPs.

Solves ``min 0.5 z'Hz + c'z  s.t.  Az + b >= 0`` by Newton iterations on the
log-domain central-path equations

    sqrt(eta) A' e^gamma = Hz + c,      sqrt(eta) e^{-gamma} = Az + b,

with the homotopy parameter ``eta`` driven toward zero.  The dual/slack pair
is parameterized as ``lambda = sqrt(eta) e^gamma`` and
``s = sqrt(eta) e^{-gamma}``, so nonnegativity and the complementarity
product ``s o lambda = eta`` hold by construction.  Terminating at ``eta``
certifies an objective within ``m * eta`` of optimal.
"""

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from . import _backend

#: Entries of gamma are clipped to [-GAMMA_MAX, GAMMA_MAX] before
#: exponentiation.  Warm starts and well-scaled problems never approach this
#: bound; the clip only prevents overflow of e^{2*gamma} and preserves the
#: sign pattern of the direction.
GAMMA_MAX = _backend.GAMMA_MAX


class SolveStatus(enum.Enum):
    CONVERGED = "converged"
    ITERATION_LIMIT = "iteration_limit"


class QpProblem:
    """Data of a dense convex QP: ``min 0.5 z'Hz + c'z  s.t.  Az + b >= 0``.

    Validates at construction: H symmetric (to 1e-12 relative) and positive
    semidefinite, and A'A + H positive definite, checked by a symmetric
    factorization.  Raises ``ValueError`` otherwise.
    """

    def __init__(self, H, c, A, b):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        c = np.asarray(c, dtype=float).ravel()
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        p = H.shape[0]
        if H.shape != (p, p):
            raise ValueError(f"H must be square, got {H.shape}")
        if c.shape != (p,):
            raise ValueError(f"c must have length {p}, got {c.shape}")
        if A.size == 0:
            A = A.reshape(0, p)
        if A.shape[1] != p:
            raise ValueError(f"A must have {p} columns, got {A.shape}")
        m = A.shape[0]
        if b.shape != (m,):
            raise ValueError(f"b must have length {m}, got {b.shape}")
        scale = max(1.0, float(np.abs(H).max()))
        if np.abs(H - H.T).max() > 1e-12 * scale:
            raise ValueError("H is not symmetric")
        H = 0.5 * (H + H.T)
        if float(np.linalg.eigvalsh(H).min()) < -1e-9 * scale:
            raise ValueError("H is not positive semidefinite")
        try:
            np.linalg.cholesky(A.T @ A + H)
        except np.linalg.LinAlgError:
            raise ValueError("A'A + H is not positive definite") from None
        self.H = H
        self.c = c
        self.A = A
        self.b = b
        self.p = p
        self.m = m


@dataclass
class LdipmIterate:
    """Solver state: log-domain dual variable and homotopy parameter."""

    gamma: np.ndarray
    eta: float

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float).ravel()
        if not np.all(np.isfinite(self.gamma)):
            raise ValueError("gamma entries must be finite")
        if not (self.eta > 0.0):
            raise ValueError("eta must be positive")


@dataclass
class NewtonResult:
    d: np.ndarray
    z: np.ndarray
    inf_norm_d: float


@dataclass
class SolveReport:
    z: np.ndarray
    gamma: np.ndarray
    eta: float
    s: np.ndarray
    lam: np.ndarray
    iterations: int
    suboptimality_bound: float
    status: SolveStatus


def newton_direction(iterate: LdipmIterate, qp: QpProblem) -> NewtonResult:
    """Newton direction of the log-domain central-path equations.

    ``z`` solves ``(A' Phi(gamma) A + H) z = 2 sqrt(eta) A' e^gamma -
    (c + A' Phi(gamma) b)`` with ``Phi = diag(e^{2*gamma})``, and
    ``d = 1 - e^gamma o (Az + b) / sqrt(eta)``.
    """
    p, q, z_a, z_b = _backend.eta_line_parts(
        qp.H, qp.c, qp.A, qp.b, iterate.gamma, GAMMA_MAX
    )
    se = math.sqrt(iterate.eta)
    d = p + q / se
    z = se * z_a + z_b
    inf_norm = float(np.abs(d).max()) if d.size else 0.0
    return NewtonResult(d=d, z=z, inf_norm_d=inf_norm)


def eta_line_coefficients(gamma, qp: QpProblem):
    """Direction as an affine function of ``w = 1/sqrt(eta)``.

    Returns ``(p_vec, q_vec)`` with ``d(gamma, eta) = p_vec + q_vec * w``.
    Obtained from the split ``z = sqrt(eta) z_a + z_b`` of the Newton system
    by right-hand side: ``p_vec = 1 - e^gamma o (A z_a)`` and
    ``q_vec = -e^gamma o (A z_b + b)``.
    """
    p, q, _, _ = _backend.eta_line_parts(qp.H, qp.c, qp.A, qp.b, gamma, GAMMA_MAX)
    return p, q


def eta_star(gamma, qp: QpProblem):
    """Smallest eta > 0 whose Newton direction lies in the unit ball.

    Each row confines ``w = 1/sqrt(eta)`` to a closed interval; the largest
    w in the intersection maps back to ``eta* = 1/w**2``.  Returns ``None``
    when no eta > 0 qualifies (the infinite sentinel) and ``0.0`` when every
    eta > 0 does.  Runs in O(m).
    """
    p, q = eta_line_coefficients(gamma, qp)
    code, w_hi = _backend.max_feasible_w(p, q)
    if code == _backend.W_EMPTY:
        return None
    if code == _backend.W_ALL:
        return 0.0
    return 1.0 / (w_hi * w_hi)


def recover_duals(gamma, eta, d):
    """Slack and dual recovered from an iterate and its direction.

    ``lambda = sqrt(eta) e^gamma o (1 + d)`` and
    ``s = sqrt(eta) e^{-gamma} o (1 - d)``.  Whenever ``|d|_inf <= 1`` both
    are nonnegative and ``|s o lambda|_1 = eta * (m - |d|^2)``.
    """
    g = np.clip(np.asarray(gamma, dtype=float), -GAMMA_MAX, GAMMA_MAX)
    d = np.asarray(d, dtype=float)
    se = math.sqrt(eta)
    eg = np.exp(g)
    lam = se * eg * (1.0 + d)
    s = se * (1.0 - d) / eg
    return s, lam


def longstep(qp: QpProblem, gamma0, eta0, eta_f, max_iters=200) -> SolveReport:
    """Solve the QP by the long-step homotopy loop.

    While ``eta > eta_f`` or ``|d|_inf > 1``: shrink eta to
    ``min(eta, eta*)``, then step ``gamma += d / max(1, |d|_inf**2)``.  On
    exit the primal is recovered from the final factorization and the duals
    from the final direction.  ``max_iters`` bounds the loop; hitting it is
    reported via status, not an exception.
    """
    if not (eta0 > 0.0 and eta_f > 0.0):
        raise ValueError("eta0 and eta_f must be positive")
    gamma0 = np.asarray(gamma0, dtype=float).ravel()
    if gamma0.shape != (qp.m,):
        raise ValueError(f"gamma0 must have length {qp.m}")
    z, gamma, eta, d, iters, converged = _backend.longstep_loop(
        qp.H, qp.c, qp.A, qp.b, gamma0, float(eta0), float(eta_f),
        int(max_iters), GAMMA_MAX,
    )
    s, lam = recover_duals(gamma, eta, d)
    return SolveReport(
        z=z,
        gamma=gamma,
        eta=eta,
        s=s,
        lam=lam,
        iterations=iters,
        suboptimality_bound=qp.m * eta,
        status=SolveStatus.CONVERGED if converged else SolveStatus.ITERATION_LIMIT,
    )


def qp_from_json(text) -> QpProblem:
    """Parse the QP text format: a JSON object with keys H, c, A, b.

    ``H`` and ``A`` are row-major 2-D arrays; dimensions are inferred.
    Raises ``ValueError`` on malformed input or failed invariants.
    """
    if isinstance(text, (bytes, str)):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"invalid JSON: {exc}") from None
    else:
        data = text
    if not isinstance(data, dict):
        raise ValueError("QP JSON must be an object")
    missing = [k for k in ("H", "c", "A", "b") if k not in data]
    if missing:
        raise ValueError(f"QP JSON missing keys: {missing}")
    return QpProblem(data["H"], data["c"], data["A"], data["b"])
