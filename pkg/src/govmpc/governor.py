"""Computational reference governor.

Before each solve, the governor picks how far the reference command may move
toward the target (kappa in [0, 1]) and which homotopy level (eta) to start
the interior-point solver at, so that the warm start remains primal-dual
feasible with bounded suboptimality.  At a fixed warm start gamma the Newton
direction is affine in (1/sqrt(eta), kappa/sqrt(eta)); three sampled
directions sharing one factorization identify the three coefficient vectors,
the unit-ball condition on the direction becomes 2m linear inequalities in
(s, kappa) with s = sqrt(eta), and the resulting two-variable LP is solved
by randomized incremental insertion in expected linear time.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .mpc_setup import CondensedQP
from .qp_ldipm import GAMMA_MAX


@dataclass
class GovernorConfig:
    """Weights, eta bounds, fallback level, and the sampling constants.

    The sample pairs default to (kappa1, kappa2) = (0, 1) and
    (eta1, eta2) = (1, 0.25).  The direction is exactly affine in
    (1/sqrt(eta), kappa/sqrt(eta)), so the recovered coefficients do not
    depend on the sample points; these defaults give interpolation weights
    b0 = 2, b1 = -1 with no near-cancellation.
    """

    c: float = 1.0
    eta_min: float = 1e-10
    eta_max: float = 1e-2
    eta_bar: float = 1e4
    sample_etas: tuple = (1.0, 0.25)
    sample_kappas: tuple = (0.0, 1.0)
    rng_seed: int = 0

    def __post_init__(self):
        if self.c < 0.0:
            raise ValueError("suboptimality weight c must be nonnegative")
        if not (0.0 < self.eta_min < self.eta_max):
            raise ValueError("need 0 < eta_min < eta_max")
        if not (self.eta_bar >= 1.0):
            raise ValueError("fallback eta_bar must be at least 1")
        if self.eta_bar <= self.eta_max:
            raise ValueError("fallback eta_bar must exceed eta_max")
        e1, e2 = self.sample_etas
        k1, k2 = self.sample_kappas
        if not (e1 > 0.0 and e2 > 0.0 and e1 != e2):
            raise ValueError("sample etas must be positive and distinct")
        if not (0.0 <= k1 <= 1.0 and 0.0 <= k2 <= 1.0 and k1 != k2):
            raise ValueError("sample kappas must be distinct and in [0, 1]")
        b0 = -e2 ** -0.5 / (e1 ** -0.5 - e2 ** -0.5)
        if abs(1.0 - b0) < 1e-12:
            raise ValueError("sample etas give b0 = 1; pick different values")


@dataclass
class GovernorDecomposition:
    """Coefficients of d(gamma, eta, kappa) = d0 + d1/sqrt(eta) + d2*kappa/sqrt(eta)."""

    d0: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


@dataclass
class Lp2d:
    """Two-variable LP: maximize kappa - c*s subject to rows
    alpha_i*s + beta_i*kappa <= delta_i and the box
    s in [sqrt(eta_min), sqrt(eta_max)], kappa in [0, 1]."""

    rows: np.ndarray  # (2m, 3) columns alpha, beta, delta
    c: float
    s_lo: float
    s_hi: float


def _direction_samples(gamma_bar, qp: CondensedQP, x, v, r, cfg: GovernorConfig):
    """(eta, c, b) triples for the three sample pairs, reference v + kappa(r - v)."""
    x = np.asarray(x, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    r = np.asarray(r, dtype=float).ravel()
    c0 = qp.cost_gradient_vector(x, v)
    cr = qp.W_v @ (r - v)
    b0 = qp.constraint_offset(x, v)
    br = qp.L_v @ (r - v)
    e1, e2 = cfg.sample_etas
    k1, k2 = cfg.sample_kappas
    etas = [e1, e1, e2]
    cs = [c0 + k1 * cr, c0 + k2 * cr, c0 + k1 * cr]
    bs = [b0 + k1 * br, b0 + k2 * br, b0 + k1 * br]
    return etas, cs, bs


def sample_newton_directions(gamma_bar, qp: CondensedQP, x, v, r,
                             cfg: GovernorConfig):
    """Newton directions at (eta1, kappa1), (eta1, kappa2), (eta2, kappa1).

    The weighted system matrix M' Phi(gamma) M + H is factored once and
    reused for all three right-hand sides.
    """
    gamma_bar = np.asarray(gamma_bar, dtype=float).ravel()
    etas, cs, bs = _direction_samples(gamma_bar, qp, x, v, r, cfg)
    ds, _ = _backend.newton_batch(qp.H, qp.M, gamma_bar, etas, cs, bs, GAMMA_MAX)
    return ds[0], ds[1], ds[2]


def decompose(d_hats, cfg: GovernorConfig) -> GovernorDecomposition:
    """Recover (d0, d1, d2) from the three sampled directions.

    The fourth sample is reconstructed from the identity that the direction
    has no pure-kappa term: d4 = b0/(1 - b0) * (d1 - d2) + d3.  A nonzero
    pure-kappa residual signals an upstream bug and raises.
    """
    dh1, dh2, dh3 = (np.asarray(d, dtype=float) for d in d_hats)
    e1, e2 = cfg.sample_etas
    k1, k2 = cfg.sample_kappas
    a0 = -k2 / (k1 - k2)
    a1 = 1.0 / (k1 - k2)
    b0 = -e2 ** -0.5 / (e1 ** -0.5 - e2 ** -0.5)
    b1 = 1.0 / (e1 ** -0.5 - e2 ** -0.5)
    dh4 = b0 / (1.0 - b0) * (dh1 - dh2) + dh3
    c1 = a0 * dh1 + (1.0 - a0) * dh2
    c2 = a1 * (dh1 - dh2)
    c3 = a0 * dh3 + (1.0 - a0) * dh4
    c4 = a1 * (dh3 - dh4)
    d0 = b0 * c1 + (1.0 - b0) * c3
    d1 = b1 * (c1 - c3)
    d2 = b1 * (c2 - c4)
    d3 = b0 * c2 + (1.0 - b0) * c4
    scale = 1.0 + max(float(np.abs(dh1).max()), float(np.abs(dh2).max()),
                      float(np.abs(dh3).max()))
    if float(np.abs(d3).max()) > 1e-8 * scale:
        raise RuntimeError(
            "pure-kappa residual of the direction decomposition is nonzero; "
            "the sampled directions are inconsistent")
    return GovernorDecomposition(d0=d0, d1=d1, d2=d2)


def build_lp(dec: GovernorDecomposition, cfg: GovernorConfig) -> Lp2d:
    """Rewrite the unit-ball condition as 2m rows linear in (s, kappa).

    |d0 + (d1 + d2*kappa)/s| <= 1 multiplied by s > 0 gives
    (d0 - 1)*s + d2*kappa <= -d1  and  -(d0 + 1)*s - d2*kappa <= d1.
    """
    m = dec.d0.size
    rows = np.empty((2 * m, 3))
    rows[:m, 0] = dec.d0 - 1.0
    rows[:m, 1] = dec.d2
    rows[:m, 2] = -dec.d1
    rows[m:, 0] = -(dec.d0 + 1.0)
    rows[m:, 1] = -dec.d2
    rows[m:, 2] = dec.d1
    return Lp2d(rows=rows, c=cfg.c, s_lo=math.sqrt(cfg.eta_min),
                s_hi=math.sqrt(cfg.eta_max))


def seidel_solve(lp: Lp2d, rng_seed):
    """Solve the 2-D LP by randomized incremental insertion.

    Rows are shuffled by a generator seeded from ``rng_seed``; the box is the
    starting region.  Returns ``(s, kappa)`` at the exact vertex optimum, or
    ``None`` when infeasible (a normal outcome, handled by the caller's
    fallback).
    """
    n_rows = lp.rows.shape[0]
    order = np.random.default_rng(rng_seed).permutation(n_rows)
    ok, s, k = _backend.seidel_lp(
        np.ascontiguousarray(lp.rows[:, 0]),
        np.ascontiguousarray(lp.rows[:, 1]),
        np.ascontiguousarray(lp.rows[:, 2]),
        order, lp.c, lp.s_lo, lp.s_hi)
    if not ok:
        return None
    return float(s), float(k)


def govern(gamma_bar, qp: CondensedQP, x, v_prev, r, cfg: GovernorConfig,
           step_index=0):
    """Pick (eta_k, kappa_k) and advance the reference for one timestep.

    Runs sample -> decompose -> build -> solve.  On success returns
    ``(s*^2, kappa*, v_prev + kappa*(r - v_prev))``; when the LP is
    infeasible, falls back to ``(eta_bar, 0, v_prev)``.  The shuffle seed
    mixes ``cfg.rng_seed`` with ``step_index`` so closed-loop runs are
    reproducible yet per-step independent.
    """
    v_prev = np.asarray(v_prev, dtype=float).ravel()
    d_hats = sample_newton_directions(gamma_bar, qp, x, v_prev, r, cfg)
    dec = decompose(d_hats, cfg)
    lp = build_lp(dec, cfg)
    sol = seidel_solve(lp, [cfg.rng_seed, int(step_index)])
    if sol is None:
        return cfg.eta_bar, 0.0, v_prev.copy()
    s_opt, kappa_opt = sol
    v_next = v_prev + kappa_opt * (np.asarray(r, dtype=float).ravel() - v_prev)
    return s_opt * s_opt, kappa_opt, v_next
