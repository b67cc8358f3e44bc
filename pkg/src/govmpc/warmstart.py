"""Warm starting the interior-point solver from the previous MPC solution.

The previous control sequence is shifted one stage, the terminal LQR input
is appended, and the resulting slack is mapped into the log domain with the
truncation parameter the previous solve ended at.
"""

import math
from dataclasses import dataclass

import numpy as np

from .mpc_setup import CondensedQP, EquilibriumMap, PlantModel, TrackingDesign

#: Slack floor inside the log map.  Keeps the warm-start gamma at or below
#: -log(eps) ~ 18.4, inside the solver's exponentiation clamp.
EPS_SLACK = 1e-8


@dataclass
class WarmStart:
    mu_bar: np.ndarray
    s_bar: np.ndarray
    gamma_bar: np.ndarray
    eta_prev: float


def shift_primal(mu_prev, x_prev, v, model: PlantModel, design: TrackingDesign,
                 eq_map: EquilibriumMap):
    """Shifted control sequence: drop the first input, append the LQR move.

    The previous terminal state is recovered by rolling ``x_prev`` through
    the model under ``mu_prev``; the appended element is
    ``u_eq - K (xi_N - x_eq)`` at the equilibrium selected by ``v``.
    """
    mu_prev = np.asarray(mu_prev, dtype=float).ravel()
    n_u = model.n_u
    xi = np.asarray(x_prev, dtype=float).copy()
    for i in range(design.N):
        xi = model.A @ xi + model.B @ mu_prev[i * n_u:(i + 1) * n_u]
    v = np.asarray(v, dtype=float).ravel()
    x_eq = eq_map.G_x @ v
    u_eq = eq_map.G_u @ v
    tail = u_eq - design.K @ (xi - x_eq)
    return np.concatenate([mu_prev[n_u:], tail])


def warm_gamma(s_bar, eta_prev, eps_s=EPS_SLACK):
    """Log-domain image of a slack vector: -log(max(s / sqrt(eta_prev), eps))."""
    if not (eta_prev > 0.0):
        raise ValueError("eta_prev must be positive")
    if not (eps_s > 0.0):
        raise ValueError("eps_s must be positive")
    s_bar = np.asarray(s_bar, dtype=float)
    return -np.log(np.maximum(s_bar / math.sqrt(eta_prev), eps_s))


def make_warm_start(qp: CondensedQP, mu_prev, x_prev, x_now, v, eta_prev,
                    model: PlantModel, design: TrackingDesign,
                    eq_map: EquilibriumMap, eps_s=EPS_SLACK) -> WarmStart:
    """Shift, evaluate the slack at the new parameter, and map to gamma."""
    mu_bar = shift_primal(mu_prev, x_prev, v, model, design, eq_map)
    s_bar = qp.M @ mu_bar + qp.constraint_offset(
        np.asarray(x_now, dtype=float), np.asarray(v, dtype=float).ravel())
    gamma_bar = warm_gamma(s_bar, eta_prev, eps_s)
    return WarmStart(mu_bar=mu_bar, s_bar=s_bar, gamma_bar=gamma_bar,
                     eta_prev=float(eta_prev))
