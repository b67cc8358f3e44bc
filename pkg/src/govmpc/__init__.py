"""Reference-tracking MPC toolkit built around a log-domain interior-point
QP solver, a warm-start scheme, and a computational reference governor that
keeps per-timestep solves down to a single optimizer iteration."""

from ._backend import COMPILED, backend_name
from .qp_ldipm import (
    GAMMA_MAX,
    LdipmIterate,
    NewtonResult,
    QpProblem,
    SolveReport,
    SolveStatus,
    eta_line_coefficients,
    eta_star,
    longstep,
    newton_direction,
    qp_from_json,
    recover_duals,
)

__all__ = [
    "COMPILED",
    "GAMMA_MAX",
    "LdipmIterate",
    "NewtonResult",
    "QpProblem",
    "SolveReport",
    "SolveStatus",
    "backend_name",
    "eta_line_coefficients",
    "eta_star",
    "longstep",
    "newton_direction",
    "qp_from_json",
    "recover_duals",
]

__version__ = "0.1.0"
