"""Shared MPC fixtures for the test suite."""

import numpy as np

from govmpc.mpc_setup import (
    ConstraintPolyhedron,
    PlantModel,
    condense,
    discretize,
    equilibrium_basis,
    make_tracking_design,
    max_admissible_set,
)


def build_double_integrator(N=4, T=0.2):
    """Position-tracking double integrator with box constraints.

    Returns (model, eq_map, design, constraints, terminal, condensed_qp).
    """
    A, B = discretize([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], T)
    C = np.vstack([np.eye(2), np.zeros((1, 2))])
    D = np.array([[0.0], [0.0], [1.0]])
    model = PlantModel(A, B, C, D, [[1.0, 0.0]], [[0.0]])
    eq = equilibrium_basis(model)
    design = make_tracking_design(model, N, np.diag([1.0, 0.1]), [[0.1]])
    cons = ConstraintPolyhedron(np.vstack([np.eye(3), -np.eye(3)]),
                                np.array([2.0, 1.0, 1.0, 2.0, 1.0, 1.0]))
    ts = max_admissible_set(model, design, eq, cons)
    qp = condense(model, design, eq, cons, ts)
    return model, eq, design, cons, ts, qp


def build_scalar_plant(N=3):
    """Stable scalar plant, input-constrained, tracking its own state."""
    model = PlantModel([[0.7]], [[1.0]], [[1.0], [0.0]], [[0.0], [1.0]],
                       [[1.0]], [[0.0]])
    eq = equilibrium_basis(model)
    design = make_tracking_design(model, N, [[1.0]], [[0.5]])
    cons = ConstraintPolyhedron(np.vstack([np.eye(2), -np.eye(2)]),
                                np.array([3.0, 2.0, 3.0, 2.0]))
    ts = max_admissible_set(model, design, eq, cons)
    qp = condense(model, design, eq, cons, ts)
    return model, eq, design, cons, ts, qp
