"""Closed-loop simulation and benchmarking.

Each timestep of a governed run performs: (1) warm-start the solver from the
shifted previous solution, (2) let the governor pick how far the reference
moves and where the homotopy starts, (3) solve the condensed problem down to
an adaptive truncation tolerance.  The ungoverned baseline applies the full
reference immediately, keeps the same warm start, and starts the homotopy at
the smallest level the warm start supports (capped by eta_bar), so the
governor is the only difference between the two modes.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import _backend
from .governor import GovernorConfig, govern
from .mpc_setup import (
    ConstraintPolyhedron,
    CondensedQP,
    EquilibriumMap,
    PlantModel,
    TrackingDesign,
    condense,
    discretize,
    equilibrium_basis,
    make_tracking_design,
    max_admissible_set,
    phase1_feasible,
    reference_admissible,
)
from .qp_ldipm import GAMMA_MAX
from .warmstart import make_warm_start

MODES = ("governed", "ungoverned")


@dataclass
class ScenarioConfig:
    """Everything needed to build the controller and run a closed loop.

    ``A``/``B`` are continuous-time matrices when ``continuous`` is true and
    are discretized with period ``T`` at build time.  The reference schedule
    is a list of ``(time_seconds, r_vector)`` pairs; before the first entry
    the reference stays at ``v0``.  ``x0 = None`` starts at the equilibrium
    of ``v0``; any other ``x0`` requires ``phase1_check``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray
    T: float
    N: int
    Q: np.ndarray
    R: np.ndarray
    Y: np.ndarray
    h: np.ndarray
    governor: GovernorConfig
    r_schedule: list
    v0: np.ndarray
    steps: int
    continuous: bool = False
    x0: np.ndarray | None = None
    sigma: float = 0.5
    eta_f_floor: float = 1e-12
    eta_f_cap: float = 1e-6
    mode: str = "governed"
    seed: int = 0
    terminal_epsilon: float = 1e-6
    k_max: int = 500
    phase1_check: bool = False
    settle_tol: float = 1e-3
    max_solver_iters: int = 200
    name: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not (0.0 < self.sigma < 1.0):
            raise ValueError("sigma must be in (0, 1)")
        if not (0.0 < self.eta_f_floor < self.eta_f_cap):
            raise ValueError("need 0 < eta_f_floor < eta_f_cap")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")


@dataclass
class StepLog:
    k: int
    t: float
    x: np.ndarray
    u: np.ndarray
    z: np.ndarray
    v: np.ndarray
    kappa: float
    eta_start: float
    eta_end: float
    eta_f: float
    iterations: int
    fallback: bool
    constraint_margin: float
    wall_time: float


@dataclass
class SimulationLog:
    mode: str
    steps: list
    summary: dict


@dataclass
class ControllerBundle:
    """Immutable controller data shared by every step (and both modes)."""

    model: PlantModel
    eq_map: EquilibriumMap
    design: TrackingDesign
    constraints: ConstraintPolyhedron
    qp: CondensedQP
    cfg: ScenarioConfig


def eta_f_rule(x, v, m, Q, eq_map: EquilibriumMap, sigma, floor, cap):
    """Adaptive truncation tolerance: clamp(sigma * |x - x_eq(v)|_Q^2 / m).

    Whenever the unclamped value is returned, m * eta_f stays strictly below
    the squared tracking-error norm, which is what keeps the truncated solve
    stabilizing.  The floor trades that guarantee for numerical sanity in a
    vanishing neighborhood of the equilibrium.
    """
    e = np.asarray(x, dtype=float) - eq_map.G_x @ np.asarray(v, dtype=float)
    val = sigma * float(e @ Q @ e) / m
    return float(min(max(val, floor), cap))


def build_controller(cfg: ScenarioConfig) -> ControllerBundle:
    """Discretize, design, build the terminal set, and condense."""
    if cfg.continuous:
        A, B = discretize(cfg.A, cfg.B, cfg.T)
    else:
        A, B = np.asarray(cfg.A, float), np.asarray(cfg.B, float)
    model = PlantModel(A, B, cfg.C, cfg.D, cfg.E, cfg.F)
    eq_map = equilibrium_basis(model)
    design = make_tracking_design(model, cfg.N, cfg.Q, cfg.R)
    constraints = ConstraintPolyhedron(cfg.Y, cfg.h)
    for t_r, r in cfg.r_schedule:
        if not reference_admissible(r, eq_map, constraints):
            raise ValueError(f"reference {np.asarray(r).tolist()} at t={t_r} "
                             "is not strictly constraint admissible")
    if not reference_admissible(cfg.v0, eq_map, constraints):
        raise ValueError("initial reference v0 is not strictly constraint admissible")
    terminal = max_admissible_set(model, design, eq_map, constraints,
                                  epsilon=cfg.terminal_epsilon, k_max=cfg.k_max)
    qp = condense(model, design, eq_map, constraints, terminal)
    return ControllerBundle(model=model, eq_map=eq_map, design=design,
                            constraints=constraints, qp=qp, cfg=cfg)


def reference_at(cfg: ScenarioConfig, t):
    """Scheduled target at time t (v0 before the first schedule entry)."""
    r = np.asarray(cfg.v0, dtype=float).ravel()
    for t_r, r_val in cfg.r_schedule:
        if t_r <= t + 1e-12:
            r = np.asarray(r_val, dtype=float).ravel()
    return r


@dataclass
class _LoopState:
    x: np.ndarray
    v: np.ndarray
    mu_prev: np.ndarray
    x_prev: np.ndarray
    eta_prev: float
    cold: bool = False


def _initial_state(bundle: ControllerBundle, cfg: ScenarioConfig,
                   mode: str) -> _LoopState:
    eq = bundle.eq_map
    v0 = np.asarray(cfg.v0, dtype=float).ravel()
    x_eq = eq.G_x @ v0
    if cfg.x0 is None:
        x0 = x_eq
    else:
        x0 = np.asarray(cfg.x0, dtype=float).ravel()
    at_equilibrium = bool(np.abs(x0 - x_eq).max() <= 1e-9)
    if not at_equilibrium:
        if not cfg.phase1_check:
            raise ValueError("x0 is not the equilibrium of v0; enable the "
                             "phase-1 feasibility check to allow it")
        if not phase1_feasible(bundle.qp, x0, v0):
            raise ValueError("x0 failed the phase-1 feasibility check")
        # Cold start: no previous solution exists, so the first solve runs
        # from gamma = 0 at the large fallback level.
        return _LoopState(x=x0, v=v0, mu_prev=np.zeros(bundle.qp.p),
                          x_prev=x0, eta_prev=cfg.governor.eta_bar, cold=True)
    # At equilibrium the stacked equilibrium input is the exact previous
    # solution; the shift reproduces it and the warm start is exact at any
    # scale, so start at the floor the recursion settles to anyway.
    mu_eq = np.tile(eq.G_u @ v0, cfg.N)
    return _LoopState(x=x0, v=v0, mu_prev=mu_eq, x_prev=x0,
                      eta_prev=cfg.eta_f_floor, cold=False)


def step_closed_loop(state: _LoopState, bundle: ControllerBundle,
                     cfg: ScenarioConfig, mode: str, step_index: int):
    """One timestep of the closed loop.  Returns (next_state, StepLog).

    ``bundle`` holds the controller matrices; runtime policies (governor
    parameters, tolerance rule, schedule) come from ``cfg`` so one bundle
    can serve several scenario variants.
    """
    qp = bundle.qp
    gov = cfg.governor
    model = bundle.model
    x = state.x
    r_now = reference_at(cfg, step_index * cfg.T)

    t_start = time.perf_counter()
    if state.cold:
        gamma_bar = np.zeros(qp.m)
        eta_start = gov.eta_bar
        kappa = 0.0
        fallback = True
        v_k = r_now if mode == "ungoverned" else state.v
    elif mode == "governed":
        ws = make_warm_start(qp, state.mu_prev, state.x_prev, x, state.v,
                             state.eta_prev, model, bundle.design, bundle.eq_map)
        gamma_bar = ws.gamma_bar
        eta_start, kappa, v_k = govern(gamma_bar, qp, x, state.v, r_now, gov,
                                       step_index)
        fallback = (eta_start == gov.eta_bar and kappa == 0.0)
    else:
        # Full reference step; warm start evaluated at the new parameter and
        # the homotopy started at the smallest level it supports.
        v_k = r_now
        ws = make_warm_start(qp, state.mu_prev, state.x_prev, x, v_k,
                             state.eta_prev, model, bundle.design, bundle.eq_map)
        gamma_bar = ws.gamma_bar
        kappa = 1.0
        fallback = False
        p_vec, q_vec, _, _ = _backend.eta_line_parts(
            qp.H, qp.cost_gradient_vector(x, v_k), qp.M,
            qp.constraint_offset(x, v_k), gamma_bar, GAMMA_MAX)
        code, w_hi = _backend.max_feasible_w(p_vec, q_vec)
        if code == _backend.W_VALUE:
            eta_start = min(gov.eta_bar, 1.0 / (w_hi * w_hi))
        else:
            eta_start = gov.eta_bar

    eta_f = eta_f_rule(x, v_k, qp.m, bundle.design.Q, bundle.eq_map,
                       cfg.sigma, cfg.eta_f_floor, cfg.eta_f_cap)
    c_vec = qp.cost_gradient_vector(x, v_k)
    b_vec = qp.constraint_offset(x, v_k)
    mu, _, eta_end, _, iters, _ = _backend.longstep_loop(
        qp.H, c_vec, qp.M, b_vec, gamma_bar, eta_start, eta_f,
        cfg.max_solver_iters, GAMMA_MAX)
    wall = time.perf_counter() - t_start

    u = mu[:model.n_u]
    z_out = model.E @ x + model.F @ u
    margin = float((qp.M @ mu + b_vec).min())
    x_next = model.A @ x + model.B @ u
    log = StepLog(k=step_index, t=step_index * cfg.T, x=x.copy(), u=u.copy(),
                  z=z_out, v=v_k.copy(), kappa=float(kappa),
                  eta_start=float(eta_start), eta_end=float(eta_end),
                  eta_f=float(eta_f), iterations=int(iters),
                  fallback=bool(fallback), constraint_margin=margin,
                  wall_time=wall)
    # The warm start uses the previous truncation level only as a scale for
    # the log map.  Left unfloored it cascades geometrically toward zero
    # across timesteps until the warm-start gamma saturates the solver's
    # exponentiation clamp and the direction freezes; the floor pins the
    # cycle at the smallest truncation level the scenario ever asks for.
    next_state = _LoopState(x=x_next, v=v_k, mu_prev=mu, x_prev=x,
                            eta_prev=max(eta_end, cfg.eta_f_floor), cold=False)
    return next_state, log


def _summarize(cfg: ScenarioConfig, steps):
    iters = [s.iterations for s in steps]
    settle = None
    for k in range(len(steps)):
        if all(np.linalg.norm(steps[j].z - reference_at(cfg, steps[j].t))
               <= cfg.settle_tol for j in range(k, len(steps))):
            settle = k
            break
    return {
        "max_iterations": int(max(iters)),
        "mean_iterations": float(np.mean(iters)),
        "settle_step": settle,
        "worst_wall_time": float(max(s.wall_time for s in steps)),
    }


def run_scenario(cfg: ScenarioConfig, bundle: ControllerBundle | None = None,
                 mode: str | None = None) -> SimulationLog:
    """Build the controller (unless given) and run the closed loop."""
    if bundle is None:
        bundle = build_controller(cfg)
    mode = mode or cfg.mode
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    state = _initial_state(bundle, cfg, mode)
    steps = []
    for k in range(cfg.steps):
        state, log = step_closed_loop(state, bundle, cfg, mode, k)
        steps.append(log)
    return SimulationLog(mode=mode, steps=steps, summary=_summarize(cfg, steps))


def benchmark(cfg: ScenarioConfig, trials: int):
    """Repeat both modes, tracking each trial's worst per-step solver time.

    The logs are identical across trials (same seed); only timings vary.
    Reports mean and standard deviation of the per-trial worst-case times,
    plus the iteration statistics, per mode.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    bundle = build_controller(cfg)
    out = {"trials": trials}
    for mode in MODES:
        worst = np.empty(trials)
        log = None
        for t in range(trials):
            log = run_scenario(cfg, bundle=bundle, mode=mode)
            worst[t] = log.summary["worst_wall_time"]
        out[mode] = {
            "worst_time_mean": float(worst.mean()),
            "worst_time_std": float(worst.std()),
            "max_iterations": log.summary["max_iterations"],
            "mean_iterations": log.summary["mean_iterations"],
            "settle_step": log.summary["settle_step"],
        }
    out["iteration_ratio"] = (out["governed"]["max_iterations"]
                              / out["ungoverned"]["max_iterations"])
    return out
