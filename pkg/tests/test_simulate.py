import numpy as np
import pytest

from govmpc.governor import GovernorConfig
from govmpc.simulate import (
    ScenarioConfig,
    _initial_state,
    benchmark,
    build_controller,
    eta_f_rule,
    reference_at,
    run_scenario,
    step_closed_loop,
)
from govmpc.warmstart import make_warm_start
from oracles import rollout_cost


def di_scenario(steps=80, r_step=0.8, mode="governed", **kw):
    """Double-integrator scenario: small and fast for loop-level tests."""
    base = dict(
        A=np.array([[0.0, 1.0], [0.0, 0.0]]),
        B=np.array([[0.0], [1.0]]),
        C=np.vstack([np.eye(2), np.zeros((1, 2))]),
        D=np.array([[0.0], [0.0], [1.0]]),
        E=np.array([[1.0, 0.0]]),
        F=np.array([[0.0]]),
        continuous=True,
        T=0.2,
        N=6,
        Q=np.diag([1.0, 0.1]),
        R=np.array([[0.1]]),
        Y=np.vstack([np.eye(3), -np.eye(3)]),
        h=np.array([2.0, 1.0, 1.0, 2.0, 1.0, 1.0]),
        governor=GovernorConfig(c=1.0, eta_min=1e-10, eta_max=1e-2,
                                eta_bar=1e4, rng_seed=0),
        r_schedule=[(0.0, [r_step])],
        v0=np.zeros(1),
        steps=steps,
        sigma=0.5,
        eta_f_floor=1e-12,
        eta_f_cap=5e-11,
        mode=mode,
        seed=0,
    )
    base.update(kw)
    return ScenarioConfig(**base)


@pytest.fixture(scope="module")
def di_bundle():
    return build_controller(di_scenario())


class TestEtaFRule:
    class _Eq:
        G_x = np.zeros((2, 1))

    def test_direct_evaluation(self):
        # m=10, Q=I, |x|^2 = 1, sigma=0.5 -> 0.05, and 10*0.05 < 1.
        x = np.array([0.6, 0.8])
        out = eta_f_rule(x, np.zeros(1), 10, np.eye(2), self._Eq(), 0.5,
                         1e-12, 1.0)
        assert out == pytest.approx(0.05)
        assert 10 * out < 1.0

    def test_equilibrium_hits_floor(self):
        out = eta_f_rule(np.zeros(2), np.zeros(1), 10, np.eye(2), self._Eq(),
                         0.5, 1e-12, 1.0)
        assert out == 1e-12

    def test_bound_whenever_unclamped(self):
        rng = np.random.default_rng(0)
        Q = np.diag([1.0, 3.0])
        for _ in range(50):
            x = rng.normal(size=2)
            m = int(rng.integers(1, 40))
            out = eta_f_rule(x, np.zeros(1), m, Q, self._Eq(), 0.5,
                             1e-300, 1e300)
            assert m * out < x @ Q @ x or x @ Q @ x == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            di_scenario(sigma=1.5)
        with pytest.raises(ValueError):
            di_scenario(eta_f_floor=1e-6, eta_f_cap=1e-9)


class TestStepClosedLoop:
    def test_equilibrium_fixed_point(self, di_bundle):
        cfg = di_scenario(r_step=0.0)  # r = v0 throughout
        state = _initial_state(di_bundle, cfg, "governed")
        eq = di_bundle.eq_map
        for k in range(3):
            state, log = step_closed_loop(state, di_bundle, cfg, "governed", k)
            assert np.abs(log.u - eq.G_u @ np.zeros(1)).max() <= 1e-9
            assert np.abs(state.x - eq.G_x @ np.zeros(1)).max() <= 1e-9
            assert log.iterations <= 1

    def test_governed_limits_kappa_after_big_change(self, di_bundle):
        # A reference step too large for one-shot feasibility: kappa < 1 at
        # the jump and the loop still solves in few iterations.
        cfg = di_scenario(r_step=1.8)
        state = _initial_state(di_bundle, cfg, "governed")
        state, log = step_closed_loop(state, di_bundle, cfg, "governed", 0)
        assert log.kappa < 1.0
        assert log.constraint_margin >= -1e-9

    def test_ungoverned_needs_more_iterations_on_jump(self, di_bundle):
        cfg = di_scenario(r_step=0.8)
        g_state = _initial_state(di_bundle, cfg, "governed")
        _, g_log = step_closed_loop(g_state, di_bundle, cfg, "governed", 0)
        u_state = _initial_state(di_bundle, cfg, "ungoverned")
        _, u_log = step_closed_loop(u_state, di_bundle, cfg, "ungoverned", 0)
        assert u_log.iterations > g_log.iterations
        assert u_log.kappa == 1.0

    def test_warm_start_recursive_feasibility(self, di_bundle):
        cfg = di_scenario(r_step=0.8, steps=40)
        state = _initial_state(di_bundle, cfg, "governed")
        for k in range(cfg.steps):
            if k > 0:
                ws = make_warm_start(
                    di_bundle.qp, state.mu_prev, state.x_prev, state.x,
                    state.v, state.eta_prev, di_bundle.model,
                    di_bundle.design, di_bundle.eq_map)
                assert ws.s_bar.min() >= -1e-9
            state, _ = step_closed_loop(state, di_bundle, cfg, "governed", k)


class TestRunScenario:
    def test_constant_reference_is_fixed_point(self, di_bundle):
        cfg = di_scenario(r_step=0.0, steps=20)
        log = run_scenario(cfg, bundle=di_bundle)
        eq = di_bundle.eq_map
        for s in log.steps:
            assert np.abs(s.u).max() <= 1e-9
            assert np.abs(s.x - eq.G_x @ np.zeros(1)).max() <= 1e-9
        assert log.summary["settle_step"] == 0
        assert log.summary["max_iterations"] <= 1

    def test_both_modes_track_and_respect_constraints(self, di_bundle):
        cfg = di_scenario(steps=80)
        for mode in ("governed", "ungoverned"):
            log = run_scenario(cfg, bundle=di_bundle, mode=mode)
            assert min(s.constraint_margin for s in log.steps) >= -1e-8
            assert np.abs(log.steps[-1].z[0] - 0.8) < 1e-3
            assert log.summary["settle_step"] is not None

    def test_determinism_excluding_wall_time(self, di_bundle):
        cfg = di_scenario(steps=30)
        a = run_scenario(cfg, bundle=di_bundle)
        b = run_scenario(cfg, bundle=di_bundle)
        for sa, sb in zip(a.steps, b.steps):
            assert np.array_equal(sa.x, sb.x)
            assert np.array_equal(sa.u, sb.u)
            assert np.array_equal(sa.v, sb.v)
            assert sa.kappa == sb.kappa
            assert sa.eta_start == sb.eta_start
            assert sa.eta_end == sb.eta_end
            assert sa.eta_f == sb.eta_f
            assert sa.iterations == sb.iterations
            assert sa.fallback == sb.fallback
            assert sa.constraint_margin == sb.constraint_margin

    def test_summary_recomputable(self, di_bundle):
        cfg = di_scenario(steps=40)
        log = run_scenario(cfg, bundle=di_bundle)
        iters = [s.iterations for s in log.steps]
        assert log.summary["max_iterations"] == max(iters)
        assert log.summary["mean_iterations"] == pytest.approx(np.mean(iters))
        assert log.summary["worst_wall_time"] == max(s.wall_time for s in log.steps)

    def test_suboptimal_cost_descent_constant_v(self, di_bundle):
        # Ungoverned keeps v = r from step 0, so the tracking cost of the
        # applied plans must fall strictly until the state reaches the
        # equilibrium neighborhood.
        cfg = di_scenario(r_step=0.8, steps=60, mode="ungoverned")
        model = di_bundle.model
        design = di_bundle.design
        eq = di_bundle.eq_map
        state = _initial_state(di_bundle, cfg, "ungoverned")
        v = np.array([0.8])
        x_ref = eq.G_x @ v
        u_ref = eq.G_u @ v
        costs = []
        xs = []
        mus = []
        for k in range(cfg.steps):
            state, log = step_closed_loop(state, di_bundle, cfg, "ungoverned", k)
            xs.append(log.x)
            mus.append(state.mu_prev)
        for k in range(len(xs)):
            costs.append(rollout_cost(model.A, model.B, design.Q, design.R,
                                      design.P, xs[k], mus[k], x_ref, u_ref))
        checked = 0
        for k in range(1, len(costs)):
            err = np.sqrt((xs[k] - x_ref) @ design.Q @ (xs[k] - x_ref))
            if err <= 1e-6:
                break
            assert costs[k] < costs[k - 1]
            checked += 1
        assert checked >= 10

    def test_inadmissible_reference_rejected(self):
        cfg = di_scenario(r_step=5.0)
        with pytest.raises(ValueError, match="admissible"):
            build_controller(cfg)


class TestColdStart:
    def test_non_equilibrium_x0_requires_phase1(self, di_bundle):
        cfg = di_scenario(steps=5, x0=np.array([0.5, 0.0]))
        with pytest.raises(ValueError, match="phase-1"):
            run_scenario(cfg, bundle=di_bundle)

    def test_phase1_pass_runs_cold(self, di_bundle):
        cfg = di_scenario(steps=25, x0=np.array([0.5, 0.0]), phase1_check=True)
        log = run_scenario(cfg, bundle=di_bundle)
        assert log.steps[0].fallback
        assert min(s.constraint_margin for s in log.steps) >= -1e-8

    def test_phase1_fail_rejected(self, di_bundle):
        cfg = di_scenario(steps=5, x0=np.array([30.0, 0.0]), phase1_check=True)
        with pytest.raises(ValueError, match="phase-1"):
            run_scenario(cfg, bundle=di_bundle)


class TestBenchmark:
    def test_single_trial_matches_run(self, di_bundle):
        cfg = di_scenario(steps=25)
        out = benchmark(cfg, trials=1)
        assert out["trials"] == 1
        for mode in ("governed", "ungoverned"):
            log = run_scenario(cfg, mode=mode)
            assert out[mode]["max_iterations"] == log.summary["max_iterations"]
            assert out[mode]["mean_iterations"] == pytest.approx(
                log.summary["mean_iterations"])
            assert out[mode]["worst_time_std"] == 0.0
        assert out["iteration_ratio"] == pytest.approx(
            out["governed"]["max_iterations"] / out["ungoverned"]["max_iterations"])

    def test_validation(self):
        with pytest.raises(ValueError):
            benchmark(di_scenario(steps=5), trials=0)


def test_reference_schedule_lookup():
    cfg = di_scenario(r_step=0.7, steps=10)
    cfg.r_schedule.append((1.0, np.array([0.2])))
    assert reference_at(cfg, 0.0)[0] == 0.7
    assert reference_at(cfg, 0.99)[0] == 0.7
    assert reference_at(cfg, 1.0)[0] == 0.2
    assert reference_at(cfg, 5.0)[0] == 0.2
