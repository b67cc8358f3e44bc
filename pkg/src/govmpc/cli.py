"""Command-line entry point: scenario execution and result emission.

``govmpc run --config <path> --out <dir> [--mode governed|ungoverned|both]
[--trials N] [--seed S] [--phase1-check]`` writes, per mode, ``steps.csv``,
``summary.json``, and SVG plots into ``<dir>/<mode>/``, plus a top-level
``manifest.json`` with content hashes of every emitted file.

``govmpc bench-backends`` times each compute kernel on a demo-sized problem
under the compiled backend (when built) and the pure-Python fallback.
"""

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import _backend, _kernels_py
from ._svg import line_chart
from .governor import GovernorConfig
from .mpc_setup import reference_admissible
from .simulate import (
    MODES,
    ScenarioConfig,
    SimulationLog,
    benchmark,
    build_controller,
    reference_at,
    run_scenario,
)


@dataclass
class RunManifest:
    config: str
    out_dir: str
    modes: list
    seed: int
    files: list  # [{"path": ..., "sha256": ...}]


class ConfigError(ValueError):
    pass


def _matrix(cfg, key, ctx=""):
    where = f"{ctx}{key}"
    if key not in cfg:
        raise ConfigError(f"missing field '{where}'")
    try:
        out = np.array(cfg[key], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"field '{where}' is not a numeric array") from None
    if out.ndim not in (1, 2):
        raise ConfigError(f"field '{where}' must be a vector or matrix")
    return out


def _check_pd(Mx, name):
    Mx = np.atleast_2d(Mx)
    if Mx.shape[0] != Mx.shape[1]:
        raise ConfigError(f"'{name}' must be square")
    if np.abs(Mx - Mx.T).max() > 1e-12 * max(1.0, np.abs(Mx).max()):
        raise ConfigError(f"'{name}' must be symmetric")
    if np.linalg.eigvalsh(Mx).min() <= 0.0:
        raise ConfigError(f"'{name}' must be positive definite")


def parse_config(path) -> ScenarioConfig:
    """Load and validate a scenario description.

    Field-level errors raise ``ConfigError`` with the offending key; deeper
    invariants (reference admissibility, weight positivity) are checked here
    too so a bad file fails before any heavy construction starts.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None

    if "plant" not in raw:
        raise ConfigError("missing field 'plant'")
    plant = raw["plant"]
    A = _matrix(plant, "A", "plant.")
    B = np.atleast_2d(_matrix(plant, "B", "plant."))
    C = np.atleast_2d(_matrix(plant, "C", "plant."))
    D = np.atleast_2d(_matrix(plant, "D", "plant."))
    E = np.atleast_2d(_matrix(plant, "E", "plant."))
    F = np.atleast_2d(_matrix(plant, "F", "plant."))
    continuous = bool(plant.get("continuous", False))

    for key in ("sample_period", "horizon", "steps"):
        if key not in raw:
            raise ConfigError(f"missing field '{key}'")
    Q = np.atleast_2d(_matrix(raw, "Q"))
    R = np.atleast_2d(_matrix(raw, "R"))
    _check_pd(Q, "Q")
    _check_pd(R, "R")

    if "constraints" not in raw:
        raise ConfigError("missing field 'constraints'")
    Y = np.atleast_2d(_matrix(raw["constraints"], "Y", "constraints."))
    h = _matrix(raw["constraints"], "h", "constraints.").ravel()
    if h.min() <= 0.0:
        raise ConfigError("'constraints.h' must be strictly positive")

    gov_raw = dict(raw.get("governor", {}))
    seed = int(raw.get("seed", 0))
    gov_raw.setdefault("rng_seed", seed)
    if "sample_etas" in gov_raw:
        gov_raw["sample_etas"] = tuple(gov_raw["sample_etas"])
    if "sample_kappas" in gov_raw:
        gov_raw["sample_kappas"] = tuple(gov_raw["sample_kappas"])
    try:
        governor = GovernorConfig(**gov_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'governor' section: {exc}") from None

    eta_f = raw.get("eta_f", {})
    schedule = []
    for i, entry in enumerate(raw.get("reference_schedule", [])):
        if (not isinstance(entry, (list, tuple))) or len(entry) != 2:
            raise ConfigError(
                f"'reference_schedule[{i}]' must be a [time, r] pair")
        schedule.append((float(entry[0]),
                         np.asarray(entry[1], dtype=float).ravel()))
    schedule.sort(key=lambda e: e[0])

    x0 = raw.get("x0")
    try:
        cfg = ScenarioConfig(
            A=A, B=B, C=C, D=D, E=E, F=F, continuous=continuous,
            T=float(raw["sample_period"]), N=int(raw["horizon"]),
            Q=Q, R=R, Y=Y, h=h, governor=governor,
            r_schedule=schedule,
            v0=np.asarray(raw.get("v0", np.zeros(E.shape[0])), dtype=float).ravel(),
            x0=None if x0 is None else np.asarray(x0, dtype=float).ravel(),
            steps=int(raw["steps"]),
            sigma=float(eta_f.get("sigma", 0.5)),
            eta_f_floor=float(eta_f.get("floor", 1e-12)),
            eta_f_cap=float(eta_f.get("cap", 1e-6)),
            mode=str(raw.get("mode", "governed")),
            seed=seed,
            terminal_epsilon=float(raw.get("terminal_epsilon", 1e-6)),
            k_max=int(raw.get("k_max", 500)),
            phase1_check=bool(raw.get("phase1_check", False)),
            settle_tol=float(raw.get("settle_tol", 1e-3)),
            name=str(raw.get("name", path.stem)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    # Admissibility of every scheduled reference, checked against the cheap
    # part of the construction (discretization + equilibrium basis).
    from .mpc_setup import PlantModel, equilibrium_basis, discretize, ConstraintPolyhedron
    if continuous:
        Ad, Bd = discretize(A, B, cfg.T)
    else:
        Ad, Bd = A, B
    model = PlantModel(Ad, Bd, C, D, E, F)
    eq_map = equilibrium_basis(model)
    cons = ConstraintPolyhedron(Y, h)
    for t_r, r in schedule:
        if not reference_admissible(r, eq_map, cons):
            raise ConfigError(
                f"reference_schedule entry at t={t_r}: r={r.tolist()} is not "
                "strictly inside the admissible reference set")
    if not reference_admissible(cfg.v0, eq_map, cons):
        raise ConfigError("'v0' is not strictly inside the admissible reference set")
    return cfg


# CSV layout: fixed column order, floats at 17 significant digits.
def _csv_header(n, n_u, n_z, n_v):
    cols = ["k", "t"]
    cols += [f"x{i}" for i in range(n)]
    cols += [f"u{i}" for i in range(n_u)]
    cols += [f"z{i}" for i in range(n_z)]
    cols += [f"v{i}" for i in range(n_v)]
    cols += ["kappa", "eta_start", "eta_end", "eta_f", "iterations",
             "fallback", "constraint_margin", "wall_time_us"]
    return cols


def _g17(v):
    return f"{v:.17g}"


def write_steps_csv(path, log: SimulationLog):
    first = log.steps[0]
    cols = _csv_header(first.x.size, first.u.size, first.z.size, first.v.size)
    lines = [",".join(cols)]
    for s in log.steps:
        row = [str(s.k), _g17(s.t)]
        row += [_g17(val) for val in s.x]
        row += [_g17(val) for val in s.u]
        row += [_g17(val) for val in s.z]
        row += [_g17(val) for val in s.v]
        row += [_g17(s.kappa), _g17(s.eta_start), _g17(s.eta_end),
                _g17(s.eta_f), str(s.iterations), str(int(s.fallback)),
                _g17(s.constraint_margin), _g17(s.wall_time * 1e6)]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_steps_csv(path):
    """Parse an emitted steps.csv back into a list of per-step dicts."""
    lines = Path(path).read_text().strip().split("\n")
    cols = lines[0].split(",")
    out = []
    for line in lines[1:]:
        vals = line.split(",")
        rec = {}
        for c, v in zip(cols, vals):
            if c in ("k", "iterations", "fallback"):
                rec[c] = int(v)
            else:
                rec[c] = float(v)
        out.append(rec)
    return out


def _summary_json(log: SimulationLog, cfg: ScenarioConfig, bench=None):
    data = {
        "mode": log.mode,
        "steps": len(log.steps),
        "max_iterations": log.summary["max_iterations"],
        "mean_iterations": log.summary["mean_iterations"],
        "settle_step": log.summary["settle_step"],
        "worst_wall_time_us": log.summary["worst_wall_time"] * 1e6,
    }
    if bench is not None:
        data["trials"] = bench["trials"]
        data["worst_time_mean_us"] = bench[log.mode]["worst_time_mean"] * 1e6
        data["worst_time_std_us"] = bench[log.mode]["worst_time_std"] * 1e6
    return data


def _input_bounds(cfg: ScenarioConfig):
    """Pure-input constraint levels, for plot guide lines only."""
    YC = cfg.Y @ np.atleast_2d(cfg.C)
    YD = cfg.Y @ np.atleast_2d(cfg.D)
    bounds = []
    for i in range(cfg.Y.shape[0]):
        if np.abs(YC[i]).max() < 1e-12:
            nz = np.nonzero(np.abs(YD[i]) > 1e-12)[0]
            if nz.size == 1:
                bounds.append(cfg.h[i] / YD[i, nz[0]])
    return bounds


def write_plots(out_dir, log: SimulationLog, cfg: ScenarioConfig):
    ts = [s.t for s in log.steps]
    files = []
    n_z = log.steps[0].z.size
    series = []
    for j in range(n_z):
        series.append((f"z{j}", ts, [s.z[j] for s in log.steps], False))
        series.append((f"target r{j}", ts,
                       [reference_at(cfg, s.t)[j] for s in log.steps], True))
    p = Path(out_dir) / "tracking.svg"
    line_chart(p, f"Tracking output ({log.mode})", "time [s]", "z", series)
    files.append(p)

    n_u = log.steps[0].u.size
    series = [(f"u{j}", ts, [s.u[j] for s in log.steps], False)
              for j in range(n_u)]
    p = Path(out_dir) / "input.svg"
    line_chart(p, f"Control input ({log.mode})", "time [s]", "u", series,
               hlines=_input_bounds(cfg))
    files.append(p)

    p = Path(out_dir) / "iterations.svg"
    line_chart(p, f"Solver iterations per step ({log.mode})", "time [s]",
               "iterations", [("iterations", ts,
                               [float(s.iterations) for s in log.steps], False)])
    files.append(p)
    return files


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_run(args):
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed,
                      governor=replace(cfg.governor, rng_seed=args.seed))
    if args.phase1_check:
        cfg = replace(cfg, phase1_check=True)
    modes = list(MODES) if args.mode == "both" else [args.mode]

    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    bundle = build_controller(cfg)
    bench = benchmark(cfg, args.trials) if args.trials else None

    emitted = []
    for mode in modes:
        log = run_scenario(cfg, bundle=bundle, mode=mode)
        mode_dir = out_root / mode
        mode_dir.mkdir(parents=True, exist_ok=True)
        csv_path = mode_dir / "steps.csv"
        write_steps_csv(csv_path, log)
        emitted.append(csv_path)
        summary_path = mode_dir / "summary.json"
        summary_path.write_text(
            json.dumps(_summary_json(log, cfg, bench), indent=2) + "\n")
        emitted.append(summary_path)
        emitted.extend(write_plots(mode_dir, log, cfg))
        print(f"{mode}: max_iterations={log.summary['max_iterations']} "
              f"mean={log.summary['mean_iterations']:.3f} "
              f"settle_step={log.summary['settle_step']}")
        if bench is not None:
            mb = bench[mode]
            print(f"  worst-case time over {bench['trials']} trials: "
                  f"{mb['worst_time_mean'] * 1e3:.3f} ms "
                  f"+/- {mb['worst_time_std'] * 1e3:.3f} ms")

    manifest = RunManifest(
        config=str(args.config), out_dir=str(out_root), modes=modes,
        seed=cfg.seed,
        files=[{"path": str(p.relative_to(out_root)), "sha256": _sha256(p)}
               for p in emitted],
    )
    (out_root / "manifest.json").write_text(
        json.dumps(asdict(manifest), indent=2) + "\n")
    return 0


def _bench_kernels(impl, qp_data, repeats):
    H, c, A, b = qp_data
    m = A.shape[0]
    rng = np.random.default_rng(0)
    gamma = rng.normal(size=m)
    out = {}
    t0 = time.perf_counter()
    for _ in range(repeats):
        impl.eta_line_parts(H, c, A, b, gamma, 30.0)
    out["eta_line_parts"] = (time.perf_counter() - t0) / repeats
    t0 = time.perf_counter()
    for _ in range(repeats):
        impl.longstep_loop(H, c, A, b, np.zeros(m), 1.0, 1e-8, 200, 30.0)
    out["longstep"] = (time.perf_counter() - t0) / repeats
    etas = [1.0, 1.0, 0.25]
    cs = [c, c, c]
    bs = [b, b, b]
    t0 = time.perf_counter()
    for _ in range(repeats):
        impl.newton_batch(H, A, gamma, etas, cs, bs, 30.0)
    out["newton_batch"] = (time.perf_counter() - t0) / repeats
    alpha = rng.normal(size=2 * m)
    beta = rng.normal(size=2 * m)
    delta = np.abs(rng.normal(size=2 * m)) + 0.1
    order = rng.permutation(2 * m)
    t0 = time.perf_counter()
    for _ in range(repeats):
        impl.seidel_lp(alpha, beta, delta, order, 1.0, 1e-5, 0.1)
    out["seidel_lp"] = (time.perf_counter() - t0) / repeats
    return out


def cmd_bench_backends(args):
    """Time each kernel on a demo-sized problem under both backends."""
    rng = np.random.default_rng(42)
    p_dim, m = 10, 250
    G = rng.normal(size=(p_dim, p_dim))
    H = G.T @ G + np.eye(p_dim)
    A = rng.normal(size=(m, p_dim))
    z0 = rng.normal(size=p_dim)
    b = (0.1 + rng.random(m)) - A @ z0
    c = rng.normal(size=p_dim)
    qp_data = (H, c, A, b)

    results = {"python": _bench_kernels(_kernels_py, qp_data, args.repeats)}
    if _backend.COMPILED:
        from . import _core
        results["compiled"] = _bench_kernels(_core, qp_data, args.repeats)
    else:
        print("compiled backend not built; timing pure-Python only")

    names = sorted(results["python"])
    print(f"{'kernel':<16} " + " ".join(f"{k:>14}" for k in results) +
          ("        speedup" if "compiled" in results else ""))
    for name in names:
        row = f"{name:<16} "
        row += " ".join(f"{results[k][name] * 1e6:>11.1f} us" for k in results)
        if "compiled" in results:
            row += f"   {results['python'][name] / results['compiled'][name]:>10.1f}x"
        print(row)
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(
            {k: {n: v for n, v in d.items()} for k, d in results.items()},
            indent=2) + "\n")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="govmpc",
        description="Reference-tracking MPC with a computational governor")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a closed-loop scenario")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--mode", choices=["governed", "ungoverned", "both"],
                       default="both")
    p_run.add_argument("--trials", type=int, default=0,
                       help="also benchmark with this many repetitions")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--phase1-check", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench-backends",
                             help="compare compiled and pure-Python kernels")
    p_bench.add_argument("--repeats", type=int, default=200)
    p_bench.add_argument("--json-out", default=None)
    p_bench.set_defaults(func=cmd_bench_backends)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
