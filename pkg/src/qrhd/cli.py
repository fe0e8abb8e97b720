"""Experiment runner: the bundled studies as subcommands.

Subcommands: ``evolve``, ``semiclassical``, ``bound``, ``complexity``,
``geometry-check``.  Configs are JSON; a few experiment configurations ship
as builtins addressable by name (``flat_demo``, ``sphere_demo``,
``study_n5``, ``study_n9``).  All outputs are plain CSV/JSON.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .complexity import (
    ComplexityInputs,
    kinetic_norm_bound,
    measured_sparsity,
    query_count,
)
from .discretize import (
    Grid,
    Schedule,
    assemble_laplace_beltrami,
    quadratic_potential,
    sphere_quadratic_potential,
)
from .errors import NumericError, ParameterError
from .evolve import evolve, init_state
from .geometry import (
    ConstantChart,
    CustomChart,
    FlatChart,
    SphereStereographicChart,
    manifold_hessian,
    quantum_corrections,
)
from .semiclassical import convergence_bound, lambert_w_minus1, run_instance_study

OUT_DIR_ENV = "QRHD_OUT_DIR"
FLOAT_FMT = "%.17g"

_INV_SQRT2 = 0.7071067811865475

BUILTIN_CONFIGS = {
    # two-dimensional quadratic descent, flat metric vs the Hessian metric
    "flat_demo": {
        "experiment": "evolve",
        "mass": 0.1,
        "potential": {"kind": "quadratic", "matrix": [[1.0, -0.9], [-0.9, 1.0]]},
        "charts": [
            {"name": "qhd_flat", "kind": "flat", "dim": 2},
            {"name": "qrhd_metric", "kind": "constant",
             "matrix": [[1.0, -0.9], [-0.9, 1.0]]},
        ],
        "domain": {"lo": [-1.0, -1.0], "hi": [1.0, 1.0]},
        "grid": 128,
        "schedule": {"gamma": 0.25, "eta": 0.1, "t_end": 24.0, "dt": 0.01},
        "initial": {"kind": "random-smooth", "seed": 42, "smooth_length": 0.35},
        "sample_every": 0.1,
        "frame_times": [0.0, 6.0, 12.0, 18.0, 24.0],
        "weyl_correction": False,
    },
    # Rayleigh-quotient descent on the 2-sphere in both stereographic charts
    "sphere_demo": {
        "experiment": "evolve",
        "mass": 1.0,
        "potential": {"kind": "sphere_quadratic",
                      "matrix": [[1.0, 0.0, -_INV_SQRT2],
                                 [0.0, 1.0, -_INV_SQRT2],
                                 [-_INV_SQRT2, -_INV_SQRT2, 1.0]]},
        "charts": [
            {"name": "north_u", "kind": "sphere", "ambient_dim": 3,
             "radius": 1.0, "pole": "north"},
            {"name": "south_v", "kind": "sphere", "ambient_dim": 3,
             "radius": 1.0, "pole": "south"},
        ],
        "domain": {"lo": [-1.0, -1.0], "hi": [1.0, 1.0]},
        "grid": 128,
        "schedule": {"gamma": 0.25, "eta": 1.0, "t_end": 12.0, "dt": 0.01},
        "initial": {"kind": "random-smooth", "seed": 42, "smooth_length": 0.35},
        "sample_every": 0.1,
        "frame_times": [0.0, 3.0, 6.0, 9.0, 12.0],
        "weyl_correction": False,
    },
    "study_n5": {
        "experiment": "semiclassical",
        "dim": 5, "gammas": [0.1, 1.0, 5.0], "instances": 100, "seed": 42,
        "epsilon_star": 0.01, "lambda_eff": 3.0,
        "corrections": False, "log_measure": False,
    },
    "study_n9": {
        "experiment": "semiclassical",
        "dim": 9, "gammas": [0.1, 1.0, 5.0], "instances": 100, "seed": 42,
        "epsilon_star": 0.01, "lambda_eff": 3.0,
        "corrections": False, "log_measure": False,
    },
}


def load_config(spec):
    """Resolve a --config value: builtin name or JSON file path."""
    if spec in BUILTIN_CONFIGS:
        return copy.deepcopy(BUILTIN_CONFIGS[spec]), spec
    path = Path(spec)
    if not path.exists():
        raise ParameterError(f"config {spec!r} is neither a builtin name nor a file")
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"malformed config {spec}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ParameterError("config must be a JSON object")
    return cfg, path.stem


def build_chart(spec, domain=None):
    kind = spec.get("kind")
    box = None
    if domain is not None:
        box = (np.asarray(domain["lo"], dtype=float), np.asarray(domain["hi"], dtype=float))
    if kind == "flat":
        return FlatChart(int(spec["dim"]), domain=box)
    if kind == "constant":
        return ConstantChart(np.asarray(spec["matrix"], dtype=float), domain=box)
    if kind == "sphere":
        return SphereStereographicChart(
            int(spec["ambient_dim"]), float(spec.get("radius", 1.0)),
            pole=spec.get("pole", "south"), domain=box)
    raise ParameterError(f"unknown chart kind {kind!r}")


def build_potential(spec, mass, chart):
    kind = spec.get("kind")
    if kind == "quadratic":
        return quadratic_potential(np.asarray(spec["matrix"], dtype=float), mass)
    if kind == "sphere_quadratic":
        if not isinstance(chart, SphereStereographicChart):
            raise ParameterError("sphere_quadratic potential needs a sphere chart")
        return sphere_quadratic_potential(np.asarray(spec["matrix"], dtype=float), mass, chart)
    raise ParameterError(f"unknown potential kind {kind!r}")


def build_schedule(spec):
    if "gamma" in spec:
        return Schedule.exponential(
            gamma=float(spec["gamma"]), eta=float(spec.get("eta", 1.0)),
            t_end=float(spec["t_end"]), dt=float(spec.get("dt", 0.005)))
    if "a_expr" in spec:
        expr = spec["a_expr"]
        allowed = {"exp": np.exp, "cosh": np.cosh, "sqrt": np.sqrt,
                   "log": np.log, "e": np.e, "pi": np.pi}

        def a_fn(t, _expr=expr, _ns=allowed):
            return float(eval(_expr, {"__builtins__": {}}, dict(_ns, t=t)))

        return Schedule(a=a_fn, eta=float(spec.get("eta", 1.0)), gamma=float(spec.get("gamma", 0.0)),
                        t_end=float(spec["t_end"]), dt=float(spec.get("dt", 0.005)))
    raise ParameterError("schedule needs either 'gamma' or 'a_expr'")


def _resolve_out(args, default_name):
    if args.out:
        return Path(args.out)
    base = os.environ.get(OUT_DIR_ENV, "qrhd_out")
    return Path(base) / default_name


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                (FLOAT_FMT % v) if isinstance(v, float) else str(v) for v in row
            ) + "\n")


def _effective_evolve_config(cfg):
    out = copy.deepcopy(cfg)
    out.setdefault("sample_every", 0.1)
    out.setdefault("frame_times", [])
    out.setdefault("weyl_correction", False)
    init = out.setdefault("initial", {})
    init.setdefault("kind", "random-smooth")
    init.setdefault("seed", 42)
    if init["kind"] == "random-smooth":
        lo = np.asarray(out["domain"]["lo"], dtype=float)
        hi = np.asarray(out["domain"]["hi"], dtype=float)
        init.setdefault("smooth_length", float(np.min(hi - lo) / 16.0))
    out["schedule"].setdefault("dt", 0.005)
    return out


def cmd_evolve(args):
    cfg, name = load_config(args.config)
    if cfg.get("experiment") != "evolve":
        raise ParameterError("config is not an 'evolve' experiment")
    cfg = _effective_evolve_config(cfg)
    if args.seed is not None:
        cfg["initial"]["seed"] = args.seed
    for key in ("charts", "domain", "grid", "schedule", "potential", "mass"):
        if key not in cfg:
            raise ParameterError(f"evolve config missing {key!r}")

    # build everything before creating outputs so bad configs leave no trace
    runs = []
    schedule = build_schedule(cfg["schedule"])
    for chart_spec in cfg["charts"]:
        chart = build_chart(chart_spec, cfg["domain"])
        grid = Grid.for_chart(chart, cfg["grid"])
        potential = build_potential(cfg["potential"], cfg["mass"], chart)
        initial = init_state(
            grid, chart, cfg["initial"]["kind"], seed=cfg["initial"].get("seed"),
            center=cfg["initial"].get("center"), width=cfg["initial"].get("width"),
            smooth_length=cfg["initial"].get("smooth_length"))
        runs.append((chart_spec.get("name", chart_spec["kind"]), chart, grid, potential, initial))

    out_dir = _resolve_out(args, name)
    out_dir.mkdir(parents=True, exist_ok=True)
    t_end = schedule.t_end
    n_samp = max(1, int(round(t_end / cfg["sample_every"])))
    sample_times = [k * t_end / n_samp for k in range(n_samp + 1)]

    summary = {}
    for run_name, chart, grid, potential, initial in runs:
        trace = evolve(chart, grid, potential, schedule, initial,
                       sample_times=sample_times, frame_times=cfg["frame_times"],
                       include_weyl_correction=cfg["weyl_correction"], mass=cfg["mass"])
        rdir = out_dir / run_name
        rdir.mkdir(exist_ok=True)
        dim = grid.dim
        header = ["t"] + [f"x_{i + 1}" for i in range(dim)] + ["norm"]
        _write_csv(rdir / "trace.csv", header, trace.trace_rows())
        for t_frame, density in trace.frames:
            fpath = rdir / f"frame_{t_frame:.6f}.csv"
            np.savetxt(fpath, density, delimiter=",", fmt=FLOAT_FMT)
        summary[run_name] = {
            "final_position": [float(v) for v in trace.positions[-1]],
            "norm_drift": trace.norm_drift(),
            "samples": int(trace.times.size),
        }

    meta = {
        "version": __version__,
        "config_name": name,
        "config": cfg,
        "numba": _kernels.numba_enabled(),
        "results": summary,
    }
    _write_json(out_dir / "metadata.json", meta)
    print(f"evolve: wrote {out_dir}")
    for run_name, info in summary.items():
        print(f"  {run_name}: final <x> = {info['final_position']}, "
              f"norm drift = {info['norm_drift']:.3e}")
    return 0


def cmd_semiclassical(args):
    if args.config:
        cfg, name = load_config(args.config)
        if cfg.get("experiment") != "semiclassical":
            raise ParameterError("config is not a 'semiclassical' experiment")
    else:
        cfg, name = {"experiment": "semiclassical"}, "study"
    if args.dim is not None:
        cfg["dim"] = args.dim
    if args.gammas is not None:
        cfg["gammas"] = [float(g) for g in args.gammas.split(",")]
    if args.instances is not None:
        cfg["instances"] = args.instances
    if args.seed is not None:
        cfg["seed"] = args.seed
    for key in ("dim", "gammas", "instances", "seed"):
        if key not in cfg:
            raise ParameterError(f"semiclassical study missing {key!r}")
    cfg.setdefault("epsilon_star", 0.01)
    cfg.setdefault("lambda_eff", 3.0)
    cfg.setdefault("corrections", False)
    cfg.setdefault("log_measure", False)

    report = run_instance_study(
        cfg["dim"], cfg["gammas"], cfg["instances"], cfg["seed"],
        epsilon_star=cfg["epsilon_star"], lambda_eff=cfg["lambda_eff"],
        corrections=cfg["corrections"], log_measure=cfg["log_measure"])

    out_dir = _resolve_out(args, name)
    (out_dir / "curves").mkdir(parents=True, exist_ok=True)
    rows = []
    for r in report.runs:
        status = "excluded" if r.excluded else (
            "" if r.t_star is None else str(bool(r.satisfied)).lower())
        rows.append((r.instance, r.gamma,
                     "" if r.t_star is None else FLOAT_FMT % r.t_star,
                     r.bound, status))
        _write_csv(out_dir / "curves" / f"{r.instance}_{r.gamma:g}.csv",
                   ["t", "ratio"], zip(r.times.tolist(), r.ratios.tolist()))
    _write_csv(out_dir / "study.csv",
               ["instance", "gamma", "t_star", "bound", "satisfied"], rows)
    _write_json(out_dir / "study.json", {
        "version": __version__,
        "config": cfg,
        "numba": _kernels.numba_enabled(),
        "bound": report.bound,
        "gamma_opt": report.gamma_opt,
        "fraction_satisfied": report.fraction_satisfied,
        "excluded_count": report.excluded_count,
    })
    print(f"semiclassical: wrote {out_dir}")
    print(f"  bound = {report.bound:.6f}, fraction satisfied = "
          f"{report.fraction_satisfied:.4f}, excluded = {report.excluded_count}")
    return 0


def cmd_bound(args):
    if args.lambda_eff <= 0:
        raise ParameterError("lambda_eff must be positive")
    t_bound, gamma_opt = convergence_bound(args.lambda_eff, args.eta, args.mass,
                                           args.epsilon_star)
    print(f"t_bound = {t_bound:.6f}")
    print(f"gamma_opt = {gamma_opt:.6f}")
    return 0


def cmd_complexity(args):
    cfg, name = load_config(args.config)
    if cfg.get("experiment") != "complexity":
        raise ParameterError("config is not a 'complexity' experiment")
    for key in ("charts", "domain", "grid", "mass", "schedule", "potential",
                "epsilon", "delta", "t_star"):
        if key not in cfg:
            raise ParameterError(f"complexity config missing {key!r}")

    eps_star = float(cfg["t_star"].get("epsilon_star", 0.05))
    representation = cfg.get("alpha_representation", "momentum")
    factor = -lambert_w_minus1(-eps_star / np.e) - 1.0
    reports = {}
    for chart_spec in cfg["charts"]:
        cname = chart_spec.get("name", chart_spec["kind"])
        chart = build_chart(chart_spec, cfg["domain"])
        grid = Grid.for_chart(chart, cfg["grid"])
        potential = build_potential(cfg["potential"], cfg["mass"], chart)
        sched_cfg = dict(cfg["schedule"])
        src = cfg["t_star"]["source"]
        if src == "bound":
            lam = cfg["t_star"]["lambda_eff"][cname]
            T, gamma_opt = convergence_bound(lam, sched_cfg.get("eta", 1.0),
                                             cfg["mass"], eps_star)
            gamma_used = gamma_opt
        elif src == "measured":
            T = float(cfg["t_star"]["values"][cname])
            # the T ~ 1/gamma regime of the cost model: match the schedule
            # to the measured time scale
            gamma_used = factor / T
        else:
            raise ParameterError("t_star source must be 'bound' or 'measured'")
        sched = Schedule.exponential(gamma=gamma_used, eta=sched_cfg.get("eta", 1.0),
                                     t_end=max(T, 1e-6), dt=1e-3)
        alpha = kinetic_norm_bound(chart, grid, cfg["mass"], sched,
                                   representation=representation)
        D = assemble_laplace_beltrami(chart, grid)
        v_max = float(np.max(np.abs(potential.node_values(grid))))
        inputs = ComplexityInputs(alpha_h=alpha, v_max=v_max, schedule=sched,
                                  T=T, sparsity=measured_sparsity(D),
                                  epsilon=cfg["epsilon"], delta=cfg["delta"])
        rep = query_count(inputs)
        reports[cname] = dict(rep.to_dict(), t_star_source=src, gamma_used=gamma_used,
                              alpha_representation=representation)

    out = {
        "version": __version__,
        "config": cfg,
        "reports": reports,
    }
    names = list(reports)
    if len(names) == 2:
        out["total_ratio"] = reports[names[1]]["n_query_total"] / reports[names[0]]["n_query_total"]
        out["alpha_ratio"] = reports[names[1]]["alpha_h"] / reports[names[0]]["alpha_h"]
    out_dir = _resolve_out(args, name)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "report.json", out)
    print(f"complexity: wrote {out_dir / 'report.json'}")
    if "total_ratio" in out:
        print(f"  query ratio {names[1]}/{names[0]} = {out['total_ratio']:.4f}")
    return 0


def _geometry_checks(chart):
    rng = np.random.default_rng(1234)
    lo = chart.lo + 0.05 * (chart.hi - chart.lo)
    hi = chart.hi - 0.05 * (chart.hi - chart.lo)
    pts = lo + (hi - lo) * rng.uniform(size=(100, chart.dim))
    checks = []

    worst = 0.0
    for p in pts:
        g = chart.metric_at(p)
        np.linalg.cholesky(g)
        worst = max(worst, float(np.abs(g @ chart.inverse_metric_at(p) - np.eye(chart.dim)).max()))
    checks.append(("metric_inverse_identity", worst, 1e-12))

    worst = 0.0
    for p in pts[:20]:
        gam = chart.christoffel_at(p)
        worst = max(worst, float(np.abs(gam - gam.transpose(0, 2, 1)).max()))
    checks.append(("christoffel_symmetry", worst, 1e-10))

    fd = CustomChart(chart.dim, chart.metric_at, domain=(chart.lo, chart.hi))
    worst = 0.0
    for p in pts[:10]:
        worst = max(worst, float(np.abs(chart.christoffel_at(p) - fd.christoffel_at(p)).max()))
    checks.append(("christoffel_vs_finite_difference", worst, 1e-6))

    ric = np.array([chart.ricci_scalar_at(p) for p in pts])
    if isinstance(chart, SphereStereographicChart):
        spread = float(np.ptp(ric) / max(1.0, np.abs(ric).max()))
        checks.append(("ricci_constancy", spread, 1e-8))
        worst = 0.0
        for p in pts[:5]:
            worst = max(worst, abs(chart.ricci_scalar_at(p) - fd.ricci_scalar_at(p)))
        checks.append(("ricci_vs_finite_difference", worst, 1e-6))
    else:
        checks.append(("ricci_zero", float(np.abs(ric).max()), 1e-10))

    if isinstance(chart, (FlatChart, ConstantChart)):
        worst = 0.0
        for p in pts[:10]:
            dv, dvp = quantum_corrections(chart, p, 1.0)
            worst = max(worst, abs(dv), abs(dvp))
        checks.append(("corrections_vanish", worst, 0.0))
    else:
        worst = 0.0
        for p in pts[:5]:
            dv, dvp = quantum_corrections(chart, p, 1.0)
            fdv, fdvp = quantum_corrections(fd, p, 1.0)
            worst = max(worst, abs(dv - fdv), abs(dvp - fdvp))
        checks.append(("corrections_vs_finite_difference", worst, 1e-6))

    if isinstance(chart, SphereStereographicChart):
        worst_n = worst_rt = 0.0
        for p in pts[:50]:
            x = chart.embed(p)
            worst_n = max(worst_n, abs(x @ x - chart.radius**2))
            worst_rt = max(worst_rt, float(np.abs(chart.project(x) - p).max()))
        checks.append(("embed_norm", worst_n, 1e-12))
        checks.append(("embed_project_roundtrip", worst_rt, 1e-12))

    A = np.diag(np.arange(1.0, chart.dim + 1))
    pot = quadratic_potential(A, 1.0)
    worst = 0.0
    for p in pts[:10]:
        H = manifold_hessian(chart, pot.value_at, p, gradient=pot.gradient_at)
        worst = max(worst, float(np.abs(H - H.T).max()))
    checks.append(("manifold_hessian_symmetry", worst, 1e-10))
    return checks


def cmd_geometry_check(args):
    spec = {"kind": args.kind}
    if args.kind == "flat":
        if args.dim is None:
            raise ParameterError("flat chart needs --dim")
        spec["dim"] = args.dim
    elif args.kind == "constant":
        if not args.matrix:
            raise ParameterError("constant chart needs --matrix")
        spec["matrix"] = json.loads(args.matrix)
    elif args.kind == "sphere":
        if args.dim is None:
            raise ParameterError("sphere chart needs --dim (ambient dimension)")
        spec.update(ambient_dim=args.dim, radius=args.radius, pole=args.pole)
    chart = build_chart(spec)
    checks = _geometry_checks(chart)
    failed = 0
    print(f"{'check':36s} {'worst':>12s} {'tolerance':>10s}  status")
    for cname, worst, tol in checks:
        ok = worst <= tol
        failed += 0 if ok else 1
        print(f"{cname:36s} {worst:12.3e} {tol:10.0e}  {'PASS' if ok else 'FAIL'}")
    if failed:
        raise NumericError(f"{failed} geometry check(s) failed")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="qrhd", description=__doc__)
    parser.add_argument("--threads", type=int, default=None,
                        help="numba thread count for the study kernels")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", help="run a wave-function evolution experiment")
    p.add_argument("--config", required=True, help="builtin name or JSON path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_evolve)

    p = sub.add_parser("semiclassical", help="random-instance convergence study")
    p.add_argument("--config", default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--gammas", default=None, help="comma-separated values")
    p.add_argument("--instances", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_semiclassical)

    p = sub.add_parser("bound", help="damped-oscillator convergence-time bound")
    p.add_argument("epsilon_star", type=float)
    p.add_argument("eta", type=float)
    p.add_argument("mass", type=float)
    p.add_argument("lambda_eff", type=float)
    p.set_defaults(fn=cmd_bound)

    p = sub.add_parser("complexity", help="query-cost report")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_complexity)

    p = sub.add_parser("geometry-check", help="chart invariant table")
    p.add_argument("--kind", required=True, choices=["flat", "constant", "sphere"])
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--pole", choices=["north", "south"], default="south")
    p.add_argument("--matrix", default=None, help="JSON matrix for constant charts")
    p.set_defaults(fn=cmd_geometry_check)

    args = parser.parse_args(argv)
    if args.threads is not None:
        try:
            import numba

            numba.set_num_threads(args.threads)
        except (ImportError, ValueError):
            pass
    try:
        return args.fn(args)
    except ParameterError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except NumericError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc),
                   **({"residual": exc.residual} if getattr(exc, "residual", None) else {})},
                  sys.stderr)
        sys.stderr.write("\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
