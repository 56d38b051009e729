"""Command-line harness: ``contact-hj run | verify | example``.

Outputs go to ``<root>/<scenario id>/``. The root is taken from ``--out``,
then ``CONTACT_HJ_OUT``, then the config's ``output.root``. Reports are
deterministic; the wall-clock timestamp lives only in ``manifest.json``.

Exit codes: 0 success, 2 validation error (nothing written), 3 numerical
failure, 4 acceptance-check failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import _io
from . import action as act
from . import checks
from . import scenarios as sc
from . import weakkam as wk
from .action import ActionField, Curve
from .characteristics import DivergenceError, UnreachableError
from .fd_solver import FDBlowUpError, FDParams, solve_cp
from .grid import GridFunction, phi_example, u1_example
from .model import LegendreError
from .semigroup import EvolutionTrace, FixedPointError, SemigroupParams, evolve
from .weakkam import ReachReport

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4
NUMERICAL_ERRORS = (FDBlowUpError, FixedPointError, wk.ConvergenceError, wk.InconsistencyError,
                    wk.ConstructionError, act.UnreachableHorizonError, act.BrokenPointerError,
                    DivergenceError, UnreachableError, LegendreError, FloatingPointError, OverflowError)


# -- plot data ----------------------------------------------------------------

def emit_plot_data(obj, path, series: str | None = None) -> list[Path]:
    """Write ``obj`` as long-format CSV ``(series, t, x, value, masked)`` plus a JSON manifest.

    ``path`` is the CSV path; the manifest sits next to it with suffix
    ``.manifest.json``. A :class:`ReachReport` is written as JSON only.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["series", "t", "x", "value", "masked"]
    name = series or path.stem
    if isinstance(obj, ReachReport):
        out = path.with_suffix(".json")
        _io.write_json(out, _io.sanitize(obj.to_dict()))
        return [out]
    if isinstance(obj, EvolutionTrace):
        nodes = obj.grid.nodes.tolist()
        rows = ((name, float(t), xv, float(v), 0) for t, s in zip(obj.times, obj.slices)
                for xv, v in zip(nodes, s.values.tolist()))
        meta = {"type": "EvolutionTrace", "direction": obj.direction, "n_slices": len(obj.slices), "N": obj.grid.N}
    elif isinstance(obj, ActionField):
        nodes = obj.grid.nodes.tolist()
        rows = ((name, float(t), xv, float(v), int(m)) for t, vals, ms in zip(obj.times, obj.values, obj.masks)
                for xv, v, m in zip(nodes, vals.tolist(), ms.tolist()))
        meta = {"type": "ActionField", "kind": obj.kind, "x0": obj.datum.x0, "u0": obj.datum.u0,
                "n_slices": len(obj.times), "N": obj.grid.N,
                "masked_value": "masked rows carry the scheme's sentinel value; filter on masked == 1"}
    elif isinstance(obj, GridFunction):
        rows = ((name, 0.0, xv, float(v), 0) for xv, v in zip(obj.grid.nodes.tolist(), obj.values.tolist()))
        meta = {"type": "GridFunction", "n_slices": 1, "N": obj.grid.N}
    elif isinstance(obj, Curve):
        rows = ((name, float(t), float(x), float(v), 0) for t, x, v in zip(obj.times, obj.x, obj.v))
        meta = {"type": "Curve", "n_slices": len(obj.times), "value": "velocity"}
    else:
        raise TypeError(f"no plot format for {type(obj).__name__}")
    _io.write_csv(path, header, rows)
    manifest = path.with_name(path.stem + ".manifest.json")
    _io.write_json(manifest, {"csv": path.name, "columns": header, "series": name, **meta})
    return [path, manifest]


# -- scenario runners ------------------------------------------------------------

def semigroup_params(cfg, H, grid) -> SemigroupParams:
    s = cfg["semigroup"]
    kw = {k: s[k] for k in ("n_v", "fp_tol", "fp_max_iter", "refine", "golden_iter", "backend")}
    if s["dt"] is None:
        return SemigroupParams.default(H, grid, v_max=s["v_max"], **kw)
    return SemigroupParams(dt=s["dt"], v_max=s["v_max"], **kw).check(H)


def fd_params(cfg, grid) -> FDParams:
    f = cfg["fd"]
    return FDParams(f["N"] or grid.N, cfl=f["cfl"], alpha=f["alpha"], pad=f["pad"], adaptive=f["adaptive"])


def _distance_series(trace: EvolutionTrace, target: GridFunction) -> dict:
    return {"t": trace.times.tolist(), "sup_distance": trace.sup_distance(target).tolist()}


def run_solve(cfg, out: Path):
    H, grid = sc.hamiltonian(cfg), sc.grid_of(cfg)
    phi = sc.build_datum(cfg, grid, H)
    if cfg["solver"] == "fd":
        p = fd_params(cfg, grid)
        if p.N != grid.N:
            phi = phi.resample(p.grid)
        trace = solve_cp(H, phi, cfg["horizon"], p, stride=cfg["stride"])
    else:
        trace = evolve(H, phi, cfg["horizon"], semigroup_params(cfg, H, grid), cfg["direction"], stride=cfg["stride"])
    files = emit_plot_data(trace, out / "trace.csv", "solution")
    return {"trace": trace.summary()}, files


def run_weakkam(cfg, out: Path):
    H, grid = sc.hamiltonian(cfg), sc.grid_of(cfg)
    params = semigroup_params(cfg, H, grid)
    w = cfg["weakkam"]
    up = wk.compute_u_plus(H, grid, params, route=w["route"], tol=w["tol"], max_steps=w["max_steps"])
    phi = sc.build_datum(cfg, grid, H)
    cls = wk.classify(phi, up)
    report = {"u_plus": {"route": w["route"], "sup_norm": up.sup_norm(), "min": up.min(), "max": up.max()},
              "datum_class": {"label": cls.label, "min_gap": cls.min_gap, "tol_band": cls.tol_band}}
    if cls.label == "A":
        nodes = wk.aubry_set(phi, up)
        report["aubry_set"] = {"n_nodes": int(nodes.size), "x": grid.nodes[nodes].tolist()}
    # long-time behaviour of T^-_t u_+, recorded as is
    tr = evolve(H, up, cfg["horizon"], params, stride=10**9)
    limit = tr.final
    report["T_minus_u_plus"] = {"horizon": cfg["horizon"], "sup_distance_to_u_plus": limit.distance(up),
                                "min_difference": float(np.min(limit.values - up.values))}
    files = emit_plot_data(up, out / "u_plus.csv", "u_plus") + emit_plot_data(phi, out / "datum.csv", "datum")
    files += emit_plot_data(limit, out / "T_minus_u_plus.csv", "T_minus_u_plus")
    return report, files


def run_action(cfg, out: Path):
    H, grid = sc.hamiltonian(cfg), sc.grid_of(cfg)
    a = cfg["action"]
    params = act.action_params(H, grid, cfg["semigroup"]["v_max"], n_v=a["n_v"])
    datum = act.PointDatum.on_grid(grid, a["x0"], a["u0"])
    want_curve = a["backtrack_x"] is not None and a["kind"] == "forward"
    fld = act.compute_fields(H, grid, [datum], a["t_max"], params, a["kind"], record_times=a["record_times"],
                             keep_pointers=want_curve)[0]
    report = {"datum": {"x0": datum.x0, "u0": datum.u0, "index": datum.index}, "kind": a["kind"],
              "params": params.to_dict(), "times": fld.times.tolist(),
              "reachable_fraction": (1.0 - fld.masks.mean(axis=1)).tolist()}
    files = emit_plot_data(fld, out / "field.csv", f"h_{a['kind']}")
    if want_curve:
        curve = act.minimizer_backtrack(fld, a["backtrack_x"], a["t_max"])
        report["curve"] = {"x": a["backtrack_x"], "t": a["t_max"], "value": fld.value(a["backtrack_x"], a["t_max"]),
                           "action_along_curve": act.curve_action(H, curve, datum.u0, a["kind"])}
        files += emit_plot_data(curve, out / "curve.csv", "minimizer")
    return report, files


def _target(cfg, H, grid, params):
    if cfg["target"] == "u_plus":
        return wk.compute_u_plus(H, grid, params)
    return u1_example(grid)


def run_reach(cfg, out: Path):
    H, grid = sc.hamiltonian(cfg), sc.grid_of(cfg)
    params = semigroup_params(cfg, H, grid)
    phi = sc.build_datum(cfg, grid, H)
    target = _target(cfg, H, grid, params)
    trace = evolve(H, phi, cfg["horizon"], params, stride=cfg["stride"])
    rep = wk.measure_reach_time(trace, target, cfg["tolerance"], cfg["target"], cfg["datum"].get("epsilon"))
    files = emit_plot_data(trace, out / "trace.csv", "solution") + emit_plot_data(rep, out / "reach_report")
    return {"reach": rep.to_dict(), "distance": _distance_series(trace, target)}, files


def run_example(cfg, out: Path):
    """Worked example H = -2u + p^2 end to end."""
    if cfg["hamiltonian"]["id"] != "example_quadratic":
        raise sc.ConfigError("the example scenario needs hamiltonian.id = example_quadratic")
    H, grid = sc.hamiltonian(cfg), sc.grid_of(cfg)
    params = semigroup_params(cfg, H, grid)
    eps = cfg["epsilon"]
    up_fp = wk.compute_u_plus(H, grid, params, route="fixed_point")
    up_du = wk.compute_u_plus(H, grid, params, route="duality")
    u1, phi = u1_example(grid), phi_example(grid)
    phi_eps = sc.build_datum(replace_datum(cfg, eps), grid, H)
    nodes = np.flatnonzero(np.isclose(phi_eps.values, u1.values, rtol=0.0, atol=1e-15))
    props = wk.verify_phi_eps_thm1(phi_eps, u1, phi, up_fp, eps, nodes)
    u1_res = wk.fixed_point_residual(H, u1, 1.0, params, "backward")
    u1_res_forward = wk.fixed_point_residual(H, u1, 1.0, params, "forward")
    M0 = wk.M0_over([u1])
    rates = {"K2_printed": H.params.get("K2_example", 4.0), "K2_assumption": H.K2}
    f = wk.f_eps(u1, phi, up_fp, eps)
    # closed form: M0 = 1/8, f = 2 eps^2 / 9, so (M0 + 1) / f = 81 / (16 eps^2)
    closed = {k: math.log(81.0 / (16.0 * eps**2)) / v for k, v in rates.items()}
    measured = {k: math.log((M0 + 1.0 + up_fp.sup_norm()) / f) / v for k, v in rates.items()}
    trace = evolve(H, phi_eps, cfg["horizon"], params, stride=cfg["stride"])
    rep = wk.measure_reach_time(trace, u1, cfg["tolerance"], "u1", eps, t0_analytic=closed["K2_printed"])
    # reach time at twice the scheme's own stationarity error
    floor = 2.0 * u1_res
    tight = wk.measure_reach_time(trace, u1, floor, "u1", eps)
    u1_trace = evolve(H, u1, cfg["horizon"], params, stride=cfg["stride"])
    rep.extra = {"scheme_floor_tol": floor, "t_star_at_scheme_floor": tight.t_star_measured,
                 "t_coincide_with_evolved_u1": wk.coincidence_time(trace, u1_trace),
                 "t0_closed_form_K2_assumption": closed["K2_assumption"],
                 "t0_grid_estimate_K2_printed": measured["K2_printed"],
                 "t0_grid_estimate_K2_assumption": measured["K2_assumption"]}
    report = {
        "epsilon": eps,
        "u_plus": {"sup_norm_fixed_point": up_fp.sup_norm(), "sup_norm_duality": up_du.sup_norm(),
                   "route_gap": up_fp.distance(up_du)},
        "u1": {"backward_residual_t1": u1_res, "forward_residual_t1": u1_res_forward,
               "aubry_set_x": grid.nodes[wk.aubry_set(u1, up_fp)].tolist(),
               "phi_in_A_u1": wk.in_A_u(phi, u1, up_fp)},
        "phi_eps": {"neighbourhood_nodes": int(nodes.size), "properties": props},
        "constants": {"M0": M0, "M0_closed_form": 0.125, "f_eps": f, "f_eps_closed_form": 2 * eps**2 / 9,
                      "K2": rates, "t0_closed_form": closed, "t0_grid_estimate": measured},
        "reach": rep.to_dict(),
        "distance": _distance_series(trace, u1),
        "checks": {"t_star_le_1.66": bool(rep.reached and rep.t_star_measured <= 1.66)},
    }
    files = []
    files += emit_plot_data(trace, out / "trace.csv", "solution")
    files += emit_plot_data(phi_eps, out / "phi_eps.csv", "phi_eps")
    files += emit_plot_data(u1, out / "u1.csv", "u1")
    files += emit_plot_data(up_fp, out / "u_plus.csv", "u_plus")
    files += emit_plot_data(rep, out / "reach_report")
    return report, files


def replace_datum(cfg, eps):
    c = dict(cfg)
    c["datum"] = {**cfg["datum"], "type": "phi_eps_example", "epsilon": eps}
    return c


def run_verify(cfg, out: Path, jobs: int = 1, log=None):
    v = cfg["verify"]
    results = checks.verify(quick=v["quick"], criteria=v["criteria"], convergence=v["convergence"], jobs=jobs, log=log)
    report = {"passed": all(r.passed for r in results), "results": [r.to_dict() for r in results]}
    timings = {f"{r.number}": r.seconds for r in results}
    return report, [], timings


RUNNERS = {"solve": run_solve, "weakkam": run_weakkam, "action": run_action, "reach": run_reach,
           "example": run_example}


# -- driver ----------------------------------------------------------------------

def output_root(cfg, cli_out: str | None) -> Path:
    if cli_out:
        return Path(cli_out)
    env = os.environ.get("CONTACT_HJ_OUT")
    if env:
        return Path(env)
    root = Path(cfg["output"]["root"])
    if not root.is_absolute() and "_base_dir" in cfg:
        root = Path(cfg["_base_dir"]) / root
    return root


def _error(kind: str, exc: BaseException) -> dict:
    return {"error": kind, "type": type(exc).__name__, "message": str(exc)}


def execute(cfg: dict, cli_out: str | None = None, jobs: int = 1, log=print) -> int:
    out = output_root(cfg, cli_out) / cfg["id"]
    public = {k: v for k, v in cfg.items() if not k.startswith("_")}
    timings = {}
    try:
        if cfg["kind"] == "verify":
            report, files, timings = run_verify(cfg, out, jobs, log)
        else:
            report, files = RUNNERS[cfg["kind"]](cfg, out)
    except sc.ConfigError as exc:
        print(json.dumps(_error("validation", exc)), file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        err = _error("numerical", exc)
        _io.write_json(out / "error.json", err)
        print(json.dumps(err), file=sys.stderr)
        return EXIT_NUMERIC
    report = {"scenario": public, **report}
    files = [_io.write_json(out / "report.json", _io.sanitize(report))] + files
    manifest = {"scenario_id": cfg["id"], "kind": cfg["kind"],
                "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
                "files": sorted(str(Path(f).relative_to(out)) for f in files),
                "timings_seconds": timings}
    _io.write_json(out / "manifest.json", manifest)
    if cfg["kind"] == "verify":
        if not report["passed"]:
            print(json.dumps({"error": "acceptance", "failed": [r["number"] for r in report["results"]
                                                                if not r["passed"]]}), file=sys.stderr)
            return EXIT_CHECK
    elif cfg["kind"] == "example" and not all(report["checks"].values()):
        return EXIT_CHECK
    if log is not None:
        log(f"wrote {out}")
    return EXIT_OK


def run(config_path, jobs: int = 1, out: str | None = None) -> int:
    try:
        cfg = sc.load_config(config_path)
    except sc.ConfigError as exc:
        print(json.dumps(_error("validation", exc)), file=sys.stderr)
        return EXIT_CONFIG
    return execute(cfg, out, jobs)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="contact-hj", description="Contact Hamilton-Jacobi laboratory on the circle.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one scenario config")
    r.add_argument("config")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--out")
    v = sub.add_parser("verify", help="run the invariant suite and the acceptance criteria")
    v.add_argument("--quick", action="store_true", help="invariants and a fast subset of criteria")
    v.add_argument("--jobs", type=int, default=1)
    v.add_argument("--out")
    e = sub.add_parser("example", help="worked example H = -2u + p^2 end to end")
    e.add_argument("--epsilon", type=float, default=0.1)
    e.add_argument("--N", type=int, default=None)
    e.add_argument("--out")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return run(args.config, args.jobs, args.out)
    if args.command == "verify":
        raw = {"id": "verify-quick" if args.quick else "verify", "kind": "verify", "verify": {"quick": args.quick}}
        jobs = args.jobs
    else:
        raw = {"id": f"example-eps-{args.epsilon:g}", "kind": "example", "epsilon": args.epsilon}
        if args.N is not None:
            raw["grid"] = {"N": args.N}
        jobs = 1
    try:
        cfg = sc.validate(raw)
    except sc.ConfigError as exc:
        print(json.dumps(_error("validation", exc)), file=sys.stderr)
        return EXIT_CONFIG
    return execute(cfg, args.out, jobs)


if __name__ == "__main__":
    sys.exit(main())
