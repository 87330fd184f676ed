"""Command-line front end.

Subcommands: gen-synthetic, sysid, build-primitives, plan, navigate.
Exit codes: 0 success, 2 usage error, 3 file parse error, 4 no path found,
5 identification divergence. Set TENSEGRITY_NAV_LOG=debug|info|warning to
control verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import files, gaits, navigator, plots, sysid
from .gaits import PrimitiveSpec, default_specs
from .geometry import Pose2
from .physics import BodyParams, ContactParams
from .planner import NoPath, Scenario, build_heuristic, plan as run_plan

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_NOPATH = 4
EXIT_DIVERGED = 5

log = logging.getLogger("tensegrity_nav")


class UsageError(RuntimeError):
    pass


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise files.FileFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def _body_params(cfg: dict) -> BodyParams:
    return BodyParams(**cfg.get("body", {}))


def _contact_params(cfg: dict, key: str = "contact") -> ContactParams:
    return ContactParams(**cfg.get(key, {}))


def _seeds(cfg: dict, override: int | None) -> dict:
    seeds = {"observer": 0, "executor": 1, "disturbance": 2, "synthetic": 3}
    seeds.update(cfg.get("seeds", {}))
    if override is not None:
        seeds = {"observer": override, "executor": override + 1,
                 "disturbance": override + 2, "synthetic": override + 3}
    return seeds


def _scenario(cfg: dict) -> Scenario:
    if "scenario" in cfg:
        d = cfg["scenario"]
        return Scenario(boundary=tuple(d["boundary"]),
                        obstacles=tuple(tuple(o) for o in d.get("obstacles", [])),
                        start=Pose2(*d["start"]), goal=tuple(d["goal"]),
                        goal_threshold=d.get("goal_threshold", 0.15),
                        robot_radius=d.get("robot_radius", 0.25))
    if "scenario_file" in cfg:
        if not os.path.exists(cfg["scenario_file"]):
            raise UsageError(f"scenario file not found: {cfg['scenario_file']}")
        return files.read_scenario(cfg["scenario_file"])
    raise UsageError("config needs 'scenario' or 'scenario_file'")


def _library(cfg: dict):
    path = cfg.get("library_file")
    if not path:
        raise UsageError("config needs 'library_file'")
    if not os.path.exists(path):
        raise UsageError(f"library file not found: {path}")
    prims, failures = files.read_primitive_library(path)
    if not prims:
        raise UsageError(f"library {path} holds no usable primitives")
    return prims


def _templates(cfg: dict) -> dict | None:
    path = cfg.get("gait_templates_file")
    if path is None:
        return None
    if not os.path.exists(path):
        raise UsageError(f"gait templates file not found: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise files.FileFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def _specs(cfg: dict) -> list[PrimitiveSpec]:
    if "specs" not in cfg:
        return default_specs()
    return [PrimitiveSpec(id=s["id"], kind=s["kind"],
                          left_max_mm=s["left_max_mm"], right_max_mm=s["right_max_mm"])
            for s in cfg["specs"]]


def _shapes_for_spec(spec: PrimitiveSpec, bp: BodyParams,
                     templates: dict | None) -> list[np.ndarray]:
    gait = gaits.make_gait(spec, bp.topology, templates=templates)
    return [s.lengths for s in gait.shapes]


# -- subcommands -------------------------------------------------------------------


def cmd_gen_synthetic(args, cfg: dict) -> int:
    bp = _body_params(cfg)
    theta = _contact_params(cfg, "contact_true") if "contact_true" in cfg \
        else _contact_params(cfg)
    syn = cfg.get("synthetic", {})
    spec_ids = syn.get("spec_ids", [0])
    cycles = syn.get("cycles", 2)
    shape_duration = syn.get("shape_duration", 1.5)
    noise = syn.get("noise_sigma", 0.002)
    seeds = _seeds(cfg, args.seed)
    templates = _templates(cfg)
    byid = {s.id: s for s in default_specs()}

    os.makedirs(args.out, exist_ok=True)
    start = gaits.settle_rest_state(theta, bp)
    for i, sid in enumerate(spec_ids):
        if sid not in byid:
            raise UsageError(f"unknown spec id {sid}")
        shapes = _shapes_for_spec(byid[sid], bp, templates)
        traj = sysid.generate_synthetic(theta, bp, shapes, shape_duration,
                                        cycles, start, noise_sigma=noise,
                                        seed=seeds["synthetic"] + i)
        out = os.path.join(args.out, f"traj_{i:03d}.json")
        files.write_trajectory(out, traj, bp, theta_true=theta)
        log.info("wrote %s", out)
    print(f"wrote {len(spec_ids)} trajectory file(s) to {args.out}")
    return EXIT_OK


def cmd_sysid(args, cfg: dict) -> int:
    if not args.data:
        raise UsageError("sysid needs at least one trajectory file")
    bp = _body_params(cfg)
    trajs = []
    for path in args.data:
        if not os.path.exists(path):
            raise UsageError(f"trajectory file not found: {path}")
        traj, _header = files.read_trajectory(path)
        trajs.append(traj)
    fit_cfg = cfg.get("sysid", {})
    theta0 = ContactParams(**fit_cfg.get("theta0", {})) if "theta0" in fit_cfg \
        else _contact_params(cfg)
    report = sysid.fit(theta0, trajs, alpha=fit_cfg.get("alpha", 0.05),
                       max_iters=fit_cfg.get("max_iters", 60), bp=bp)
    os.makedirs(args.out, exist_ok=True)
    files.write_fit_report(args.out, report)
    if args.plot:
        plots.plot_loss_curve(os.path.join(args.out, "loss_curve.svg"), report)
    final = report.theta_history[-1]
    print(f"fit: converged={report.converged} iterations={report.iterations} "
          f"loss {report.loss_history[0]:.3e} -> {report.loss_history[-1]:.3e} "
          f"mu={final.mu:.4f} epsilon={final.epsilon:.4f} beta={final.beta:.4f}")
    if not report.loss_history or not np.isfinite(report.loss_history[-1]) \
            or "diverged" in report.message or "not finite" in report.message:
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_build_primitives(args, cfg: dict) -> int:
    bp = _body_params(cfg)
    cp = _contact_params(cfg)
    if cfg.get("fitted_params_file"):
        if not os.path.exists(cfg["fitted_params_file"]):
            raise UsageError(f"fitted params file not found: {cfg['fitted_params_file']}")
        fitted = files.read_fitted_params(cfg["fitted_params_file"])
        cp = dataclasses.replace(cp, mu=fitted.mu, epsilon=fitted.epsilon,
                                 beta=fitted.beta)
    specs = _specs(cfg)
    templates = _templates(cfg)
    os.makedirs(args.out, exist_ok=True)
    out = os.path.join(args.out, "library.csv")

    rest = gaits.settle_rest_state(cp, bp)
    prims, failures = [], []
    for spec in specs:
        gait = gaits.make_gait(spec, bp.topology, templates=templates)
        try:
            prim, _ = gaits.simulate_primitive(gait, cfg.get("cycles", 3), cp, bp,
                                               spec=spec, start_state=rest)
            prims.append(prim)
        except Exception as exc:  # noqa: BLE001 -- recorded per spec
            failures.append((spec, f"{type(exc).__name__}: {exc}"))
    files.write_primitive_library(out, prims, failures)
    print(f"built {len(prims)} primitive(s), {len(failures)} failure(s) -> {out}")
    return EXIT_OK


def cmd_plan(args, cfg: dict) -> int:
    sc = _scenario(cfg)
    prims = _library(cfg)
    pcfg = cfg.get("planner", {})
    os.makedirs(args.out, exist_ok=True)
    try:
        result = run_plan(sc, prims,
                          prune_radius=pcfg.get("prune_radius", 0.05),
                          max_expansions=pcfg.get("max_expansions", 200_000),
                          theta_weight=pcfg.get("theta_weight", 0.1),
                          cell=pcfg.get("cell", 0.05))
    except NoPath as exc:
        print(f"planning failed: {exc}", file=sys.stderr)
        return EXIT_NOPATH
    out = os.path.join(args.out, "plan.csv")
    files.write_plan_csv(out, result)
    if args.plot:
        plots.plot_plan(os.path.join(args.out, "plan.svg"), sc, result)
    print(f"plan: {len(result)} primitives, cost {result.total_cost:.3f}, "
          f"{result.expansions} expansions -> {out}")
    return EXIT_OK


def cmd_navigate(args, cfg: dict) -> int:
    sc = _scenario(cfg)
    prims = _library(cfg)
    seeds = _seeds(cfg, args.seed)
    ocfg = dict(cfg.get("observer", {}))
    ecfg = dict(cfg.get("executor", {}))
    dcfg = dict(cfg.get("disturbance", {}))
    observer = navigator.Observer(**{**ocfg, "seed": seeds["observer"]})
    if ecfg.get("mode") == navigator.EXEC_PHYSICS:
        ecfg["true_contact"] = _contact_params(cfg, "contact_true") \
            if "contact_true" in cfg else _contact_params(cfg)
        ecfg["body"] = _body_params(cfg)
    executor = navigator.Executor(**{**ecfg, "seed": seeds["executor"]})
    disturbance = None
    if dcfg and dcfg.get("kind", navigator.DIST_NONE) != navigator.DIST_NONE:
        if "region" in dcfg:
            dcfg["region"] = tuple(dcfg["region"])
        if "downhill" in dcfg:
            dcfg["downhill"] = tuple(dcfg["downhill"])
        disturbance = navigator.Disturbance(**{**dcfg, "seed": seeds["disturbance"]})

    pcfg = cfg.get("planner", {})
    closed = cfg.get("closed_loop", True)
    step_limit = cfg.get("step_limit", 60)
    trials = args.trials if args.trials is not None else cfg.get("trials", 1)
    os.makedirs(args.out, exist_ok=True)

    if trials == 1:
        if closed:
            nl = navigator.run_closed_loop(sc, prims, observer, executor, disturbance,
                                           step_limit=step_limit,
                                           prune_radius=pcfg.get("prune_radius", 0.05),
                                           max_expansions=pcfg.get("max_expansions", 200_000))
        else:
            try:
                nl = navigator.run_open_loop(sc, prims, executor, disturbance,
                                             prune_radius=pcfg.get("prune_radius", 0.05),
                                             max_expansions=pcfg.get("max_expansions", 200_000))
            except NoPath as exc:
                print(f"planning failed: {exc}", file=sys.stderr)
                return EXIT_NOPATH
        files.write_navlog_csv(os.path.join(args.out, "navlog.csv"), nl)
        files.write_navlog_summary(os.path.join(args.out, "navlog_summary.json"), nl)
        files.write_timing(os.path.join(args.out, "timing.txt"), nl)
        if args.plot:
            plots.plot_navlog(os.path.join(args.out, "navigate.svg"), sc, nl)
        print(f"navigate: {nl.outcome} in {len(nl.steps)} step(s)")
        return EXIT_OK

    batch = navigator.run_batch(sc, prims, observer, executor, disturbance,
                                trials=trials, closed=closed, step_limit=step_limit,
                                prune_radius=pcfg.get("prune_radius", 0.05),
                                max_expansions=pcfg.get("max_expansions", 200_000))
    for i, nl in enumerate(batch.logs):
        files.write_navlog_csv(os.path.join(args.out, f"navlog_{i:03d}.csv"), nl)
    summary = {"trials": trials, "success_rate": batch.success_rate,
               "mean_steps": batch.mean_steps,
               "outcomes": {o: sum(1 for l in batch.logs if l.outcome == o)
                            for o in sorted({l.outcome for l in batch.logs})}}
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(args.out, "timing.txt"), "w") as fh:
        fh.write(f"mean_planning_s {batch.mean_planning_time:.6f}\n")
        fh.write(f"median_planning_s {batch.median_planning_time:.6f}\n")
    if args.plot and batch.logs:
        plots.plot_navlog(os.path.join(args.out, "navigate.svg"), sc, batch.logs[0])
    print(f"navigate: {trials} trials, success rate {batch.success_rate:.2f}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tensegrity-nav",
                                description="Tensegrity robot simulation, "
                                            "identification, and navigation")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, help="override all seeds")
    p.add_argument("--trials", type=int, help="Monte-Carlo trial count")
    p.add_argument("--plot", action="store_true", help="emit SVG figures")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-synthetic", help="simulate training trajectories")
    ps = sub.add_parser("sysid", help="fit contact parameters")
    ps.add_argument("data", nargs="*", help="trajectory JSON files")
    sub.add_parser("build-primitives", help="compile the primitive library")
    sub.add_parser("plan", help="plan a route once")
    sub.add_parser("navigate", help="run open/closed loop navigation")
    return p


_COMMANDS = {"gen-synthetic": cmd_gen_synthetic, "sysid": cmd_sysid,
             "build-primitives": cmd_build_primitives, "plan": cmd_plan,
             "navigate": cmd_navigate}


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("TENSEGRITY_NAV_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return _COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except files.FileFormatError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except sysid.DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
