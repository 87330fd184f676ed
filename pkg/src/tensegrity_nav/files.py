"""On-disk formats: gait text files, primitive-library CSV, scenario and
config JSON, plan CSV, navigation logs, training trajectories, fit reports.

Every writer is deterministic for identical inputs: floats are serialized
with repr (shortest round-trip form), JSON keys are sorted, and wall-clock
quantities are segregated into a separate timing file so the main artifacts
are byte-stable.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import asdict

import numpy as np

from .gaits import (Gait, Primitive, PrimitiveSpec, TargetShape,
                    KIND_FORWARD, KIND_CCW, KIND_CW)
from .geometry import Pose2, Topology, default_topology
from .navigator import NavLog
from .physics import BodyParams, ContactParams, Control, SystemState
from .planner import Plan, Scenario
from .sysid import FitReport, TrainingTrajectory


class FileFormatError(ValueError):
    """A data file failed to parse; the message carries file and location."""


def _f(x) -> str:
    return repr(float(x))


def _require(cond: bool, path: str, where: str, msg: str) -> None:
    if not cond:
        raise FileFormatError(f"{path}: {where}: {msg}")


# -- gait text format ------------------------------------------------------------
#
#   gait <name>
#   cyclic true
#   sides R R R L L L
#   shape 100.0 200.0 200.0 100.0 200.0 200.0     (mm, actuated tendon order)


def write_gait(path: str, gait: Gait, topo: Topology | None = None) -> None:
    topo = topo or default_topology()
    lines = [f"gait {gait.name}", f"cyclic {'true' if gait.cyclic else 'false'}",
             "sides " + " ".join(topo.sides)]
    for shape in gait.shapes:
        lines.append("shape " + " ".join(_f(v * 1000.0) for v in shape.lengths))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_gait(path: str) -> Gait:
    name = None
    cyclic = True
    shapes: list[TargetShape] = []
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, rest = line.partition(" ")
            where = f"line {ln}"
            if key == "gait":
                name = rest.strip()
            elif key == "cyclic":
                _require(rest.strip() in ("true", "false"), path, where,
                         f"cyclic must be true/false, got {rest.strip()!r}")
                cyclic = rest.strip() == "true"
            elif key == "sides":
                pass   # informational; topology defines the authoritative labels
            elif key == "shape":
                vals = rest.split()
                _require(len(vals) == 6, path, where,
                         f"shape needs 6 lengths, got {len(vals)}")
                try:
                    mm = [float(v) for v in vals]
                except ValueError as exc:
                    raise FileFormatError(f"{path}: {where}: {exc}") from exc
                shapes.append(TargetShape(np.asarray(mm) / 1000.0))
            else:
                raise FileFormatError(f"{path}: {where}: unknown key {key!r}")
    _require(name is not None, path, "end of file", "missing 'gait <name>' line")
    _require(len(shapes) >= 1, path, "end of file", "no shapes")
    return Gait(name=name, shapes=tuple(shapes), cyclic=cyclic)


# -- primitive library CSV ---------------------------------------------------------

_LIB_HEADER = ["id", "kind", "left_max_mm", "right_max_mm", "dx_m", "dy_m",
               "dtheta_rad", "cost", "duration_s", "low_confidence", "status"]


def write_primitive_library(path: str, primitives: list[Primitive],
                            failures: list[tuple[PrimitiveSpec, str]] | None = None) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_LIB_HEADER)
    for i, p in enumerate(primitives):
        s = p.spec
        w.writerow([s.id if s else i, s.kind if s else "",
                    s.left_max_mm if s else "", s.right_max_mm if s else "",
                    _f(p.delta.x), _f(p.delta.y), _f(p.delta.theta),
                    _f(p.cost), _f(p.duration),
                    "true" if p.low_confidence else "false", "ok"])
    for s, err in failures or []:
        w.writerow([s.id, s.kind, s.left_max_mm, s.right_max_mm,
                    "", "", "", "", "", "", f"failed: {err}"])
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def read_primitive_library(path: str) -> tuple[list[Primitive],
                                               list[tuple[PrimitiveSpec, str]]]:
    prims: list[Primitive] = []
    failures: list[tuple[PrimitiveSpec, str]] = []
    with open(path) as fh:
        rows = list(csv.reader(fh))
    _require(bool(rows) and rows[0] == _LIB_HEADER, path, "header",
             f"expected columns {_LIB_HEADER}")
    for ln, row in enumerate(rows[1:], start=2):
        where = f"row {ln}"
        _require(len(row) == len(_LIB_HEADER), path, where,
                 f"expected {len(_LIB_HEADER)} fields, got {len(row)}")
        try:
            spec = PrimitiveSpec(id=int(row[0]), kind=row[1],
                                 left_max_mm=int(row[2]), right_max_mm=int(row[3]))
        except (ValueError, TypeError) as exc:
            raise FileFormatError(f"{path}: {where}: bad spec fields: {exc}") from exc
        status = row[10]
        if status == "ok":
            try:
                prims.append(Primitive(
                    spec=spec, delta=Pose2(float(row[4]), float(row[5]), float(row[6])),
                    cost=float(row[7]), duration=float(row[8]),
                    low_confidence=row[9] == "true"))
            except ValueError as exc:
                raise FileFormatError(f"{path}: {where}: {exc}") from exc
        elif status.startswith("failed: "):
            failures.append((spec, status[len("failed: "):]))
        else:
            raise FileFormatError(f"{path}: {where}: bad status {status!r}")
    return prims, failures


# -- scenario JSON ------------------------------------------------------------------


def write_scenario(path: str, sc: Scenario) -> None:
    doc = {"boundary": list(sc.boundary),
           "obstacles": [list(o) for o in sc.obstacles],
           "start": [sc.start.x, sc.start.y, sc.start.theta],
           "goal": list(sc.goal),
           "goal_threshold": sc.goal_threshold,
           "robot_radius": sc.robot_radius}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_scenario(path: str) -> Scenario:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    try:
        return Scenario(boundary=tuple(doc["boundary"]),
                        obstacles=tuple(tuple(o) for o in doc["obstacles"]),
                        start=Pose2(*doc["start"]),
                        goal=tuple(doc["goal"]),
                        goal_threshold=doc.get("goal_threshold", 0.15),
                        robot_radius=doc.get("robot_radius", 0.25))
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: field error: {exc}") from exc


# -- plan CSV ------------------------------------------------------------------------

_PLAN_HEADER = ["step", "primitive_id", "x_m", "y_m", "theta_rad"]


def write_plan_csv(path: str, plan: Plan) -> None:
    with open(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_PLAN_HEADER)
        for i, pose in enumerate(plan.poses):
            pid = "" if i == 0 else plan.primitive_ids[i - 1]
            w.writerow([i, pid, _f(pose.x), _f(pose.y), _f(pose.theta)])


def read_plan_csv(path: str) -> tuple[list[int], list[Pose2]]:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    _require(bool(rows) and rows[0] == _PLAN_HEADER, path, "header",
             f"expected columns {_PLAN_HEADER}")
    ids: list[int] = []
    poses: list[Pose2] = []
    for ln, row in enumerate(rows[1:], start=2):
        _require(len(row) == 5, path, f"row {ln}", "expected 5 fields")
        try:
            if row[1] != "":
                ids.append(int(row[1]))
            poses.append(Pose2(float(row[2]), float(row[3]), float(row[4])))
        except ValueError as exc:
            raise FileFormatError(f"{path}: row {ln}: {exc}") from exc
    return ids, poses


# -- navigation logs -----------------------------------------------------------------

_NAVLOG_HEADER = ["step", "est_x_m", "est_y_m", "est_theta_rad", "primitive_id",
                  "plan_length", "planning_failure", "delta_x_m", "delta_y_m",
                  "delta_theta_rad"]


def write_navlog_csv(path: str, log: NavLog) -> None:
    """Per-step records. Wall-clock planning times deliberately live in the
    timing file (write_timing), keeping this artifact byte-stable."""
    with open(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_NAVLOG_HEADER)
        for s in log.steps:
            w.writerow([s.index, _f(s.estimate.x), _f(s.estimate.y),
                        _f(s.estimate.theta),
                        "" if s.chosen_primitive is None else s.chosen_primitive,
                        s.plan_length, "true" if s.planning_failure else "false",
                        _f(s.executed_delta.x), _f(s.executed_delta.y),
                        _f(s.executed_delta.theta)])


def write_navlog_summary(path: str, log: NavLog) -> None:
    doc = {"outcome": log.outcome, "steps": len(log.steps),
           "planning_failures": sum(1 for s in log.steps if s.planning_failure)}
    if log.deviations:
        doc["final_deviation_m"] = log.deviations[-1]
        doc["max_deviation_m"] = max(log.deviations)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_timing(path: str, log: NavLog) -> None:
    """Wall-clock planning seconds per step plus their mean/median; the one
    navigation artifact that is NOT byte-stable across reruns."""
    times = [s.planning_time for s in log.steps]
    with open(path, "w") as fh:
        for s in log.steps:
            fh.write(f"step {s.index} planning_s {s.planning_time:.6f}\n")
        if times:
            fh.write(f"mean_planning_s {float(np.mean(times)):.6f}\n")
            fh.write(f"median_planning_s {float(np.median(times)):.6f}\n")


# -- training trajectories -----------------------------------------------------------


def topology_hash(topo: Topology) -> str:
    doc = {"rod_length": topo.rod_length, "end_cap_radius": topo.end_cap_radius,
           "rod_count": topo.rod_count, "sides": list(topo.sides),
           "tendons": [asdict(t) for t in topo.tendons]}
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _state_doc(state: SystemState) -> dict:
    return {"pos": state.pos.tolist(), "quat": state.quat.tolist(),
            "lin_vel": state.lin_vel.tolist(), "ang_vel": state.ang_vel.tolist(),
            "rest_lengths": state.rest_lengths.tolist(), "time": state.time}


def _state_from_doc(doc: dict) -> SystemState:
    return SystemState(pos=np.asarray(doc["pos"]), quat=np.asarray(doc["quat"]),
                       lin_vel=np.asarray(doc["lin_vel"]),
                       ang_vel=np.asarray(doc["ang_vel"]),
                       rest_lengths=np.asarray(doc["rest_lengths"]),
                       time=float(doc["time"]))


def write_trajectory(path: str, traj: TrainingTrajectory, bp: BodyParams,
                     theta_true: ContactParams | None = None) -> None:
    header = {"dt": bp.dt, "topology_hash": topology_hash(bp.topology)}
    if theta_true is not None:
        header["theta_true"] = {"mu": theta_true.mu, "epsilon": theta_true.epsilon,
                                "beta": theta_true.beta}
    doc = {"header": header,
           "start_state": _state_doc(traj.start_state),
           "controls": [{"targets": c.targets.tolist(), "duration": d}
                        for c, d in traj.controls],
           "observations": [{"cycle": m, "caps": caps.tolist()}
                            for m, caps in traj.observed_caps],
           "cycle_boundaries": list(traj.cycle_boundaries)}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_trajectory(path: str) -> tuple[TrainingTrajectory, dict]:
    """Returns (trajectory, header). header may carry theta_true."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    try:
        traj = TrainingTrajectory(
            start_state=_state_from_doc(doc["start_state"]),
            controls=[(Control(np.asarray(c["targets"])), float(c["duration"]))
                      for c in doc["controls"]],
            observed_caps=[(int(o["cycle"]), np.asarray(o["caps"]))
                           for o in doc["observations"]],
            cycle_boundaries=[int(b) for b in doc["cycle_boundaries"]])
        return traj, doc["header"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: field error: {exc}") from exc


# -- fit reports ---------------------------------------------------------------------


def write_fit_report(out_dir: str, report: FitReport) -> None:
    """fit_report.txt (key-value), loss_curve.csv, fitted_params.json."""
    os.makedirs(out_dir, exist_ok=True)
    final = report.theta_history[-1] if report.theta_history else None
    with open(os.path.join(out_dir, "fit_report.txt"), "w") as fh:
        fh.write(f"converged {'true' if report.converged else 'false'}\n")
        fh.write(f"iterations {report.iterations}\n")
        if report.loss_history:
            fh.write(f"initial_loss {_f(report.loss_history[0])}\n")
            fh.write(f"final_loss {_f(report.loss_history[-1])}\n")
        if final is not None:
            fh.write(f"mu {_f(final.mu)}\nepsilon {_f(final.epsilon)}\n"
                     f"beta {_f(final.beta)}\n")
        if report.message:
            fh.write(f"message {report.message}\n")
    with open(os.path.join(out_dir, "loss_curve.csv"), "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "mu", "epsilon", "beta", "loss_m2"])
        for i, (th, l) in enumerate(zip(report.theta_history, report.loss_history)):
            w.writerow([i, _f(th.mu), _f(th.epsilon), _f(th.beta), _f(l)])
    if final is not None:
        with open(os.path.join(out_dir, "fitted_params.json"), "w") as fh:
            json.dump({"mu": final.mu, "epsilon": final.epsilon, "beta": final.beta},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_fitted_params(path: str) -> ContactParams:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    try:
        return ContactParams(mu=doc["mu"], epsilon=doc["epsilon"], beta=doc["beta"])
    except (KeyError, ValueError) as exc:
        raise FileFormatError(f"{path}: field error: {exc}") from exc
