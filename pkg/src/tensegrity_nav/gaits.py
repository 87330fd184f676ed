"""Shape-sequence gaits, the PID tendon scheduler, and motion primitives.

A gait is a cyclic sequence of target shapes (six actuated tendon lengths).
The scheduler PID-tracks each shape, advancing when every tendon is within
tolerance or a per-shape timeout fires; simulating a gait for a few cycles
from the canonical rest state and measuring the per-cycle planar displacement
yields a motion primitive for the planner.

Gait templates (which tendons contract in each phase) ship as a JSON data
file so they can be replaced without touching code.
"""

from __future__ import annotations

import dataclasses
import importlib.resources
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (Pose2, Topology, default_topology, extract_pose2,
                       quat_from_axis_angle, quat_mul, quat_normalize,
                       se2_between, se2_inverse, transform_state_se2,
                       end_cap_positions)
from .physics import (BodyParams, ContactParams, Control, SystemState,
                      Trajectory, kinetic_energy, step)

MIN_LENGTH = 0.10
MAX_LENGTH = 0.30
NEUTRAL_LENGTH = 0.20

KIND_FORWARD = "ForwardRoll"
KIND_CCW = "Counterclockwise"
KIND_CW = "Clockwise"

ORIENT_IDENTITY = "identity"
ORIENT_MIRROR = "mirror"

# Actuated-tendon pairs swapped by the mirror symmetry (right_i <-> left_j),
# chosen from the settled rest geometry: reflecting the rest state about the
# heading axis maps each right-triangle tendon onto the left-triangle tendon
# it faces. See the library symmetry checks in the tests.
MIRROR_PAIRS = ((0, 3), (1, 4), (2, 5))

SETTLE_KE_THRESHOLD = 1e-5   # J
SETTLE_HOLD = 0.5            # s of continuous quiet
SETTLE_LIMIT = 30.0          # s


class SettleError(RuntimeError):
    """The structure failed to come to rest within the time limit."""


@dataclass(frozen=True, eq=False)
class TargetShape:
    """Six actuated tendon target lengths, meters."""

    lengths: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.lengths, dtype=float)
        object.__setattr__(self, "lengths", v)
        if v.shape != (6,):
            raise ValueError(f"expected 6 target lengths, got shape {v.shape}")
        if np.any(v < MIN_LENGTH - 1e-12) or np.any(v > MAX_LENGTH + 1e-12):
            raise ValueError(f"targets must lie in [{MIN_LENGTH}, {MAX_LENGTH}] m: {v}")


@dataclass(frozen=True, eq=False)
class Gait:
    name: str
    shapes: tuple[TargetShape, ...]
    cyclic: bool = True

    def __post_init__(self):
        if not self.shapes:
            raise ValueError("gait needs at least one shape")


@dataclass(frozen=True)
class PidGains:
    # the plant is an integrator (rates accumulate into rest lengths), so
    # proportional-only control already has zero steady-state error; integral
    # action just overshoots
    kp: float = 5.0
    ki: float = 0.0
    kd: float = 0.0
    integral_clamp: float = 0.05
    tol: float = 2e-3       # per-tendon convergence tolerance, m
    timeout: float = 5.0    # per-shape dwell limit, s

    def __post_init__(self):
        if min(self.kp, self.integral_clamp, self.tol, self.timeout) <= 0 or self.ki < 0 or self.kd < 0:
            raise ValueError("bad PID gains")


@dataclass
class PidState:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(6))
    prev_err: np.ndarray | None = None

    def reset(self):
        self.integral[:] = 0.0
        self.prev_err = None


def pid_rate(measured, target, pid_state: PidState, gains: PidGains, dt: float,
             rate_limit: float = 0.1) -> np.ndarray:
    """Rest-length rates (m/s) tracking tendon-length targets, clamped to
    +/- rate_limit. Integral is clamped for anti-windup."""
    err = np.asarray(target, dtype=float) - np.asarray(measured, dtype=float)
    pid_state.integral = np.clip(pid_state.integral + err * dt,
                                 -gains.integral_clamp, gains.integral_clamp)
    if gains.kd > 0.0 and pid_state.prev_err is not None:
        deriv = (err - pid_state.prev_err) / dt
    else:
        deriv = np.zeros_like(err)
    pid_state.prev_err = err
    rate = gains.kp * err + gains.ki * pid_state.integral + gains.kd * deriv
    return np.clip(rate, -rate_limit, rate_limit)


# -- primitive specs (the stock library table) --------------------------------

_ALLOWED_MAX_MM = (200, 220, 240)


@dataclass(frozen=True)
class PrimitiveSpec:
    id: int
    kind: str
    left_max_mm: int
    right_max_mm: int

    def __post_init__(self):
        if not (0 <= self.id <= 10):
            raise ValueError(f"spec id must be 0..10, got {self.id}")
        if self.kind not in (KIND_FORWARD, KIND_CCW, KIND_CW):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if self.left_max_mm not in _ALLOWED_MAX_MM or self.right_max_mm not in _ALLOWED_MAX_MM:
            raise ValueError(f"side maxima must be one of {_ALLOWED_MAX_MM} mm")


def default_specs() -> list[PrimitiveSpec]:
    """The stock eleven: nine forward rolls over the side-maxima grid plus
    one turn each way."""
    rolls = [(200, 200), (220, 220), (240, 240), (200, 220), (220, 200),
             (200, 240), (240, 200), (220, 240), (240, 220)]
    specs = [PrimitiveSpec(i, KIND_FORWARD, l, r) for i, (l, r) in enumerate(rolls)]
    specs.append(PrimitiveSpec(9, KIND_CCW, 200, 200))
    specs.append(PrimitiveSpec(10, KIND_CW, 200, 200))
    return specs


@dataclass(frozen=True)
class Primitive:
    """A gait's measured planar effect: body-frame delta per cycle and cost."""

    spec: PrimitiveSpec | None
    delta: Pose2
    cost: float
    duration: float
    low_confidence: bool = False

    def __post_init__(self):
        if not (self.cost > 0.0) or not (self.duration > 0.0):
            raise ValueError("cost and duration must be positive")


# -- gait templates ------------------------------------------------------------


def _load_templates() -> dict:
    src = importlib.resources.files("tensegrity_nav").joinpath("data/gait_templates.json")
    return json.loads(src.read_text())


def _resolve_token(token: str, side: str, left_max: float, right_max: float,
                   min_length: float) -> float:
    if token == "min":
        return min_length
    if token == "max":
        return left_max if side == "L" else right_max
    return float(token) / 1000.0  # literal mm


def make_gait(spec: PrimitiveSpec, topo: Topology | None = None,
              min_length: float = MIN_LENGTH, templates: dict | None = None) -> Gait:
    """Instantiate a spec's template with its side maxima substituted in."""
    topo = topo or default_topology()
    templates = templates or _load_templates()
    left = spec.left_max_mm / 1000.0
    right = spec.right_max_mm / 1000.0

    def build(name: str) -> Gait:
        phases = templates[name]["phases"]
        shapes = []
        for phase in phases:
            lengths = [_resolve_token(tok, topo.sides[i], left, right, min_length)
                       for i, tok in enumerate(phase)]
            shapes.append(TargetShape(np.array(lengths)))
        label = f"{spec.kind.lower()}_{spec.left_max_mm}_{spec.right_max_mm}"
        return Gait(name=label, shapes=tuple(shapes), cyclic=True)

    if spec.kind == KIND_FORWARD:
        return build("forward_roll")
    if spec.kind == KIND_CCW:
        return build("ccw")
    # CW is the mirror image of CCW by construction
    ccw = build("ccw")
    mirrored = apply_symmetry(ccw, ORIENT_MIRROR)
    return dataclasses.replace(mirrored, name=ccw.name.replace(KIND_CCW.lower(), KIND_CW.lower()))


def apply_symmetry(gait: Gait, orientation: str,
                   pairing: tuple[tuple[int, int], ...] = MIRROR_PAIRS) -> Gait:
    """Map a gait through a support-orientation symmetry.

    ``mirror`` swaps targets between paired left/right tendons (an
    involution); ``identity`` returns the gait unchanged.
    """
    if orientation == ORIENT_IDENTITY:
        return gait
    if orientation != ORIENT_MIRROR:
        raise ValueError(f"unknown orientation {orientation!r}")
    shapes = []
    for shape in gait.shapes:
        v = shape.lengths.copy()
        for a, b in pairing:
            v[a], v[b] = shape.lengths[b], shape.lengths[a]
        shapes.append(TargetShape(v))
    return Gait(name=gait.name + "_mirrored", shapes=tuple(shapes), cyclic=gait.cyclic)


# -- assembly and settling -----------------------------------------------------


def assembled_state(topo: Topology | None = None, triangle_side: float = NEUTRAL_LENGTH,
                    clearance: float = 0.01) -> SystemState:
    """Nominal built prism, axis along +y, lowest cap ``clearance`` above the
    ground, at rest, with neutral rest lengths."""
    topo = topo or default_topology()
    L = topo.rod_length
    r_c = triangle_side / math.sqrt(3.0)
    twist = math.radians(150.0)
    span = 2.0 * r_c * math.sin(twist / 2.0)
    if span >= L:
        raise ValueError("triangle too large for the rod length")
    h = math.sqrt(L * L - span * span)

    ang_a = [2.0 * math.pi * i / 3.0 for i in range(3)]
    a_nodes = np.array([[r_c * math.cos(t), r_c * math.sin(t), 0.0] for t in ang_a])
    b_nodes = np.array([[r_c * math.cos(t + twist), r_c * math.sin(t + twist), h]
                        for t in ang_a])

    # lay the prism on its side: local +z (prism axis) -> world +y
    rot = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    a_nodes = a_nodes @ rot.T
    b_nodes = b_nodes @ rot.T

    pos = (a_nodes + b_nodes) / 2.0
    quats = []
    for i in range(3):
        u = (b_nodes[i] - a_nodes[i]) / L
        z = np.array([0.0, 0.0, 1.0])
        c = float(np.clip(np.dot(z, u), -1.0, 1.0))
        if c > 1.0 - 1e-12:
            q = np.array([1.0, 0.0, 0.0, 0.0])
        elif c < -1.0 + 1e-12:
            q = np.array([0.0, 1.0, 0.0, 0.0])
        else:
            axis = np.cross(z, u)
            q = quat_from_axis_angle(axis, math.acos(c))
        quats.append(q)
    quat = quat_normalize(np.array(quats))

    state = SystemState(pos=pos, quat=quat, lin_vel=np.zeros((3, 3)),
                        ang_vel=np.zeros((3, 3)),
                        rest_lengths=np.full(6, NEUTRAL_LENGTH), time=0.0)
    caps = end_cap_positions(state, topo)
    state.pos[:, 2] += clearance - caps[:, 2].min()
    return state


def _run_until_quiet(state: SystemState, control: Control, cp: ContactParams,
                     bp: BodyParams, limit: float,
                     ke_threshold: float = SETTLE_KE_THRESHOLD,
                     hold: float = SETTLE_HOLD) -> SystemState:
    quiet = 0.0
    t = 0.0
    while t < limit:
        state = step(state, control, cp, bp)
        t += bp.dt
        if kinetic_energy(state, bp) < ke_threshold:
            quiet += bp.dt
            if quiet >= hold:
                return state
        else:
            quiet = 0.0
    raise SettleError(f"kinetic energy did not stay below {ke_threshold} J "
                      f"for {hold} s within {limit} s")


def settle_rest_state(cp: ContactParams, bp: BodyParams) -> SystemState:
    """Drop the assembled robot, wait for rest, and re-register so the
    canonical planar pose is exactly (0, 0, 0)."""
    topo = bp.topology
    state = assembled_state(topo)
    neutral = Control(np.full(6, NEUTRAL_LENGTH))
    state = _run_until_quiet(state, neutral, cp, bp, SETTLE_LIMIT)
    pose = extract_pose2(state, topo)
    state = transform_state_se2(state, se2_inverse(pose))
    state.time = 0.0
    return state


# -- gait scheduling -----------------------------------------------------------


def _actuated_lengths(state: SystemState, topo: Topology) -> np.ndarray:
    caps = np.asarray(end_cap_positions(state, topo))
    pairs = topo.cap_pairs()[:6]
    return np.linalg.norm(caps[pairs[:, 1]] - caps[pairs[:, 0]], axis=-1)


@dataclass
class GaitRunResult:
    final_state: SystemState
    boundary_states: list[SystemState]   # state at the end of each cycle
    advances: int
    timeouts: int
    snapshots: list[SystemState]
    boundary_indices: list[int]          # indices of boundary states in snapshots


def _shape_progress(state: SystemState, targets: np.ndarray, topo: Topology,
                    tol: float):
    """(measured lengths, slack mask, per-tendon satisfied mask).

    A slack tendon shorter than its target cannot be lengthened by paying out
    cable; it counts as converged once its spool (rest length) is parked at
    the target, so that the cable engages at the right length when geometry
    opens back up.
    """
    measured = _actuated_lengths(state, topo)
    rest = np.asarray(state.rest_lengths, dtype=float)
    slack = measured < rest - 1e-6
    satisfied = (np.abs(targets - measured) < tol) | \
        (slack & (np.abs(rest - targets) < tol))
    return measured, slack, satisfied


def run_gait(state: SystemState, gait: Gait, cycles: int, cp: ContactParams,
             bp: BodyParams, gains: PidGains | None = None,
             record_stride: int | None = None) -> GaitRunResult:
    """PID-track the gait's shapes for the given number of cycles.

    A shape advances when all six tendons are satisfied (within gains.tol of
    target, or slack with the spool parked at target) or after gains.timeout
    seconds, whichever comes first.
    """
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    topo = bp.topology
    gains = gains or PidGains()
    pid = PidState()
    shape_idx = 0
    dwell = 0.0
    advances = 0
    timeouts = 0
    boundary_states: list[SystemState] = []
    boundary_indices: list[int] = []
    snapshots: list[SystemState] = [state]
    done_cycles = 0
    steps = 0

    control = Control(gait.shapes[0].lengths)
    while done_cycles < cycles:
        targets = gait.shapes[shape_idx].lengths
        measured, slack, satisfied = _shape_progress(state, targets, topo, gains.tol)
        if np.all(satisfied) or dwell >= gains.timeout:
            if dwell >= gains.timeout:
                timeouts += 1
            advances += 1
            shape_idx += 1
            dwell = 0.0
            pid.reset()
            if shape_idx == len(gait.shapes):
                shape_idx = 0
                done_cycles += 1
                boundary_states.append(state)
                snapshots.append(state)
                boundary_indices.append(len(snapshots) - 1)
                if done_cycles == cycles:
                    break
            targets = gait.shapes[shape_idx].lengths
            control = Control(targets)
            measured, slack, satisfied = _shape_progress(state, targets, topo,
                                                         gains.tol)
        rates = pid_rate(measured, targets, pid, gains, bp.dt, rate_limit=bp.motor_speed)
        # slack cables take no tension: park their spools at the target
        # instead of paying out cable forever
        rest = np.asarray(state.rest_lengths, dtype=float)
        park = np.clip(gains.kp * (targets - rest), -bp.motor_speed, bp.motor_speed)
        rates = np.where(slack & (targets > measured), park, rates)
        state = step(state, control, cp, bp, rest_rate=rates)
        dwell += bp.dt
        steps += 1
        if record_stride is not None and steps % record_stride == 0:
            snapshots.append(state)

    return GaitRunResult(final_state=state, boundary_states=boundary_states,
                         advances=advances, timeouts=timeouts, snapshots=snapshots,
                         boundary_indices=boundary_indices)


def _mean_delta(deltas: list[Pose2]) -> Pose2:
    xs = float(np.mean([d.x for d in deltas]))
    ys = float(np.mean([d.y for d in deltas]))
    s = float(np.mean([math.sin(d.theta) for d in deltas]))
    c = float(np.mean([math.cos(d.theta) for d in deltas]))
    return Pose2(xs, ys, math.atan2(s, c))


def simulate_primitive(gait: Gait, cycles: int, cp: ContactParams, bp: BodyParams,
                       gains: PidGains | None = None,
                       spec: PrimitiveSpec | None = None,
                       start_state: SystemState | None = None,
                       record_stride: int | None = None,
                       unit_cost: bool = False) -> tuple[Primitive, Trajectory]:
    """Run a gait from the canonical rest state and measure its primitive.

    After the last cycle the scheduler holds the neutral shape until the robot
    settles again; the per-cycle delta is averaged over the cycles.
    """
    topo = bp.topology
    start = start_state if start_state is not None else settle_rest_state(cp, bp)
    res = run_gait(start, gait, cycles, cp, bp, gains=gains, record_stride=record_stride)
    neutral = Control(np.full(6, NEUTRAL_LENGTH))
    settled = _run_until_quiet(res.final_state, neutral, cp, bp, SETTLE_LIMIT)

    poses = [extract_pose2(start, topo)]
    poses += [extract_pose2(s, topo) for s in res.boundary_states]
    poses[-1] = extract_pose2(settled, topo)
    deltas = [se2_between(poses[i], poses[i + 1]) for i in range(len(poses) - 1)]
    delta = _mean_delta(deltas)

    duration = (settled.time - start.time) / cycles
    low_conf = res.advances > 0 and res.timeouts / res.advances > 0.5
    prim = Primitive(spec=spec, delta=delta,
                     cost=1.0 if unit_cost else duration,
                     duration=duration, low_confidence=low_conf)

    states = res.snapshots + [settled]
    traj = Trajectory(states=states,
                      boundaries=res.boundary_indices + [len(states) - 1])
    return prim, traj


class PrimitiveBuildError(RuntimeError):
    """A spec's gait failed to simulate; the record names the spec."""


def build_primitive_library(specs: list[PrimitiveSpec], cp: ContactParams,
                            bp: BodyParams, cycles: int = 3,
                            gains: PidGains | None = None,
                            out_path=None, unit_cost: bool = False,
                            min_length: float = MIN_LENGTH):
    """Simulate every spec (in order) from the shared rest state.

    Returns (primitives, failures) where failures is a list of
    (spec, error-string); failed specs are recorded, not silently dropped.
    If out_path is given the library file is written.
    """
    rest = settle_rest_state(cp, bp)
    prims: list[Primitive] = []
    failures: list[tuple[PrimitiveSpec, str]] = []
    for spec in specs:
        gait = make_gait(spec, bp.topology, min_length=min_length)
        try:
            prim, _ = simulate_primitive(gait, cycles, cp, bp, gains=gains,
                                         spec=spec, start_state=rest,
                                         unit_cost=unit_cost)
        except Exception as exc:  # noqa: BLE001 -- recorded per spec
            failures.append((spec, f"{type(exc).__name__}: {exc}"))
            continue
        prims.append(prim)
    if out_path is not None:
        from . import files
        files.write_primitive_library(out_path, prims, failures)
    return prims, failures


# -- randomized gait search ------------------------------------------------------


def search_gait(seed_gait: Gait, objective: str, budget: int, rng_seed: int,
                cp: ContactParams, bp: BodyParams, cycles: int = 1,
                gains: PidGains | None = None,
                quantum: float = 0.01) -> tuple[Gait, Primitive, list[float]]:
    """Randomized hill-climb over shape sequences.

    objective: "forward" maximizes delta.x, "turn" maximizes |delta.theta|.
    Each evaluation is one simulate_primitive call; the seed evaluation counts
    against the budget. Returns (best gait, its primitive, best-so-far
    objective per evaluation).
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if objective == "forward":
        score = lambda p: p.delta.x
    elif objective == "turn":
        score = lambda p: abs(p.delta.theta)
    else:
        raise ValueError(f"unknown objective {objective!r}")

    rng = np.random.default_rng(rng_seed)
    levels = np.round(np.arange(MIN_LENGTH, MAX_LENGTH + 1e-9, quantum), 10)
    rest = settle_rest_state(cp, bp)

    def evaluate(g: Gait) -> Primitive:
        prim, _ = simulate_primitive(g, cycles, cp, bp, gains=gains, start_state=rest)
        return prim

    best_gait = seed_gait
    best_prim = evaluate(seed_gait)
    best_score = score(best_prim)
    history = [best_score]
    for _ in range(budget - 1):
        shapes = [s.lengths.copy() for s in best_gait.shapes]
        si = int(rng.integers(len(shapes)))
        ti = int(rng.integers(6))
        choices = levels[np.abs(levels - shapes[si][ti]) > quantum / 2]
        shapes[si][ti] = float(rng.choice(choices))
        cand = Gait(name=best_gait.name, shapes=tuple(TargetShape(v) for v in shapes),
                    cyclic=best_gait.cyclic)
        prim = evaluate(cand)
        sc = score(prim)
        if sc > best_score:
            best_gait, best_prim, best_score = cand, prim, sc
        history.append(best_score)
    return best_gait, best_prim, history
