"""Closed-loop navigation: observe the pose, plan, execute one primitive,
repeat. Execution is emulated either by perturbing the primitive's recorded
delta (DeltaNoise) or by re-running the physics from the current pose
(PhysicsInLoop). Disturbance models emulate a drop, an inclined floor, and a
patch of granular terrain.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import gaits
from .gaits import Primitive, PrimitiveSpec, KIND_CCW, KIND_CW
from .geometry import (Pose2, end_cap_positions, pose2_from_caps, se2_between,
                       se2_compose, transform_state_se2, extract_pose2)
from .physics import BodyParams, ContactParams
from .planner import HeuristicField, NoPath, Scenario, build_heuristic, plan

OBS_GROUND_TRUTH = "GroundTruth"
OBS_NOISY_POSE = "NoisyPose"
OBS_END_CAPS = "EndCaps"

EXEC_DELTA_NOISE = "DeltaNoise"
EXEC_PHYSICS = "PhysicsInLoop"

DIST_NONE = "None"
DIST_DROP = "Drop"
DIST_INCLINE = "Incline"
DIST_GRANULAR = "Granular"

OUTCOME_GOAL = "GoalReached"
OUTCOME_STEP_LIMIT = "StepLimit"
OUTCOME_STUCK = "Stuck"

POSE_RATE_HZ = 7.0   # logging realism constant; the loop itself is event-driven


@dataclass(frozen=True)
class Observer:
    """Pose sensing model. EndCaps recovers the pose from (noisy) cap centers
    only; mirror_detected is the config-driven support-orientation flag that
    routes primitives through the symmetry map."""

    mode: str = OBS_GROUND_TRUTH
    sigma_xy: float = 0.0
    sigma_theta: float = 0.0
    cap_sigma: float = 0.0
    seed: int = 0
    mirror_detected: bool = False

    def __post_init__(self):
        if self.mode not in (OBS_GROUND_TRUTH, OBS_NOISY_POSE, OBS_END_CAPS):
            raise ValueError(f"unknown observer mode {self.mode!r}")
        if min(self.sigma_xy, self.sigma_theta, self.cap_sigma) < 0:
            raise ValueError("noise sigmas must be >= 0")


@dataclass(frozen=True)
class Executor:
    """Execution model. DeltaNoise perturbs recorded deltas; PhysicsInLoop
    replays the gait through the simulator with true_contact parameters."""

    mode: str = EXEC_DELTA_NOISE
    sigma_xy_frac: float = 0.10     # fraction of the primitive's translation
    sigma_theta: float = 0.09
    seed: int = 0
    true_contact: ContactParams | None = None
    body: BodyParams | None = None

    def __post_init__(self):
        if self.mode not in (EXEC_DELTA_NOISE, EXEC_PHYSICS):
            raise ValueError(f"unknown executor mode {self.mode!r}")
        if self.sigma_xy_frac < 0 or self.sigma_theta < 0:
            raise ValueError("noise parameters must be >= 0")


@dataclass(frozen=True)
class Disturbance:
    """One of: Drop (one-time displacement + heading randomization at
    trigger_step), Incline (per-primitive downhill drift), Granular
    (translation scaling + extra noise inside a rectangular region)."""

    kind: str = DIST_NONE
    height: float = 0.37                 # planar displacement magnitude, m
    trigger_step: int = 0
    angle: float = math.radians(8.0)
    downhill: tuple[float, float] = (1.0, 0.0)
    region: tuple[float, float, float, float] | None = None
    delta_scale: float = 1.0
    extra_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (DIST_NONE, DIST_DROP, DIST_INCLINE, DIST_GRANULAR):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == DIST_DROP and self.height <= 0:
            raise ValueError("drop height must be positive")
        if self.kind == DIST_INCLINE and not (0.0 < self.angle < math.pi / 4):
            raise ValueError("incline angle must be in (0, pi/4)")
        if self.kind == DIST_GRANULAR:
            if self.region is None:
                raise ValueError("granular disturbance needs a region")
            if self.delta_scale < 0 or self.extra_sigma < 0:
                raise ValueError("granular parameters must be >= 0")


@dataclass
class NavStep:
    index: int
    estimate: Pose2
    chosen_primitive: int | None
    plan_length: int
    planning_time: float
    planning_failure: bool
    executed_delta: Pose2


@dataclass
class NavLog:
    steps: list[NavStep] = field(default_factory=list)
    outcome: str | None = None
    true_poses: list[Pose2] = field(default_factory=list)
    planned_poses: list[Pose2] = field(default_factory=list)   # open loop only
    deviations: list[float] = field(default_factory=list)      # open loop only

    def finish(self, outcome: str) -> None:
        if self.outcome is not None:
            raise RuntimeError("outcome already set")
        self.outcome = outcome


# -- observation ----------------------------------------------------------------


@lru_cache(maxsize=1)
def _canonical_rest_caps() -> np.ndarray:
    """Cap centers of the settled rest state under default parameters,
    expressed in the canonical (pose = identity) frame."""
    bp = BodyParams()
    state = gaits.settle_rest_state(ContactParams(), bp)
    return np.asarray(end_cap_positions(state, bp.topology))


def _caps_at_pose(pose: Pose2) -> np.ndarray:
    caps = _canonical_rest_caps()
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return caps @ rot.T + np.array([pose.x, pose.y, 0.0])


def observe(true_state_or_pose, observer: Observer,
            rng: np.random.Generator | None = None,
            topo=None) -> Pose2:
    """Pose estimate for the given true state (physics state or Pose2)."""
    rng = rng if rng is not None else np.random.default_rng(observer.seed)
    if isinstance(true_state_or_pose, Pose2):
        pose = true_state_or_pose
        caps = None
    else:
        topo = topo if topo is not None else BodyParams().topology
        pose = extract_pose2(true_state_or_pose, topo)
        caps = np.asarray(end_cap_positions(true_state_or_pose, topo))

    if observer.mode == OBS_GROUND_TRUTH:
        return pose
    if observer.mode == OBS_NOISY_POSE:
        dx, dy = rng.normal(0.0, observer.sigma_xy, 2) if observer.sigma_xy > 0 else (0.0, 0.0)
        dth = rng.normal(0.0, observer.sigma_theta) if observer.sigma_theta > 0 else 0.0
        return Pose2(pose.x + dx, pose.y + dy, pose.theta + dth)
    # EndCaps: perturb cap centers, then recover the planar pose from them
    if caps is None:
        caps = _caps_at_pose(pose)
    noisy = caps + rng.normal(0.0, observer.cap_sigma, caps.shape)
    return pose2_from_caps(noisy)


# -- primitive mirroring ---------------------------------------------------------

_STOCK_MIRROR_ID = {3: 4, 4: 3, 5: 6, 6: 5, 7: 8, 8: 7, 9: 10, 10: 9}


def mirror_primitive(prim: Primitive) -> Primitive:
    """The primitive as seen in a left/right-mirrored support state: sides
    swap, turn direction flips, and the delta reflects about the body x-axis."""
    spec = prim.spec
    if spec is not None:
        kind = {KIND_CCW: KIND_CW, KIND_CW: KIND_CCW}.get(spec.kind, spec.kind)
        spec = PrimitiveSpec(id=_STOCK_MIRROR_ID.get(spec.id, spec.id), kind=kind,
                             left_max_mm=spec.right_max_mm,
                             right_max_mm=spec.left_max_mm)
    delta = Pose2(prim.delta.x, -prim.delta.y, -prim.delta.theta)
    return dataclasses.replace(prim, spec=spec, delta=delta)


# -- execution -------------------------------------------------------------------


def _inside(region: tuple[float, float, float, float], pose: Pose2) -> bool:
    xmin, ymin, xmax, ymax = region
    return xmin <= pose.x <= xmax and ymin <= pose.y <= ymax


_REST_CACHE: dict[tuple, object] = {}


def _physics_rest(cp: ContactParams, bp: BodyParams):
    key = (cp.mu, cp.epsilon, cp.beta, cp.stiffness, cp.damping,
           bp.rod_mass, bp.passive_rest_length, bp.passive_stiffness,
           tuple(bp.gravity), bp.dt)
    if key not in _REST_CACHE:
        _REST_CACHE[key] = gaits.settle_rest_state(cp, bp)
    return _REST_CACHE[key]


def execute_primitive(pose: Pose2, prim: Primitive, executor: Executor,
                      disturbance: Disturbance | None = None,
                      step_index: int = 0,
                      rng: np.random.Generator | None = None,
                      dist_rng: np.random.Generator | None = None,
                      mirrored_support: bool = False) -> Pose2:
    """True pose after executing the primitive from the given pose.

    mirrored_support models a robot resting in the left/right-mirrored
    orientation: the commanded primitive's effect reflects about the body
    x-axis. A caller that detects the mirror and compensates by commanding
    mirror_primitive(p) recovers p's original delta.
    """
    rng = rng if rng is not None else np.random.default_rng(executor.seed)
    dist = disturbance if disturbance is not None else Disturbance()
    dist_rng = dist_rng if dist_rng is not None else np.random.default_rng(dist.seed)

    delta = prim.delta
    if mirrored_support:
        delta = Pose2(delta.x, -delta.y, -delta.theta)

    in_granular = dist.kind == DIST_GRANULAR and _inside(dist.region, pose)

    if executor.mode == EXEC_DELTA_NOISE:
        if in_granular:
            delta = Pose2(delta.x * dist.delta_scale, delta.y * dist.delta_scale,
                          delta.theta)
        new = se2_compose(pose, delta)
    else:
        cp = executor.true_contact if executor.true_contact is not None else ContactParams()
        bp = executor.body if executor.body is not None else BodyParams()
        if prim.spec is None:
            raise ValueError("PhysicsInLoop execution needs a primitive with a spec")
        gait = gaits.make_gait(prim.spec, bp.topology)
        state = transform_state_se2(_physics_rest(cp, bp), pose)
        measured, _ = gaits.simulate_primitive(gait, 1, cp, bp, start_state=state)
        new = se2_compose(pose, measured.delta)
        if in_granular:
            achieved = se2_between(pose, new)
            scaled = Pose2(achieved.x * dist.delta_scale,
                           achieved.y * dist.delta_scale, achieved.theta)
            new = se2_compose(pose, scaled)

    x, y, th = new.x, new.y, new.theta
    trans = math.hypot(prim.delta.x, prim.delta.y)
    if executor.sigma_xy_frac > 0 and trans > 0:
        x += rng.normal(0.0, executor.sigma_xy_frac * trans)
        y += rng.normal(0.0, executor.sigma_xy_frac * trans)
    if executor.sigma_theta > 0:
        th += rng.normal(0.0, executor.sigma_theta)

    if in_granular and dist.extra_sigma > 0:
        x += dist_rng.normal(0.0, dist.extra_sigma)
        y += dist_rng.normal(0.0, dist.extra_sigma)
    if dist.kind == DIST_INCLINE:
        drift = prim.duration * 0.02 * math.sin(dist.angle) / math.sin(math.radians(8.0))
        dx, dy = dist.downhill
        n = math.hypot(dx, dy)
        x += drift * dx / n
        y += drift * dy / n
    if dist.kind == DIST_DROP and step_index == dist.trigger_step:
        direction = dist_rng.uniform(-math.pi, math.pi)
        x += dist.height * math.cos(direction)
        y += dist.height * math.sin(direction)
        th = dist_rng.uniform(-math.pi, math.pi)

    return Pose2(x, y, th)


# -- navigation loops ------------------------------------------------------------


def _prim_index(primitives: list[Primitive]) -> dict[int, Primitive]:
    byid = {}
    for i, p in enumerate(primitives):
        byid[p.spec.id if p.spec is not None else i] = p
    return byid


def run_closed_loop(scenario: Scenario, primitives: list[Primitive],
                    observer: Observer | None = None,
                    executor: Executor | None = None,
                    disturbance: Disturbance | None = None,
                    step_limit: int = 60,
                    prune_radius: float = 0.05,
                    max_expansions: int = 200_000,
                    heuristic: HeuristicField | None = None) -> NavLog:
    """Observe, re-plan, execute the first primitive; fall back to the last
    valid plan when planning fails; Stuck once that plan is exhausted."""
    if step_limit < 1:
        raise ValueError("step_limit must be >= 1")
    observer = observer or Observer()
    executor = executor or Executor(sigma_xy_frac=0.0, sigma_theta=0.0)
    byid = _prim_index(primitives)
    h = heuristic if heuristic is not None else build_heuristic(scenario)
    rng_obs = np.random.default_rng(observer.seed)
    rng_exec = np.random.default_rng(executor.seed)
    rng_dist = np.random.default_rng((disturbance or Disturbance()).seed)

    log = NavLog()
    true_pose = scenario.start
    log.true_poses.append(true_pose)
    gx, gy = scenario.goal
    cache: list[int] = []
    cache_next = 0

    for k in range(step_limit):
        est = observe(true_pose, observer, rng_obs)
        if math.hypot(est.x - gx, est.y - gy) <= scenario.goal_threshold:
            log.finish(OUTCOME_GOAL)
            return log

        t0 = time.perf_counter()
        try:
            sc = dataclasses.replace(scenario, start=est)
            result = plan(sc, primitives, prune_radius=prune_radius,
                          max_expansions=max_expansions, heuristic=h)
            failure = False
        except (NoPath, ValueError):
            result = None
            failure = True
        t_plan = time.perf_counter() - t0

        if not failure:
            if len(result.primitive_ids) == 0:
                # planner already considers the estimate close enough
                log.finish(OUTCOME_GOAL)
                return log
            cache = result.primitive_ids
            cache_next = 1
            chosen = cache[0]
            plan_len = len(cache)
        else:
            if cache_next >= len(cache):
                log.steps.append(NavStep(k, est, None, 0, t_plan, True,
                                         Pose2(0, 0, 0)))
                log.finish(OUTCOME_STUCK)
                return log
            chosen = cache[cache_next]
            cache_next += 1
            plan_len = len(cache) - cache_next + 1

        prim = byid[chosen]
        command = mirror_primitive(prim) if observer.mirror_detected else prim
        new_pose = execute_primitive(true_pose, command, executor, disturbance,
                                     step_index=k, rng=rng_exec, dist_rng=rng_dist,
                                     mirrored_support=observer.mirror_detected)
        log.steps.append(NavStep(k, est, chosen, plan_len, t_plan, failure,
                                 se2_between(true_pose, new_pose)))
        true_pose = new_pose
        log.true_poses.append(true_pose)

    log.finish(OUTCOME_STEP_LIMIT)
    return log


def run_open_loop(scenario: Scenario, primitives: list[Primitive],
                  executor: Executor | None = None,
                  disturbance: Disturbance | None = None,
                  prune_radius: float = 0.05,
                  max_expansions: int = 200_000,
                  heuristic: HeuristicField | None = None) -> NavLog:
    """Plan once and execute every primitive blind; log per-step deviation
    from the planned pose sequence. NoPath propagates."""
    executor = executor or Executor(sigma_xy_frac=0.0, sigma_theta=0.0)
    byid = _prim_index(primitives)
    t0 = time.perf_counter()
    result = plan(scenario, primitives, prune_radius=prune_radius,
                  max_expansions=max_expansions,
                  heuristic=heuristic if heuristic is not None
                  else build_heuristic(scenario))
    t_plan = time.perf_counter() - t0
    rng_exec = np.random.default_rng(executor.seed)
    rng_dist = np.random.default_rng((disturbance or Disturbance()).seed)

    log = NavLog(planned_poses=list(result.poses))
    true_pose = scenario.start
    log.true_poses.append(true_pose)
    for k, pid in enumerate(result.primitive_ids):
        prim = byid[pid]
        new_pose = execute_primitive(true_pose, prim, executor, disturbance,
                                     step_index=k, rng=rng_exec, dist_rng=rng_dist)
        planned = result.poses[k + 1]
        dev = math.hypot(new_pose.x - planned.x, new_pose.y - planned.y)
        log.deviations.append(dev)
        log.steps.append(NavStep(k, true_pose, pid,
                                 len(result.primitive_ids) - k,
                                 t_plan if k == 0 else 0.0, False,
                                 se2_between(true_pose, new_pose)))
        true_pose = new_pose
        log.true_poses.append(true_pose)

    gx, gy = scenario.goal
    reached = math.hypot(true_pose.x - gx, true_pose.y - gy) <= scenario.goal_threshold
    log.finish(OUTCOME_GOAL if reached else OUTCOME_STEP_LIMIT)
    return log


# -- Monte-Carlo batches ----------------------------------------------------------


@dataclass
class BatchResult:
    logs: list[NavLog]
    success_rate: float
    mean_steps: float
    mean_planning_time: float
    median_planning_time: float


def _trial_seed(base: int, i: int) -> int:
    return int(np.random.SeedSequence(entropy=base, spawn_key=(i,)).generate_state(1)[0])


def run_batch(scenario: Scenario, primitives: list[Primitive],
              observer: Observer | None = None,
              executor: Executor | None = None,
              disturbance: Disturbance | None = None,
              trials: int = 100, closed: bool = True, step_limit: int = 60,
              prune_radius: float = 0.05,
              max_expansions: int = 200_000) -> BatchResult:
    """Independent seeded trials; per-trial seeds derive deterministically
    from each component's base seed."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    observer = observer or Observer()
    executor = executor or Executor()
    h = build_heuristic(scenario)
    logs = []
    for i in range(trials):
        obs_i = dataclasses.replace(observer, seed=_trial_seed(observer.seed, i))
        exe_i = dataclasses.replace(executor, seed=_trial_seed(executor.seed, i))
        dist_i = disturbance
        if disturbance is not None and disturbance.kind != DIST_NONE:
            dist_i = dataclasses.replace(disturbance,
                                         seed=_trial_seed(disturbance.seed, i))
        if closed:
            logs.append(run_closed_loop(scenario, primitives, obs_i, exe_i, dist_i,
                                        step_limit=step_limit,
                                        prune_radius=prune_radius,
                                        max_expansions=max_expansions, heuristic=h))
        else:
            try:
                logs.append(run_open_loop(scenario, primitives, exe_i, dist_i,
                                          prune_radius=prune_radius,
                                          max_expansions=max_expansions, heuristic=h))
            except NoPath:
                nl = NavLog()
                nl.finish(OUTCOME_STUCK)
                logs.append(nl)

    n_goal = sum(1 for l in logs if l.outcome == OUTCOME_GOAL)
    steps = [len(l.steps) for l in logs]
    times = [s.planning_time for l in logs for s in l.steps if s.planning_time > 0]
    return BatchResult(logs=logs,
                       success_rate=n_goal / trials,
                       mean_steps=float(np.mean(steps)) if steps else 0.0,
                       mean_planning_time=float(np.mean(times)) if times else 0.0,
                       median_planning_time=float(np.median(times)) if times else 0.0)
