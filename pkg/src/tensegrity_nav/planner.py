"""A* navigation over SE(2) using motion primitives as edges.

The search pops the lowest-f node, rejects collisions, tests the goal, and
prunes nodes that land too close to an already-explored pose (nearest
neighbour over (x, y, w*theta) via a KD-tree). The heuristic is a Dijkstra
distance-to-goal field on an 8-connected grid over the scenario boundary.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .gaits import Primitive
from .geometry import Pose2, se2_compose


class NoPath(Exception):
    """Raised when the search cannot reach the goal.

    reason is "open-exhausted" (every reachable pose was explored) or
    "expansion-capped" (the expansion budget ran out first).
    """

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"no path: {reason}" + (f" ({detail})" if detail else ""))


@dataclass(frozen=True)
class Scenario:
    """Rectangular world with disc obstacles and a point goal."""

    boundary: tuple[float, float, float, float]   # xmin, ymin, xmax, ymax
    obstacles: tuple[tuple[float, float, float], ...]  # (cx, cy, radius)
    start: Pose2
    goal: tuple[float, float]
    goal_threshold: float = 0.15
    robot_radius: float = 0.25

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.boundary
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f"boundary must have positive area: {self.boundary}")
        object.__setattr__(self, "obstacles",
                           tuple((float(x), float(y), float(r)) for x, y, r in self.obstacles))
        if any(r <= 0 for _, _, r in self.obstacles):
            raise ValueError("obstacle radii must be positive")
        if self.goal_threshold <= 0 or self.robot_radius <= 0:
            raise ValueError("goal_threshold and robot_radius must be positive")
        gx, gy = self.goal
        object.__setattr__(self, "goal", (float(gx), float(gy)))
        for name, (px, py) in (("start", (self.start.x, self.start.y)), ("goal", self.goal)):
            if not (xmin <= px <= xmax and ymin <= py <= ymax):
                raise ValueError(f"{name} ({px}, {py}) lies outside the boundary")


def collision_detect(pose: Pose2, scenario: Scenario) -> bool:
    """True iff the robot disc at the pose strictly overlaps an obstacle or
    strictly exits the boundary rectangle (touching contact is allowed)."""
    x, y, r = pose.x, pose.y, scenario.robot_radius
    xmin, ymin, xmax, ymax = scenario.boundary
    if x - r < xmin or y - r < ymin or x + r > xmax or y + r > ymax:
        return True
    for cx, cy, cr in scenario.obstacles:
        if math.hypot(x - cx, y - cy) < cr + r:
            return True
    return False


@dataclass(frozen=True)
class HeuristicField:
    """Distance-to-goal (m) per grid cell; inf where the cell center is blocked
    or unreachable from the goal."""

    origin: tuple[float, float]
    cell: float
    dist: np.ndarray           # (ny, nx)
    goal: tuple[float, float]

    def __call__(self, pose: Pose2) -> float:
        ix = int(math.floor((pose.x - self.origin[0]) / self.cell))
        iy = int(math.floor((pose.y - self.origin[1]) / self.cell))
        ny, nx = self.dist.shape
        if 0 <= iy < ny and 0 <= ix < nx:
            d = float(self.dist[iy, ix])
            if math.isfinite(d):
                return d
        # cell blocked, unreachable, or outside the grid: fall back to the
        # straight-line distance, which never overestimates the grid distance
        return math.hypot(pose.x - self.goal[0], pose.y - self.goal[1])


def build_heuristic(scenario: Scenario, cell: float = 0.05) -> HeuristicField:
    """Dijkstra distance-to-goal over the 8-connected grid of cell centers."""
    if cell <= 0:
        raise ValueError("cell must be positive")
    xmin, ymin, xmax, ymax = scenario.boundary
    nx = max(1, int(math.ceil((xmax - xmin) / cell)))
    ny = max(1, int(math.ceil((ymax - ymin) / cell)))
    xs = xmin + (np.arange(nx) + 0.5) * cell
    ys = ymin + (np.arange(ny) + 0.5) * cell

    blocked = np.zeros((ny, nx), dtype=bool)
    for iy in range(ny):
        for ix in range(nx):
            blocked[iy, ix] = collision_detect(Pose2(xs[ix], ys[iy], 0.0), scenario)

    gx, gy = scenario.goal
    gix = min(nx - 1, max(0, int(math.floor((gx - xmin) / cell))))
    giy = min(ny - 1, max(0, int(math.floor((gy - ymin) / cell))))
    if blocked[giy, gix]:
        raise ValueError("goal cell is blocked; no heuristic field exists")

    dist = np.full((ny, nx), np.inf)
    dist[giy, gix] = 0.0
    pq: list[tuple[float, int, int]] = [(0.0, giy, gix)]
    diag = cell * math.sqrt(2.0)
    while pq:
        d, iy, ix = heapq.heappop(pq)
        if d > dist[iy, ix]:
            continue
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                jy, jx = iy + dy, ix + dx
                if not (0 <= jy < ny and 0 <= jx < nx) or blocked[jy, jx]:
                    continue
                nd = d + (diag if dy != 0 and dx != 0 else cell)
                if nd < dist[jy, jx]:
                    dist[jy, jx] = nd
                    heapq.heappush(pq, (nd, jy, jx))

    return HeuristicField(origin=(xmin, ymin), cell=cell, dist=dist,
                          goal=scenario.goal)


def propagate(pose: Pose2, prim: Primitive) -> Pose2:
    """Pose after executing the primitive from the given pose."""
    return se2_compose(pose, prim.delta)


@dataclass
class PlanNode:
    pose: Pose2
    g: float
    f: float
    parent: "PlanNode | None" = None
    via_primitive: int | None = None
    depth: int = 0


@dataclass
class Plan:
    primitive_ids: list[int]
    poses: list[Pose2]
    total_cost: float
    expansions: int = 0
    pruned: int = 0

    def __len__(self) -> int:
        return len(self.primitive_ids)


def reconstruct(node: PlanNode) -> Plan:
    """Walk parent links back to the root and emit the plan in execution order."""
    ids: list[int] = []
    poses: list[Pose2] = []
    cur: PlanNode | None = node
    while cur is not None:
        poses.append(cur.pose)
        if cur.via_primitive is not None:
            ids.append(cur.via_primitive)
        cur = cur.parent
    ids.reverse()
    poses.reverse()
    return Plan(primitive_ids=ids, poses=poses, total_cost=node.g)


class _ClosedSet:
    """Nearest-neighbour structure over (x, y, w*theta) with amortized
    KD-tree rebuilds; fresh points sit in a linear buffer until the next
    rebuild."""

    _REBUILD = 64

    def __init__(self, theta_weight: float):
        self.w = theta_weight
        self.pts: list[tuple[float, float, float]] = []
        self.tree: cKDTree | None = None
        self.tree_n = 0

    def add(self, pose: Pose2) -> None:
        self.pts.append((pose.x, pose.y, self.w * pose.theta))
        if len(self.pts) - self.tree_n >= self._REBUILD:
            self.tree = cKDTree(np.asarray(self.pts))
            self.tree_n = len(self.pts)

    def nearest(self, pose: Pose2) -> float:
        if not self.pts:
            return math.inf
        p = (pose.x, pose.y, self.w * pose.theta)
        best = math.inf
        if self.tree is not None:
            d, _ = self.tree.query(p)
            best = float(d)
        tail = self.pts[self.tree_n:]
        if tail:
            arr = np.asarray(tail) - p
            best = min(best, float(np.sqrt(np.min(np.sum(arr * arr, axis=1)))))
        return best


def _prim_id(prim: Primitive, index: int) -> int:
    return prim.spec.id if prim.spec is not None else index


def plan(scenario: Scenario, primitives: list[Primitive],
         prune_radius: float = 0.05, max_expansions: int = 200_000,
         heuristic: HeuristicField | None = None,
         theta_weight: float = 0.1, cell: float = 0.05,
         trace: list[Pose2] | None = None) -> Plan:
    """Best-first search from scenario.start to scenario.goal over primitive
    edges. Raises NoPath with the exhaustion reason on failure. When trace is
    a list, every expanded pose is appended to it in expansion order."""
    if not primitives:
        raise ValueError("need at least one primitive")
    if prune_radius < 0 or max_expansions < 1:
        raise ValueError("prune_radius must be >= 0 and max_expansions >= 1")
    h = heuristic if heuristic is not None else build_heuristic(scenario, cell)

    gx, gy = scenario.goal
    closed = _ClosedSet(theta_weight)
    start = PlanNode(pose=scenario.start, g=0.0, f=h(scenario.start))
    counter = 0
    open_heap: list[tuple[float, float, int, PlanNode]] = [(start.f, 0.0, counter, start)]
    best_g: dict[tuple[float, float, float], float] = {
        (start.pose.x, start.pose.y, start.pose.theta): 0.0}
    expansions = 0
    pruned = 0

    while open_heap:
        _, _, _, node = heapq.heappop(open_heap)
        key = (node.pose.x, node.pose.y, node.pose.theta)
        if node.g > best_g.get(key, math.inf):
            continue          # stale entry superseded by a cheaper path
        if collision_detect(node.pose, scenario):
            continue
        if math.hypot(node.pose.x - gx, node.pose.y - gy) <= scenario.goal_threshold:
            result = reconstruct(node)
            result.expansions = expansions
            result.pruned = pruned
            return result
        if prune_radius > 0 and closed.nearest(node.pose) < prune_radius:
            pruned += 1
            continue
        closed.add(node.pose)

        if expansions >= max_expansions:
            raise NoPath("expansion-capped", f"budget {max_expansions}")
        expansions += 1
        if trace is not None:
            trace.append(node.pose)
        for i, prim in enumerate(primitives):
            child_pose = propagate(node.pose, prim)
            mid = Pose2(0.5 * (node.pose.x + child_pose.x),
                        0.5 * (node.pose.y + child_pose.y), 0.0)
            if collision_detect(mid, scenario):
                continue      # edge hops over an obstacle
            ckey = (child_pose.x, child_pose.y, child_pose.theta)
            cg = node.g + prim.cost
            if cg >= best_g.get(ckey, math.inf):
                continue
            best_g[ckey] = cg
            child = PlanNode(pose=child_pose, g=cg, f=cg + h(child_pose),
                             parent=node, via_primitive=_prim_id(prim, i),
                             depth=node.depth + 1)
            counter += 1
            heapq.heappush(open_heap, (child.f, -child.g, counter, child))

    raise NoPath("open-exhausted", f"after {expansions} expansions")
