"""SVG figure export: scenario maps with plans and executed paths, and
sysid loss curves. Output is byte-stable: fixed hash salt, no embedded dates.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Circle, Rectangle

from .navigator import NavLog
from .planner import Plan, Scenario
from .sysid import FitReport

plt.rcParams["svg.hashsalt"] = "tensegrity-nav"


def _save(fig, path: str) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _draw_scenario(ax, sc: Scenario) -> None:
    xmin, ymin, xmax, ymax = sc.boundary
    ax.add_patch(Rectangle((xmin, ymin), xmax - xmin, ymax - ymin,
                           fill=False, edgecolor="black", linewidth=1.5))
    for cx, cy, r in sc.obstacles:
        ax.add_patch(Circle((cx, cy), r, facecolor="lightblue",
                            edgecolor="steelblue"))
    ax.plot([sc.start.x], [sc.start.y], marker="s", color="green", markersize=8)
    ax.plot([sc.goal[0]], [sc.goal[1]], marker="*", color="red", markersize=14)
    ax.add_patch(Circle(sc.goal, sc.goal_threshold, fill=False,
                        edgecolor="red", linestyle=":"))
    pad = 0.2
    ax.set_xlim(xmin - pad, xmax + pad)
    ax.set_ylim(ymin - pad, ymax + pad)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")


def _draw_poses(ax, poses, color: str, label: str, arrows: bool = True) -> None:
    if not poses:
        return
    xs = [p.x for p in poses]
    ys = [p.y for p in poses]
    ax.plot(xs, ys, "-o", color=color, markersize=3, linewidth=1.2, label=label)
    if arrows:
        for p in poses:
            ax.annotate("", xy=(p.x + 0.06 * math.cos(p.theta),
                                p.y + 0.06 * math.sin(p.theta)),
                        xytext=(p.x, p.y),
                        arrowprops={"arrowstyle": "->", "color": color, "lw": 0.8})


def plot_plan(path: str, sc: Scenario, plan: Plan,
              expanded: list[tuple[float, float]] | None = None) -> None:
    """Scenario map with the planned pose sequence; optionally the scatter of
    expanded search poses."""
    fig, ax = plt.subplots(figsize=(6, 5))
    _draw_scenario(ax, sc)
    if expanded:
        ax.scatter([e[0] for e in expanded], [e[1] for e in expanded],
                   s=4, color="0.8", zorder=0, label="expanded")
    _draw_poses(ax, plan.poses, "darkblue", "plan")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(f"plan: {len(plan)} primitives, cost {plan.total_cost:.2f}")
    _save(fig, path)


def plot_navlog(path: str, sc: Scenario, log: NavLog) -> None:
    """Scenario map with planned (if recorded) and executed paths."""
    fig, ax = plt.subplots(figsize=(6, 5))
    _draw_scenario(ax, sc)
    _draw_poses(ax, log.planned_poses, "darkblue", "planned")
    _draw_poses(ax, log.true_poses, "darkorange", "executed")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(f"outcome: {log.outcome}, steps: {len(log.steps)}")
    _save(fig, path)


def plot_loss_curve(path: str, report: FitReport) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(range(len(report.loss_history)), report.loss_history,
                "-o", markersize=3, color="darkblue")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss (m$^2$)")
    ax.grid(True, which="both", alpha=0.3)
    ax.set_title("identification loss" + (" (converged)" if report.converged else ""))
    _save(fig, path)
