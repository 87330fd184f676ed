"""Contact-parameter identification from cap-position observations.

Loss: mean over gait cycles of the summed squared cap-position error at each
cycle boundary. The gradient with respect to (mu, epsilon, beta) rides along
the rollout in forward mode, so one pass yields both loss and gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fmad
from .geometry import end_cap_positions
from .physics import (BodyParams, ContactParams, Control, IntegrationBlowupError,
                      SystemState, _lift_state, rollout)


class DivergenceError(RuntimeError):
    """Integration blew up during a loss evaluation; carries the parameters
    that caused it."""

    def __init__(self, theta: np.ndarray, original: Exception):
        self.theta = np.asarray(theta, dtype=float)
        super().__init__(f"rollout diverged at theta={self.theta.tolist()}: {original}")


@dataclass(eq=False)
class TrainingTrajectory:
    """One recorded gait run: the exact start state, the control schedule,
    and cap observations at cycle boundaries.

    cycle_boundaries[m] is the number of control segments completed at the
    m-th observation; observed_caps[m] = (m, (6, 3) cap positions).
    """

    start_state: SystemState
    controls: list[tuple[Control, float]]
    observed_caps: list[tuple[int, np.ndarray]]
    cycle_boundaries: list[int]

    def __post_init__(self):
        if not self.controls:
            raise ValueError("trajectory needs at least one control segment")
        if len(self.observed_caps) != len(self.cycle_boundaries) or not self.observed_caps:
            raise ValueError("need one observation per cycle boundary, at least one")
        prev = 0
        for m, b in enumerate(self.cycle_boundaries):
            if not (prev < b <= len(self.controls)):
                raise ValueError(f"cycle boundary {b} out of order or out of range")
            prev = b
            idx, caps = self.observed_caps[m]
            if idx != m:
                raise ValueError(f"observation {m} has cycle index {idx}")
            caps = np.asarray(caps, dtype=float)
            if caps.shape != (6, 3) or not np.all(np.isfinite(caps)):
                raise ValueError(f"observation {m} must be a finite (6, 3) array")
            self.observed_caps[m] = (idx, caps)


@dataclass
class FitReport:
    theta_history: list[ContactParams] = field(default_factory=list)
    loss_history: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    message: str = ""


def cycle_loss(predicted_caps: np.ndarray, observed_caps: np.ndarray):
    """Sum over the six caps of squared Euclidean distance (m^2).

    Accepts dual-number predictions, in which case the loss carries
    d(loss)/d(theta)."""
    diff = predicted_caps - np.asarray(observed_caps, dtype=float)
    return fmad.sum_(diff * diff)


def trajectory_loss(params: ContactParams, traj: TrainingTrajectory,
                    bp: BodyParams) -> tuple[float, np.ndarray]:
    """(mean cycle loss, d(loss)/d(mu, epsilon, beta)) for one trajectory."""
    try:
        rolled = rollout(traj.start_state, traj.controls, params, bp,
                         with_gradient=True)
    except IntegrationBlowupError as exc:
        raise DivergenceError(params.theta(), exc) from exc

    total = 0.0
    total_dot = np.zeros(3)
    for (m, observed), seg in zip(traj.observed_caps, traj.cycle_boundaries):
        snap_idx = rolled.boundaries[seg - 1]
        dual_state = _lift_state(rolled.states[snap_idx], rolled.sens[snap_idx])
        caps = end_cap_positions(dual_state, bp.topology)
        l = cycle_loss(caps, observed)
        total += float(fmad.value(l))
        total_dot += np.asarray(fmad.tangent(l, 3), dtype=float)
    n = len(traj.observed_caps)
    return total / n, total_dot / n


def _mean_loss(params: ContactParams, trajs: list[TrainingTrajectory],
               bp: BodyParams) -> tuple[float, np.ndarray]:
    losses, grads = zip(*(trajectory_loss(params, t, bp) for t in trajs))
    return float(np.mean(losses)), np.mean(grads, axis=0)


def fit(theta0: ContactParams, trajs: list[TrainingTrajectory],
        alpha: float = 0.05, max_iters: int = 60,
        bp: BodyParams | None = None, rtol: float = 1e-4,
        patience: int = 5) -> FitReport:
    """Projected gradient descent on the mean trajectory loss.

    Each component's raw gradient is normalized by its running RMS (the three
    parameters differ in sensitivity by orders of magnitude). An update that
    increases the loss is reverted and halves the learning rate (floor
    1e-6 * alpha); convergence is |delta loss| < rtol * loss on `patience`
    consecutive accepted updates.
    """
    if not trajs:
        raise ValueError("need at least one training trajectory")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    bp = bp or BodyParams()

    report = FitReport()
    theta = theta0
    try:
        loss, grad = _mean_loss(theta, trajs, bp)
    except DivergenceError as exc:
        report.message = str(exc)
        return report
    report.theta_history.append(theta)
    report.loss_history.append(loss)
    if not math.isfinite(loss):
        report.message = f"initial loss not finite: {loss}"
        return report

    rms = np.abs(grad) + 1e-18
    lr = alpha
    lr_floor = 1e-6 * alpha
    quiet = 0

    for it in range(max_iters):
        if not np.any(grad):
            report.converged = True
            report.message = "gradient is zero"
            break
        report.iterations = it + 1
        scaled = grad / rms
        proposal = theta.with_theta(theta.project_theta(theta.theta() - lr * scaled))
        try:
            new_loss, new_grad = _mean_loss(proposal, trajs, bp)
        except DivergenceError as exc:
            new_loss, new_grad = math.inf, None
            report.message = str(exc)
        if math.isfinite(new_loss) and new_loss <= loss:
            if abs(new_loss - loss) < rtol * max(loss, 1e-30):
                quiet += 1
            else:
                quiet = 0
            theta, loss, grad = proposal, new_loss, new_grad
            rms = np.sqrt(0.9 * rms * rms + 0.1 * grad * grad) + 1e-18
        else:
            lr = lr / 2.0
            quiet = 0
            if lr < lr_floor:
                report.theta_history.append(theta)
                report.loss_history.append(loss)
                report.message = "learning rate floor reached"
                break
        report.theta_history.append(theta)
        report.loss_history.append(loss)
        if quiet >= patience:
            report.converged = True
            break

    if not report.message and not report.converged:
        report.message = "max iterations reached"
    return report


@dataclass
class ValidationReport:
    per_cycle_rmse: list[float]
    aggregate_rmse: float


def validate(params: ContactParams, holdout: TrainingTrajectory,
             bp: BodyParams | None = None) -> ValidationReport:
    """Per-cycle cap RMSE (m) of the fitted model on a held-out trajectory.

    RMSE is over the six caps: sqrt(mean squared cap distance)."""
    bp = bp or BodyParams()
    rolled = rollout(holdout.start_state, holdout.controls, params, bp)
    per_cycle = []
    for (m, observed), seg in zip(holdout.observed_caps, holdout.cycle_boundaries):
        state = rolled.states[rolled.boundaries[seg - 1]]
        caps = np.asarray(end_cap_positions(state, bp.topology))
        per_cycle.append(float(np.sqrt(np.mean(np.sum((caps - observed) ** 2, axis=-1)))))
    agg = float(np.sqrt(np.mean([r * r for r in per_cycle])))
    return ValidationReport(per_cycle_rmse=per_cycle, aggregate_rmse=agg)


def generate_synthetic(theta_true: ContactParams, bp: BodyParams,
                       shapes: list[np.ndarray], shape_duration: float,
                       cycles: int, start_state: SystemState,
                       noise_sigma: float = 0.002, seed: int = 0) -> TrainingTrajectory:
    """Simulate a cyclic shape schedule under theta_true and observe the caps
    (with Gaussian noise) at each cycle boundary."""
    if cycles < 1 or not shapes:
        raise ValueError("need >= 1 cycle and >= 1 shape")
    controls = [(Control(s), shape_duration) for _ in range(cycles) for s in shapes]
    rolled = rollout(start_state, controls, theta_true, bp)
    rng = np.random.default_rng(seed)
    per_cycle = len(shapes)
    observed = []
    boundaries = []
    for m in range(cycles):
        seg = per_cycle * (m + 1)
        state = rolled.states[rolled.boundaries[seg - 1]]
        caps = np.asarray(end_cap_positions(state, bp.topology))
        if noise_sigma > 0:
            caps = caps + rng.normal(0.0, noise_sigma, caps.shape)
        observed.append((m, caps))
        boundaries.append(seg)
    return TrainingTrajectory(start_state=start_state.copy(), controls=controls,
                              observed_caps=observed, cycle_boundaries=boundaries)
