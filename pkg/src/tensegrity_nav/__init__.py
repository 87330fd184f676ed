"""Simulation, identification, and navigation for a 3-bar tensegrity robot.

Layers, bottom to top: fmad (forward-mode duals), geometry (SE(2), quats,
cable routing), physics (rigid-rod dynamics with differentiable ground
contact), gaits (PID shape tracking and motion primitives), sysid (contact
parameter fitting), planner (A* over primitives), navigator (closed-loop
execution with disturbances), files/plots/cli (artifacts).
"""

from .geometry import (DegenerateHeadingError, Pose2, Tendon, Topology,
                       default_topology, end_cap_positions, extract_pose2,
                       pose2_from_caps, se2_apply, se2_between, se2_compose,
                       se2_inverse, transform_state_se2, wrap_angle)
from .physics import (BodyParams, ContactParams, Control, IntegrationBlowupError,
                      RodState, SystemState, Trajectory, cable_force,
                      kinetic_energy, mechanical_energy, resolve_contacts,
                      rollout, step, step_with_gradient)
from .gaits import (Gait, GaitRunResult, PidGains, PidState, Primitive,
                    PrimitiveBuildError, PrimitiveSpec, SettleError, TargetShape,
                    apply_symmetry, assembled_state, build_primitive_library,
                    default_specs, make_gait, pid_rate, run_gait, search_gait,
                    settle_rest_state, simulate_primitive)
from .sysid import (DivergenceError, FitReport, TrainingTrajectory,
                    ValidationReport, cycle_loss, fit, generate_synthetic,
                    trajectory_loss, validate)
from .planner import (HeuristicField, NoPath, Plan, PlanNode, Scenario,
                      build_heuristic, collision_detect, plan, propagate,
                      reconstruct)
from .navigator import (BatchResult, Disturbance, Executor, NavLog, NavStep,
                        Observer, execute_primitive, mirror_primitive, observe,
                        run_batch, run_closed_loop, run_open_loop)

__version__ = "0.1.0"

__all__ = [
    "DegenerateHeadingError", "Pose2", "Tendon", "Topology", "default_topology",
    "end_cap_positions", "extract_pose2", "pose2_from_caps", "se2_apply",
    "se2_between", "se2_compose", "se2_inverse", "transform_state_se2",
    "wrap_angle",
    "BodyParams", "ContactParams", "Control", "IntegrationBlowupError",
    "RodState", "SystemState", "Trajectory", "cable_force", "kinetic_energy",
    "mechanical_energy", "resolve_contacts", "rollout", "step",
    "step_with_gradient",
    "Gait", "GaitRunResult", "PidGains", "PidState", "Primitive",
    "PrimitiveBuildError", "PrimitiveSpec", "SettleError", "TargetShape",
    "apply_symmetry", "assembled_state", "build_primitive_library",
    "default_specs", "make_gait", "pid_rate", "run_gait", "search_gait",
    "settle_rest_state", "simulate_primitive",
    "DivergenceError", "FitReport", "TrainingTrajectory", "ValidationReport",
    "cycle_loss", "fit", "generate_synthetic", "trajectory_loss", "validate",
    "HeuristicField", "NoPath", "Plan", "PlanNode", "Scenario",
    "build_heuristic", "collision_detect", "plan", "propagate", "reconstruct",
    "BatchResult", "Disturbance", "Executor", "NavLog", "NavStep", "Observer",
    "execute_primitive", "mirror_primitive", "observe", "run_batch",
    "run_closed_loop", "run_open_loop",
    "__version__",
]
