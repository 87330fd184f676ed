"""Impulse-based rigid-rod simulation of the cable robot.

Each rod is a rigid body (two motor end caps, axisymmetric inertia); tendons
are tension-only spring-dampers attached at the cap centers; ground contact
is a point contact at each cap center against the plane z = 0, resolved by
sequential impulses with Coulomb friction, restitution, and Baumgarte
penetration recovery.

The step is semi-implicit Euler: forces -> velocities -> contact impulses ->
positions. All math goes through :mod:`.fmad` helpers so the same code path
can carry three directional-derivative lanes for (mu, epsilon, beta); see
:func:`step_with_gradient`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import lru_cache
from types import SimpleNamespace
from typing import Sequence

import numpy as np

from . import fmad
from .fmad import Dual
from .geometry import Topology, default_topology, quat_mul, rod_axis

N_LANES = 3  # derivative lanes: d/d(mu), d/d(epsilon), d/d(beta)

_ROD_OF_CAP = np.array([0, 0, 1, 1, 2, 2])


class IntegrationBlowupError(RuntimeError):
    """The integrator produced a non-finite quantity."""


# -- parameter bundles --------------------------------------------------------


@dataclass(frozen=True)
class ContactParams:
    """Contact/cable parameters; (mu, epsilon, beta) is the identifiable set."""

    mu: float = 0.5
    epsilon: float = 0.0
    beta: float = 0.2
    stiffness: float = 5e4   # N/m per actuated tendon
    damping: float = 50.0    # N*s/m per tendon, active while taut

    def __post_init__(self):
        if not (self.mu >= 0.0):
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if not (0.0 < self.beta <= 1.0):
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if not (self.stiffness > 0.0):
            raise ValueError(f"stiffness must be > 0, got {self.stiffness}")
        if not (self.damping >= 0.0):
            raise ValueError(f"damping must be >= 0, got {self.damping}")

    def theta(self) -> np.ndarray:
        return np.array([self.mu, self.epsilon, self.beta])

    def with_theta(self, theta) -> "ContactParams":
        mu, eps, beta = (float(v) for v in theta)
        return dataclasses.replace(self, mu=mu, epsilon=eps, beta=beta)

    def project_theta(self, theta) -> np.ndarray:
        """Clamp a raw theta onto the valid box (mu >= 0, eps in [0,1], beta in (0,1])."""
        theta = np.asarray(theta, dtype=float)
        return np.array([max(theta[0], 0.0),
                         min(max(theta[1], 0.0), 1.0),
                         min(max(theta[2], 1e-3), 1.0)])


def _default_gravity() -> np.ndarray:
    return np.array([0.0, 0.0, -9.81])


@dataclass
class BodyParams:
    """Newtonian constants, integrator knobs, and the cable topology."""

    rod_mass: float = 0.6
    rod_inertia: float | None = None          # principal, perpendicular to the rod axis
    rod_inertia_axial: float | None = None
    gravity: np.ndarray = field(default_factory=_default_gravity)
    dt: float = 1e-3
    passive_rest_length: float = 0.10
    passive_stiffness: float = 100.0
    motor_speed: float = 0.1                  # m/s bound on rest-length rate
    slop: float = 1e-4                        # penetration allowance, m
    solver_iters: int = 10
    min_rest_length: float = 0.01
    topology: Topology = field(default_factory=default_topology)

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float)
        if self.rod_inertia is None:
            # mass concentrated at the two motor caps
            self.rod_inertia = self.rod_mass * self.topology.rod_length ** 2 / 4.0
        if self.rod_inertia_axial is None:
            self.rod_inertia_axial = 0.4 * self.rod_mass * self.topology.end_cap_radius ** 2
        if min(self.rod_mass, self.rod_inertia, self.rod_inertia_axial,
               self.passive_rest_length, self.passive_stiffness, self.motor_speed) <= 0:
            raise ValueError("masses, inertias, passive cable constants and motor_speed must be positive")
        if not (0.0 < self.dt <= 0.01):
            raise ValueError(f"dt must be in (0, 0.01], got {self.dt}")
        if self.gravity.shape != (3,) or not np.all(np.isfinite(self.gravity)):
            raise ValueError("gravity must be a finite 3-vector")
        if self.slop <= 0 or self.solver_iters < 1:
            raise ValueError("slop must be > 0 and solver_iters >= 1")


@dataclass(frozen=True, eq=False)
class Control:
    """Target lengths (m) for the six actuated tendons."""

    targets: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.targets, dtype=float)
        object.__setattr__(self, "targets", t)
        if t.shape != (6,) or not np.all(np.isfinite(t)) or np.any(t <= 0):
            raise ValueError(f"targets must be 6 positive finite lengths, got {t}")


# -- state --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RodState:
    position: np.ndarray     # (3,)
    orientation: np.ndarray  # (4,), unit [w,x,y,z]
    lin_vel: np.ndarray      # (3,)
    ang_vel: np.ndarray      # (3,), world frame


@dataclass(eq=False)
class SystemState:
    """Stacked rod states. pos/lin_vel/ang_vel are (3,3), quat is (3,4)."""

    pos: np.ndarray
    quat: np.ndarray
    lin_vel: np.ndarray
    ang_vel: np.ndarray
    rest_lengths: np.ndarray  # (6,) actuated tendon rest lengths
    time: float = 0.0

    @classmethod
    def from_rods(cls, rods: Sequence[RodState], rest_lengths, time: float = 0.0) -> "SystemState":
        return cls(pos=np.array([r.position for r in rods], dtype=float),
                   quat=np.array([r.orientation for r in rods], dtype=float),
                   lin_vel=np.array([r.lin_vel for r in rods], dtype=float),
                   ang_vel=np.array([r.ang_vel for r in rods], dtype=float),
                   rest_lengths=np.asarray(rest_lengths, dtype=float).copy(),
                   time=time)

    @property
    def rods(self) -> list[RodState]:
        return [RodState(self.pos[i].copy(), self.quat[i].copy(),
                         self.lin_vel[i].copy(), self.ang_vel[i].copy()) for i in range(3)]

    def copy(self) -> "SystemState":
        return SystemState(self.pos.copy(), self.quat.copy(), self.lin_vel.copy(),
                           self.ang_vel.copy(), self.rest_lengths.copy(), self.time)

    def validate(self):
        if self.pos.shape != (3, 3) or self.quat.shape != (3, 4) \
                or self.lin_vel.shape != (3, 3) or self.ang_vel.shape != (3, 3) \
                or self.rest_lengths.shape != (6,):
            raise ValueError("state arrays have wrong shapes")
        for name, arr in (("position", self.pos), ("orientation", self.quat),
                          ("linear velocity", self.lin_vel), ("angular velocity", self.ang_vel),
                          ("rest lengths", self.rest_lengths)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite {name}")
        norms = np.linalg.norm(self.quat, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError(f"orientation quaternions not unit norm: {norms}")
        if np.any(self.rest_lengths <= 0):
            raise ValueError("rest lengths must be positive")


@dataclass(eq=False)
class StateSens:
    """d(state)/d(mu, epsilon, beta): lane-leading copies of the state arrays.

    Rest lengths are driven only by the controls, so their sensitivity is
    identically zero and not carried.
    """

    pos: np.ndarray       # (3, 3, 3)
    quat: np.ndarray      # (3, 3, 4)
    lin_vel: np.ndarray   # (3, 3, 3)
    ang_vel: np.ndarray   # (3, 3, 3)

    @classmethod
    def zeros(cls) -> "StateSens":
        return cls(np.zeros((N_LANES, 3, 3)), np.zeros((N_LANES, 3, 4)),
                   np.zeros((N_LANES, 3, 3)), np.zeros((N_LANES, 3, 3)))

    def copy(self) -> "StateSens":
        return StateSens(self.pos.copy(), self.quat.copy(),
                         self.lin_vel.copy(), self.ang_vel.copy())


def _lift_state(state: SystemState, sens: StateSens | None):
    if sens is None:
        sens = StateSens.zeros()
    return SystemState(pos=Dual(state.pos, sens.pos),
                       quat=Dual(state.quat, sens.quat),
                       lin_vel=Dual(state.lin_vel, sens.lin_vel),
                       ang_vel=Dual(state.ang_vel, sens.ang_vel),
                       rest_lengths=state.rest_lengths,
                       time=state.time)


def _split_state(state: SystemState) -> tuple[SystemState, StateSens]:
    prim = SystemState(state.pos.val, state.quat.val, state.lin_vel.val,
                       state.ang_vel.val, state.rest_lengths, state.time)
    sens = StateSens(state.pos.dot, state.quat.dot, state.lin_vel.dot, state.ang_vel.dot)
    return prim, sens


def _dual_params(cp: ContactParams) -> SimpleNamespace:
    return SimpleNamespace(
        mu=fmad.seed_scalar(cp.mu, 0, N_LANES),
        epsilon=fmad.seed_scalar(cp.epsilon, 1, N_LANES),
        beta=fmad.seed_scalar(cp.beta, 2, N_LANES),
        stiffness=cp.stiffness,
        damping=cp.damping,
    )


# -- cables -------------------------------------------------------------------


def cable_force(length, rest_length, speed, stiffness, damping):
    """Tension-only spring-damper: max(0, k*(len-rest) + c*speed*[len > rest])."""
    ext = length - rest_length
    raw = stiffness * ext + fmad.where(fmad.value(ext) > 0.0, damping * speed, 0.0)
    return fmad.maximum(raw, 0.0)


@lru_cache(maxsize=8)
def _topo_arrays(topo: Topology):
    pairs = topo.cap_pairs()
    inc = np.zeros((6, 9))
    for t, (a, b) in enumerate(pairs):
        inc[a, t] += 1.0
        inc[b, t] -= 1.0
    return pairs[:, 0].copy(), pairs[:, 1].copy(), inc


def _caps_and_offsets(state, topo: Topology):
    axis = rod_axis(state.quat)                       # (3,3)
    half = 0.5 * topo.rod_length
    offs = fmad.stack([axis * (-half), axis * half], axis=1).reshape((6, 3))
    caps = offs + state.pos[_ROD_OF_CAP]
    return axis, offs, caps


def cap_velocities(state, topo: Topology):
    """World velocity of each cap center, (6,3)."""
    _, offs, _ = _caps_and_offsets(state, topo)
    return state.lin_vel[_ROD_OF_CAP] + fmad.cross(state.ang_vel[_ROD_OF_CAP], offs)


# -- contact solver -----------------------------------------------------------


def _solve_contacts(caps, offs, axis, lin_vel, ang_vel, cp, bp, trace=None):
    """Sequential-impulse ground contact at penetrating caps.

    Returns (impulses (6,3), lin_vel', ang_vel', pseudo_lin, pseudo_ang).
    Velocities are the inputs with restitution/friction impulses applied;
    Baumgarte penetration recovery runs as a split impulse on the pseudo
    velocities, which feed position integration only, so the bias never
    injects kinetic energy. Caps on distinct rods do not couple, so each
    Gauss-Seidel sweep processes the end-0 caps of all rods at once, then
    the end-1 caps.
    """
    d_primal = -np.asarray(fmad.value(caps))[:, 2]
    active = d_primal > 0.0
    if trace is not None:
        trace.append(("active", active.copy()))
    if not active.any():
        zero6 = caps * 0.0
        zero3 = lin_vel * 0.0
        return zero6, lin_vel, ang_vel, zero3, zero3

    inv_m = 1.0 / bp.rod_mass
    a_in = 1.0 / bp.rod_inertia
    b_in = 1.0 / bp.rod_inertia_axial
    dt = bp.dt

    vw = lin_vel + 0.0   # working copies (dual-safe)
    ww = ang_vel + 0.0

    groups = []
    for end in (0, 1):
        idx = np.nonzero(active & (np.arange(6) % 2 == end))[0]
        if idx.size == 0:
            continue
        rods = _ROD_OF_CAP[idx]
        r = offs[idx]                        # (m,3) cap offset from rod center
        ax = axis[rods]
        rx, ry, rz = r[:, 0], r[:, 1], r[:, 2]
        # u_i = r x e_i; effective-mass terms use I^-1 v = a v + (b-a) ax (ax.v)
        ba = b_in - a_in

        def iinv_quad(u, v, ax=ax):
            return a_in * fmad.dot_last(u, v) + ba * fmad.dot_last(ax, u) * fmad.dot_last(ax, v)

        zero = rx * 0.0
        u_x = fmad.stack([zero, rz, -ry], axis=-1)
        u_y = fmad.stack([-rz, zero, rx], axis=-1)
        u_n = fmad.stack([ry, -rx, zero], axis=-1)
        kn = inv_m + iinv_quad(u_n, u_n)
        kxx = inv_m + iinv_quad(u_x, u_x)
        kyy = inv_m + iinv_quad(u_y, u_y)
        kxy = iinv_quad(u_x, u_y)
        det = kxx * kyy - kxy * kxy

        v_c = vw[rods] + fmad.cross(ww[rods], r)
        vn_pre = v_c[:, 2]
        depth = -caps[idx, 2]
        bias = (cp.beta / dt) * fmad.maximum(depth - bp.slop, 0.0)
        target = -cp.epsilon * vn_pre

        groups.append(SimpleNamespace(
            idx=idx, rods=rods, r=r, ax=ax, u_n=u_n, kn=kn, kxx=kxx, kyy=kyy,
            kxy=kxy, det=det, target=target, bias=bias,
            jn=zero + 0.0, jt=r[:, :2] * 0.0, pn=zero + 0.0))

    pv = lin_vel * 0.0   # pseudo velocities: penetration recovery only
    pw = ang_vel * 0.0

    for _ in range(bp.solver_iters):
        for g in groups:
            v_c = vw[g.rods] + fmad.cross(ww[g.rods], g.r)
            vn = v_c[:, 2]
            jn_new = fmad.maximum(g.jn + (g.target - vn) / g.kn, 0.0)
            d_n = jn_new - g.jn
            g.jn = jn_new
            # tangential: aim at zero slip, then clamp to the cone
            vx, vy = v_c[:, 0], v_c[:, 1]
            djx = -(g.kyy * vx - g.kxy * vy) / g.det
            djy = -(-g.kxy * vx + g.kxx * vy) / g.det
            jt_try = g.jt + fmad.stack([djx, djy], axis=-1)
            # clamp before the sqrt: at jt_try == 0 the cone branch is never
            # taken, and this keeps the derivative finite there
            nrm = fmad.sqrt(fmad.maximum(fmad.dot_last(jt_try, jt_try), 1e-40))
            bound = cp.mu * jn_new
            scale = fmad.where(fmad.value(nrm) > fmad.value(bound),
                               bound / fmad.maximum(nrm, 1e-20), 1.0)
            jt_new = jt_try * scale[:, None]
            d_t = jt_new - g.jt
            g.jt = jt_new

            imp = fmad.stack([d_t[:, 0], d_t[:, 1], d_n], axis=-1)
            vw[g.rods] = vw[g.rods] + imp * inv_m
            tq = fmad.cross(g.r, imp)
            ww[g.rods] = ww[g.rods] + (a_in * tq + (b_in - a_in) * g.ax * fmad.dot_last(g.ax, tq)[:, None])

            # split-impulse bias pass: normal only, frictionless
            pn_vel = pv[g.rods][:, 2] + fmad.dot_last(pw[g.rods], g.u_n)
            pn_new = fmad.maximum(g.pn + (g.bias - pn_vel) / g.kn, 0.0)
            d_p = pn_new - g.pn
            g.pn = pn_new
            pimp = fmad.stack([d_p * 0.0, d_p * 0.0, d_p], axis=-1)
            pv[g.rods] = pv[g.rods] + pimp * inv_m
            tqp = g.u_n * d_p[:, None]
            pw[g.rods] = pw[g.rods] + (a_in * tqp + (b_in - a_in) * g.ax * fmad.dot_last(g.ax, tqp)[:, None])

    impulses = caps * 0.0
    for g in groups:
        impulses[g.idx] = fmad.stack([g.jt[:, 0], g.jt[:, 1], g.jn], axis=-1)
        if trace is not None:
            clamped = np.asarray(fmad.value(fmad.norm_last(g.jt))) >= \
                np.asarray(fmad.value(cp.mu * g.jn)) - 1e-12
            trace.append(("cone", g.idx.copy(), clamped))
    return impulses, vw, ww, pv, pw


def resolve_contacts(state: SystemState, cp: ContactParams, bp: BodyParams):
    """Contact impulses (6,3) for the state's caps at its current velocities."""
    topo = bp.topology
    axis, offs, caps = _caps_and_offsets(state, topo)
    imp, _, _, _, _ = _solve_contacts(caps, offs, axis, state.lin_vel, state.ang_vel, cp, bp)
    return imp


# -- step / rollout -----------------------------------------------------------


def _check_finite(state: SystemState):
    for name, arr in (("position", state.pos), ("orientation", state.quat),
                      ("linear velocity", state.lin_vel), ("angular velocity", state.ang_vel)):
        v = np.asarray(fmad.value(arr))
        if not np.all(np.isfinite(v)):
            raise IntegrationBlowupError(
                f"non-finite {name} at t={state.time:.4f}s; reduce dt or stiffness")


def step(state: SystemState, control: Control, cp, bp: BodyParams,
         rest_rate: np.ndarray | None = None, trace=None) -> SystemState:
    """One semi-implicit Euler step. Pure: returns a new state.

    ``rest_rate`` overrides the default bang-bang move of the rest lengths
    toward the control targets (the gait scheduler passes its PID rates);
    either way the rate is clamped to +/- motor_speed.
    """
    topo = bp.topology
    dt = bp.dt
    rest = state.rest_lengths
    if rest_rate is None:
        rate = np.clip((control.targets - rest) / dt, -bp.motor_speed, bp.motor_speed)
    else:
        rate = np.clip(np.asarray(rest_rate, dtype=float), -bp.motor_speed, bp.motor_speed)
    rest_new = np.maximum(rest + rate * dt, bp.min_rest_length)

    ia, ib, inc = _topo_arrays(topo)
    axis, offs, caps = _caps_and_offsets(state, topo)
    cap_vel = state.lin_vel[_ROD_OF_CAP] + fmad.cross(state.ang_vel[_ROD_OF_CAP], offs)

    pa, pb = caps[ia], caps[ib]
    seg = pb - pa
    length = fmad.norm_last(seg)
    direction = seg / length[:, None]
    speed = fmad.dot_last(direction, cap_vel[ib] - cap_vel[ia])

    k9 = np.empty(9)
    k9[:6] = cp.stiffness
    k9[6:] = bp.passive_stiffness
    rest9 = np.empty(9)
    rest9[:6] = rest_new
    rest9[6:] = bp.passive_rest_length
    tension = cable_force(length, rest9, speed, k9, cp.damping)

    f_t = direction * tension[:, None]          # force on cap a, toward b
    cap_f = inc @ f_t                            # (6,3)
    rod_f = cap_f.reshape((3, 2, 3)).sum(axis=1) + bp.rod_mass * bp.gravity
    rod_tq = fmad.cross(offs, cap_f).reshape((3, 2, 3)).sum(axis=1)

    a_in = 1.0 / bp.rod_inertia
    b_in = 1.0 / bp.rod_inertia_axial
    v1 = state.lin_vel + rod_f * (dt / bp.rod_mass)
    w1 = state.ang_vel + dt * (a_in * rod_tq
                               + (b_in - a_in) * axis * fmad.dot_last(axis, rod_tq)[:, None])

    _, v2, w2, pv, pw = _solve_contacts(caps, offs, axis, v1, w1, cp, bp, trace=trace)

    # pseudo velocities move positions out of penetration but are not retained
    vi = v2 + pv
    wi = w2 + pw
    pos_new = state.pos + vi * dt
    wq = fmad.stack([wi[:, 0] * 0.0, wi[:, 0], wi[:, 1], wi[:, 2]], axis=-1)
    quat_new = state.quat + quat_mul(wq, state.quat) * (0.5 * dt)
    quat_new = quat_new / fmad.norm_last(quat_new)[:, None]

    out = SystemState(pos=pos_new, quat=quat_new, lin_vel=v2, ang_vel=w2,
                      rest_lengths=rest_new, time=state.time + dt)
    _check_finite(out)
    return out


def step_with_gradient(state: SystemState, control: Control, cp: ContactParams,
                       bp: BodyParams, sens: StateSens | None = None,
                       rest_rate: np.ndarray | None = None) -> tuple[SystemState, StateSens]:
    """Step with forward-mode d(state)/d(mu, epsilon, beta).

    ``sens`` is the incoming state sensitivity (zeros if None), so repeated
    calls compose the derivative through a whole rollout.
    """
    dual = _lift_state(state, sens)
    out = step(dual, control, _dual_params(cp), bp, rest_rate=rest_rate)
    return _split_state(out)


@dataclass
class Trajectory:
    """Snapshots from a rollout; ``boundaries`` indexes the control-boundary
    snapshots within ``states``. ``sens`` aligns with ``states`` in gradient
    mode."""

    states: list[SystemState]
    boundaries: list[int]
    sens: list[StateSens] | None = None

    def __len__(self):
        return len(self.states)

    def final(self) -> SystemState:
        return self.states[-1]


def rollout(state: SystemState, controls: Sequence[tuple[Control, float]],
            cp: ContactParams, bp: BodyParams, stride: int | None = None,
            with_gradient: bool = False, sens: StateSens | None = None) -> Trajectory:
    """Run a (control, duration) schedule. Snapshots: the start state, every
    ``stride``-th step within each control segment, and every segment end."""
    if not controls:
        raise ValueError("empty control schedule")
    if stride is not None and stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")

    if with_gradient:
        cur = _lift_state(state, sens)
        params = _dual_params(cp)
    else:
        cur = state.copy()
        params = cp

    def snap(s):
        if with_gradient:
            prim, sn = _split_state(s)
            states.append(prim)
            sens_list.append(sn)
        else:
            states.append(s)

    states: list[SystemState] = []
    sens_list: list[StateSens] = []
    boundaries: list[int] = []
    snap(cur)
    for control, duration in controls:
        n = int(round(duration / bp.dt))
        if n < 1:
            raise ValueError(f"control duration {duration} shorter than dt")
        for i in range(n):
            cur = step(cur, control, params, bp)
            last = i == n - 1
            if last or (stride is not None and (i + 1) % stride == 0):
                snap(cur)
        boundaries.append(len(states) - 1)
    return Trajectory(states=states, boundaries=boundaries,
                      sens=sens_list if with_gradient else None)


# -- energy -------------------------------------------------------------------


def kinetic_energy(state: SystemState, bp: BodyParams) -> float:
    axis = np.asarray(fmad.value(rod_axis(state.quat)))
    v = np.asarray(fmad.value(state.lin_vel))
    w = np.asarray(fmad.value(state.ang_vel))
    ke_lin = 0.5 * bp.rod_mass * np.sum(v * v)
    w_ax = np.sum(axis * w, axis=-1)
    ke_ang = 0.5 * (bp.rod_inertia * np.sum(w * w)
                    + (bp.rod_inertia_axial - bp.rod_inertia) * np.sum(w_ax * w_ax))
    return float(ke_lin + ke_ang)


def mechanical_energy(state: SystemState, cp: ContactParams, bp: BodyParams) -> float:
    """Kinetic + gravitational + elastic (tension-only tendons)."""
    topo = bp.topology
    ia, ib, _ = _topo_arrays(topo)
    _, _, caps = _caps_and_offsets(state, topo)
    caps = np.asarray(fmad.value(caps))
    length = np.linalg.norm(caps[ib] - caps[ia], axis=-1)
    rest9 = np.concatenate([state.rest_lengths, np.full(3, bp.passive_rest_length)])
    k9 = np.concatenate([np.full(6, cp.stiffness), np.full(3, bp.passive_stiffness)])
    ext = np.maximum(length - rest9, 0.0)
    pe_elastic = 0.5 * np.sum(k9 * ext * ext)
    pos = np.asarray(fmad.value(state.pos))
    pe_grav = -bp.rod_mass * float(np.sum(pos @ bp.gravity))
    return kinetic_energy(state, bp) + pe_grav + float(pe_elastic)
