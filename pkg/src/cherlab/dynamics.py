"""Free-floating dual-arm manipulator: kinematics, momentum coupling and a
velocity-resolved, momentum-consistent integrator.

The base carries two serial revolute chains. Arm motion is commanded as
desired joint rates; the base twist is never integrated from forces but
recovered algebraically from zero total momentum,

    H_b * base_twist + H_r1 * dtheta1 + H_r2 * dtheta2 = 0,

at every substep. Momentum is taken about the base centre of mass and
expressed in the inertial frame, which makes ``H_b`` the (symmetric,
positive definite) spatial inertia of the whole system seen from the base.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .so3 import quat_to_matrix, rot_x, rot_y, skew, wrap_angle


@dataclass
class Link:
    """One revolute joint and the rigid link it drives."""

    parent: int
    axis: np.ndarray
    offset_rot: np.ndarray
    offset_pos: np.ndarray
    mass: float
    com: np.ndarray
    inertia: np.ndarray


@dataclass
class Arm:
    mount_rot: np.ndarray
    mount_pos: np.ndarray
    links: list[Link]
    tool_rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    tool_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def dof(self) -> int:
        return len(self.links)


@dataclass
class KinematicChain:
    base_mass: float
    base_inertia: np.ndarray
    arms: tuple[Arm, Arm]
    planar: bool = False

    def __post_init__(self):
        if len(self.arms) != 2:
            raise ValueError("exactly two arms are required")
        if not self.base_mass > 0:
            raise ValueError("base mass must be positive")
        _check_spd(self.base_inertia, "base inertia", strict=True)
        dofs = {a.dof for a in self.arms}
        if len(dofs) != 1:
            raise ValueError("both arms must have the same number of joints")
        for arm in self.arms:
            for i, link in enumerate(arm.links):
                if link.parent != i - 1:
                    raise ValueError("arms must be serial chains rooted on the base")
                if abs(np.linalg.norm(link.axis) - 1.0) > 1e-12:
                    raise ValueError("joint axes must be unit vectors")
                # massless links are allowed for decoupled debug chains
                if link.mass < 0:
                    raise ValueError("link mass must be non-negative")
                _check_spd(link.inertia, "link inertia", strict=False)
        self.packed = self._pack()

    def _pack(self) -> tuple:
        """Array form consumed by the compiled kernels (chain is treated as immutable)."""
        arms = self.arms

        def stack(fn):
            return np.ascontiguousarray(np.array([[fn(l) for l in a.links] for a in arms], dtype=float))

        return (
            float(self.base_mass),
            np.ascontiguousarray(self.base_inertia, dtype=float),
            np.array([a.mount_rot for a in arms], dtype=float),
            np.array([a.mount_pos for a in arms], dtype=float),
            stack(lambda l: l.axis),
            stack(lambda l: l.offset_rot),
            stack(lambda l: l.offset_pos),
            stack(lambda l: l.com),
            stack(lambda l: l.mass),
            stack(lambda l: l.inertia),
            np.array([a.tool_rot for a in arms], dtype=float),
            np.array([a.tool_pos for a in arms], dtype=float),
        )

    @property
    def dof(self) -> int:
        return self.arms[0].dof

    @property
    def total_mass(self) -> float:
        return self.base_mass + sum(l.mass for a in self.arms for l in a.links)


def _check_spd(m: np.ndarray, name: str, strict: bool) -> None:
    if m.shape != (3, 3) or not np.allclose(m, m.T, atol=1e-12):
        raise ValueError(f"{name} must be a symmetric 3x3 matrix")
    w = np.linalg.eigvalsh(m)
    if (strict and w.min() <= 0) or (not strict and w.min() < -1e-12):
        raise ValueError(f"{name} must be positive {'definite' if strict else 'semidefinite'}")


def rod_inertia(mass: float, length: float, direction: np.ndarray, radius: float = 0.05) -> np.ndarray:
    """Solid-cylinder inertia about its COM for a rod along ``direction``."""
    if length == 0.0:
        return 0.5 * mass * radius**2 * np.eye(3)
    u = direction / np.linalg.norm(direction)
    axial = 0.5 * mass * radius**2
    transverse = mass * (3 * radius**2 + length**2) / 12.0
    return transverse * (np.eye(3) - np.outer(u, u)) + axial * np.outer(u, u)


def cube_inertia(mass: float, side: float) -> np.ndarray:
    return mass * side**2 / 6.0 * np.eye(3)


UR5_DH = {
    "d": [0.089159, 0.0, 0.0, 0.10915, 0.09465, 0.0823],
    "a": [0.0, -0.425, -0.39225, 0.0, 0.0, 0.0],
    "alpha": [np.pi / 2, 0.0, 0.0, np.pi / 2, -np.pi / 2, 0.0],
}
UR5_MASSES = [3.7, 8.4, 2.3, 1.2, 1.2, 0.25]


def _dh_arm(mount_rot, mount_pos, d, a, alpha, masses) -> Arm:
    z = np.array([0.0, 0.0, 1.0])
    fixed = [(rot_x(al), np.array([ai, 0.0, di])) for di, ai, al in zip(d, a, alpha)]
    links = []
    for i, m in enumerate(masses):
        off_rot, off_pos = (np.eye(3), np.zeros(3)) if i == 0 else fixed[i - 1]
        seg = fixed[i][1]
        links.append(
            Link(
                parent=i - 1,
                axis=z.copy(),
                offset_rot=off_rot.copy(),
                offset_pos=off_pos.copy(),
                mass=float(m),
                com=0.5 * seg,
                inertia=rod_inertia(m, float(np.linalg.norm(seg)), seg if np.linalg.norm(seg) > 0 else z),
            )
        )
    return Arm(mount_rot=mount_rot, mount_pos=mount_pos, links=links, tool_rot=fixed[-1][0], tool_pos=fixed[-1][1])


def ur5_dual_arm(
    base_mass: float = 400.0,
    base_side: float = 1.0,
    masses=UR5_MASSES,
    mount_y: float = 0.35,
) -> KinematicChain:
    """Cubic base with two UR5-like arms on its +x face, both pointing along +x."""
    r = rot_y(np.pi / 2)
    arms = tuple(
        _dh_arm(r, np.array([0.5 * base_side, s * mount_y, 0.0]), UR5_DH["d"], UR5_DH["a"], UR5_DH["alpha"], masses)
        for s in (1.0, -1.0)
    )
    return KinematicChain(base_mass, cube_inertia(base_mass, base_side), arms)


def planar_dual_arm(
    link_lengths=(0.6, 0.6),
    link_masses=(2.0, 2.0),
    base_mass: float = 50.0,
    base_side: float = 1.0,
    mount_x: float = 0.5,
    mount_y: float = 0.3,
    point_masses: bool = False,
) -> KinematicChain:
    """2+2-DoF debug manipulator moving in the xy plane.

    Both arms sit on the +x face at y = +/- ``mount_y``. With
    ``point_masses`` each link mass sits at the link tip with no rotational
    inertia; otherwise links are slender rods with the COM at mid-length.
    """
    z = np.array([0.0, 0.0, 1.0])
    arms = []
    for s in (1.0, -1.0):
        links = []
        for i, (length, m) in enumerate(zip(link_lengths, link_masses)):
            off = np.zeros(3) if i == 0 else np.array([link_lengths[i - 1], 0.0, 0.0])
            if point_masses:
                com, inertia = np.array([length, 0.0, 0.0]), np.zeros((3, 3))
            else:
                com = np.array([0.5 * length, 0.0, 0.0])
                inertia = rod_inertia(m, length, np.array([1.0, 0.0, 0.0]), radius=0.03)
            links.append(Link(i - 1, z.copy(), np.eye(3), off, float(m), com, inertia))
        arms.append(
            Arm(np.eye(3), np.array([mount_x, s * mount_y, 0.0]), links, tool_pos=np.array([link_lengths[-1], 0.0, 0.0]))
        )
    return KinematicChain(base_mass, cube_inertia(base_mass, base_side), tuple(arms), planar=True)


# ---------------------------------------------------------------------------
# state and kinematics


@dataclass
class SystemState:
    base_pos: np.ndarray
    base_quat: np.ndarray
    base_lin_vel: np.ndarray
    base_ang_vel: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    theta_dot1: np.ndarray
    theta_dot2: np.ndarray
    p_e1: np.ndarray
    p_e2: np.ndarray
    t: float = 0.0

    @property
    def base_twist(self) -> np.ndarray:
        return np.concatenate([self.base_lin_vel, self.base_ang_vel])

    @property
    def thetas(self) -> tuple[np.ndarray, np.ndarray]:
        return self.theta1, self.theta2

    @property
    def theta_dots(self) -> tuple[np.ndarray, np.ndarray]:
        return self.theta_dot1, self.theta_dot2

    def copy(self) -> "SystemState":
        return SystemState(**{k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in vars(self).items()})

    def as_row(self) -> np.ndarray:
        """Flat row in the trace-CSV column order."""
        return np.concatenate(
            [[self.t], self.base_pos, self.base_quat, self.theta1, self.theta2,
             self.theta_dot1, self.theta_dot2, self.p_e1, self.p_e2]
        )


TRACE_COLUMNS_TEMPLATE = ["t", "base_x", "base_y", "base_z", "base_qw", "base_qx", "base_qy", "base_qz"]


def trace_columns(dof: int) -> list[str]:
    cols = list(TRACE_COLUMNS_TEMPLATE)
    cols += [f"theta{a}_{j}" for a in (1, 2) for j in range(dof)]
    cols += [f"theta_dot{a}_{j}" for a in (1, 2) for j in range(dof)]
    cols += ["pe1_x", "pe1_y", "pe1_z", "pe2_x", "pe2_y", "pe2_z"]
    return cols


@dataclass
class ArmFrames:
    """World-frame quantities of one arm at a configuration."""

    joint_pos: np.ndarray  # (n, 3) joint origins
    joint_axis: np.ndarray  # (n, 3) world joint axes
    link_rot: np.ndarray  # (n, 3, 3) body rotations
    com: np.ndarray  # (n, 3) link COMs
    ee_pos: np.ndarray
    ee_rot: np.ndarray


def _check_angles(theta: np.ndarray) -> None:
    if not np.all(np.isfinite(theta)) or np.any(np.abs(theta) > np.pi + 1e-9):
        raise ValueError("joint angles must be finite and lie in [-pi, pi]")


def arm_frames(chain: KinematicChain, arm: int, base_pos, base_rot, theta) -> ArmFrames:
    p = chain.packed
    out = K.arm_frames(p[2][arm], p[3][arm], p[4][arm], p[5][arm], p[6][arm], p[7][arm], p[10][arm], p[11][arm],
                       np.asarray(base_pos, float), np.asarray(base_rot, float), np.asarray(theta, float))
    return ArmFrames(*out)


def forward_kinematics(chain: KinematicChain, base_pos, base_quat, theta1, theta2):
    """End-effector poses ``((p_e1, R_e1), (p_e2, R_e2))`` in the inertial frame."""
    theta1, theta2 = np.asarray(theta1, float), np.asarray(theta2, float)
    _check_angles(theta1)
    _check_angles(theta2)
    base_rot = quat_to_matrix(np.asarray(base_quat, float))
    out = []
    for arm, th in enumerate((theta1, theta2)):
        f = arm_frames(chain, arm, base_pos, base_rot, th)
        out.append((f.ee_pos, f.ee_rot))
    return tuple(out)


def make_state(chain: KinematicChain, theta1, theta2, base_pos=None, base_quat=None) -> SystemState:
    """State at rest in the given configuration."""
    base_pos = np.zeros(3) if base_pos is None else np.asarray(base_pos, float)
    base_quat = np.array([1.0, 0.0, 0.0, 0.0]) if base_quat is None else np.asarray(base_quat, float)
    theta1 = wrap_angle(np.asarray(theta1, float))
    theta2 = wrap_angle(np.asarray(theta2, float))
    (p1, _), (p2, _) = forward_kinematics(chain, base_pos, base_quat, theta1, theta2)
    n = chain.dof
    return SystemState(base_pos.copy(), base_quat.copy(), np.zeros(3), np.zeros(3), theta1, theta2,
                       np.zeros(n), np.zeros(n), p1, p2, 0.0)


@dataclass
class JacobianSet:
    J_b: tuple[np.ndarray, np.ndarray]
    J_r: tuple[np.ndarray, np.ndarray]

    def ee_twist(self, arm: int, base_twist, theta_dot) -> np.ndarray:
        return self.J_b[arm] @ base_twist + self.J_r[arm] @ theta_dot


def compute_jacobians(chain: KinematicChain, state: SystemState) -> JacobianSet:
    """End-effector twist ``[v; w]`` maps w.r.t. base twist and joint rates."""
    base_rot = quat_to_matrix(state.base_quat)
    jb, jr = [], []
    for arm, th in enumerate(state.thetas):
        f = arm_frames(chain, arm, state.base_pos, base_rot, th)
        b = np.zeros((6, 6))
        b[:3, :3] = np.eye(3)
        b[:3, 3:] = -skew(f.ee_pos - state.base_pos)
        b[3:, 3:] = np.eye(3)
        r = np.zeros((6, chain.dof))
        r[:3] = np.cross(f.joint_axis, f.ee_pos - f.joint_pos).T
        r[3:] = f.joint_axis.T
        jb.append(b)
        jr.append(r)
    return JacobianSet(tuple(jb), tuple(jr))


@dataclass
class MomentumMatrices:
    """Coupling inertia about the base COM: ``H_b`` (6x6) and ``H_r[i]`` (6xn).

    ``H_rr`` holds the joint-space inertia of each arm (base held fixed).
    """

    H_b: np.ndarray
    H_r: tuple[np.ndarray, np.ndarray]
    H_rr: tuple[np.ndarray, np.ndarray]

    def reduced_joint_inertia(self, arm: int) -> np.ndarray:
        """Joint-space inertia of one arm with the free base eliminated."""
        h = self.H_r[arm]
        return self.H_rr[arm] - h.T @ np.linalg.solve(self.H_b, h)


def compute_coupling_inertia(chain: KinematicChain, state: SystemState) -> MomentumMatrices:
    p = chain.packed
    thetas = np.array([state.theta1, state.theta2], dtype=float)
    hb, hr, hrr, _ = K.coupling(*p[:12], np.asarray(state.base_pos, float), quat_to_matrix(state.base_quat), thetas)
    return MomentumMatrices(hb, (hr[0], hr[1]), (hrr[0], hrr[1]))


def base_velocity_from_momentum(mats: MomentumMatrices, theta_dot1, theta_dot2) -> np.ndarray:
    """Base twist ``[v_b; w_b]`` that keeps total momentum at zero."""
    rhs = mats.H_r[0] @ np.asarray(theta_dot1, float) + mats.H_r[1] @ np.asarray(theta_dot2, float)
    return -np.linalg.solve(mats.H_b, rhs)


def link_sample_points(chain: KinematicChain, state: SystemState, per_link: int = 5) -> np.ndarray:
    """Points along each link segment (joint origin to next joint or tool point)."""
    base_rot = quat_to_matrix(state.base_quat)
    s = np.linspace(0.0, 1.0, per_link)[None, :, None]
    pts = []
    for arm, th in enumerate(state.thetas):
        f = arm_frames(chain, arm, state.base_pos, base_rot, th)
        ends = np.vstack([f.joint_pos[1:], f.ee_pos[None]])
        pts.append((f.joint_pos[:, None, :] + s * (ends - f.joint_pos)[:, None, :]).reshape(-1, 3))
    return np.vstack(pts)


@dataclass
class ActuationLimits:
    joint_angle: float = np.pi
    joint_rate: float = 1.0
    torque: float = 150.0
    kp: float = 20.0
    kd: float = 1.0
    keep_out_radius: float = 0.45

    def __post_init__(self):
        for name in ("joint_angle", "joint_rate", "torque", "kp", "kd", "keep_out_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"limit {name!r} must be strictly positive")

    @property
    def time_constant(self) -> float:
        return self.kd / self.kp


class Simulator:
    """Steps a :class:`SystemState` under desired-joint-rate commands.

    One control step of length ``dt`` is split into ``substeps`` semi-implicit
    Euler substeps. In each substep the executed joint rate relaxes toward the
    clamped command with the PD loop's time constant ``kd / kp`` (acceleration
    capped so the implied joint torque stays within the torque limit), the base
    twist is recovered from momentum conservation, and poses are integrated.
    """

    def __init__(self, chain: KinematicChain, limits: ActuationLimits | None = None, substeps: int = 4,
                 noise_std: float = 0.0):
        self.chain = chain
        self.limits = limits or ActuationLimits()
        if substeps < 1:
            raise ValueError("substeps must be >= 1")
        self.substeps = substeps
        self.noise_std = float(noise_std)

    @property
    def action_dim(self) -> int:
        return 2 * self.chain.dof

    def collides(self, state: SystemState) -> bool:
        pts = link_sample_points(self.chain, state)
        d = np.linalg.norm(pts - state.base_pos, axis=1)
        return bool(np.any(d < self.limits.keep_out_radius))

    def step(self, state: SystemState, action, dt: float, rng: np.random.Generator | None = None):
        """Advance one control step. Returns ``(next_state, collided)``.

        On a keep-out violation the motion of the step is discarded: the
        returned state keeps the previous pose with the arms at rest.
        """
        if not dt > 0:
            raise ValueError("dt must be positive")
        action = np.asarray(action, dtype=float)
        n = self.chain.dof
        if action.shape != (2 * n,):
            raise ValueError(f"action must have shape ({2 * n},), got {action.shape}")
        lim = self.limits
        cmd = np.clip(action, -lim.joint_rate, lim.joint_rate)
        h = dt / self.substeps
        alpha = 1.0 - np.exp(-h / lim.time_constant)
        if self.noise_std > 0.0:
            gen = rng if rng is not None else np.random.default_rng()
            noise = gen.normal(0.0, self.noise_std, size=(self.substeps, 2 * n))
        else:
            noise = np.zeros((self.substeps, 2 * n))
        pos, quat, th, thd = K.integrate(
            *self.chain.packed, np.asarray(state.base_pos, float), np.asarray(state.base_quat, float),
            np.concatenate(state.thetas), np.concatenate(state.theta_dots), cmd, h, self.substeps, alpha,
            float(lim.torque), float(lim.joint_rate), float(lim.joint_angle), noise,
        )
        if not (np.all(np.isfinite(th)) and np.all(np.isfinite(thd)) and np.all(np.isfinite(pos))):
            raise FloatingPointError("non-finite value during integration")
        nxt = self.settle(pos, quat, th, thd, state.t + dt)
        if self.collides(nxt):
            frozen = self.settle(state.base_pos, state.base_quat, np.concatenate(state.thetas), np.zeros(2 * n),
                                 state.t + dt)
            return frozen, True
        return nxt, False

    def settle(self, pos, quat, th, thd, t) -> SystemState:
        """Assemble a state, recomputing base twist and EE positions from the configuration."""
        n = self.chain.dof
        th = np.asarray(th, float)
        thd = np.asarray(thd, float)
        hb, hr, _, ee = K.coupling(*self.chain.packed, np.asarray(pos, float), quat_to_matrix(quat),
                                   np.ascontiguousarray(th.reshape(2, n)))
        twist = -np.linalg.solve(hb, hr[0] @ thd[:n] + hr[1] @ thd[n:])
        return SystemState(np.array(pos, float), np.array(quat, float), twist[:3], twist[3:], th[:n].copy(),
                           th[n:].copy(), thd[:n].copy(), thd[n:].copy(), ee[0].copy(), ee[1].copy(), float(t))


def write_trajectory(states: list[SystemState], path) -> None:
    """CSV with one row per state in :func:`trace_columns` order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace_columns(len(states[0].theta1)))
        for s in states:
            w.writerow(s.as_row().tolist())


def rollout(sim: Simulator, state: SystemState, actions, dt: float, rng=None) -> list[SystemState]:
    states = [state]
    for a in actions:
        state, _ = sim.step(state, a, dt, rng)
        states.append(state)
    return states
