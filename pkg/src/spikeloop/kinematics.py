"""Serial-chain arm model: forward/inverse kinematics, workspace clamping, and
velocity integration with exponential decay toward an anchor.

The chain is six revolute joints (base yaw; shoulder, elbow, wrist pitch; wrist
roll; gripper). The last two joints carry no positional leverage by geometry,
so position IK effectively works with four degrees of freedom. Dimensions are
data, not constants: chains load from a small text file, one joint per line.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DT_S = 0.020
DEFAULT_DECAY = 0.95

IK_DAMPING = 0.01
IK_TOL_MM = 0.5
IK_MAX_ITERS = 200
# per-iteration safety caps; Newton-like steps stay well inside them
_MAX_ERR_STEP_MM = 100.0
_MAX_ANGLE_STEP_RAD = 1.0


class ChainFormatError(ValueError):
    """Raised when a chain file cannot be parsed."""


class IKError(RuntimeError):
    """Non-convergence; carries the best angles found and their residual."""

    def __init__(self, message: str, best_angles: np.ndarray, residual_mm: float):
        super().__init__(message)
        self.best_angles = best_angles
        self.residual_mm = residual_mm


@dataclass(frozen=True)
class Joint:
    """Revolute joint: rotation axis, angle limits (rad), offset (mm) to the next joint."""

    axis: np.ndarray
    lo: float
    hi: float
    offset: np.ndarray

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=np.float64)
        offset = np.asarray(self.offset, dtype=np.float64)
        if axis.shape != (3,) or offset.shape != (3,):
            raise ValueError("axis and offset must be 3-vectors")
        norm = np.linalg.norm(axis)
        if abs(norm - 1.0) > 1e-3:
            raise ValueError(f"rotation axis must be unit length, got |axis| = {norm}")
        if self.lo > self.hi:
            raise ValueError(f"joint limits inverted: [{self.lo}, {self.hi}]")
        object.__setattr__(self, "axis", axis / norm)
        object.__setattr__(self, "offset", offset)


@dataclass(frozen=True)
class KinematicChain:
    joints: tuple

    def __post_init__(self):
        joints = tuple(self.joints)
        if len(joints) != 6:
            raise ValueError(f"chain must have 6 joints, got {len(joints)}")
        if self.reach_mm <= 0:
            raise ValueError("degenerate chain: total reach is zero")
        object.__setattr__(self, "joints", joints)

    @property
    def reach_mm(self) -> float:
        return float(sum(np.linalg.norm(j.offset) for j in self.joints))

    @classmethod
    def default(cls) -> "KinematicChain":
        """Desk-scale 6-servo chain, links [30, 110, 110, 60, 30] mm, 340 mm reach."""
        deg = np.deg2rad
        z, y, x = (0.0, 0.0, 1.0), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0)
        return cls(joints=(
            Joint(axis=z, lo=-deg(180), hi=deg(180), offset=(30.0, 0.0, 0.0)),
            Joint(axis=y, lo=-deg(110), hi=deg(110), offset=(110.0, 0.0, 0.0)),
            Joint(axis=y, lo=-deg(150), hi=deg(150), offset=(110.0, 0.0, 0.0)),
            Joint(axis=y, lo=-deg(120), hi=deg(120), offset=(60.0, 0.0, 0.0)),
            Joint(axis=x, lo=-deg(180), hi=deg(180), offset=(30.0, 0.0, 0.0)),
            Joint(axis=x, lo=deg(0), hi=deg(90), offset=(0.0, 0.0, 0.0)),
        ))

    def clamp_angles(self, angles: np.ndarray) -> np.ndarray:
        lo = np.array([j.lo for j in self.joints])
        hi = np.array([j.hi for j in self.joints])
        return np.clip(angles, lo, hi)


# elbow-bent warm start: keeps the solver away from the straight-arm singularity
HOME_ANGLES = np.array([0.0, 0.6, -1.2, 0.6, 0.0, 0.0])


def save_chain(chain: KinematicChain, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("# one joint per line: axis_x axis_y axis_z  lo_deg hi_deg  "
                "offset_x offset_y offset_z (mm)\n")
        for j in chain.joints:
            ax = " ".join(f"{a:g}" for a in j.axis)
            off = " ".join(f"{o:g}" for o in j.offset)
            f.write(f"{ax}  {np.rad2deg(j.lo):g} {np.rad2deg(j.hi):g}  {off}\n")


def load_chain(path) -> KinematicChain:
    joints = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ChainFormatError(
                    f"{path}, line {line_no}: expected 8 numbers "
                    f"(axis, limits deg, offset mm), got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ChainFormatError(
                    f"{path}, line {line_no}: unparseable number") from None
            try:
                joints.append(Joint(axis=np.array(vals[0:3]),
                                    lo=np.deg2rad(vals[3]), hi=np.deg2rad(vals[4]),
                                    offset=np.array(vals[5:8])))
            except ValueError as e:
                raise ChainFormatError(f"{path}, line {line_no}: {e}") from None
    try:
        return KinematicChain(joints=tuple(joints))
    except ValueError as e:
        raise ChainFormatError(f"{path}: {e}") from None


def _rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    c, s = np.cos(angle), np.sin(angle)
    kx, ky, kz = axis
    cross = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return c * np.eye(3) + s * cross + (1.0 - c) * np.outer(axis, axis)


def forward_kinematics(chain: KinematicChain, angles) -> np.ndarray:
    """End-effector position (x, y, z) mm: rotations and offsets applied in order."""
    angles = np.asarray(angles, dtype=np.float64)
    if angles.shape != (len(chain.joints),):
        raise ValueError(f"expected {len(chain.joints)} angles, got {angles.shape}")
    rot = np.eye(3)
    pos = np.zeros(3)
    for joint, q in zip(chain.joints, angles):
        rot = rot @ _rotation_about(joint.axis, float(q))
        pos = pos + rot @ joint.offset
    return pos


def workspace_annulus(chain: KinematicChain) -> tuple:
    """(r_min, r_max) of the reachable annulus used for target clamping.

    The inner bound stays away from deep folds that pin several joints at
    their limits; the outer one keeps clear of the straight-arm singularity.
    """
    reach = chain.reach_mm
    return 0.35 * reach, 0.97 * reach


def clamp_to_workspace(chain: KinematicChain, target, *, z_work: float = 0.0,
                       r_min: float | None = None, r_max: float | None = None,
                       fallback_bearing: float = 0.0) -> np.ndarray:
    """Project a planar target into the reachable annulus at working height.

    Accepts (x, y) or (x, y, z); the z coordinate is forced to z_work either
    way. A target at the exact origin has no bearing of its own, so it lands on
    the inner boundary along fallback_bearing (callers pass the bearing of the
    previous position).
    """
    t = np.asarray(target, dtype=np.float64)
    if t.shape == (2,):
        x, y = t
    elif t.shape == (3,):
        x, y = t[0], t[1]
    else:
        raise ValueError(f"target must be 2- or 3-vector, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("target must be finite")
    lo, hi = workspace_annulus(chain)
    if r_min is not None:
        lo = r_min
    if r_max is not None:
        hi = r_max
    r = float(np.hypot(x, y))
    if r < 1e-12:
        bearing = fallback_bearing
        x, y = lo * np.cos(bearing), lo * np.sin(bearing)
    elif r < lo:
        x, y = x * lo / r, y * lo / r
    elif r > hi:
        x, y = x * hi / r, y * hi / r
    return np.array([x, y, z_work])


def _fk_batch(chain: KinematicChain, configs: np.ndarray) -> np.ndarray:
    """Vectorized FK over M configurations (M x 6) -> positions (M x 3)."""
    m = configs.shape[0]
    rot = np.broadcast_to(np.eye(3), (m, 3, 3)).copy()
    pos = np.zeros((m, 3))
    for j, joint in enumerate(chain.joints):
        q = configs[:, j]
        c, s = np.cos(q), np.sin(q)
        kx, ky, kz = joint.axis
        cross = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
        outer = np.outer(joint.axis, joint.axis)
        rj = (c[:, None, None] * np.eye(3) + s[:, None, None] * cross
              + (1.0 - c)[:, None, None] * outer)
        rot = rot @ rj
        pos += rot @ joint.offset
    return pos


def _numeric_jacobian(chain: KinematicChain, angles: np.ndarray,
                      h: float = 1e-6) -> np.ndarray:
    n = len(chain.joints)
    probes = np.tile(angles, (2 * n, 1))
    idx = np.arange(n)
    probes[idx, idx] += h
    probes[n + idx, idx] -= h
    fk = _fk_batch(chain, probes)
    return ((fk[:n] - fk[n:]) / (2.0 * h)).T


def _dls_attempt(chain: KinematicChain, goal: np.ndarray, start: np.ndarray,
                 damping: float, tol_mm: float, max_iters: int):
    """One damped-least-squares run; returns (angles or None, best_q, best_err)."""
    q = chain.clamp_angles(np.asarray(start, dtype=np.float64).copy())
    best_q, best_err = q.copy(), np.inf
    for _ in range(max_iters):
        err = goal - forward_kinematics(chain, q)
        err_norm = float(np.linalg.norm(err))
        if err_norm < best_err:
            best_q, best_err = q.copy(), err_norm
        if err_norm <= tol_mm:
            return q, best_q, best_err
        step_err = err if err_norm <= _MAX_ERR_STEP_MM else err * (_MAX_ERR_STEP_MM / err_norm)
        jac = _numeric_jacobian(chain, q)
        jjt = jac @ jac.T + damping**2 * np.eye(3)
        dq = jac.T @ np.linalg.solve(jjt, step_err)
        dq_norm = float(np.linalg.norm(dq))
        if dq_norm > _MAX_ANGLE_STEP_RAD:
            dq *= _MAX_ANGLE_STEP_RAD / dq_norm
        q = chain.clamp_angles(q + dq)
    err_norm = float(np.linalg.norm(goal - forward_kinematics(chain, q)))
    if err_norm < best_err:
        best_q, best_err = q.copy(), err_norm
    return (best_q if best_err <= tol_mm else None), best_q, best_err


_PITCH_TOPOLOGY = (  # axes of the default chain: yaw, three pitches, two rolls
    (0.0, 0.0, 1.0), (0.0, 1.0, 0.0), (0.0, 1.0, 0.0),
    (0.0, 1.0, 0.0), (1.0, 0.0, 0.0), (1.0, 0.0, 0.0))


def _has_pitch_topology(chain: KinematicChain) -> bool:
    return all(np.allclose(j.axis, ax) for j, ax in zip(chain.joints, _PITCH_TOPOLOGY))


def _analytic_seeds(chain: KinematicChain, goal: np.ndarray) -> list:
    """Closed-form starting guesses for yaw + three-pitch chains.

    The base yaw is aimed at the target bearing, reducing the rest to a planar
    problem: two 110 mm links plus a rigid 90 mm tool segment whose inclination
    psi is swept over a grid, each value yielding a two-link solve with both
    elbow branches. Seeds are ranked by their FK residual.
    """
    if not _has_pitch_topology(chain):
        return []
    l0 = float(np.linalg.norm(chain.joints[0].offset))
    l1 = float(np.linalg.norm(chain.joints[1].offset))
    l2 = float(np.linalg.norm(chain.joints[2].offset))
    l3 = float(np.linalg.norm(chain.joints[3].offset)
               + np.linalg.norm(chain.joints[4].offset))
    bearing = float(np.arctan2(goal[1], goal[0]))
    u_t = float(np.hypot(goal[0], goal[1])) - l0
    z_t = float(goal[2])
    candidates = []
    for psi in np.linspace(-2.2, 2.2, 23):
        # tool segment dips z by l3*sin(psi); wrist point in (radial, vertical)
        pu = u_t - l3 * np.cos(psi)
        pz = -z_t - l3 * np.sin(psi)  # positive pitch lowers z
        d2 = pu * pu + pz * pz
        ce = (d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
        if not -1.0 <= ce <= 1.0:
            continue
        e_mag = float(np.arccos(ce))
        for e in (e_mag, -e_mag):
            s = float(np.arctan2(pz, pu)
                      - np.arctan2(l2 * np.sin(e), l1 + l2 * np.cos(e)))
            w = psi - s - e
            seed = chain.clamp_angles(np.array([bearing, s, e, w, 0.0, 0.0]))
            residual = float(np.linalg.norm(forward_kinematics(chain, seed) - goal))
            candidates.append((residual, seed))
    candidates.sort(key=lambda c: c[0])
    return [seed for _, seed in candidates[:4]]


def inverse_kinematics(chain: KinematicChain, target, initial, *,
                       damping: float = IK_DAMPING, tol_mm: float = IK_TOL_MM,
                       max_iters: int = IK_MAX_ITERS, z_work: float = 0.0,
                       fallback_bearing: float = 0.0) -> np.ndarray:
    """Damped-least-squares solve toward the workspace-clamped target.

    The first attempt iterates from the given initial angles; convergence is
    checked before stepping, so a warm start at a solution returns it as-is.
    If that run jams (joint limits make greedy steps stall), further attempts
    start from analytic planar seeds and finally from deterministic random
    configurations. Raises IKError carrying the best attempt found.
    """
    goal = clamp_to_workspace(chain, target, z_work=z_work,
                              fallback_bearing=fallback_bearing)
    q, best_q, best_err = _dls_attempt(chain, goal, initial, damping, tol_mm, max_iters)
    if q is not None:
        return q
    for seed in _analytic_seeds(chain, goal):
        q, bq, be = _dls_attempt(chain, goal, seed, damping, tol_mm, max_iters)
        if q is not None:
            return q
        if be < best_err:
            best_q, best_err = bq, be
    rng = np.random.default_rng(0x1CF00D)
    lo = np.array([j.lo for j in chain.joints])
    hi = np.array([j.hi for j in chain.joints])
    bearing = float(np.arctan2(goal[1], goal[0]))
    for _ in range(8):
        seed = rng.uniform(lo, hi)
        seed[0] = np.clip(bearing, lo[0], hi[0])
        q, bq, be = _dls_attempt(chain, goal, seed, damping, tol_mm, max_iters)
        if q is not None:
            return q
        if be < best_err:
            best_q, best_err = bq, be
    raise IKError(
        f"no convergence within {max_iters} iterations per attempt "
        f"(best residual {best_err:.3f} mm to target {np.round(goal, 2)})",
        best_angles=best_q, residual_mm=best_err)


@dataclass
class ArmState:
    """Follower pose: integrated planar position, decay anchor, joint angles."""

    position: np.ndarray
    anchor: np.ndarray
    decay: float = DEFAULT_DECAY
    dt: float = DT_S
    angles: np.ndarray = field(default_factory=lambda: HOME_ANGLES.copy())

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).copy()
        self.anchor = np.asarray(self.anchor, dtype=np.float64).copy()
        self.angles = np.asarray(self.angles, dtype=np.float64).copy()
        if self.position.shape != (2,) or self.anchor.shape != (2,):
            raise ValueError("position and anchor must be 2-vectors")
        if not np.all(np.isfinite(self.position)):
            raise ValueError("position must be finite")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")


def integrate_velocity(state: ArmState, v) -> np.ndarray:
    """p_t = anchor + decay * ((p_{t-1} - anchor) + v * dt); decay 1 is pure integration."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (2,):
        raise ValueError(f"velocity must be a 2-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("velocity must be finite")
    state.position = state.anchor + state.decay * (
        (state.position - state.anchor) + v * state.dt)
    return state.position.copy()


def integrate_trace(velocities: np.ndarray, anchor, start=None,
                    decay: float = DEFAULT_DECAY, dt: float = DT_S) -> np.ndarray:
    """Positions (T x 2) from running the decay recurrence over a velocity trace."""
    vel = np.asarray(velocities, dtype=np.float64)
    if vel.ndim != 2 or vel.shape[1] != 2:
        raise ValueError("velocities must be T x 2")
    anchor = np.asarray(anchor, dtype=np.float64)
    state = ArmState(position=anchor if start is None else start, anchor=anchor,
                     decay=decay, dt=dt)
    out = np.empty_like(vel)
    for i in range(vel.shape[0]):
        out[i] = integrate_velocity(state, vel[i])
    return out
