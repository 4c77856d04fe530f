"""Simplified parametric skeletal hand.

A fixed 21-joint right-hand skeleton (wrist + 4 joints per finger) at
average adult proportions, posed by 20 joint angles (per finger: abduction
at the proximal joint plus three flexions), a uniform shape scale, and a
global rigid transform.  The hand splits into 16 parts: the palm and three
segments per finger.  Capsule-style surface samples along the bones support
contact and penetration queries.

Conventions (rest pose, hand frame): the wrist sits at the origin, fingers
extend along +y, the thumb leaves the palm diagonally toward +x, and the
palm normal is +z.  Positive flexion curls a finger toward -z; positive
abduction swings it about the palm normal.  Joint rotation axes are fixed
in their parent frames.  World point = R(global_rotation) @ local + trans.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidPart

SKELETON_VERSION = "avg-adult-v1"

FINGER_NAMES = ("thumb", "index", "middle", "ring", "pinky")
N_JOINTS = 21
N_ANGLES = 20
N_PARTS = 16
N_PARAMS = 27  # rotation(3) + translation(3) + angles(20) + scale(1)

FLEXION_LIMITS = (-0.3, 1.8)
ABDUCTION_LIMITS = (-0.5, 0.5)
SCALE_LIMITS = (0.7, 1.3)

PALM_PART = 1

FINGER_SAMPLE_RADIUS = 0.005
PALM_SAMPLE_RADIUS = 0.010
_SEGMENT_SAMPLE_T = (0.1, 0.3, 0.5, 0.7, 0.9)
_PALM_SAMPLE_T = 0.55

# Rest skeleton: per finger the proximal joint position, the pointing
# direction, and the three segment lengths (meters, scale 1).
_THUMB_DIR = np.array([np.cos(np.deg2rad(35.0)), np.sin(np.deg2rad(35.0)), 0.0])
_BASES = np.array([
    [0.034, 0.018, 0.0],    # thumb
    [0.030, 0.088, 0.0],    # index
    [0.009, 0.094, 0.0],    # middle
    [-0.012, 0.090, 0.0],   # ring
    [-0.032, 0.080, 0.0],   # pinky
])
_DIRS = np.array([
    _THUMB_DIR,
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
])
_LENGTHS = np.array([
    [0.046, 0.032, 0.025],
    [0.045, 0.026, 0.022],
    [0.049, 0.030, 0.024],
    [0.045, 0.028, 0.023],
    [0.035, 0.022, 0.020],
])
_Z = np.array([0.0, 0.0, 1.0])
# flexion axes: z x dir, so positive flexion rotates the bone toward -z
_FLEX_AXES = np.cross(np.broadcast_to(_Z, (5, 3)), _DIRS)
_FLEX_AXES = _FLEX_AXES / np.linalg.norm(_FLEX_AXES, axis=1, keepdims=True)


def finger_base_joint(finger: int) -> int:
    return 1 + 4 * finger


def segment_part_id(finger: int, segment: int) -> int:
    """Part id of a finger segment (finger 0..4, segment 0..2)."""
    return 2 + 3 * finger + segment


def _affine_tables():
    """Weight matrices expressing part centers and samples as joint blends."""
    centers = np.zeros((N_PARTS, N_JOINTS))
    centers[PALM_PART - 1, 0] = 1.0 / 6.0
    for f in range(5):
        centers[PALM_PART - 1, finger_base_joint(f)] = 1.0 / 6.0
        for s in range(3):
            j = finger_base_joint(f) + s
            row = segment_part_id(f, s) - 1
            centers[row, j] = 0.5
            centers[row, j + 1] = 0.5
    rows, parts, radii = [], [], []
    for f in range(5):  # palm pads, one toward each finger base
        w = np.zeros(N_JOINTS)
        w[0] = 1.0 - _PALM_SAMPLE_T
        w[finger_base_joint(f)] = _PALM_SAMPLE_T
        rows.append(w)
        parts.append(PALM_PART)
        radii.append(PALM_SAMPLE_RADIUS)
    for f in range(5):
        for s in range(3):
            j = finger_base_joint(f) + s
            for t in _SEGMENT_SAMPLE_T:
                w = np.zeros(N_JOINTS)
                w[j] = 1.0 - t
                w[j + 1] = t
                rows.append(w)
                parts.append(segment_part_id(f, s))
                radii.append(FINGER_SAMPLE_RADIUS)
    return centers, np.array(rows), np.array(parts, dtype=int), np.array(radii)


_CENTER_WEIGHTS, _SAMPLE_WEIGHTS, SAMPLE_PARTS, SAMPLE_RADII = _affine_tables()
N_SAMPLES = _SAMPLE_WEIGHTS.shape[0]
SAMPLE_PARTS.flags.writeable = False
SAMPLE_RADII.flags.writeable = False


@dataclass(frozen=True, eq=False)
class HandPose:
    """Global rigid transform, joint angles, and uniform shape scale.

    ``rotation`` is an axis-angle vector; ``angles`` packs per finger
    [abduction, flex proximal, flex middle, flex distal] in finger order.
    """

    rotation: np.ndarray
    translation: np.ndarray
    angles: np.ndarray
    scale: float = 1.0

    def __init__(self, rotation=None, translation=None, angles=None, scale=1.0):
        def vec(v, size, name):
            if v is None:
                v = np.zeros(size)
            v = np.asarray(v, dtype=float)
            if v.shape != (size,) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a finite vector of length {size}")
            v = v.copy()
            v.flags.writeable = False
            return v
        object.__setattr__(self, "rotation", vec(rotation, 3, "rotation"))
        object.__setattr__(self, "translation", vec(translation, 3, "translation"))
        object.__setattr__(self, "angles", vec(angles, N_ANGLES, "angles"))
        if not np.isfinite(scale) or scale <= 0:
            raise ValueError("scale must be positive and finite")
        object.__setattr__(self, "scale", float(scale))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation, self.angles,
                               [self.scale]])

    @classmethod
    def from_vector(cls, vec) -> "HandPose":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (N_PARAMS,):
            raise ValueError(f"pose vector must have length {N_PARAMS}")
        return cls(rotation=vec[:3], translation=vec[3:6], angles=vec[6:26],
                   scale=float(vec[26]))


def rest_pose() -> HandPose:
    return HandPose()


# Relaxed half-curled flexions (radians).  Used as the average reference pose
# for registration: the arch keeps palm and proximal bones clear of an object
# whose surface the fingertip parts are asked to reach, which a flat hand
# cannot do (its part centers are coplanar with the palm).
_NEUTRAL_FINGER_FLEX = (0.6, 0.6, 0.3)
_NEUTRAL_THUMB_FLEX = (0.3, 0.5, 0.3)


def neutral_grasp_pose() -> HandPose:
    """Average pre-grasp pose: fingers half-curled, zero abduction."""
    angles = np.zeros(N_ANGLES)
    angles[1:4] = _NEUTRAL_THUMB_FLEX
    for f in range(1, 5):
        angles[4 * f + 1:4 * f + 4] = _NEUTRAL_FINGER_FLEX
    return HandPose(angles=angles)


def parameter_bounds(lock_scale: float | None = None):
    """(lower, upper) box for the pose parameter vector.

    Global rotation and translation are unbounded; angles and scale follow
    the configured limits.  ``lock_scale`` pins the scale to a constant.
    """
    lo = np.full(N_PARAMS, -np.inf)
    hi = np.full(N_PARAMS, np.inf)
    for f in range(5):
        base = 6 + 4 * f
        lo[base], hi[base] = ABDUCTION_LIMITS
        lo[base + 1:base + 4], hi[base + 1:base + 4] = FLEXION_LIMITS
    if lock_scale is None:
        lo[26], hi[26] = SCALE_LIMITS
    else:
        lo[26] = hi[26] = lock_scale
    return lo, hi


def clamp_pose(pose: HandPose):
    """Clamp angles and scale into their limits; returns (pose, changed)."""
    angles = pose.angles.reshape(5, 4).copy()
    abd = np.clip(angles[:, 0], *ABDUCTION_LIMITS)
    flex = np.clip(angles[:, 1:], *FLEXION_LIMITS)
    clamped = np.column_stack([abd, flex]).reshape(N_ANGLES)
    scale = float(np.clip(pose.scale, *SCALE_LIMITS))
    changed = bool(scale != pose.scale or np.any(clamped != pose.angles))
    if not changed:
        return pose, False
    return replace(pose, angles=clamped, scale=scale), True


@dataclass(frozen=True, eq=False)
class HandGeometry:
    """Posed joints, part centers, and capsule surface samples (world frame)."""

    joints: np.ndarray
    part_centers: np.ndarray
    samples: np.ndarray
    sample_parts: np.ndarray
    sample_radii: np.ndarray
    clamped: bool


def _skew(v):
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def rotation_matrix(omega) -> np.ndarray:
    """Rodrigues rotation for an axis-angle vector."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    k = _skew(omega)
    if theta < 1e-12:
        return np.eye(3) + k + 0.5 * (k @ k)
    k /= theta
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def _axis_rotation(axis, angle):
    c, s = np.cos(angle), np.sin(angle)
    k = _skew(axis)
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def _local_joints(pose: HandPose):
    """Hand-frame joints plus the per-joint rotation axes and pivots.

    Returns (joints, axes, pivots) where axes[f] rows are the current
    abduction / flexion axes of finger f and pivots[f] the matching joint
    positions, used for geometric jacobians.
    """
    s = pose.scale
    joints = np.zeros((N_JOINTS, 3))
    axes = np.zeros((5, 4, 3))
    pivots = np.zeros((5, 4, 3))
    for f in range(5):
        abd, fl1, fl2, fl3 = pose.angles[4 * f:4 * f + 4]
        base = _BASES[f] * s
        u = _DIRS[f]
        a = _FLEX_AXES[f]
        r_abd = _axis_rotation(_Z, abd)
        r1 = r_abd @ _axis_rotation(a, fl1)
        r2 = r1 @ _axis_rotation(a, fl2)
        r3 = r2 @ _axis_rotation(a, fl3)
        j0 = finger_base_joint(f)
        joints[j0] = base
        joints[j0 + 1] = joints[j0] + r1 @ (u * _LENGTHS[f, 0] * s)
        joints[j0 + 2] = joints[j0 + 1] + r2 @ (u * _LENGTHS[f, 1] * s)
        joints[j0 + 3] = joints[j0 + 2] + r3 @ (u * _LENGTHS[f, 2] * s)
        axes[f, 0] = _Z
        axes[f, 1] = r_abd @ a
        axes[f, 2] = r1 @ a
        axes[f, 3] = r2 @ a
        pivots[f, 0] = base
        pivots[f, 1] = base
        pivots[f, 2] = joints[j0 + 1]
        pivots[f, 3] = joints[j0 + 2]
    return joints, axes, pivots


def forward_kinematics(pose: HandPose) -> HandGeometry:
    """Pose the skeleton; out-of-limit angles are clamped (flagged)."""
    pose, clamped = clamp_pose(pose)
    local, _, _ = _local_joints(pose)
    r_glob = rotation_matrix(pose.rotation)
    joints = local @ r_glob.T + pose.translation
    return HandGeometry(joints=joints,
                        part_centers=_CENTER_WEIGHTS @ joints,
                        samples=_SAMPLE_WEIGHTS @ joints,
                        sample_parts=SAMPLE_PARTS,
                        sample_radii=SAMPLE_RADII,
                        clamped=clamped)


def part_center(geometry: HandGeometry, part: int) -> np.ndarray:
    """Center of a hand part: mean of its bounding joints."""
    if int(part) != part or not 1 <= part <= N_PARTS:
        raise InvalidPart(f"part id must lie in 1..{N_PARTS}, got {part}")
    return geometry.part_centers[int(part) - 1]


def _rotation_point_jacobian(omega, rotated):
    """d(R(omega) v)/d omega for each row v of ``rotated`` = R v stacked.

    Gallego-Yezzi closed form; at omega = 0 this reduces to -[Rv]_x.
    Returns an array (m, 3, 3) with [i, :, j] = d(R v_i)/d omega_j.
    """
    omega = np.asarray(omega, dtype=float)
    theta_sq = float(omega @ omega)
    m = rotated.shape[0]
    out = np.empty((m, 3, 3))
    if theta_sq < 1e-16:
        for i in range(m):
            out[i] = -_skew(rotated[i])
        return out
    r = rotation_matrix(omega)
    eye_minus = np.eye(3) - r
    for j in range(3):
        col_mat = (omega[j] * _skew(omega)
                   + _skew(np.cross(omega, eye_minus[:, j]))) / theta_sq
        out[:, :, j] = rotated @ col_mat.T
    return out


def fk_with_jacobians(pose: HandPose):
    """Forward kinematics plus d(world joint)/d(pose vector).

    Returns (geometry, jac) with jac of shape (21, 3, 27) ordered as
    [rotation, translation, angles, scale].  Valid for in-limit poses
    (clamping would flatten the gradient of the clamped coordinates).
    """
    pose, clamped = clamp_pose(pose)
    local, axes, pivots = _local_joints(pose)
    r_glob = rotation_matrix(pose.rotation)
    world = local @ r_glob.T + pose.translation
    jac = np.zeros((N_JOINTS, 3, N_PARAMS))
    jac[:, :, 0:3] = _rotation_point_jacobian(pose.rotation, local @ r_glob.T)
    jac[:, :, 3:6] = np.broadcast_to(np.eye(3), (N_JOINTS, 3, 3))
    # angles: revolute-joint rule, d p/d theta = w x (p - pivot), downstream only
    for f in range(5):
        j0 = finger_base_joint(f)
        for k in range(4):
            downstream = np.arange(max(j0 + k, j0 + 1), j0 + 4)
            arm = local[downstream] - pivots[f, k]
            d_local = np.cross(axes[f, k], arm)
            jac[downstream, :, 6 + 4 * f + k] = d_local @ r_glob.T
    jac[:, :, 26] = (local / pose.scale) @ r_glob.T
    geometry = HandGeometry(joints=world,
                            part_centers=_CENTER_WEIGHTS @ world,
                            samples=_SAMPLE_WEIGHTS @ world,
                            sample_parts=SAMPLE_PARTS,
                            sample_radii=SAMPLE_RADII,
                            clamped=clamped)
    return geometry, jac


def center_jacobians(joint_jac, parts=None):
    """Part-center jacobians from joint jacobians (parts are 1-based ids)."""
    weights = _CENTER_WEIGHTS if parts is None else _CENTER_WEIGHTS[np.asarray(parts) - 1]
    return np.einsum("ck,kdp->cdp", weights, joint_jac)


def sample_jacobians(joint_jac):
    """Surface-sample jacobians from joint jacobians."""
    return np.einsum("sk,kdp->sdp", _SAMPLE_WEIGHTS, joint_jac)
