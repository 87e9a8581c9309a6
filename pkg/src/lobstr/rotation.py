"""
Rotation utilities on 3x3 matrices.

Rotations are plain ``numpy`` arrays of shape ``(..., 3, 3)`` holding
right-handed orthonormal matrices; columns are the rotated X (right),
Y (up) and Z (forward) axes. The 6-DoF encoding stores ``[forward, up]``,
i.e. the third column followed by the second column.
"""

import numpy as np
from scipy.spatial.transform import Rotation as _R

DEGENERATE_EPS = 1e-8


class DegenerateRotationError(ValueError):
    """Raised when a 6-DoF vector cannot be orthonormalized."""


def identity(shape=()):
    return np.broadcast_to(np.eye(3), tuple(shape) + (3, 3)).copy()


def axis_angle(axis, angle):
    """Rotation matrix for ``angle`` radians about ``axis`` (Rodrigues)."""
    axis = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    n = np.linalg.norm(axis, axis=-1, keepdims=True)
    if np.any(n < DEGENERATE_EPS):
        raise ValueError("rotation axis must be non-zero")
    k = axis / n
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = np.zeros_like(kx)
    K = np.stack([
        np.stack([zero, -kz, ky], -1),
        np.stack([kz, zero, -kx], -1),
        np.stack([-ky, kx, zero], -1),
    ], -2)
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def rot_x(deg):
    return axis_angle([1.0, 0.0, 0.0], np.radians(deg))


def rot_y(deg):
    return axis_angle([0.0, 1.0, 0.0], np.radians(deg))


def rot_z(deg):
    return axis_angle([0.0, 0.0, 1.0], np.radians(deg))


def rotvec_to_matrix(rv):
    """Exponential map of rotation vectors ``(..., 3)``."""
    rv = np.asarray(rv, dtype=np.float64)
    theta = np.linalg.norm(rv, axis=-1)
    out = identity(rv.shape[:-1])
    mask = theta > 1e-15
    if np.any(mask):
        out[mask] = axis_angle(rv[mask] / theta[mask][:, None], theta[mask])
    return out


def euler_to_matrix(angles_deg, order):
    """Intrinsic Euler angles in degrees, composed as ``R1 @ R2 @ R3``."""
    angles = np.asarray(angles_deg, dtype=np.float64)
    axes = {"X": (1.0, 0.0, 0.0), "Y": (0.0, 1.0, 0.0), "Z": (0.0, 0.0, 1.0)}
    out = identity(angles.shape[:-1])
    for k, ax in enumerate(order):
        out = out @ axis_angle(axes[ax], np.radians(angles[..., k]))
    return out


def matrix_to_euler(R, order):
    """Inverse of :func:`euler_to_matrix`, degrees."""
    R = np.asarray(R, dtype=np.float64)
    flat = R.reshape(-1, 3, 3)
    # scipy uses upper-case axes for intrinsic rotations
    eul = _R.from_matrix(flat).as_euler(order.upper(), degrees=True)
    return eul.reshape(R.shape[:-2] + (3,))


def rot_to_6d(R):
    """Encode rotations as ``[forward(3), up(3)]`` = third then second column."""
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 2], R[..., :, 1]], axis=-1)


def sixdof_to_rot(v):
    """Gram-Schmidt decode of ``[forward, up]`` into a rotation matrix.

    Forward is normalized first, ``up`` is made orthogonal to it, and the
    right axis is ``up x forward``. Parallel or near-zero inputs raise
    :class:`DegenerateRotationError`.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 6:
        raise ValueError(f"expected trailing dimension 6, got {v.shape}")
    f = v[..., 0:3]
    u = v[..., 3:6]
    fn = np.linalg.norm(f, axis=-1, keepdims=True)
    un = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(fn <= DEGENERATE_EPS) or np.any(un <= DEGENERATE_EPS):
        raise DegenerateRotationError("6-DoF vector has a near-zero axis")
    f = f / fn
    u = u - np.sum(u * f, axis=-1, keepdims=True) * f
    un2 = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(un2 <= DEGENERATE_EPS * un):
        raise DegenerateRotationError("6-DoF forward and up are parallel")
    u = u / un2
    r = np.cross(u, f)
    return np.stack([r, u, f], axis=-1)


def geodesic_angle(A, B):
    """Angle in radians of ``A^T B``, via arccos((trace - 1) / 2)."""
    rel = np.swapaxes(A, -1, -2) @ B
    c = (np.trace(rel, axis1=-2, axis2=-1) - 1.0) / 2.0
    return np.arccos(np.clip(c, -1.0, 1.0))


def orthonormality_error(R):
    R = np.asarray(R)
    return np.max(np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)))


def random_rotations(n, rng):
    """Uniformly distributed rotations from normalized Gaussian quaternions."""
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return _R.from_quat(q).as_matrix()


def slerp(A, B, t):
    """Shortest-arc interpolation between rotation stacks ``A`` and ``B``."""
    rel = _R.from_matrix((np.swapaxes(A, -1, -2) @ B).reshape(-1, 3, 3))
    rv = rel.as_rotvec().reshape(np.shape(A)[:-2] + (3,))
    t = np.asarray(t, dtype=np.float64)
    return A @ rotvec_to_matrix(rv * t[..., None])


def yaw_of(R):
    """Heading angle about +Y of the forward axis, radians."""
    f = np.asarray(R)[..., :, 2]
    return np.arctan2(f[..., 0], f[..., 2])
