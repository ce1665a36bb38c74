"""Small 3D geometry toolbox: quaternions, rigid and similarity transforms.

Quaternions are stored as (x, y, z, w), matching the TUM trajectory format
and the event-log wire format.
"""

from dataclasses import dataclass, field

import numpy as np


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0:
        raise ValueError("zero quaternion")
    return q / n


def quat_to_matrix(q):
    """Rotation matrix from a unit quaternion (x, y, z, w)."""
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Unit quaternion (x, y, z, w) from a proper rotation matrix."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    return quat_normalize([x, y, z, w])


def quat_multiply(q1, q2):
    """Hamilton product; composed rotation applies q2 first, then q1."""
    x1, y1, z1, w1 = q1
    x2, y2, z2, w2 = q2
    return np.array([
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
    ])


def quat_conjugate(q):
    x, y, z, w = q
    return np.array([-x, -y, -z, w])


def quat_slerp(q0, q1, alpha):
    """Spherical linear interpolation between two unit quaternions."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dot = float(np.dot(q0, q1))
    if dot < 0:
        q1 = -q1
        dot = -dot
    if dot > 0.9995:
        # nearly parallel: lerp + renormalize
        return quat_normalize(q0 + alpha * (q1 - q0))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    return (np.sin((1 - alpha) * theta) * q0 + np.sin(alpha * theta) * q1) / s


def rotation_about_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle(R):
    """Rotation angle of a rotation matrix, in radians."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def random_rotation(rng):
    """Uniform random rotation matrix (via random quaternion)."""
    q = rng.standard_normal(4)
    return quat_to_matrix(quat_normalize(q))


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) transform stored as unit quaternion + translation.

    The rotation matrix is cached so repeated point transforms stay cheap.
    """
    q: np.ndarray
    t: np.ndarray
    R: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        q = quat_normalize(self.q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        object.__setattr__(self, "R", quat_to_matrix(q))

    @classmethod
    def identity(cls):
        return cls(q=np.array([0.0, 0.0, 0.0, 1.0]), t=np.zeros(3))

    @classmethod
    def from_matrix(cls, R, t):
        return cls(q=matrix_to_quat(R), t=t)

    def apply(self, p):
        p = np.asarray(p, dtype=float)
        return p @ self.R.T + self.t

    def inverse(self):
        Rinv = self.R.T
        return RigidTransform(q=quat_conjugate(self.q), t=-(Rinv @ self.t))

    def compose(self, other):
        """self ∘ other: apply ``other`` first, then ``self``."""
        return RigidTransform(
            q=quat_multiply(self.q, other.q),
            t=self.R @ other.t + self.t,
        )

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M


@dataclass(frozen=True)
class Sim3Transform:
    """Similarity transform p -> s * R @ p + t."""
    s: float
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))

    @classmethod
    def identity(cls):
        return cls(s=1.0, R=np.eye(3), t=np.zeros(3))

    def apply(self, p):
        p = np.asarray(p, dtype=float)
        return self.s * (p @ self.R.T) + self.t

    def compose(self, other):
        """self ∘ other: apply ``other`` first, then ``self``."""
        return Sim3Transform(
            s=self.s * other.s,
            R=self.R @ other.R,
            t=self.s * (self.R @ other.t) + self.t,
        )

    def inverse(self):
        Rinv = self.R.T
        return Sim3Transform(s=1.0 / self.s, R=Rinv, t=-(Rinv @ self.t) / self.s)


def rigid_fit(src, dst):
    """Least-squares rotation + translation mapping src points onto dst (Kabsch).

    Returns (R, t) with dst ≈ src @ R.T + t.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    S = np.diag([1.0, 1.0, d])
    R = Vt.T @ S @ U.T
    t = mu_d - R @ mu_s
    return R, t
