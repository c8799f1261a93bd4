"""Coordinate systems, rotations, and antenna placement for movable subarrays.

All angles are in radians. The global frame sits at the BS center. Each
subarray carries a local frame obtained by translating to the subarray center
and applying the rotation parameterized by three axis angles; the local +z
axis is the array boresight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# |sin(elevation)| above this counts as a pole; azimuth is unidentifiable there.
_POLE_TOL = 1.0 - 1e-12


def wrap_angle(x):
    """Reduce an angle (scalar or array) into [0, 2*pi)."""
    return np.mod(x, TWO_PI)


@dataclass(frozen=True)
class RotationAngles:
    """Axis rotation angles (alpha, beta, gamma) about x, y, z, wrapped to [0, 2*pi)."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"rotation angle {name} must be finite, got {v!r}")
            object.__setattr__(self, name, v % TWO_PI)

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])


ZERO_ROTATION = RotationAngles(0.0, 0.0, 0.0)


def _angles(u) -> tuple[float, float, float]:
    if isinstance(u, RotationAngles):
        return u.alpha, u.beta, u.gamma
    a, b, g = np.asarray(u, dtype=float)
    return float(a), float(b), float(g)


def rotation_matrix(u) -> np.ndarray:
    """3x3 rotation matrix for axis angles u = (alpha, beta, gamma).

    Parameters
    ----------
    u : RotationAngles or length-3 array-like
        Rotation angles about the x, y and z axes.

    Returns
    -------
    numpy.ndarray
        Orthogonal 3x3 matrix with determinant +1.
    """
    a, b, g = _angles(u)
    ca, sa = math.cos(a), math.sin(a)
    cb, sb = math.cos(b), math.sin(b)
    cg, sg = math.cos(g), math.sin(g)
    return np.array(
        [
            [cb * cg, cb * sg, -sb],
            [sb * sa * cg - ca * sg, sb * sa * sg + ca * cg, cb * sa],
            [ca * sb * cg + sa * sg, ca * sb * sg - sa * cg, ca * cb],
        ]
    )


def angles_from_matrix(rot: np.ndarray) -> RotationAngles:
    """Recover (alpha, beta, gamma) from a rotation matrix built by rotation_matrix.

    At gimbal lock (|cos(beta)| ~ 0) only alpha -/+ gamma is identifiable;
    gamma is then set to 0.
    """
    rot = np.asarray(rot, dtype=float)
    sb = -rot[0, 2]
    sb = min(1.0, max(-1.0, sb))
    beta = math.asin(sb)
    cb = math.cos(beta)
    if abs(cb) > 1e-9:
        gamma = math.atan2(rot[0, 1], rot[0, 0])
        alpha = math.atan2(rot[1, 2], rot[2, 2])
    elif sb > 0.0:  # beta = +pi/2: row 2 reads [sin(a-g), cos(a-g), 0]
        gamma = 0.0
        alpha = math.atan2(rot[1, 0], rot[1, 1])
    else:  # beta = -pi/2: row 2 reads [-sin(a+g), cos(a+g), 0]
        gamma = 0.0
        alpha = math.atan2(-rot[1, 0], rot[1, 1])
    return RotationAngles(alpha, beta, gamma)


def rotation_facing(direction) -> RotationAngles:
    """Rotation angles whose boresight (rotated local +z) points along `direction`."""
    n = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0.0:
        raise ValueError("facing direction must be nonzero")
    n = n / norm
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(helper, n)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return angles_from_matrix(np.column_stack([t1, t2, n]))


@dataclass(frozen=True)
class SubarrayPose:
    """Position (meters, global frame) and rotation of one subarray."""

    q: np.ndarray
    u: RotationAngles

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(3)
        if not np.all(np.isfinite(q)):
            raise ValueError(f"subarray position must be finite, got {q}")
        object.__setattr__(self, "q", q)


@dataclass(frozen=True)
class SubarrayLayout:
    """Antenna offsets (meters) in the subarray's local frame, one row per antenna."""

    offsets: np.ndarray

    def __post_init__(self):
        off = np.atleast_2d(np.asarray(self.offsets, dtype=float))
        if off.ndim != 2 or off.shape[1] != 3 or off.shape[0] < 1:
            raise ValueError(f"layout offsets must be (N, 3) with N >= 1, got {off.shape}")
        object.__setattr__(self, "offsets", off)

    @property
    def n_antennas(self) -> int:
        return self.offsets.shape[0]

    @classmethod
    def upa(cls, n_antennas: int, spacing: float) -> "SubarrayLayout":
        """Uniform planar array in the local x'-y' plane, centered at the origin.

        Uses the most square rows x cols factorization of `n_antennas`
        (sqrt(N) x sqrt(N) when N is a perfect square).
        """
        if n_antennas < 1:
            raise ValueError("n_antennas must be >= 1")
        rows = int(math.isqrt(n_antennas))
        while n_antennas % rows:
            rows -= 1
        cols = n_antennas // rows
        xs = (np.arange(rows) - (rows - 1) / 2.0) * spacing
        ys = (np.arange(cols) - (cols - 1) / 2.0) * spacing
        grid_x, grid_y = np.meshgrid(xs, ys, indexing="ij")
        offsets = np.column_stack(
            [grid_x.ravel(), grid_y.ravel(), np.zeros(n_antennas)]
        )
        return cls(offsets)


def antenna_positions(pose: SubarrayPose, layout: SubarrayLayout) -> np.ndarray:
    """Global antenna positions of a posed subarray, shape (N, 3)."""
    return pose.q + layout.offsets @ rotation_matrix(pose.u).T


def pointing_vector(theta: float, phi: float) -> np.ndarray:
    """Unit vector for elevation `theta` in [-pi/2, pi/2] and azimuth `phi` in [-pi, pi].

    Returns [cos(theta)cos(phi), cos(theta)sin(phi), sin(theta)].
    """
    if not (-math.pi / 2 - 1e-12 <= theta <= math.pi / 2 + 1e-12):
        raise ValueError(f"elevation out of range [-pi/2, pi/2]: {theta}")
    if not (-math.pi - 1e-12 <= phi <= math.pi + 1e-12):
        raise ValueError(f"azimuth out of range [-pi, pi]: {phi}")
    ct = math.cos(theta)
    return np.array([ct * math.cos(phi), ct * math.sin(phi), math.sin(theta)])


def local_direction(u, f) -> tuple[float, float]:
    """Spherical angles of a global unit direction `f` seen from frame `u`.

    Returns (theta_loc, phi_loc) such that pointing_vector(theta_loc, phi_loc)
    equals R(u)^-1 f. At the poles (|sin(theta_loc)| = 1) the azimuth is
    unidentifiable and is returned as 0.
    """
    f_loc = rotation_matrix(u).T @ np.asarray(f, dtype=float)
    sz = min(1.0, max(-1.0, float(f_loc[2])))
    theta = math.asin(sz)
    if abs(sz) >= _POLE_TOL:
        return theta, 0.0
    return theta, math.atan2(f_loc[1], f_loc[0])


def subarray_normal(u) -> np.ndarray:
    """Boresight of a rotated subarray: the local +z axis in global coordinates."""
    return rotation_matrix(u)[:, 2].copy()
