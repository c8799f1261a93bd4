"""Dual-polarized LoS channel model for polarforming antennas.

The channel between a user and one subarray factors into a stable part
(path loss, element gain and array steering, fixed while the user stays put)
and a dynamic scalar v^H A w capturing how well the transmit/receive
polarforming vectors align through the 2x2 dual-polarized response A.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    RotationAngles,
    SubarrayLayout,
    SubarrayPose,
    antenna_positions,
    pointing_vector,
    rotation_matrix,
)

# reference distance (meters) for the epsilon0 channel-power anchor
REFERENCE_DISTANCE = 1.0

# local element axes: V along +y', H along +x'
E_VERTICAL = np.array([0.0, 1.0, 0.0])
E_HORIZONTAL = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class UserState:
    """Direction (at the BS center), range and device rotation of one user."""

    theta: float
    phi: float
    distance: float
    rotation: RotationAngles

    def __post_init__(self):
        if not self.distance > REFERENCE_DISTANCE:
            raise ValueError(
                f"user distance must exceed the {REFERENCE_DISTANCE} m reference, "
                f"got {self.distance}"
            )
        pointing_vector(self.theta, self.phi)  # range-check the angles

    @property
    def pointing(self) -> np.ndarray:
        return pointing_vector(self.theta, self.phi)

    @property
    def position(self) -> np.ndarray:
        return self.distance * self.pointing


@dataclass(frozen=True)
class PhysicalConstants:
    """Carrier wavelength, path-loss anchor, noise/power budget and rate weights."""

    wavelength: float
    epsilon0: float
    sigma2: float
    zeta: float
    rho_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        for name in ("wavelength", "epsilon0", "sigma2", "zeta"):
            if not float(getattr(self, name)) > 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.rho_weights is not None:
            w = np.asarray(self.rho_weights, dtype=float)
            if np.any(w <= 0.0):
                raise ValueError("rate weights must be strictly positive")
            object.__setattr__(self, "rho_weights", w)


@dataclass(frozen=True)
class GainPattern:
    """Element gain pattern: isotropic, or the sectorized pattern from the
    3GPP element model (65 deg half-power beamwidths, 8 dBi peak, 30 dB floor)
    evaluated about the local +z boresight."""

    kind: str = "isotropic"
    max_gain_dbi: float = 8.0
    beamwidth_deg: float = 65.0
    floor_db: float = 30.0  # A_m, also used as the vertical sidelobe clamp

    def __post_init__(self):
        if self.kind not in ("isotropic", "3gpp"):
            raise ValueError(f"unknown gain pattern kind: {self.kind!r}")

    def gain_dbi(self, f_local: np.ndarray) -> float:
        """Gain in dBi toward the local-frame unit direction `f_local`."""
        if self.kind == "isotropic":
            return 0.0
        # deviation from boresight, split into the x'z' (vertical) and
        # y'z' (horizontal) pattern cuts
        vert_deg = math.degrees(math.asin(min(1.0, max(-1.0, float(f_local[0])))))
        horiz_deg = math.degrees(math.atan2(float(f_local[1]), float(f_local[2])))
        att_v = -min(12.0 * (vert_deg / self.beamwidth_deg) ** 2, self.floor_db)
        att_h = -min(12.0 * (horiz_deg / self.beamwidth_deg) ** 2, self.floor_db)
        return self.max_gain_dbi - min(-(att_v + att_h), self.floor_db)

    def gain_dbi_rows(self, f_local: np.ndarray) -> np.ndarray:
        """Vectorized `gain_dbi` over rows of local-frame unit directions."""
        f_local = np.atleast_2d(np.asarray(f_local, dtype=float))
        if self.kind == "isotropic":
            return np.zeros(f_local.shape[0])
        vert_deg = np.degrees(np.arcsin(np.clip(f_local[:, 0], -1.0, 1.0)))
        horiz_deg = np.degrees(np.arctan2(f_local[:, 1], f_local[:, 2]))
        att_v = -np.minimum(12.0 * (vert_deg / self.beamwidth_deg) ** 2, self.floor_db)
        att_h = -np.minimum(12.0 * (horiz_deg / self.beamwidth_deg) ** 2, self.floor_db)
        return self.max_gain_dbi - np.minimum(-(att_v + att_h), self.floor_db)


ISOTROPIC = GainPattern("isotropic")
TGPP_ELEMENT = GainPattern("3gpp")


def steering_vector(
    pose: SubarrayPose, layout: SubarrayLayout, f: np.ndarray, wavelength: float
) -> np.ndarray:
    """Unit-modulus array response of a posed subarray toward unit direction `f`.

    Entry n is exp(-j * 2*pi/wavelength * f . r_n) with r_n the global
    position of antenna n.
    """
    positions = antenna_positions(pose, layout)
    return np.exp(-1j * (2.0 * math.pi / wavelength) * (positions @ np.asarray(f, dtype=float)))


def effective_gain(u: RotationAngles, f: np.ndarray, pattern: GainPattern) -> float:
    """Linear element gain of a subarray rotated by `u` toward global direction `f`."""
    f_loc = rotation_matrix(u).T @ np.asarray(f, dtype=float)
    return 10.0 ** (pattern.gain_dbi(f_loc) / 10.0)


def unpolarformed_los_channel(
    user: UserState,
    pose: SubarrayPose,
    layout: SubarrayLayout,
    consts: PhysicalConstants,
    pattern: GainPattern,
) -> np.ndarray:
    """Stable LoS channel to one subarray: path loss x gain x steering, shape (N,).

    All entries share the modulus sqrt(nu * g) with nu = epsilon0 / d^2.
    """
    d = user.distance
    if not d > REFERENCE_DISTANCE:
        raise ValueError(f"user distance must exceed {REFERENCE_DISTANCE} m, got {d}")
    nu = consts.epsilon0 / d**2
    g = effective_gain(pose.u, user.pointing, pattern)
    phase = np.exp(-1j * 2.0 * math.pi * d / consts.wavelength)
    return (
        math.sqrt(nu)
        * phase
        * math.sqrt(g)
        * steering_vector(pose, layout, user.pointing, consts.wavelength)
    )


def polarization_basis(theta: float, phi: float) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal field-component pair (z, z_bar) for the LoS wave toward (theta, phi)."""
    st, ct = math.sin(theta), math.cos(theta)
    sp, cp = math.sin(phi), math.cos(phi)
    z = np.array([st * sp, -ct, st * cp])
    z_bar = np.array([cp, 0.0, -sp])
    return z, z_bar


def transmit_projection(u_b: RotationAngles, theta: float, phi: float) -> np.ndarray:
    """2x2 projection of the rotated V/H transmit elements onto the wave components."""
    z, z_bar = polarization_basis(theta, phi)
    rot = rotation_matrix(u_b)
    ev, eh = rot @ E_VERTICAL, rot @ E_HORIZONTAL
    return np.array(
        [[ev @ z, eh @ z], [ev @ z_bar, eh @ z_bar]], dtype=complex
    )


def receive_projection(u_r: RotationAngles, theta: float, phi: float) -> np.ndarray:
    """2x2 projection of the wave components onto the rotated V/H receive elements."""
    z, z_bar = polarization_basis(theta, phi)
    rot = rotation_matrix(u_r)
    ev, eh = rot @ E_VERTICAL, rot @ E_HORIZONTAL
    return np.array(
        [[z @ ev, z_bar @ ev], [z @ eh, z_bar @ eh]], dtype=complex
    )


def dual_pol_response(
    u_b: RotationAngles, u_r: RotationAngles, theta: float, phi: float
) -> np.ndarray:
    """Dual-polarized 2x2 response A = Q P between a subarray and a user device.

    P projects the subarray's rotated element axes onto the wave's field
    components, Q projects those components onto the user's rotated element
    axes. For a LoS path all entries are real-valued dot products in [-1, 1];
    complex storage is kept for interface uniformity.
    """
    return receive_projection(u_r, theta, phi) @ transmit_projection(u_b, theta, phi)


def polarformed_channel(
    h_unpol: np.ndarray, pol_response: np.ndarray, v: np.ndarray, w: np.ndarray
) -> np.ndarray:
    """Polarformed per-subarray channel h_unpol * (v^H A w), shape (N,).

    Equals the expanded form (I_N kron v^H) (h_unpol kron A) w in which every
    antenna's two ports are combined by the shared subarray vector v.
    """
    v = np.asarray(v, dtype=complex).reshape(2)
    w = np.asarray(w, dtype=complex).reshape(2)
    return np.asarray(h_unpol, dtype=complex) * (v.conj() @ np.asarray(pol_response) @ w)


def stacked_channel(
    user: UserState,
    poses: list[SubarrayPose],
    layout: SubarrayLayout,
    v_list,
    w,
    consts: PhysicalConstants,
    pattern: GainPattern,
) -> np.ndarray:
    """Concatenated polarformed channel over all B subarrays, shape (N*B,)."""
    if len(poses) < 1:
        raise ValueError("need at least one subarray pose")
    blocks = []
    for pose, v in zip(poses, v_list, strict=True):
        h = unpolarformed_los_channel(user, pose, layout, consts, pattern)
        a = dual_pol_response(pose.u, user.rotation, user.theta, user.phi)
        blocks.append(polarformed_channel(h, a, v, w))
    return np.concatenate(blocks)
