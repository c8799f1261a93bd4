"""Polarforming-based user localization.

Users transmit known pilots while stepping their polarforming vectors through
a structured time pattern; the BS collects one L x N x P tensor per training
pose. Alternating least squares on the tensor separates the stable channel
factor from the dynamic polarforming coefficients, after which MUSIC over the
pooled training poses yields directions and a closed-form least-squares fit
yields ranges.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .channel import (
    GainPattern,
    PhysicalConstants,
    UserState,
    dual_pol_response,
    effective_gain,
    steering_vector,
    unpolarformed_los_channel,
)
from .geometry import (
    RotationAngles,
    SubarrayLayout,
    SubarrayPose,
    antenna_positions,
    pointing_vector,
    rotation_facing,
    rotation_matrix,
)

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# pilot pattern
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PilotPattern:
    """Known pilots, per-block user polarforming, and BS training poses.

    pilots : (L, K) semi-unitary pilot matrix, pilots^H pilots = I_K
    user_polarforming : (K, P, 2) per-user per-block vectors w_{k,p}
    poses : M training position/rotation pairs of the sensing subarray
    bs_polarforming : (M, 2) fixed sensing vector per pose
    """

    pilots: np.ndarray
    user_polarforming: np.ndarray
    poses: list[SubarrayPose]
    bs_polarforming: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.pilots, dtype=complex)
        if x.shape[0] < x.shape[1]:
            raise ValueError(f"pilot matrix needs L >= K, got shape {x.shape}")
        gram = x.conj().T @ x
        if not np.allclose(gram, np.eye(x.shape[1]), atol=1e-9):
            raise ValueError("pilot matrix must be semi-unitary (X^H X = I)")
        object.__setattr__(self, "pilots", x)
        w = np.asarray(self.user_polarforming, dtype=complex)
        if w.ndim != 3 or w.shape[0] != x.shape[1] or w.shape[2] != 2:
            raise ValueError(f"user polarforming must be (K, P, 2), got {w.shape}")
        object.__setattr__(self, "user_polarforming", w)
        v = np.asarray(self.bs_polarforming, dtype=complex)
        if v.shape != (len(self.poses), 2):
            raise ValueError(f"bs polarforming must be (M, 2), got {v.shape}")
        object.__setattr__(self, "bs_polarforming", v)

    @property
    def n_blocks(self) -> int:
        return self.user_polarforming.shape[1]

    @property
    def n_poses(self) -> int:
        return len(self.poses)


def dft_pilots(length: int, n_users: int) -> np.ndarray:
    """First `n_users` columns of the unitary DFT matrix of size `length`."""
    if length < n_users:
        raise ValueError("pilot length must be >= number of users")
    grid = np.outer(np.arange(length), np.arange(n_users))
    return np.exp(-2j * math.pi * grid / length) / math.sqrt(length)


def pilot_polarforming(n_users: int, n_blocks: int, per_user_tone: bool = False) -> np.ndarray:
    """Block-indexed user vectors w_{k,p} = (1/sqrt(2)) [1, exp(j*2*pi*p/P)].

    With per_user_tone=True each user advances its phase at a distinct DFT
    tone, which decorrelates the dynamic coefficient columns across users.
    """
    p = np.arange(n_blocks)
    w = np.empty((n_users, n_blocks, 2), dtype=complex)
    for k in range(n_users):
        tone = 1 + k % max(1, n_blocks - 1) if per_user_tone else 1
        w[k, :, 0] = 1.0
        w[k, :, 1] = np.exp(2j * math.pi * p * tone / n_blocks)
    return w / math.sqrt(2.0)


def training_poses(
    n_poses: int, cube_side: float, wavelength: float | None = None
) -> list[SubarrayPose]:
    """Training poses: a compact outward-facing cluster inside the BS site.

    Boresights follow a Fibonacci-sphere spread for full angular coverage.
    The cluster radius defaults to a few wavelengths so the pooled steering
    manifold keeps lobes wide enough for a degree-scale spectrum grid;
    scattering the poses across the whole site would make every lobe a small
    fraction of a degree wide and the direction search unusable.
    """
    radius = cube_side / 8.0 if wavelength is None else min(5.0 * wavelength, cube_side / 2.0)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    poses = []
    for m in range(n_poses):
        z = 1.0 - 2.0 * (m + 0.5) / n_poses if n_poses > 1 else 1.0
        rho = math.sqrt(max(0.0, 1.0 - z * z))
        direction = np.array([rho * math.cos(golden * m), rho * math.sin(golden * m), z])
        poses.append(SubarrayPose(radius * direction, rotation_facing(direction)))
    return poses


def build_pilot_pattern(
    n_users: int,
    pilot_len: int,
    n_blocks: int,
    n_poses: int,
    cube_side: float,
    wavelength: float | None = None,
    per_user_tone: bool = False,
) -> PilotPattern:
    """Default pattern: DFT pilots, block-stepped user vectors, outward poses."""
    v = np.full((n_poses, 2), 1.0 / math.sqrt(2.0), dtype=complex)
    return PilotPattern(
        pilots=dft_pilots(pilot_len, n_users),
        user_polarforming=pilot_polarforming(n_users, n_blocks, per_user_tone),
        poses=training_poses(n_poses, cube_side, wavelength),
        bs_polarforming=v,
    )


# ---------------------------------------------------------------------------
# pilot reception
# ---------------------------------------------------------------------------


@dataclass
class PilotSim:
    """Received pilot tensors plus the ground-truth factors that generated them."""

    tensors: np.ndarray  # (M, L, N, P)
    h_true: np.ndarray  # (M, K, N) stable channels, row k = user k
    omega_true: np.ndarray  # (M, P, K) dynamic coefficients
    sigma2: float


def noiseless_pilot_factors(
    users: list[UserState],
    pattern: PilotPattern,
    layout: SubarrayLayout,
    consts: PhysicalConstants,
    gain_pattern: GainPattern,
) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth (H_m, Omega_m) factor stacks for all training poses."""
    n_poses, n_users = pattern.n_poses, len(users)
    n_blocks = pattern.n_blocks
    n_ant = layout.n_antennas
    h = np.empty((n_poses, n_users, n_ant), dtype=complex)
    omega = np.empty((n_poses, n_blocks, n_users), dtype=complex)
    for m, pose in enumerate(pattern.poses):
        v = pattern.bs_polarforming[m]
        for k, user in enumerate(users):
            h[m, k] = unpolarformed_los_channel(user, pose, layout, consts, gain_pattern)
            resp = dual_pol_response(pose.u, user.rotation, user.theta, user.phi)
            omega[m, :, k] = pattern.user_polarforming[k] @ (v.conj() @ resp)
    return h, omega


def simulate_pilot_rx(
    users: list[UserState],
    pattern: PilotPattern,
    layout: SubarrayLayout,
    consts: PhysicalConstants,
    gain_pattern: GainPattern,
    rng: np.random.Generator,
    sigma2: float | None = None,
    snr_db: float | None = None,
) -> PilotSim:
    """Received tensors Y_m = X diag(Omega_m[p]) H_m + noise for every pose.

    Noise entries are i.i.d. circular complex Gaussian with total variance
    sigma2. When `snr_db` is given instead, sigma2 is set so that the mean
    squared modulus of the noiseless entries over all poses is 10^(snr/10)
    times sigma2.
    """
    if (sigma2 is None) == (snr_db is None):
        raise ValueError("specify exactly one of sigma2 or snr_db")
    h, omega = noiseless_pilot_factors(users, pattern, layout, consts, gain_pattern)
    x = pattern.pilots
    n_poses = pattern.n_poses
    pilot_len, n_ant, n_blocks = x.shape[0], layout.n_antennas, pattern.n_blocks
    clean = np.empty((n_poses, pilot_len, n_ant, n_blocks), dtype=complex)
    for m in range(n_poses):
        for p in range(n_blocks):
            clean[m, :, :, p] = (x * omega[m, p][None, :]) @ h[m]
    if sigma2 is None:
        sigma2 = float(np.mean(np.abs(clean) ** 2) / 10.0 ** (snr_db / 10.0))
    noise = rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
    tensors = clean + math.sqrt(sigma2 / 2.0) * noise
    return PilotSim(tensors=tensors, h_true=h, omega_true=omega, sigma2=sigma2)


# ---------------------------------------------------------------------------
# tensor algebra
# ---------------------------------------------------------------------------


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product: column k is a[:, k] kron b[:, k]."""
    if a.shape[1] != b.shape[1]:
        raise ValueError("khatri_rao factors need matching column counts")
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def unfold(tensor: np.ndarray, mode: int) -> np.ndarray:
    """Matricize an (L, N, P) tensor.

    mode 1: (N*P, L) so that Z1 = khatri_rao(H^T, Omega) X^T
    mode 2: (P*L, N) so that Z2 = khatri_rao(Omega, X) H
    mode 3: (L*N, P) so that Z3 = khatri_rao(X, H^T) Omega^T
    """
    z = np.asarray(tensor)
    if z.ndim != 3:
        raise ValueError(f"expected a 3-way tensor, got shape {z.shape}")
    dim_l, dim_n, dim_p = z.shape
    if mode == 1:
        return z.transpose(1, 2, 0).reshape(dim_n * dim_p, dim_l)
    if mode == 2:
        return z.transpose(2, 0, 1).reshape(dim_p * dim_l, dim_n)
    if mode == 3:
        return z.reshape(dim_l * dim_n, dim_p)
    raise ValueError(f"unfolding mode must be 1, 2 or 3, got {mode}")


def fold(matrix: np.ndarray, mode: int, shape: tuple[int, int, int]) -> np.ndarray:
    """Inverse of `unfold` for the given original (L, N, P) shape."""
    dim_l, dim_n, dim_p = shape
    m = np.asarray(matrix)
    if mode == 1:
        return m.reshape(dim_n, dim_p, dim_l).transpose(2, 0, 1)
    if mode == 2:
        return m.reshape(dim_p, dim_l, dim_n).transpose(1, 2, 0)
    if mode == 3:
        return m.reshape(dim_l, dim_n, dim_p)
    raise ValueError(f"unfolding mode must be 1, 2 or 3, got {mode}")


# ---------------------------------------------------------------------------
# alternating least squares
# ---------------------------------------------------------------------------


@dataclass
class FactorEstimates:
    """Per-pose ALS output; dynamic-coefficient columns are unit-normalized
    with their scale absorbed into the channel rows."""

    h_hat: np.ndarray  # (K, N)
    omega_hat: np.ndarray  # (P, K)
    n_iter: int
    converged: bool
    objective: list[float]  # squared residual after each full iteration


def _lstsq_checked(a: np.ndarray, b: np.ndarray, mode: int) -> np.ndarray:
    sol, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < a.shape[1]:
        raise ValueError(
            f"rank-deficient Khatri-Rao factor matrix in mode-{mode} update "
            f"(rank {rank} < {a.shape[1]})"
        )
    return sol


def _init_factors(y2, y3, n_users, n_ant, n_blocks):
    # eigenvectors of the Gram matrices for the K strongest directions; pad
    # with DFT columns when K exceeds the available dimension
    def top_eigvecs(gram, count):
        _, vecs = np.linalg.eigh(gram)
        take = min(count, gram.shape[0])
        lead = vecs[:, ::-1][:, :take]
        if take < count:
            grid = np.outer(np.arange(gram.shape[0]), np.arange(take, count))
            pad = np.exp(2j * math.pi * grid / gram.shape[0]) / math.sqrt(gram.shape[0])
            lead = np.concatenate([lead, pad], axis=1)
        return lead

    h0 = top_eigvecs(y2.conj().T @ y2, n_users).conj().T  # (K, N)
    omega0 = top_eigvecs(y3.conj().T @ y3, n_users).conj()  # (P, K)
    return h0, omega0


def als_parafac(
    tensor: np.ndarray,
    pilots: np.ndarray,
    n_users: int,
    kappa: float = 1e-6,
    max_iter: int = 200,
) -> FactorEstimates:
    """Alternating LS factorization of one received tensor with known pilots.

    Alternates exact least-squares updates of the channel factor (mode-2
    unfolding) and the coefficient factor (mode-3 unfolding) until the
    normalized change of both factors drops below `kappa`.
    """
    dim_l, dim_n, dim_p = tensor.shape
    if dim_l * dim_p < n_users or dim_l * dim_n < n_users:
        raise ValueError("tensor too small for the requested number of users")
    x = np.asarray(pilots, dtype=complex)
    y2 = unfold(tensor, 2)
    y3 = unfold(tensor, 3)
    h_prev, omega_prev = _init_factors(y2, y3, n_users, dim_n, dim_p)
    objective = []
    converged = False
    iteration = 0
    h_hat, omega_hat = h_prev, omega_prev
    for iteration in range(1, max_iter + 1):
        a2 = khatri_rao(omega_prev, x)
        h_hat = _lstsq_checked(a2, y2, mode=2)
        a3 = khatri_rao(x, h_hat.T)
        omega_hat = _lstsq_checked(a3, y3, mode=3).T
        objective.append(
            float(np.linalg.norm(y2 - khatri_rao(omega_hat, x) @ h_hat) ** 2)
        )
        dh = np.linalg.norm(h_hat - h_prev) ** 2 / max(np.linalg.norm(h_hat) ** 2, 1e-300)
        dw = np.linalg.norm(omega_hat - omega_prev) ** 2 / max(
            np.linalg.norm(omega_hat) ** 2, 1e-300
        )
        h_prev, omega_prev = h_hat, omega_hat
        if dh <= kappa and dw <= kappa:
            converged = True
            break
    # push the coefficient-column scale into the channel rows
    scale = np.linalg.norm(omega_hat, axis=0)
    nonzero = scale > 0
    omega_hat[:, nonzero] /= scale[nonzero]
    h_hat[nonzero] *= scale[nonzero, None]
    return FactorEstimates(h_hat, omega_hat, iteration, converged, objective)


def genie_scale(estimates: FactorEstimates, h_true: np.ndarray) -> FactorEstimates:
    """Resolve each row's complex scale against the true channel (verification mode)."""
    h = estimates.h_hat.copy()
    omega = estimates.omega_hat.copy()
    for k in range(h.shape[0]):
        denom = h[k] @ h[k].conj()
        if abs(denom) == 0.0:
            continue
        c = (h[k].conj() @ h_true[k]) / denom.real
        h[k] *= c
        if c != 0:
            omega[:, k] /= c
    return FactorEstimates(h, omega, estimates.n_iter, estimates.converged, estimates.objective)


def eta_calibrated_scale(
    estimates: FactorEstimates, mean_eta_power: float
) -> FactorEstimates:
    """Rescale channel rows assuming the mean |dynamic coefficient|^2 is known.

    After the unit-column normalization each channel row carries the norm of
    its coefficient column, which this divides out using the design-time
    average sqrt(P * mean |eta|^2). Only magnitudes are calibrated; per-pose
    phase offsets remain.
    """
    n_blocks = estimates.omega_hat.shape[0]
    scale = math.sqrt(n_blocks * mean_eta_power)
    return FactorEstimates(
        estimates.h_hat / scale,
        estimates.omega_hat,
        estimates.n_iter,
        estimates.converged,
        estimates.objective,
    )


def mean_eta_power(
    pattern: PilotPattern, rng: np.random.Generator, n_draws: int = 2000
) -> float:
    """Monte-Carlo average of |v^H A w|^2 over random device rotations and directions."""
    total = 0.0
    m_idx = rng.integers(0, pattern.n_poses, size=n_draws)
    for i in range(n_draws):
        u_r = RotationAngles(*rng.uniform(0.0, TWO_PI, size=3))
        theta = math.asin(rng.uniform(-1.0, 1.0))
        phi = rng.uniform(-math.pi, math.pi)
        pose = pattern.poses[m_idx[i]]
        v = pattern.bs_polarforming[m_idx[i]]
        resp = dual_pol_response(pose.u, u_r, theta, phi)
        k = rng.integers(0, pattern.user_polarforming.shape[0])
        p = rng.integers(0, pattern.n_blocks)
        w = pattern.user_polarforming[k, p]
        total += abs(v.conj() @ resp @ w) ** 2
    return total / n_draws


# ---------------------------------------------------------------------------
# MUSIC direction finding
# ---------------------------------------------------------------------------


@dataclass
class MusicGrid:
    """Precomputed search grid: stacked unit-norm steering over all poses."""

    theta: np.ndarray  # (Gt,) elevations
    phi: np.ndarray  # (Gp,) azimuths
    steering: np.ndarray  # (Gt*Gp, M*N), rows unit norm
    poses: list[SubarrayPose]
    layout: SubarrayLayout
    wavelength: float
    pattern: GainPattern
    gain_weighted: bool


def stacked_steering(
    f: np.ndarray,
    poses: list[SubarrayPose],
    layout: SubarrayLayout,
    wavelength: float,
    pattern: GainPattern,
    gain_weighted: bool = True,
) -> np.ndarray:
    """Pose-stacked steering vector toward `f`, optionally sqrt(gain)-weighted."""
    blocks = []
    for pose in poses:
        a = steering_vector(pose, layout, f, wavelength)
        if gain_weighted:
            a = math.sqrt(effective_gain(pose.u, f, pattern)) * a
        blocks.append(a)
    return np.concatenate(blocks)


def _angles_to_dirs(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Unit vectors for broadcastable elevation/azimuth arrays, rows stacked."""
    ct = np.cos(theta)
    return np.stack([ct * np.cos(phi), ct * np.sin(phi), np.sin(theta)], axis=-1)


def steering_rows(
    dirs: np.ndarray,
    poses: list[SubarrayPose],
    layout: SubarrayLayout,
    wavelength: float,
    pattern: GainPattern,
    gain_weighted: bool = True,
    normalize: bool = True,
) -> np.ndarray:
    """Pose-stacked steering for many directions at once, shape (G, M*N)."""
    dirs = np.atleast_2d(dirs)
    blocks = []
    ratio = 2.0 * math.pi / wavelength
    for pose in poses:
        positions = antenna_positions(pose, layout)  # (N, 3)
        a = np.exp(-1j * ratio * dirs @ positions.T)  # (G, N)
        if gain_weighted:
            gains = pattern.gain_dbi_rows(dirs @ rotation_matrix(pose.u))
            a = np.sqrt(10.0 ** (gains / 10.0))[:, None] * a
        blocks.append(a)
    rows = np.concatenate(blocks, axis=1)
    if normalize:
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        rows = rows / np.where(norms > 0, norms, 1.0)
    return rows


def build_music_grid(
    poses: list[SubarrayPose],
    layout: SubarrayLayout,
    wavelength: float,
    pattern: GainPattern,
    theta_step_deg: float = 1.0,
    phi_step_deg: float = 1.0,
    gain_weighted: bool = True,
) -> MusicGrid:
    """Steering table over a theta x phi grid (cell centers)."""
    theta = np.deg2rad(np.arange(-90.0 + theta_step_deg / 2.0, 90.0, theta_step_deg))
    phi = np.deg2rad(np.arange(-180.0 + phi_step_deg / 2.0, 180.0, phi_step_deg))
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    dirs = _angles_to_dirs(tt, pp).reshape(-1, 3)
    steering = steering_rows(dirs, poses, layout, wavelength, pattern, gain_weighted)
    return MusicGrid(theta, phi, steering, poses, layout, wavelength, pattern, gain_weighted)


def _refine_parabolic(values: np.ndarray, idx: int, step: float) -> float:
    """Sub-grid offset of the minimum of a sampled smooth function."""
    if idx <= 0 or idx >= values.size - 1:
        return 0.0
    left, mid, right = values[idx - 1], values[idx], values[idx + 1]
    denom = left - 2.0 * mid + right
    if denom <= 0:
        return 0.0
    offset = 0.5 * (left - right) / denom
    return float(np.clip(offset, -0.5, 0.5)) * step


def _spectrum_window(
    theta0: float,
    phi0: float,
    signal: np.ndarray,
    grid: MusicGrid,
    half_width_deg: float,
    step_deg: float,
) -> tuple[float, float, float]:
    """Pseudo-spectrum search on a local window; returns (theta, phi, value).

    The sub-grid offset of the best cell is interpolated parabolically on the
    noise-subspace power, which is smooth near its minimum.
    """
    half = math.radians(half_width_deg)
    step = math.radians(step_deg)
    theta = np.arange(theta0 - half, theta0 + half + step / 2, step)
    theta = theta[(theta > -math.pi / 2) & (theta < math.pi / 2)]
    phi = np.arange(phi0 - half, phi0 + half + step / 2, step)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    dirs = _angles_to_dirs(tt, pp).reshape(-1, 3)
    rows = steering_rows(
        dirs, grid.poses, grid.layout, grid.wavelength, grid.pattern, grid.gain_weighted
    )
    proj = rows @ signal.conj()
    denom = np.maximum(1.0 - np.sum(np.abs(proj) ** 2, axis=1), 1e-300)
    denom = denom.reshape(theta.size, phi.size)
    it, ip = np.unravel_index(int(np.argmin(denom)), denom.shape)
    dt = _refine_parabolic(denom[:, ip], it, step)
    dp = _refine_parabolic(denom[it, :], ip, step)
    theta_hat = min(math.pi / 2, max(-math.pi / 2, theta[it] + dt))
    phi_hat = phi[ip] + dp
    phi_hat = math.atan2(math.sin(phi_hat), math.cos(phi_hat))
    return theta_hat, phi_hat, 1.0 / float(denom[it, ip])


def _zoom_peak(theta0, phi0, signal, grid) -> tuple[float, float, float]:
    """Two-stage local maximization of the pseudo-spectrum around a candidate.

    The pooled training poses span many wavelengths, so spectrum lobes are a
    fraction of a degree wide; the first window oversamples them and the
    second polishes the winning lobe.
    """
    t1, p1, _ = _spectrum_window(theta0, phi0, signal, grid, half_width_deg=2.5, step_deg=0.05)
    return _spectrum_window(t1, p1, signal, grid, half_width_deg=0.1, step_deg=0.01)


def music_doa(
    h_estimates: list[np.ndarray] | np.ndarray,
    n_users: int,
    grid: MusicGrid,
    min_sep_deg: float = 0.3,
) -> tuple[np.ndarray, np.ndarray]:
    """Top-K directions of the pooled-pose MUSIC pseudo-spectrum.

    h_estimates holds one (K, N) channel-factor matrix per training pose.
    Candidate regions come from the coarse-grid peaks plus, per user column,
    the smooth incoherent matched score (the coherent lobes are far narrower
    than any affordable global grid); each candidate is then refined on the
    actual pseudo-spectrum and the K strongest separated refinements win.
    Returns (angles, directions): a (K, 2) array of elevation/azimuth pairs
    and the matching (K, 3) unit vectors.
    """
    stacked = np.concatenate([h.T for h in h_estimates], axis=0)  # (M*N, K)
    mn, k_cols = stacked.shape
    if mn <= n_users:
        raise ValueError("MUSIC needs more pooled antennas than users (M*N > K)")
    cov = stacked @ stacked.conj().T / k_cols
    _, vecs = np.linalg.eigh(cov)
    signal = vecs[:, ::-1][:, :n_users]  # (MN, K)
    # noise-subspace power via the signal-space complement (rows are unit norm)
    proj = grid.steering @ signal.conj()
    denom = np.maximum(1.0 - np.sum(np.abs(proj) ** 2, axis=1), 1e-300)
    n_theta, n_phi = grid.theta.size, grid.phi.size
    spectrum = (1.0 / denom).reshape(n_theta, n_phi)

    candidates = [
        (grid.theta[it], grid.phi[ip]) for it, ip in _top_peaks(spectrum, n_users)
    ]
    # per-column incoherent matched score: smooth in angle, so its argmax
    # lands within the zoom window of the true peak
    n_poses = len(grid.poses)
    blocks = grid.steering.reshape(-1, n_poses, grid.layout.n_antennas)
    columns = stacked.T.reshape(k_cols, n_poses, grid.layout.n_antennas)
    inc = np.abs(np.einsum("gmn,kmn->gkm", blocks.conj(), columns)) ** 2
    best = np.argmax(inc.sum(axis=2), axis=0)  # (K,)
    for cell in best:
        it, ip = divmod(int(cell), n_phi)
        candidates.append((grid.theta[it], grid.phi[ip]))

    # candidates within one zoom window converge to the same lobe; keep one
    deduped: list[tuple[float, float]] = []
    for t0, p0 in candidates:
        d0 = _angles_to_dirs(np.array(t0), np.array(p0))
        if all(
            np.arccos(np.clip(d0 @ _angles_to_dirs(np.array(t), np.array(p)), -1, 1))
            > math.radians(1.2)
            for t, p in deduped
        ):
            deduped.append((t0, p0))
    refined = [_zoom_peak(t0, p0, signal, grid) for t0, p0 in deduped]
    refined.sort(key=lambda r: -r[2])
    min_sep = math.radians(min_sep_deg)
    chosen: list[tuple[float, float, float]] = []
    for t, p, val in refined:
        d = _angles_to_dirs(np.array(t), np.array(p))
        if all(
            np.arccos(np.clip(d @ _angles_to_dirs(np.array(tc), np.array(pc)), -1, 1))
            >= min_sep
            for tc, pc, _ in chosen
        ):
            chosen.append((t, p, val))
        if len(chosen) == n_users:
            break
    if len(chosen) < n_users:
        warnings.warn(
            f"pseudo-spectrum separated only {len(chosen)} of {n_users} peaks; "
            "duplicating the strongest candidates"
        )
        while len(chosen) < n_users:
            chosen.append(refined[len(chosen) % len(refined)])
    angles = np.array([(t, p) for t, p, _ in chosen])
    dirs = np.array([pointing_vector(t, p) for t, p in angles])
    return angles, dirs


def _top_peaks(spectrum: np.ndarray, count: int, min_sep: int = 3) -> list[tuple[int, int]]:
    """Grid local maxima (8-neighborhood, azimuth wraps), strongest first.

    Maxima closer than `min_sep` cells (chebyshev, wrapped in azimuth) to an
    already accepted peak are suppressed; if fewer than `count` separated
    peaks exist a warning is emitted and the strongest remaining cells fill in.
    """
    n_phi = spectrum.shape[1]
    local = np.ones_like(spectrum, dtype=bool)
    for dt in (-1, 0, 1):
        for dp in (-1, 0, 1):
            if dt == 0 and dp == 0:
                continue
            shifted = np.roll(spectrum, dp, axis=1)
            if dt == 1:
                cmp = np.full_like(spectrum, -np.inf)
                cmp[1:] = shifted[:-1]
            elif dt == -1:
                cmp = np.full_like(spectrum, -np.inf)
                cmp[:-1] = shifted[1:]
            else:
                cmp = shifted
            local &= spectrum >= cmp
    idx = np.argwhere(local)
    order = np.argsort(spectrum[local])[::-1]

    def separated(cell, chosen):
        for it, ip in chosen:
            dphi = abs(cell[1] - ip)
            dphi = min(dphi, n_phi - dphi)
            if max(abs(cell[0] - it), dphi) < min_sep:
                return False
        return True

    peaks: list[tuple[int, int]] = []
    for i in order:
        cell = (int(idx[i][0]), int(idx[i][1]))
        if separated(cell, peaks):
            peaks.append(cell)
        if len(peaks) == count:
            return peaks
    warnings.warn(
        f"MUSIC grid separated only {len(peaks)} of {count} peaks; "
        "padding with strongest remaining cells"
    )
    flat = np.argsort(spectrum.ravel())[::-1]
    for cell_flat in flat:
        cell = divmod(int(cell_flat), n_phi)
        if cell not in peaks:
            peaks.append(cell)
        if len(peaks) == count:
            break
    return peaks


# ---------------------------------------------------------------------------
# range estimation
# ---------------------------------------------------------------------------


def estimate_distance(
    h_norms: np.ndarray, gains: np.ndarray, epsilon0: float, n_antennas: int
) -> float:
    """Closed-form least-squares range from per-pose channel norms and gains.

    Minimizes sum_m (|h_m| - sqrt(epsilon0 N / d^2) sqrt(g_m))^2 over d > 0,
    giving d = sqrt(epsilon0 N) sum(g) / sum(|h| sqrt(g)).
    """
    h_norms = np.asarray(h_norms, dtype=float)
    gains = np.asarray(gains, dtype=float)
    if np.any(gains < 0):
        raise ValueError("gains must be nonnegative")
    if not np.any(gains > 0):
        raise ValueError("user unobservable: all pose gains are zero")
    denom = float(np.sum(h_norms * np.sqrt(gains)))
    if denom <= 0:
        raise ValueError("user unobservable: zero channel energy at every pose")
    return math.sqrt(epsilon0 * n_antennas) * float(np.sum(gains)) / denom


# ---------------------------------------------------------------------------
# end-to-end localization
# ---------------------------------------------------------------------------


@dataclass
class LocalizationResult:
    angles: np.ndarray  # (K, 2) estimated elevation/azimuth
    directions: np.ndarray  # (K, 3)
    distances: np.ndarray  # (K,)
    positions: np.ndarray  # (K, 3)
    errors: np.ndarray  # (K,) position errors against ground truth
    sigma2: float
    als_iterations: list[int]


def localize_users(
    users: list[UserState],
    pattern: PilotPattern,
    layout: SubarrayLayout,
    consts: PhysicalConstants,
    gain_pattern: GainPattern,
    rng: np.random.Generator,
    snr_db: float | None = None,
    sigma2: float | None = None,
    calibration: str = "genie",
    grid: MusicGrid | None = None,
    kappa: float = 1e-6,
    max_iter: int = 200,
    eta_power: float | None = None,
) -> LocalizationResult:
    """Full pipeline: simulate pilots, factor, find directions, fit ranges.

    calibration selects the per-pose scale fix: "genie" resolves scales
    against the true factors (verification mode), "eta" uses the design-time
    mean coefficient power.
    """
    if calibration not in ("genie", "eta"):
        raise ValueError(f"unknown calibration mode {calibration!r}")
    sim = simulate_pilot_rx(
        users, pattern, layout, consts, gain_pattern, rng, sigma2=sigma2, snr_db=snr_db
    )
    if calibration == "eta" and eta_power is None:
        eta_power = mean_eta_power(pattern, np.random.default_rng(0))
    estimates = []
    for m in range(pattern.n_poses):
        est = als_parafac(sim.tensors[m], pattern.pilots, len(users), kappa, max_iter)
        if calibration == "genie":
            est = genie_scale(est, sim.h_true[m])
        else:
            est = eta_calibrated_scale(est, eta_power)
        estimates.append(est)
    if grid is None:
        grid = build_music_grid(pattern.poses, layout, consts.wavelength, gain_pattern)
    angles, dirs = music_doa([e.h_hat for e in estimates], len(users), grid)

    # tie each pseudo-spectrum peak to a user column via best steering match
    stacked = np.concatenate([e.h_hat.T for e in estimates], axis=0)  # (MN, K)
    peak_steer = np.stack(
        [
            stacked_steering(
                d, pattern.poses, layout, consts.wavelength, gain_pattern, grid.gain_weighted
            )
            for d in dirs
        ]
    )  # (K, MN)
    col_norm = np.linalg.norm(stacked, axis=0)
    peak_norm = np.linalg.norm(peak_steer, axis=1)
    corr = np.abs(peak_steer.conj() @ stacked) / np.outer(peak_norm, np.maximum(col_norm, 1e-300))
    peak_for_user = np.empty(len(users), dtype=int)
    rows, cols = linear_sum_assignment(-corr)
    peak_for_user[cols] = rows

    distances = np.empty(len(users))
    positions = np.empty((len(users), 3))
    for k in range(len(users)):
        d_hat = dirs[peak_for_user[k]]
        h_norms = np.array([np.linalg.norm(e.h_hat[k]) for e in estimates])
        gains = np.array(
            [effective_gain(pose.u, d_hat, gain_pattern) for pose in pattern.poses]
        )
        distances[k] = estimate_distance(h_norms, gains, consts.epsilon0, layout.n_antennas)
        positions[k] = distances[k] * d_hat
    truth = np.array([u.position for u in users])
    errors = np.linalg.norm(positions - truth, axis=1)
    ordered_angles = angles[peak_for_user]
    ordered_dirs = dirs[peak_for_user]
    return LocalizationResult(
        ordered_angles,
        ordered_dirs,
        distances,
        positions,
        errors,
        sim.sigma2,
        [e.n_iter for e in estimates],
    )
