"""Scenario generation, two-timescale protocol orchestration, and persistence.

Phase I senses user locations from pilot tensors and then searches subarray
placements against channel samples built on the sensed locations; Phase II
adapts polarforming and precoding to the instantaneous device rotations in
each channel coherence interval. Baseline schemes reuse the same machinery
with individual pieces frozen.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .channel import (
    GainPattern,
    ISOTROPIC,
    PhysicalConstants,
    TGPP_ELEMENT,
    UserState,
    dual_pol_response,
    unpolarformed_los_channel,
)
from .codebook import Codebook, build_codebook
from .fast_opt import (
    ChannelInstance,
    PddConfig,
    channel_vectors,
    initial_state,
    mrt_precoders,
    pdd_solve,
    sum_rates,
)
from .geometry import RotationAngles, SubarrayLayout, SubarrayPose, rotation_facing
from .localization import (
    LocalizationResult,
    MusicGrid,
    build_pilot_pattern,
    localize_users,
)
from .slow_opt import PsoConfig, rs_pso_solve, split_pose

SPEED_OF_LIGHT = 299792458.0

SCHEMES = ("tt-ppr", "polarforming-only", "position-rotation-only", "fixed")

# per-purpose offsets for deterministic, scheme-independent random streams
_STREAMS = {
    "scenario": 1,
    "pilot-noise": 2,
    "pso": 3,
    "rotations": 4,
    "fixed-polarforming": 5,
}


def _stream(seed: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), _STREAMS[purpose])))


@dataclass
class Scenario:
    """Full system configuration; defaults follow the reference setup
    (16 subarrays of 4 antennas, 30 users, 24 GHz, 1 m site cube)."""

    n_subarrays: int = 16  # B
    n_antennas: int = 4  # N per subarray
    n_users: int = 30  # K
    cube_side: float = 1.0  # A, meters
    r_min: float = 20.0
    r_max: float = 200.0
    carrier_hz: float = 24e9
    epsilon0: float = 1.0
    zeta: float = 1.0
    snr_db: float = 10.0  # reference downlink SNR, sets sigma2
    pilot_snr_db: float = 15.0  # received SNR during localization
    q_rho: int = 1
    q_theta: int = 3
    d_min: float | None = None
    n_poses: int = 8  # M training position-rotation pairs
    pilot_len: int = 8  # L
    pilot_blocks: int = 8  # P
    coherence_slots: int = 4  # T_c
    rho_weights: tuple | None = None
    gain_pattern: str = "3gpp"
    seed: int = 0

    def __post_init__(self):
        if self.r_min <= 1.0:
            raise ValueError("r_min must exceed the 1 m reference distance")
        if self.r_max <= self.r_min:
            raise ValueError("r_max must exceed r_min")
        if self.d_min is None:
            lam = self.wavelength
            self.d_min = (math.sqrt(2.0) / 2.0) * lam + lam / 2.0
        if self.d_min <= 0:
            raise ValueError("d_min must be positive")
        if self.rho_weights is not None and len(self.rho_weights) != self.n_users:
            raise ValueError("rho_weights length must match n_users")
        if self.gain_pattern not in ("isotropic", "3gpp"):
            raise ValueError(f"unknown gain pattern {self.gain_pattern!r}")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def sigma2(self) -> float:
        """Noise power giving the reference SNR to a full-array MRT user at the
        cell edge (boresight gain excluded)."""
        edge_rx = self.zeta * self.epsilon0 * self.r_max**-2 * self.n_antennas * self.n_subarrays
        return edge_rx / 10.0 ** (self.snr_db / 10.0)

    @property
    def weights(self) -> np.ndarray:
        if self.rho_weights is None:
            return np.ones(self.n_users)
        return np.asarray(self.rho_weights, dtype=float)

    def constants(self) -> PhysicalConstants:
        return PhysicalConstants(
            wavelength=self.wavelength,
            epsilon0=self.epsilon0,
            sigma2=self.sigma2,
            zeta=self.zeta,
            rho_weights=self.weights,
        )

    def layout(self) -> SubarrayLayout:
        return SubarrayLayout.upa(self.n_antennas, self.wavelength / 2.0)

    def pattern(self) -> GainPattern:
        return TGPP_ELEMENT if self.gain_pattern == "3gpp" else ISOTROPIC

    def codebook(self) -> Codebook:
        return build_codebook(self.q_rho, self.q_theta)


@dataclass
class ScenarioInstance:
    scenario: Scenario
    users: list[UserState]


def generate_scenario(scenario: Scenario, rng: np.random.Generator | None = None) -> ScenarioInstance:
    """Draw user ground truth: positions uniform over the annulus shell volume,
    device rotations uniform."""
    rng = rng or _stream(scenario.seed, "scenario")
    users = []
    for _ in range(scenario.n_users):
        radius = (
            scenario.r_min**3
            + rng.uniform() * (scenario.r_max**3 - scenario.r_min**3)
        ) ** (1.0 / 3.0)
        theta = math.asin(rng.uniform(-1.0, 1.0))
        phi = rng.uniform(-math.pi, math.pi)
        rotation = RotationAngles(*rng.uniform(0.0, 2.0 * math.pi, size=3))
        users.append(UserState(theta, phi, radius, rotation))
    return ScenarioInstance(scenario, users)


# ---------------------------------------------------------------------------
# channel assembly
# ---------------------------------------------------------------------------


def poses_from_vector(s: np.ndarray) -> list[SubarrayPose]:
    positions, rotations = split_pose(s)
    return [SubarrayPose(q, RotationAngles(*u)) for q, u in zip(positions, rotations)]


def build_channel_instance(
    scenario: Scenario,
    poses: list[SubarrayPose],
    directions: list[tuple[float, float, float]],
    rotations: np.ndarray,
    layout: SubarrayLayout | None = None,
) -> ChannelInstance:
    """Channel data for one coherence interval.

    directions holds (theta, phi, distance) per user and rotations the
    (K, 3) device rotation angles.
    """
    layout = layout or scenario.layout()
    consts = scenario.constants()
    pattern = scenario.pattern()
    n_users, n_sub = len(directions), len(poses)
    hlos = np.empty((n_users, n_sub, layout.n_antennas), dtype=complex)
    resp = np.empty((n_users, n_sub, 2, 2), dtype=complex)
    for k, (theta, phi, dist) in enumerate(directions):
        u_r = RotationAngles(*rotations[k])
        user = UserState(theta, phi, dist, u_r)
        for b, pose in enumerate(poses):
            hlos[k, b] = unpolarformed_los_channel(user, pose, layout, consts, pattern)
            resp[k, b] = dual_pol_response(pose.u, u_r, theta, phi)
    return ChannelInstance(
        hlos=hlos,
        pol_response=resp,
        sigma2=scenario.sigma2,
        zeta=scenario.zeta,
        weights=scenario.weights,
    )


def three_sector_poses(scenario: Scenario) -> tuple[list[SubarrayPose], SubarrayLayout]:
    """Fixed three-sector deployment: boresights 120 degrees apart on the
    horizon, each sector an UPA with ceil(N*B/3) antennas."""
    per_sector = math.ceil(scenario.n_antennas * scenario.n_subarrays / 3)
    layout = SubarrayLayout.upa(per_sector, scenario.wavelength / 2.0)
    radius = max(scenario.d_min, 0.25 * scenario.cube_side)
    poses = []
    for azimuth in (0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0):
        n = np.array([math.cos(azimuth), math.sin(azimuth), 0.0])
        poses.append(SubarrayPose(radius * n, rotation_facing(n)))
    return poses, layout


def random_codebook_polarforming(
    cb: Codebook, count: int, rng: np.random.Generator
) -> np.ndarray:
    """(count, 2) matrix of codewords drawn uniformly from the codebook."""
    phases = cb.phases[rng.integers(0, cb.phases.size, size=(count, 2))]
    amps = cb.amplitudes[rng.integers(0, cb.amplitudes.size, size=(count, 2))]
    return amps * np.exp(1j * phases)


# ---------------------------------------------------------------------------
# two-timescale run
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    scheme: str
    seed: int
    localization: LocalizationResult | None
    pose_vector: np.ndarray | None  # optimized [q; u] when the scheme moves antennas
    pso_trace: list[float] | None
    interval_rates: list[float]  # weighted sum rate per coherence interval
    interval_solutions: list[dict]  # per interval: polarforming w/v and precoders c
    mean_rate: float
    elapsed_s: float


def _sensed_directions(loc: LocalizationResult | None, users) -> list[tuple]:
    if loc is None:
        return [(u.theta, u.phi, u.distance) for u in users]
    out = []
    for k in range(len(users)):
        theta, phi = loc.angles[k]
        theta = min(math.pi / 2, max(-math.pi / 2, float(theta)))
        phi = math.atan2(math.sin(phi), math.cos(phi))
        dist = max(float(loc.distances[k]), 1.0 + 1e-6)
        out.append((theta, phi, dist))
    return out


def run_localization(
    inst: ScenarioInstance,
    rng: np.random.Generator,
    calibration: str = "genie",
    grid: MusicGrid | None = None,
    snr_db: float | None = None,
) -> LocalizationResult:
    scn = inst.scenario
    pattern = build_pilot_pattern(
        scn.n_users, scn.pilot_len, scn.pilot_blocks, scn.n_poses, scn.cube_side,
        wavelength=scn.wavelength,
    )
    return localize_users(
        inst.users,
        pattern,
        scn.layout(),
        scn.constants(),
        scn.pattern(),
        rng,
        snr_db=scn.pilot_snr_db if snr_db is None else snr_db,
        calibration=calibration,
        grid=grid,
    )


def _fitness_rate_fn(scenario, directions, fast_cfg, cb, fixed_polarforming=None):
    """Per-sample weighted-rate evaluator used inside the PSO fitness.

    With `fixed_polarforming=(w, v)` the rate is evaluated at that frozen
    polarforming with MRT precoding; otherwise each sample runs the
    fast-timescale solver under the (cheap) fast_cfg budget.
    """
    layout = scenario.layout()

    def rate_fn(s, rotations):
        poses = poses_from_vector(s)
        inst = build_channel_instance(scenario, poses, directions, rotations, layout)
        if fixed_polarforming is not None:
            w_fixed, v_fixed = fixed_polarforming
            h_all = channel_vectors(inst, w_fixed, v_fixed)
            c = mrt_precoders(h_all, inst.zeta)
            return float(inst.weights @ sum_rates(inst, h_all, c))
        _, diag = pdd_solve(inst, cb, fast_cfg)
        return diag.weighted_sum_rate

    return rate_fn


def run_two_timescale(
    inst: ScenarioInstance,
    scheme: str = "tt-ppr",
    genie_location: bool = False,
    pso_cfg: PsoConfig | None = None,
    fitness_pdd: PddConfig | None = None,
    final_pdd: PddConfig | None = None,
    localization: LocalizationResult | None = None,
    music_grid: MusicGrid | None = None,
) -> RunResult:
    """Run one scheme through both protocol phases and report per-interval rates.

    The random streams for sensing noise, channel samples and Phase II device
    rotations depend only on the scenario seed, so different schemes on the
    same seed see identical channels (paired comparisons).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    scn = inst.scenario
    start = time.perf_counter()
    cb = scn.codebook()
    pso_cfg = pso_cfg or PsoConfig()
    fitness_pdd = fitness_pdd or PddConfig(eps_in=1e-3, max_inner=6, max_outer=2)
    final_pdd = final_pdd or PddConfig()

    needs_sensing = scheme in ("tt-ppr", "position-rotation-only") and not genie_location
    loc = localization
    if needs_sensing and loc is None:
        loc = run_localization(inst, _stream(scn.seed, "pilot-noise"), grid=music_grid)
    directions = _sensed_directions(loc if needs_sensing else None, inst.users)
    true_directions = [(u.theta, u.phi, u.distance) for u in inst.users]

    fixed_rng = _stream(scn.seed, "fixed-polarforming")
    w_fixed = random_codebook_polarforming(cb, scn.n_users, fixed_rng)
    sector_poses, sector_layout = three_sector_poses(scn)
    v_fixed_sector = random_codebook_polarforming(cb, len(sector_poses), fixed_rng)
    v_fixed_pa = random_codebook_polarforming(cb, scn.n_subarrays, fixed_rng)

    pose_vector = None
    pso_trace = None
    if scheme in ("tt-ppr", "position-rotation-only"):
        rate_fn = _fitness_rate_fn(
            scn,
            directions,
            fitness_pdd,
            cb,
            fixed_polarforming=None if scheme == "tt-ppr" else (w_fixed, v_fixed_pa),
        )
        pso_result = rs_pso_solve(
            scn.n_users,
            scn.n_subarrays,
            scn.cube_side,
            scn.d_min,
            rate_fn,
            pso_cfg,
            _stream(scn.seed, "pso"),
        )
        pose_vector = pso_result.best
        pso_trace = pso_result.best_trace
        poses = poses_from_vector(pose_vector)
        layout = scn.layout()
    else:
        poses, layout = sector_poses, sector_layout

    rot_rng = _stream(scn.seed, "rotations")
    interval_rates = []
    interval_solutions = []
    for _ in range(scn.coherence_slots):
        rotations = rot_rng.uniform(0.0, 2.0 * math.pi, size=(scn.n_users, 3))
        ch = build_channel_instance(scn, poses, true_directions, rotations, layout)
        if scheme == "tt-ppr":
            state, diag = pdd_solve(ch, cb, final_pdd)
            rate = diag.weighted_sum_rate
            solution = {"w": state.w_bar, "v": state.v_bar, "c": state.c}
        elif scheme == "polarforming-only":
            # precoders frozen at the fixed scheme's MRT solution
            h_fixed = channel_vectors(ch, w_fixed, v_fixed_sector)
            c_frozen = mrt_precoders(h_fixed, ch.zeta)
            init = initial_state(ch, cb, final_pdd, w0=w_fixed, v0=v_fixed_sector, c0=c_frozen)
            state, diag = pdd_solve(ch, cb, final_pdd, init=init, optimize_precoders=False)
            rate = diag.weighted_sum_rate
            solution = {"w": state.w_bar, "v": state.v_bar, "c": state.c}
        else:
            v_fixed = v_fixed_pa if scheme == "position-rotation-only" else v_fixed_sector
            h_all = channel_vectors(ch, w_fixed, v_fixed)
            c = mrt_precoders(h_all, ch.zeta)
            rate = float(ch.weights @ sum_rates(ch, h_all, c))
            solution = {"w": w_fixed, "v": v_fixed, "c": c}
        interval_rates.append(rate)
        interval_solutions.append(solution)
    mean_rate = float(np.mean(interval_rates)) if interval_rates else 0.0
    return RunResult(
        scheme=scheme,
        seed=scn.seed,
        localization=loc if needs_sensing else None,
        pose_vector=pose_vector,
        pso_trace=pso_trace,
        interval_rates=interval_rates,
        interval_solutions=interval_solutions,
        mean_rate=mean_rate,
        elapsed_s=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

CSV_SCHEMA_VERSION = 1

LOCALIZE_COLUMNS = (
    "seed",
    "snr_db",
    "trial",
    "user_id",
    "true_x",
    "true_y",
    "true_z",
    "est_x",
    "est_y",
    "est_z",
    "error_m",
)

SWEEP_COLUMNS = ("sweep", "sweep_value", "scheme", "seed", "weighted_rate")


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def export_results(rows: list[dict], columns: tuple, out_csv) -> None:
    """Write rows as CSV with a fixed column order; deterministic formatting."""
    for row in rows:
        missing = set(columns) - set(row)
        if missing:
            raise ValueError(f"result row missing columns {sorted(missing)}")
    try:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_format(row[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"failed to write results to {out_csv}: {exc}") from exc


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, default=str).encode()
    ).hexdigest()


def write_manifest(path, config: dict, seed: int) -> dict:
    manifest = {
        "schema_version": CSV_SCHEMA_VERSION,
        "config": config,
        "config_hash": config_hash(config),
        "seed": int(seed),
        "version": __version__,
    }
    try:
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"failed to write manifest to {path}: {exc}") from exc
    return manifest


def write_summary(path, summary: dict) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"failed to write summary to {path}: {exc}") from exc
