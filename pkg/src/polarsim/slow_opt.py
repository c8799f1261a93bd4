"""Slow-timescale subarray position/rotation search via particle swarm.

A particle stacks all subarray centers and rotation angles into one vector.
Fitness is a recursively sampled surrogate of the expected weighted sum rate:
each iteration folds the running estimate together with fresh rates from one
mini-batch of random user-rotation samples, and infeasible placements are
charged a count-based penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import subarray_normal

TWO_PI = 2.0 * math.pi


@dataclass
class PsoConfig:
    swarm: int = 20
    inertia: float = 0.7
    c1: float = 1.5
    c2: float = 1.5
    iterations: int = 30
    tau: float = 10.0  # penalty per constraint violation
    batch: int = 2  # samples per mini-batch (L_S)
    total_samples: int | None = None  # defaults to batch * iterations
    kappa_exponent: float = -0.2  # mini-batch mixing weight kappa(i) = i**exponent
    init_attempts: int = 100

    def __post_init__(self):
        if self.swarm < 1:
            raise ValueError("swarm size must be >= 1")
        if self.total_samples is None:
            self.total_samples = self.batch * max(self.iterations, 1)
        if self.total_samples % self.batch:
            raise ValueError("total_samples must be divisible by the batch size")

    def kappa(self, i: int) -> float:
        return float(i) ** self.kappa_exponent

    @property
    def n_batches(self) -> int:
        return self.total_samples // self.batch


def sample_channels(n_users: int, total: int, rng: np.random.Generator) -> np.ndarray:
    """Random channel-sample descriptors: one rotation triple per user per sample.

    User locations stay pinned to their sensed values; only device rotations
    vary, drawn uniformly on [0, 2*pi)^3. Shape (total, n_users, 3).
    """
    return rng.uniform(0.0, TWO_PI, size=(total, n_users, 3))


def split_pose(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a particle vector into positions (B, 3) and rotations (B, 3)."""
    s = np.asarray(s, dtype=float)
    n_sub = s.size // 6
    return s[: 3 * n_sub].reshape(n_sub, 3), s[3 * n_sub :].reshape(n_sub, 3)


def penalty_violations(s: np.ndarray, d_min: float) -> tuple[list[tuple], int]:
    """Placement-constraint violations of a particle.

    Counts subarray pairs closer than d_min, ordered pairs where one boresight
    faces another subarray, and subarrays whose boresight points inward
    (negative projection on their own position).
    """
    positions, rotations = split_pose(s)
    n_sub = positions.shape[0]
    normals = np.array([subarray_normal(u) for u in rotations])
    violations: list[tuple] = []
    for i in range(n_sub):
        for j in range(i + 1, n_sub):
            if np.linalg.norm(positions[i] - positions[j]) < d_min:
                violations.append(("spacing", i, j))
    for i in range(n_sub):
        for j in range(n_sub):
            if i != j and normals[i] @ (positions[j] - positions[i]) > 0.0:
                violations.append(("facing", i, j))
    for i in range(n_sub):
        if normals[i] @ positions[i] < 0.0:
            violations.append(("inward", i))
    return violations, len(violations)


def fitness(
    s: np.ndarray,
    batch_rotations: np.ndarray,
    prev_j: float,
    kappa_i: float,
    tau: float,
    rate_fn,
    d_min: float,
) -> tuple[float, float]:
    """Recursive surrogate J and its penalized value J_bar for one particle.

    J mixes the previous surrogate with the mean weighted rate over the
    mini-batch; J_bar subtracts tau per constraint violation so infeasible
    particles rank below feasible ones.
    """
    batch_mean = float(np.mean([rate_fn(s, rot) for rot in batch_rotations]))
    j_val = (1.0 - kappa_i) * prev_j + kappa_i * batch_mean
    _, count = penalty_violations(s, d_min)
    return j_val, j_val - tau * count


def pso_step(
    positions: np.ndarray,
    velocities: np.ndarray,
    local_best: np.ndarray,
    global_best: np.ndarray,
    cfg: PsoConfig,
    cube_side: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """One velocity/position update with clamping to the site cube.

    Velocity mixes inertia with attraction to the particle's own best and the
    swarm best (componentwise uniform draws). Position components are clamped
    to [-A/2, A/2]; rotation components wrap modulo 2*pi.
    """
    n_particles, dim = positions.shape
    n_pos = dim // 2
    r1 = rng.uniform(size=(n_particles, dim))
    r2 = rng.uniform(size=(n_particles, dim))
    velocities = (
        cfg.inertia * velocities
        + cfg.c1 * r1 * (local_best - positions)
        + cfg.c2 * r2 * (global_best[None, :] - positions)
    )
    moved = positions + velocities
    moved[:, :n_pos] = np.clip(moved[:, :n_pos], -cube_side / 2.0, cube_side / 2.0)
    moved[:, n_pos:] = np.mod(moved[:, n_pos:], TWO_PI)
    return moved, velocities


def init_particles(
    n_particles: int,
    n_subarrays: int,
    cube_side: float,
    d_min: float,
    rng: np.random.Generator,
    attempts: int = 100,
) -> np.ndarray:
    """Uniform random particles, resampled toward feasibility.

    Each particle is redrawn until it has no constraint violations or the
    attempt budget runs out (it is then kept and left to the penalty).
    """
    particles = np.empty((n_particles, 6 * n_subarrays))
    for i in range(n_particles):
        for _ in range(attempts):
            q = rng.uniform(-cube_side / 2.0, cube_side / 2.0, size=3 * n_subarrays)
            u = rng.uniform(0.0, TWO_PI, size=3 * n_subarrays)
            candidate = np.concatenate([q, u])
            _, count = penalty_violations(candidate, d_min)
            if count == 0:
                break
        particles[i] = candidate
    return particles


@dataclass
class RsPsoResult:
    best: np.ndarray  # best particle [q; u]
    best_fitness: float
    best_trace: list[float]  # recorded global-best penalized fitness per iteration
    violations: int  # violation count of the returned particle
    evaluations: int


def rs_pso_solve(
    n_users: int,
    n_subarrays: int,
    cube_side: float,
    d_min: float,
    rate_fn,
    cfg: PsoConfig,
    rng: np.random.Generator,
) -> RsPsoResult:
    """Recursive-sampling PSO over subarray placements.

    rate_fn(s, rotations) must return the weighted sum rate for the placement
    vector `s` under one set of per-user device rotations; it is the
    fast-timescale solver (or a cheap baseline evaluation) supplied by the
    caller. Deterministic for a fixed rng and rate_fn.
    """
    samples = sample_channels(n_users, cfg.total_samples, rng)
    batches = samples.reshape(cfg.n_batches, cfg.batch, n_users, 3)
    particles = init_particles(
        cfg.swarm, n_subarrays, cube_side, d_min, rng, cfg.init_attempts
    )
    velocities = np.zeros_like(particles)
    evaluations = 0

    j_run = np.empty(cfg.swarm)
    best_jbar = np.empty(cfg.swarm)
    local_best = particles.copy()
    for i in range(cfg.swarm):
        j_run[i], best_jbar[i] = fitness(
            particles[i], batches[0], 0.0, 1.0, cfg.tau, rate_fn, d_min
        )
        evaluations += cfg.batch
    g_idx = int(np.argmax(best_jbar))
    trace = [float(best_jbar[g_idx])]

    for it in range(1, cfg.iterations + 1):
        particles, velocities = pso_step(
            particles, velocities, local_best, local_best[g_idx], cfg, cube_side, rng
        )
        batch = batches[(it - 1) % cfg.n_batches]
        kappa_i = cfg.kappa(it)
        for i in range(cfg.swarm):
            j_run[i], jbar = fitness(
                particles[i], batch, j_run[i], kappa_i, cfg.tau, rate_fn, d_min
            )
            evaluations += cfg.batch
            if jbar > best_jbar[i]:
                best_jbar[i] = jbar
                local_best[i] = particles[i]
        g_idx = int(np.argmax(best_jbar))
        trace.append(float(best_jbar[g_idx]))

    best = local_best[g_idx]
    _, count = penalty_violations(best, d_min)
    return RsPsoResult(
        best=best.copy(),
        best_fitness=float(best_jbar[g_idx]),
        best_trace=trace,
        violations=count,
        evaluations=evaluations,
    )
