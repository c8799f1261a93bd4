"""Fast-timescale joint optimization of polarforming and precoding.

Maximizes the weighted sum rate over user polarforming vectors, per-subarray
BS polarforming vectors and linear precoders under a total power budget and
discrete amplitude/phase sets. The sum-rate problem is reformulated through
its weighted-MSE surrogate and solved with a penalty dual decomposition outer
loop around block-coordinate descent, where every block has an exact
closed-form minimizer.

The internal surrogate uses natural logarithms so the weight update 1/e is
the exact per-block minimizer; reported rates are in bits (log2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codebook import Codebook, project_to_codebook


@dataclass(frozen=True)
class ChannelInstance:
    """Frozen channel data for one coherence interval.

    hlos : (K, B, N) stable per-subarray channels
    pol_response : (K, B, 2, 2) dual-polarized responses
    sigma2, zeta : noise power and total transmit power budget
    weights : (K,) positive rate weights
    """

    hlos: np.ndarray
    pol_response: np.ndarray
    sigma2: float
    zeta: float
    weights: np.ndarray

    def __post_init__(self):
        hlos = np.asarray(self.hlos, dtype=complex)
        resp = np.asarray(self.pol_response, dtype=complex)
        k, b, n = hlos.shape
        if resp.shape != (k, b, 2, 2):
            raise ValueError(f"pol_response must be (K, B, 2, 2), got {resp.shape}")
        object.__setattr__(self, "hlos", hlos)
        object.__setattr__(self, "pol_response", resp)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))

    @property
    def n_users(self) -> int:
        return self.hlos.shape[0]

    @property
    def n_subarrays(self) -> int:
        return self.hlos.shape[1]

    @property
    def dim(self) -> int:
        return self.hlos.shape[1] * self.hlos.shape[2]


@dataclass
class PddConfig:
    eps_in: float = 1e-4
    eps_out: float = 1e-4
    shrink: float = 0.7  # penalty multiplier per outer iteration, in (0, 1)
    mu0: float = 1.0
    max_inner: int = 50
    max_outer: int = 100
    # False switches the user-side dual increment to (w - t) instead of (w - w_bar)
    dual_gap_step: bool = True

    def __post_init__(self):
        if not (0.0 < self.shrink < 1.0):
            raise ValueError("penalty shrink factor must lie in (0, 1)")
        if self.mu0 <= 0:
            raise ValueError("initial penalty must be positive")


@dataclass
class FastState:
    w: np.ndarray  # (K, 2) user polarforming
    w_bar: np.ndarray  # (K, 2) codebook-valued auxiliaries
    v: np.ndarray  # (B, 2) BS polarforming
    v_bar: np.ndarray  # (B, 2)
    xi: np.ndarray  # (K,) equalizers
    eps: np.ndarray  # (K,) MSE weights
    c: np.ndarray  # (K, N*B) precoders
    t: np.ndarray  # (K, 2) duals for w = w_bar
    t_bar: np.ndarray  # (B, 2) duals for v = v_bar
    mu: float


@dataclass
class PddDiagnostics:
    al_trace: list  # one list of augmented-Lagrangian values per outer iteration
    violations: list  # (max |w - w_bar|, max |v - v_bar|) per outer iteration
    rates: np.ndarray  # (K,) bits/s/Hz at the quantized solution
    weighted_sum_rate: float
    converged: bool
    outer_iterations: int


# ---------------------------------------------------------------------------
# channel and rate helpers
# ---------------------------------------------------------------------------


def channel_vectors(inst: ChannelInstance, w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Stacked channels h_k for all users given polarforming (K, N*B)."""
    scal = np.einsum("bi,kbij,kj->kb", v.conj(), inst.pol_response, w)
    return (inst.hlos * scal[:, :, None]).reshape(inst.n_users, inst.dim)


def build_mk(inst: ChannelInstance, v: np.ndarray) -> np.ndarray:
    """Per-user matrices M_k with h_k = M_k w_k, shape (K, N*B, 2)."""
    rows = np.einsum("bi,kbij->kbj", v.conj(), inst.pol_response)  # (K, B, 2)
    m = inst.hlos[:, :, :, None] * rows[:, :, None, :]  # (K, B, N, 2)
    return m.reshape(inst.n_users, inst.dim, 2)


def user_rate(h_k: np.ndarray, precoders: np.ndarray, k: int, sigma2: float) -> float:
    """Achievable rate of user k in bits/s/Hz."""
    gains = np.abs(np.asarray(precoders) @ h_k.conj()) ** 2
    interference = float(np.sum(gains)) - float(gains[k])
    return math.log2(1.0 + gains[k] / (interference + sigma2))


def sum_rates(inst: ChannelInstance, h_all: np.ndarray, precoders: np.ndarray) -> np.ndarray:
    """Per-user rates (bits/s/Hz) for stacked channels h_all (K, N*B)."""
    gains = np.abs(h_all.conj() @ precoders.T) ** 2  # [k, j] = |h_k^H c_j|^2
    desired = np.diag(gains)
    interference = gains.sum(axis=1) - desired
    return np.log2(1.0 + desired / (interference + inst.sigma2))


def weighted_sum_rate(
    inst: ChannelInstance, w: np.ndarray, v: np.ndarray, precoders: np.ndarray
) -> float:
    h_all = channel_vectors(inst, w, v)
    return float(inst.weights @ sum_rates(inst, h_all, precoders))


def mse(h_k: np.ndarray, precoders: np.ndarray, k: int, xi_k: complex, sigma2: float) -> float:
    """Decoding MSE |xi|^2 (sum_j |h^H c_j|^2 + sigma2) - 2 Re{xi* h^H c_k} + 1."""
    gains = np.abs(np.asarray(precoders) @ h_k.conj()) ** 2
    cross = (h_k.conj() @ precoders[k])
    return float(
        abs(xi_k) ** 2 * (np.sum(gains) + sigma2) - 2.0 * (np.conj(xi_k) * cross).real + 1.0
    )


def update_equalizers(h_all: np.ndarray, precoders: np.ndarray, sigma2: float) -> np.ndarray:
    """LMMSE equalizers xi_k = h_k^H c_k / (sum_j |h_k^H c_j|^2 + sigma2)."""
    cross = h_all.conj() @ precoders.T  # [k, j] = h_k^H c_j
    power = np.sum(np.abs(cross) ** 2, axis=1) + sigma2
    return np.diag(cross) / power


def mse_all(
    h_all: np.ndarray, precoders: np.ndarray, xi: np.ndarray, sigma2: float
) -> np.ndarray:
    cross = h_all.conj() @ precoders.T
    power = np.sum(np.abs(cross) ** 2, axis=1) + sigma2
    return (np.abs(xi) ** 2 * power - 2.0 * (np.conj(xi) * np.diag(cross)).real + 1.0).real


def update_weights(errors: np.ndarray) -> np.ndarray:
    """Exact surrogate weights eps_k = 1 / e_k; requires every MSE positive."""
    errors = np.asarray(errors, dtype=float)
    if np.any(errors <= 0.0):
        raise ValueError(f"nonpositive MSE encountered (degenerate noiseless case): {errors}")
    return 1.0 / errors


# ---------------------------------------------------------------------------
# block updates
# ---------------------------------------------------------------------------


def update_user_polarforming(
    inst: ChannelInstance, state: FastState, mk: np.ndarray
) -> np.ndarray:
    """Closed-form minimizer of the w-block quadratic program, per user."""
    w_new = np.empty_like(state.w)
    for k in range(inst.n_users):
        coeff = 2.0 * inst.weights[k] * state.eps[k]
        mc = mk[k].conj().T @ state.c.T  # (2, K) columns M_k^H c_j
        c_mat = coeff * abs(state.xi[k]) ** 2 * (mc @ mc.conj().T) + np.eye(2) / state.mu
        b_vec = coeff * np.conj(state.xi[k]) * mc[:, k] + (
            state.w_bar[k] - state.mu * state.t[k]
        ) / state.mu
        w_new[k] = np.linalg.solve(c_mat, b_vec)
    return w_new


def update_bs_polarforming(inst: ChannelInstance, state: FastState) -> np.ndarray:
    """Sequential exact minimization over subarray vectors v_b.

    Subarrays couple through the interference sums, so each 2x2 solve keeps
    the contributions of the other subarrays fixed (Gauss-Seidel), which
    preserves the per-block descent property.
    """
    k_users, n_sub = inst.n_users, inst.n_subarrays
    c_blocks = state.c.reshape(k_users, n_sub, -1)  # (K, B, N)
    kappa = np.einsum("kbn,jbn->kjb", inst.hlos.conj(), c_blocks)  # h_{k,b}^H c_{j,b}
    d_hat = np.einsum("kbij,kj->kbi", inst.pol_response, state.w)  # (K, B, 2)
    v = state.v.copy()
    # cross[k, j] = h_k^H c_j maintained across the sweep
    s_conj = np.einsum("kbi,bi->kb", d_hat.conj(), v)  # d_hat^H v_b
    cross = np.einsum("kjb,kb->kj", kappa, s_conj)
    coeff = 2.0 * inst.weights * state.eps  # (K,)
    for b in range(n_sub):
        partial = cross - kappa[:, :, b] * s_conj[:, b][:, None]  # without subarray b
        quad = coeff * np.abs(state.xi) ** 2 * np.sum(np.abs(kappa[:, :, b]) ** 2, axis=1)
        c_mat = np.einsum("k,ki,kj->ij", quad, d_hat[:, b], d_hat[:, b].conj())
        c_mat += np.eye(2) / state.mu
        # v enters the MSE through d_hat^H v (linear, unlike the w block),
        # so xi appears unconjugated here
        own = np.conj(kappa[np.arange(k_users), np.arange(k_users), b])
        b_vec = (coeff * state.xi * own) @ d_hat[:, b]
        mix = coeff * np.abs(state.xi) ** 2
        b_vec -= np.einsum(
            "k,kj,ki->i", mix, np.conj(kappa[:, :, b]) * partial, d_hat[:, b]
        )
        b_vec += (state.v_bar[b] - state.mu * state.t_bar[b]) / state.mu
        v[b] = np.linalg.solve(c_mat, b_vec)
        s_conj[:, b] = d_hat[:, b].conj() @ v[b]
        cross = partial + kappa[:, :, b] * s_conj[:, b][:, None]
    return v


def project_auxiliaries(
    primal: np.ndarray, dual: np.ndarray, mu: float, cb: Codebook
) -> np.ndarray:
    """Entrywise codebook projection of primal + mu * dual."""
    return project_to_codebook(primal + mu * dual, cb)


def update_precoders(
    inst: ChannelInstance, h_all: np.ndarray, xi: np.ndarray, eps: np.ndarray
) -> np.ndarray:
    """Power-constrained precoder block: interior solution if it fits the
    budget, otherwise bisection on the power dual variable until the total
    power matches zeta to 1e-8 relative."""
    weights = inst.weights * eps
    scale = weights * xi  # per-user right-hand scaling
    lam_w = weights * np.abs(xi) ** 2
    gram = (h_all.T * lam_w) @ h_all.conj()  # sum_j rho eps |xi|^2 h h^H
    eigval, eigvec = np.linalg.eigh(gram)
    eigval = np.maximum(eigval, 0.0)
    proj = eigvec.conj().T @ h_all.T  # (dim, K) columns U^H h_k
    # scrub rounding residue that a tiny dual variable would amplify
    proj[np.abs(proj) < 1e-12 * max(np.linalg.norm(h_all), 1e-300)] = 0.0
    sq = np.abs(proj) ** 2 * np.abs(scale[None, :]) ** 2

    lam_max = float(eigval[-1]) if eigval.size else 0.0
    cutoff = 1e-12 * max(lam_max, 1e-300)

    def power(mu_tilde: float) -> float:
        if mu_tilde == 0.0:
            live = eigval > cutoff
            return float(np.sum(sq[live] / eigval[live, None] ** 2))
        return float(np.sum(sq / (mu_tilde + eigval[:, None]) ** 2))

    def assemble(mu_tilde: float) -> np.ndarray:
        if mu_tilde == 0.0:
            inv = np.where(eigval > cutoff, 1.0 / np.maximum(eigval, cutoff), 0.0)
        else:
            inv = 1.0 / (mu_tilde + eigval)
        return (scale[None, :] * (eigvec @ (inv[:, None] * proj))).T

    if power(0.0) <= inst.zeta * (1.0 + 1e-12):
        return assemble(0.0)
    hi = 1.0
    for _ in range(400):
        if power(hi) <= inst.zeta:
            break
        hi *= 10.0
    else:
        raise RuntimeError(
            f"precoder bisection failed to bracket: power({hi}) = {power(hi):.3e} "
            f"> zeta = {inst.zeta:.3e}"
        )
    lo = 0.0
    for _ in range(500):
        mid = 0.5 * (lo + hi)
        p = power(mid)
        if abs(p - inst.zeta) <= 1e-8 * inst.zeta:
            return assemble(mid)
        if p > inst.zeta:
            lo = mid
        else:
            hi = mid
    raise RuntimeError("precoder bisection did not reach tolerance")


def mrt_precoders(h_all: np.ndarray, zeta: float) -> np.ndarray:
    """Maximum-ratio precoders with the power budget split equally."""
    norms = np.linalg.norm(h_all, axis=1, keepdims=True)
    scaled = np.where(norms > 0, h_all / np.where(norms > 0, norms, 1.0), 0.0)
    return math.sqrt(zeta / h_all.shape[0]) * scaled


# ---------------------------------------------------------------------------
# augmented Lagrangian and the PDD driver
# ---------------------------------------------------------------------------


def augmented_lagrangian(inst: ChannelInstance, state: FastState) -> float:
    """Surrogate objective (natural log) plus the scaled penalty terms."""
    h_all = channel_vectors(inst, state.w, state.v)
    errors = mse_all(h_all, state.c, state.xi, inst.sigma2)
    core = float(np.sum(inst.weights * (state.eps * errors - np.log(state.eps))))
    pen_w = np.linalg.norm(state.w - state.w_bar + state.mu * state.t) ** 2
    pen_v = np.linalg.norm(state.v - state.v_bar + state.mu * state.t_bar) ** 2
    return core + (pen_w + pen_v) / (2.0 * state.mu)


def initial_state(
    inst: ChannelInstance, cb: Codebook, cfg: PddConfig,
    w0: np.ndarray | None = None, v0: np.ndarray | None = None,
    c0: np.ndarray | None = None,
) -> FastState:
    seed_vec = project_to_codebook(
        np.array([1.0, np.exp(1j * math.pi / 4)]) / math.sqrt(2.0), cb
    )
    w = np.tile(seed_vec, (inst.n_users, 1)) if w0 is None else np.array(w0, dtype=complex)
    v = np.tile(seed_vec, (inst.n_subarrays, 1)) if v0 is None else np.array(v0, dtype=complex)
    h_all = channel_vectors(inst, w, v)
    c = mrt_precoders(h_all, inst.zeta) if c0 is None else np.array(c0, dtype=complex)
    xi = update_equalizers(h_all, c, inst.sigma2)
    eps = update_weights(mse_all(h_all, c, xi, inst.sigma2))
    return FastState(
        w=w,
        w_bar=project_to_codebook(w, cb),
        v=v,
        v_bar=project_to_codebook(v, cb),
        xi=xi,
        eps=eps,
        c=c,
        t=np.zeros((inst.n_users, 2), dtype=complex),
        t_bar=np.zeros((inst.n_subarrays, 2), dtype=complex),
        mu=cfg.mu0,
    )


def pdd_solve(
    inst: ChannelInstance,
    cb: Codebook,
    cfg: PddConfig | None = None,
    init: FastState | None = None,
    optimize_precoders: bool = True,
) -> tuple[FastState, PddDiagnostics]:
    """Double-loop solver: block sweeps on the augmented Lagrangian inside,
    dual updates and penalty shrinking outside.

    Terminates when both polarforming constraint gaps fall below eps_out;
    `optimize_precoders=False` freezes the precoder block (used by the
    polarforming-only baseline).
    """
    cfg = cfg or PddConfig()
    state = init or initial_state(inst, cb, cfg)
    al_trace: list[list[float]] = []
    violations: list[tuple[float, float]] = []
    converged = False
    outer = 0
    for outer in range(1, cfg.max_outer + 1):
        trace = [augmented_lagrangian(inst, state)]
        for _ in range(cfg.max_inner):
            mk = build_mk(inst, state.v)
            state.w = update_user_polarforming(inst, state, mk)
            state.w_bar = project_auxiliaries(state.w, state.t, state.mu, cb)
            state.v = update_bs_polarforming(inst, state)
            state.v_bar = project_auxiliaries(state.v, state.t_bar, state.mu, cb)
            h_all = channel_vectors(inst, state.w, state.v)
            state.xi = update_equalizers(h_all, state.c, inst.sigma2)
            state.eps = update_weights(mse_all(h_all, state.c, state.xi, inst.sigma2))
            if optimize_precoders:
                state.c = update_precoders(inst, h_all, state.xi, state.eps)
            trace.append(augmented_lagrangian(inst, state))
            if abs(trace[-2] - trace[-1]) < cfg.eps_in * max(abs(trace[-2]), 1.0):
                break
        al_trace.append(trace)
        gap_w = state.w - state.w_bar if cfg.dual_gap_step else state.w - state.t
        state.t = state.t + gap_w / state.mu
        state.t_bar = state.t_bar + (state.v - state.v_bar) / state.mu
        viol = (
            float(np.max(np.abs(state.w - state.w_bar))),
            float(np.max(np.abs(state.v - state.v_bar))),
        )
        violations.append(viol)
        state.mu *= cfg.shrink
        if max(viol) < cfg.eps_out:
            converged = True
            break
    rates = sum_rates(inst, channel_vectors(inst, state.w_bar, state.v_bar), state.c)
    diag = PddDiagnostics(
        al_trace=al_trace,
        violations=violations,
        rates=rates,
        weighted_sum_rate=float(inst.weights @ rates),
        converged=converged,
        outer_iterations=outer,
    )
    return state, diag
