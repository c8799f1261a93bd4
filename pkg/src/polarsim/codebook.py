"""Discrete polarforming amplitude/phase sets and nearest-codeword projection.

A codeword is a complex number rho * exp(j * psi) with psi drawn from a set of
2**q_theta equally spaced phases on [0, 2*pi) and rho from 2**q_rho equally
spaced amplitudes on (0, 1]. With q_rho = 0 the amplitude set is {1} (no
attenuation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Codebook:
    q_rho: int
    q_theta: int
    phases: np.ndarray = field(repr=False)
    amplitudes: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.phases.size * self.amplitudes.size

    def codewords(self) -> np.ndarray:
        """All rho * exp(j*psi) combinations, amplitude-major order."""
        return (self.amplitudes[:, None] * np.exp(1j * self.phases)[None, :]).ravel()


def build_codebook(q_rho: int, q_theta: int) -> Codebook:
    """Codebook with 2**q_theta phases and 2**q_rho amplitudes.

    Phases are {2*pi*d / D : d = 0..D-1}; amplitudes are {i / 2**q_rho :
    i = 1..2**q_rho}, so q_rho = 0 gives the single amplitude 1.
    """
    if q_rho < 0 or q_theta < 0:
        raise ValueError("codebook bit counts must be >= 0")
    n_phase = 2**q_theta
    n_amp = 2**q_rho
    phases = TWO_PI * np.arange(n_phase) / n_phase
    amplitudes = np.arange(1, n_amp + 1) / n_amp
    return Codebook(q_rho, q_theta, phases, amplitudes)


def _circular_distance(a, b):
    return np.abs(np.mod(a - b + math.pi, TWO_PI) - math.pi)


def project_to_codebook(x, cb: Codebook):
    """Two-stage nearest-codeword projection of `x` (scalar or array).

    Stage one picks the codebook phase circularly closest to arg(x), ties
    toward the smaller phase. Stage two picks the amplitude minimizing the
    Euclidean distance to x at that phase, ties toward the larger amplitude.
    x = 0 therefore maps to the smallest amplitude at phase 0.
    """
    x = np.asarray(x, dtype=complex)
    ang = np.mod(np.angle(x), TWO_PI)
    # argmin returns the first index, and phases are ascending
    phase_idx = np.argmin(_circular_distance(ang[..., None], cb.phases), axis=-1)
    psi = cb.phases[phase_idx]
    # descending amplitudes so argmin's first-hit rule favors the larger one
    amps = cb.amplitudes[::-1]
    cand = amps * np.exp(1j * psi)[..., None]
    amp_idx = np.argmin(np.abs(cand - x[..., None]), axis=-1)
    rho = amps[amp_idx]
    out = rho * np.exp(1j * psi)
    return out if out.ndim else complex(out)


def project_to_codebook_joint(x, cb: Codebook):
    """Single-stage projection: the codeword minimizing |codeword - x|.

    Equivalent to the two-stage rule whenever no exact distance ties occur,
    because for any positive amplitude the best phase is the circularly
    nearest one. Kept as an independent cross-check.
    """
    x = np.asarray(x, dtype=complex)
    words = cb.codewords()
    idx = np.argmin(np.abs(words - x[..., None]), axis=-1)
    out = words[idx]
    return out if out.ndim else complex(out)


@dataclass(frozen=True)
class PolarformingVector:
    """Complex weights for the V/H elements of one polarforming antenna.

    Entries are rho * exp(-j*psi) pairs with rho in [0, 1]; base-station
    vectors carry an extra 1/sqrt(2) normalization.
    """

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=complex).reshape(2)
        if np.any(np.abs(e) > 1.0 + 1e-12):
            raise ValueError(f"polarforming entries must have modulus <= 1, got {e}")
        object.__setattr__(self, "entries", e)

    @classmethod
    def user(cls, amplitudes, phases) -> "PolarformingVector":
        rho = np.asarray(amplitudes, dtype=float).reshape(2)
        psi = np.asarray(phases, dtype=float).reshape(2)
        if np.any(rho < 0.0) or np.any(rho > 1.0):
            raise ValueError(f"amplitudes must lie in [0, 1], got {rho}")
        return cls(rho * np.exp(-1j * np.mod(psi, TWO_PI)))

    @classmethod
    def bs(cls, amplitudes, phases) -> "PolarformingVector":
        base = cls.user(amplitudes, phases)
        return cls(base.entries / math.sqrt(2.0))

    def as_array(self) -> np.ndarray:
        return self.entries.copy()

    def __array__(self, dtype=None):
        return np.asarray(self.entries, dtype=dtype)
