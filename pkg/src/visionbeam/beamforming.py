"""Beam codebook, beam power, label oracle and received-signal simulation.

Beam indices are 1-based (``1..B``) throughout, matching the labels stored
on disk.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import SUB6, ChannelConfig, FrequencyChannel, steering_matrix

# relative tolerance under which two beam powers count as tied
TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class Codebook:
    """``vectors`` has shape ``(M, B)``; column ``b-1`` is beam ``b``."""

    vectors: np.ndarray
    steering_grid: np.ndarray
    antenna_spacing: float = 0.5

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.complex128)
        if v.ndim != 2 or v.shape[1] < 1:
            raise ValueError("codebook needs an M x B matrix with B >= 1")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "steering_grid", np.asarray(self.steering_grid, dtype=np.float64))

    @property
    def num_antennas(self) -> int:
        return self.vectors.shape[0]

    @property
    def size(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.size

    def beam(self, index: int) -> np.ndarray:
        if not 1 <= index <= self.size:
            raise IndexError(f"beam index {index} outside 1..{self.size}")
        return self.vectors[:, index - 1]

    def beam_angle(self, index: int) -> float:
        """Azimuth (radians) the beam is steered towards."""
        return float(np.arcsin(self.steering_grid[index - 1]))


def build_steering_codebook(num_antennas: int, num_beams: int, spacing: float = 0.5) -> Codebook:
    """Conjugate-steering codebook with beams uniform in sin-space on (-1, 1)."""
    if num_antennas < 1 or num_beams < 1:
        raise ValueError("need num_antennas >= 1 and num_beams >= 1")
    b = np.arange(num_beams)
    grid = -1.0 + (2 * b + 1) / num_beams
    m = np.arange(num_antennas)[:, None]
    steer = np.exp(2j * np.pi * spacing * m * grid[None, :])
    return Codebook(np.conj(steer) / np.sqrt(num_antennas), grid, spacing)


def _check_beam(channel: FrequencyChannel, beam: np.ndarray) -> np.ndarray:
    beam = np.asarray(beam, dtype=np.complex128)
    if beam.shape[0] != channel.num_antennas:
        raise ValueError(
            f"beam length {beam.shape[0]} does not match {channel.num_antennas} antennas"
        )
    return beam


def beam_power(channel: FrequencyChannel, beam: np.ndarray) -> float:
    """Subcarrier-averaged received power ``(1/K) sum_k |h_k^T f|^2``."""
    beam = _check_beam(channel, beam)
    g = beam @ channel.entries
    return float(np.mean(g.real ** 2 + g.imag ** 2))


def codebook_powers(channel: FrequencyChannel, codebook: Codebook) -> np.ndarray:
    if codebook.num_antennas != channel.num_antennas:
        raise ValueError("codebook and channel antenna counts differ")
    g = codebook.vectors.T @ channel.entries
    return np.mean(g.real ** 2 + g.imag ** 2, axis=1)


def argmax_lowest(values: np.ndarray, rtol: float = TIE_RTOL) -> int:
    """0-based argmax; values within ``rtol`` of the maximum tie to the lowest index."""
    values = np.asarray(values)
    top = values.max()
    return int(np.flatnonzero(values >= top - rtol * abs(top))[0])


def optimal_beam(channel: FrequencyChannel, codebook: Codebook) -> int:
    """1-based index of the codebook beam with the largest average power."""
    return argmax_lowest(codebook_powers(channel, codebook)) + 1


@dataclass(frozen=True)
class SignalModel:
    pilot_symbol: complex = 1.0 + 0.0j
    noise_variance: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.noise_variance >= 0:
            raise ValueError("noise_variance must be >= 0")
        if abs(self.pilot_symbol) == 0:
            raise ValueError("pilot symbol must be nonzero")


def complex_gaussian(shape, variance: float, seed: int, stream: int = 0) -> np.ndarray:
    """Circular complex Gaussian samples via Box-Muller on Philox uniforms."""
    n = int(np.prod(shape))
    if variance == 0 or n == 0:
        return np.zeros(shape, dtype=np.complex128)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))
    u1 = 1.0 - rng.random(n)  # (0, 1], keeps log finite
    u2 = rng.random(n)
    r = np.sqrt(-np.log(u1) * variance)  # |n|^2 ~ Exp(mean=variance)
    z = r * np.exp(2j * np.pi * u2)
    return z.reshape(shape)


def simulate_mmw_rx(
    channel: FrequencyChannel, beam_index: int, codebook: Codebook, sig: SignalModel
) -> np.ndarray:
    """Downlink samples ``y_k = h_k^T f_j s + n_k`` at the single-antenna user."""
    beam = _check_beam(channel, codebook.beam(beam_index))
    y = (beam @ channel.entries) * sig.pilot_symbol
    return y + complex_gaussian(y.shape, sig.noise_variance, sig.rng_seed)


def simulate_sub6_rx(channel: FrequencyChannel, sig: SignalModel) -> np.ndarray:
    """Uplink pilot observation at the sub-6 array, shape ``(M, K)``."""
    if channel.band != SUB6:
        raise ValueError(f"expected a sub-6 channel, got {channel.band}")
    y = channel.entries * sig.pilot_symbol
    return y + complex_gaussian(y.shape, sig.noise_variance, sig.rng_seed)


def beam_pattern(beam: np.ndarray, angle_grid: Sequence[float], spacing: float = 0.5) -> np.ndarray:
    """Array gain ``|a(theta)^T f|^2`` of one beam over a grid of azimuths."""
    beam = np.asarray(beam, dtype=np.complex128)
    angles = np.asarray(angle_grid, dtype=np.float64)
    if angles.size == 0:
        raise ValueError("empty angle grid")
    cfg = ChannelConfig(beam.shape[0], 1, 1, antenna_spacing=spacing)
    g = beam @ steering_matrix(angles, cfg)
    return g.real ** 2 + g.imag ** 2
