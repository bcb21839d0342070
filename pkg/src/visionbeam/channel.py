"""Geometric multipath channel synthesis for OFDM arrays.

Each propagation path contributes ``gain * p(d*Ts - delay) * a(azimuth)`` on
every delay tap ``d`` of the cyclic prefix; the per-subcarrier channel is the
DFT of that tap sum.  Arrays are uniform linear arrays along the x axis, so
only the azimuth enters the steering vector.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

MMWAVE = "mmWave"
SUB6 = "sub-6"
BANDS = (MMWAVE, SUB6)

NEAREST_TAP = "nearest-tap"
TRUNCATED_SINC = "truncated-sinc"
PULSE_SHAPES = (NEAREST_TAP, TRUNCATED_SINC)

SPEED_OF_LIGHT = 299_792_458.0


class DelayOutOfRange(ValueError):
    """A path delay does not fit inside the cyclic prefix."""


@dataclass(frozen=True)
class ChannelPath:
    gain: complex
    delay: float
    azimuth: float
    elevation: float = 0.0

    def __post_init__(self):
        if not self.delay >= 0.0:
            raise ValueError(f"path delay must be >= 0, got {self.delay}")
        if not np.isfinite(abs(complex(self.gain))):
            raise ValueError("path gain must be finite")
        if not -math.pi / 2 < self.azimuth < math.pi / 2:
            raise ValueError(f"azimuth {self.azimuth} outside (-pi/2, pi/2)")

    def scaled(self, factor: complex) -> "ChannelPath":
        return ChannelPath(self.gain * factor, self.delay, self.azimuth, self.elevation)


@dataclass(frozen=True)
class ChannelConfig:
    """OFDM/array parameters for one band.

    ``subcarrier_limit`` keeps only the first N subcarriers of the K-point
    grid (the phase term still uses K).
    """

    num_antennas: int
    num_subcarriers: int
    cyclic_prefix_len: int
    sample_time: float = 2e-9
    antenna_spacing: float = 0.5
    pulse_shape: str = NEAREST_TAP
    band: str = MMWAVE
    subcarrier_limit: Optional[int] = None

    def __post_init__(self):
        for name in ("num_antennas", "num_subcarriers", "cyclic_prefix_len"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.cyclic_prefix_len > self.num_subcarriers:
            raise ValueError("cyclic prefix longer than the number of subcarriers")
        if not self.sample_time > 0:
            raise ValueError("sample_time must be > 0")
        if not self.antenna_spacing > 0:
            raise ValueError("antenna_spacing must be > 0")
        if self.pulse_shape not in PULSE_SHAPES:
            raise ValueError(f"unknown pulse shape {self.pulse_shape!r}")
        if self.band not in BANDS:
            raise ValueError(f"unknown band {self.band!r}")
        if self.subcarrier_limit is not None and not (
            1 <= self.subcarrier_limit <= self.num_subcarriers
        ):
            raise ValueError("subcarrier_limit must lie in [1, num_subcarriers]")

    @property
    def stored_subcarriers(self) -> int:
        if self.subcarrier_limit is None:
            return self.num_subcarriers
        return self.subcarrier_limit

    @property
    def max_delay(self) -> float:
        return self.cyclic_prefix_len * self.sample_time

    def to_dict(self) -> dict:
        return {
            "num_antennas": self.num_antennas,
            "num_subcarriers": self.num_subcarriers,
            "cyclic_prefix_len": self.cyclic_prefix_len,
            "sample_time": self.sample_time,
            "antenna_spacing": self.antenna_spacing,
            "pulse_shape": self.pulse_shape,
            "band": self.band,
            "subcarrier_limit": self.subcarrier_limit,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelConfig":
        return cls(**d)


@dataclass
class FrequencyChannel:
    """Column ``k`` of ``entries`` is the channel vector of subcarrier ``k``."""

    entries: np.ndarray
    band: str = MMWAVE

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.complex128)
        if self.entries.ndim != 2:
            raise ValueError("channel entries must be an M x K matrix")
        if self.band not in BANDS:
            raise ValueError(f"unknown band {self.band!r}")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("channel entries must be finite")

    @property
    def num_antennas(self) -> int:
        return self.entries.shape[0]

    @property
    def num_subcarriers(self) -> int:
        return self.entries.shape[1]

    @classmethod
    def zeros(cls, config: ChannelConfig) -> "FrequencyChannel":
        shape = (config.num_antennas, config.stored_subcarriers)
        return cls(np.zeros(shape, dtype=np.complex128), config.band)


def array_response(azimuth: float, elevation: float, config: ChannelConfig) -> np.ndarray:
    """ULA steering vector ``exp(j 2 pi d m sin(azimuth))``; elevation is unused."""
    m = np.arange(config.num_antennas)
    return np.exp(2j * np.pi * config.antenna_spacing * m * np.sin(azimuth))


def steering_matrix(azimuths: Sequence[float], config: ChannelConfig) -> np.ndarray:
    """Stack of steering vectors, shape ``(M, len(azimuths))``."""
    m = np.arange(config.num_antennas)[:, None]
    u = np.sin(np.asarray(azimuths, dtype=np.float64))[None, :]
    return np.exp(2j * np.pi * config.antenna_spacing * m * u)


def _check_delay(delay: float, config: ChannelConfig) -> None:
    if delay >= config.max_delay:
        raise DelayOutOfRange(
            f"delay {delay:.3e}s not below cyclic prefix span {config.max_delay:.3e}s"
        )


def _tap_weights(delay: float, config: ChannelConfig) -> np.ndarray:
    _check_delay(delay, config)
    taps = np.arange(config.cyclic_prefix_len)
    if config.pulse_shape == NEAREST_TAP:
        # round-half-up keeps 2.5 -> 3 (np.round would give 2)
        tap = int(math.floor(delay / config.sample_time + 0.5))
        if tap >= config.cyclic_prefix_len:
            raise DelayOutOfRange(f"delay {delay:.3e}s rounds past the last tap")
        w = np.zeros(config.cyclic_prefix_len)
        w[tap] = 1.0
        return w
    return np.sinc(taps - delay / config.sample_time)


def pulse_weight(tap_index: int, delay: float, config: ChannelConfig) -> float:
    """Pulse-shaping weight ``p(d*Ts - delay)`` for one tap."""
    if not 0 <= tap_index < config.cyclic_prefix_len:
        raise ValueError(f"tap index {tap_index} outside [0, {config.cyclic_prefix_len})")
    return float(_tap_weights(delay, config)[tap_index])


@functools.lru_cache(maxsize=16)
def _dft_phases(num_taps: int, num_subcarriers: int, stored: int) -> np.ndarray:
    d = np.arange(num_taps)[:, None]
    k = np.arange(stored)[None, :]
    # reduce k*d mod K first so the phase argument stays small and exact
    return np.exp(-2j * np.pi * ((k * d) % num_subcarriers) / num_subcarriers)


def generate_channel(paths: Iterable[ChannelPath], config: ChannelConfig) -> FrequencyChannel:
    """Frequency-domain channel of a list of geometric paths."""
    paths = list(paths)
    if not paths:
        raise ValueError("generate_channel needs at least one path")
    taps = np.stack([_tap_weights(p.delay, config) for p in paths])  # L x D
    phases = _dft_phases(config.cyclic_prefix_len, config.num_subcarriers, config.stored_subcarriers)
    delay_response = taps @ phases  # L x K
    gains = np.array([complex(p.gain) for p in paths])
    steer = steering_matrix([p.azimuth for p in paths], config)  # M x L
    return FrequencyChannel((steer * gains[None, :]) @ delay_response, config.band)


def channel_energy(channel: FrequencyChannel) -> float:
    """Average per-subcarrier energy ``(1/K) sum_k ||h_k||^2``."""
    h = channel.entries
    if h.size == 0:
        return 0.0
    return float(np.sum(h.real ** 2 + h.imag ** 2) / h.shape[1])
