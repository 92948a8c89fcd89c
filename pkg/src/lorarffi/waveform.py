"""Ideal baseband LoRa up-chirps and preambles.

The chirp follows ``s(t) = A exp(j(-pi B t + pi (B/T) t^2))`` for
``0 <= t < T``, ``T = 2**sf / B``, sampled at ``t_n = n / fs``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class LoraConfig:
    sf: int
    bandwidth_hz: float = 125_000.0
    sample_rate_hz: float = 250_000.0
    n_preamble: int = 8

    def __post_init__(self):
        if not 7 <= int(self.sf) <= 12 or int(self.sf) != self.sf:
            raise ConfigurationError(f"spreading factor must be an integer in 7..12, got {self.sf}")
        if not self.bandwidth_hz > 0 or not self.sample_rate_hz > 0:
            raise ConfigurationError("bandwidth and sample rate must be positive")
        if self.sample_rate_hz < self.bandwidth_hz:
            raise ConfigurationError(
                f"sample rate {self.sample_rate_hz} Hz is below bandwidth {self.bandwidth_hz} Hz"
            )
        if int(self.n_preamble) != self.n_preamble or self.n_preamble < 1:
            raise ConfigurationError("n_preamble must be a positive integer")
        exact = 2**self.sf * self.sample_rate_hz / self.bandwidth_hz
        if abs(exact - round(exact)) > 1e-9 * exact:
            raise ConfigurationError(
                f"2^sf * fs / B = {exact} is not an integer number of samples per symbol"
            )

    @property
    def symbol_duration_s(self) -> float:
        return 2**self.sf / self.bandwidth_hz

    @property
    def samples_per_symbol(self) -> int:
        return int(round(2**self.sf * self.sample_rate_hz / self.bandwidth_hz))

    @property
    def preamble_length(self) -> int:
        return self.n_preamble * self.samples_per_symbol


@dataclass
class IqSignal:
    """Complex baseband samples tagged with their sample rate."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 1:
            raise ConfigurationError("IqSignal samples must be one-dimensional")
        if not self.sample_rate_hz > 0:
            raise ConfigurationError("sample rate must be positive")

    def __len__(self):
        return self.samples.shape[0]

    def with_samples(self, samples) -> "IqSignal":
        return IqSignal(samples, self.sample_rate_hz)

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2)) if len(self) else 0.0


def chirp_phase(cfg: LoraConfig) -> np.ndarray:
    """Phase of one up-chirp symbol, in radians, per sample."""
    t = np.arange(cfg.samples_per_symbol) / cfg.sample_rate_hz
    B = cfg.bandwidth_hz
    return -np.pi * B * t + np.pi * (B / cfg.symbol_duration_s) * t**2


def gen_upchirp(cfg: LoraConfig, amplitude: float = 1.0) -> IqSignal:
    if not amplitude > 0:
        raise ConfigurationError("amplitude must be positive")
    return IqSignal(amplitude * np.exp(1j * chirp_phase(cfg)), cfg.sample_rate_hz)


def gen_preamble(cfg: LoraConfig, amplitude: float = 1.0) -> IqSignal:
    """``n_preamble`` back-to-back copies of the up-chirp."""
    chirp = gen_upchirp(cfg, amplitude).samples
    return IqSignal(np.tile(chirp, cfg.n_preamble), cfg.sample_rate_hz)
