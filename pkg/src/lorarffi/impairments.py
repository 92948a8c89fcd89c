"""Simulated transmitters and channel.

Each device carries a persistent hardware fingerprint (IQ gain/phase
imbalance and a memoryless odd-order PA polynomial) plus a carrier
frequency offset that is redrawn per packet around a device mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateSignalError
from .waveform import IqSignal, LoraConfig, gen_preamble

CLEAN = math.inf

GAIN_RANGE = (0.8, 1.2)
PHASE_RANGE_RAD = (-0.2, 0.2)
A3_RANGE = (0.01, 0.05)
CFO_RANGE_HZ = (-2000.0, 2000.0)


@dataclass(frozen=True)
class DeviceProfile:
    device_id: int
    iq_gain: float
    iq_phase_rad: float
    pa_a1: float
    pa_a3: complex
    pa_a5: complex
    cfo_mean_hz: float
    cfo_std_hz: float


@dataclass
class PacketRecord:
    signal: IqSignal
    label: int
    sf: int
    applied_cfo_hz: float
    applied_snr_db: float  # CLEAN (inf) for noiseless records
    seed_tag: int

    @property
    def is_clean(self) -> bool:
        return math.isinf(self.applied_snr_db)


@dataclass(frozen=True)
class MultipathTaps:
    taps: tuple

    def __post_init__(self):
        taps = tuple(complex(t) for t in self.taps)
        if not taps:
            raise ConfigurationError("multipath taps must be non-empty")
        if taps[0] == 0:
            raise ConfigurationError("first multipath tap must be nonzero")
        object.__setattr__(self, "taps", taps)


def iq_imbalance_coefficients(g: float, phi: float) -> tuple[complex, complex]:
    """Return ``(mu, nu)`` for the widely-linear model ``mu*s + nu*conj(s)``."""
    ge = g * np.exp(1j * phi)
    return complex((1 + ge) / 2), complex((1 - ge) / 2)


def apply_iq_imbalance(sig: IqSignal, g: float, phi: float) -> IqSignal:
    mu, nu = iq_imbalance_coefficients(g, phi)
    if nu == 0 and mu == 1:
        return sig.with_samples(sig.samples.copy())
    s = sig.samples
    return sig.with_samples(mu * s + nu * np.conj(s))


def apply_pa_nonlinearity(sig: IqSignal, a1: float, a3: complex, a5: complex) -> IqSignal:
    s = sig.samples
    p = np.abs(s) ** 2
    return sig.with_samples(s * (a1 + a3 * p + a5 * p * p))


def apply_cfo(sig: IqSignal, delta_f_hz: float) -> IqSignal:
    if delta_f_hz == 0:
        return sig.with_samples(sig.samples.copy())
    n = np.arange(len(sig))
    return sig.with_samples(sig.samples * np.exp(2j * np.pi * delta_f_hz * n / sig.sample_rate_hz))


def noise_variance(signal_power: float, snr_db: float) -> float:
    return signal_power * 10.0 ** (-snr_db / 10.0)


def apply_awgn(sig: IqSignal, snr_db: float, rng: np.random.Generator) -> IqSignal:
    """Add circular complex Gaussian noise so that mean |s|^2 / sigma^2 hits ``snr_db``.

    ``snr_db = CLEAN`` (+inf) returns the input unchanged.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return sig.with_samples(sig.samples.copy())
    ps = sig.power
    if not ps > 0:
        raise DegenerateSignalError("cannot set an SNR on a zero-power signal")
    sigma = math.sqrt(noise_variance(ps, snr_db) / 2)
    n = len(sig)
    noise = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return sig.with_samples(sig.samples + sigma * noise)


def apply_multipath(sig: IqSignal, taps: MultipathTaps) -> IqSignal:
    h = np.asarray(taps.taps, dtype=np.complex128)
    return sig.with_samples(np.convolve(sig.samples, h)[: len(sig)])


def make_device_bank(
    K: int,
    seed: int,
    gain_range=GAIN_RANGE,
    phase_range_rad=PHASE_RANGE_RAD,
    a3_range=A3_RANGE,
    cfo_range_hz=CFO_RANGE_HZ,
    cfo_std_hz: float = 50.0,
) -> list[DeviceProfile]:
    """Draw ``K`` devices with stratified, pairwise-distinct fingerprints.

    IQ gain sits on an evenly spaced grid in device order; IQ phase and the
    third-order PA magnitude sit on grids permuted by the seeded stream.
    """
    if int(K) != K or K < 2:
        raise ConfigurationError(f"need at least two devices, got K={K}")
    rng = np.random.default_rng(seed)
    gains = np.linspace(*gain_range, K)
    phases = rng.permutation(np.linspace(*phase_range_rad, K))
    a3_mags = rng.permutation(np.linspace(*a3_range, K))
    a3_phases = rng.uniform(0, 2 * np.pi, K)
    cfo_means = rng.uniform(*cfo_range_hz, K)
    bank = []
    for i in range(K):
        a3 = complex(a3_mags[i] * np.exp(1j * a3_phases[i]))
        bank.append(
            DeviceProfile(
                device_id=i,
                iq_gain=float(gains[i]),
                iq_phase_rad=float(phases[i]),
                pa_a1=1.0,
                pa_a3=a3,
                pa_a5=0.1 * a3,
                cfo_mean_hz=float(cfo_means[i]),
                cfo_std_hz=float(cfo_std_hz),
            )
        )
    return bank


def transmit(profile: DeviceProfile, cfg: LoraConfig) -> IqSignal:
    """Ideal preamble pushed through the device's IQ modulator and PA (no CFO, no noise)."""
    x = gen_preamble(cfg)
    x = apply_iq_imbalance(x, profile.iq_gain, profile.iq_phase_rad)
    return apply_pa_nonlinearity(x, profile.pa_a1, profile.pa_a3, profile.pa_a5)


def synth_packet(profile: DeviceProfile, cfg: LoraConfig, snr_db: float, seed_tag: int) -> PacketRecord:
    """One received preamble from ``profile``; fully determined by ``seed_tag``."""
    rng = np.random.default_rng(seed_tag)
    cfo = float(rng.normal(profile.cfo_mean_hz, profile.cfo_std_hz))
    x = apply_cfo(transmit(profile, cfg), cfo)
    x = apply_awgn(x, snr_db, rng)
    return PacketRecord(
        signal=x,
        label=profile.device_id,
        sf=cfg.sf,
        applied_cfo_hz=cfo,
        applied_snr_db=float(snr_db),
        seed_tag=int(seed_tag),
    )


def _snr_for(policy, rng: np.random.Generator) -> float:
    if policy is None or policy == "clean":
        return CLEAN
    if isinstance(policy, (tuple, list)):
        lo, hi = policy
        return float(rng.uniform(lo, hi))
    return float(policy)


def gen_dataset(
    bank: Sequence[DeviceProfile],
    cfgs: Sequence[LoraConfig],
    packets_per_device_per_sf: int,
    snr_policy="clean",
    seed: int = 0,
    cell_offset: int = 0,
) -> list[PacketRecord]:
    """Emit ``packets_per_device_per_sf`` records for every (device, config) cell.

    ``snr_policy`` is ``"clean"``, a fixed SNR in dB, or a ``(low, high)``
    range sampled uniformly per packet. Each cell draws from its own child
    stream seeded by ``(seed, cell_offset + cell_index)``; a disjoint
    ``cell_offset`` yields an independent split from the same bank.
    """
    if not bank:
        raise ConfigurationError("device bank is empty")
    if not cfgs:
        raise ConfigurationError("no LoRa configurations given")
    if packets_per_device_per_sf < 1:
        raise ConfigurationError("packets_per_device_per_sf must be >= 1")
    records = []
    for d, profile in enumerate(bank):
        for c, cfg in enumerate(cfgs):
            cell = cell_offset + d * len(cfgs) + c
            rng = np.random.default_rng([seed, cell])
            for _ in range(packets_per_device_per_sf):
                tag = int(rng.integers(0, 2**63, dtype=np.uint64))
                snr = _snr_for(snr_policy, rng)
                records.append(synth_packet(profile, cfg, snr, tag))
    return records
