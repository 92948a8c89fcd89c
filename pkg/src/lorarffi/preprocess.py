"""Receive chain: detection/sync, preamble slicing, CFO correction, RMS normalization."""

from __future__ import annotations

import numpy as np
from .errors import DegenerateSignalError, InsufficientDataError, NoPacketDetectedError
from .waveform import IqSignal, LoraConfig, gen_preamble

DETECTION_THRESHOLD = 0.3


def sync_correlation(rx: IqSignal, cfg: LoraConfig, oversample: int = 2, chunk: int = 256) -> np.ndarray:
    """Normalized correlation with the ideal preamble, one value per start index.

    Each window is correlated against the template shifted to every
    frequency on a ``oversample``-times zero-padded DFT grid, and the best
    frequency is kept, so an unknown carrier offset does not mask the packet.
    """
    template = gen_preamble(cfg).samples
    L = template.shape[0]
    x = rx.samples
    if x.shape[0] < L:
        raise InsufficientDataError(f"received {x.shape[0]} samples, preamble needs {L}")
    n_off = x.shape[0] - L + 1
    energy = np.concatenate(([0.0], np.cumsum(np.abs(x) ** 2)))
    window_energy = np.maximum(energy[L:] - energy[:-L], 0.0)
    denom = np.sqrt(window_energy * L)
    conj_t = np.conj(template)
    peak = np.empty(n_off)
    for start in range(0, n_off, chunk):
        stop = min(start + chunk, n_off)
        win = np.lib.stride_tricks.sliding_window_view(x[start : stop + L - 1], L)
        peak[start:stop] = np.abs(np.fft.fft(win * conj_t, oversample * L, axis=-1)).max(axis=-1)
    out = np.zeros(n_off)
    ok = denom > 1e-300
    out[ok] = peak[ok] / denom[ok]
    return out


def detect_sync(rx: IqSignal, cfg: LoraConfig) -> int:
    rho = sync_correlation(rx, cfg)
    idx = int(np.argmax(rho))
    if rho[idx] < DETECTION_THRESHOLD:
        raise NoPacketDetectedError(
            f"peak correlation {rho[idx]:.3f} below threshold {DETECTION_THRESHOLD}"
        )
    return idx


def estimate_cfo(preamble: IqSignal, cfg: LoraConfig) -> float:
    """Lag-one-symbol autocorrelation estimate in Hz.

    Unambiguous only for ``|cfo| < fs / (2 * samples_per_symbol)``.
    """
    L = cfg.samples_per_symbol
    x = preamble.samples
    if x.shape[0] < 2 * L:
        raise InsufficientDataError("CFO estimation needs at least two preamble symbols")
    acc = np.sum(x[L:] * np.conj(x[:-L]))
    return float(np.angle(acc) * preamble.sample_rate_hz / (2 * np.pi * L))


def estimate_cfo_coarse(preamble: IqSignal, cfg: LoraConfig, oversample: int = 4) -> float:
    """Dechirp against the ideal preamble and locate the residual tone.

    Resolves the integer multiples of ``fs / samples_per_symbol`` that the
    lag-one-symbol estimator folds away. Assumes symbol-aligned input.
    """
    template = gen_preamble(cfg).samples
    x = preamble.samples[: template.shape[0]]
    if x.shape[0] < template.shape[0]:
        raise InsufficientDataError("coarse CFO estimation needs the full preamble")
    tone = x * np.conj(template)
    nfft = oversample * tone.shape[0]
    spec = np.abs(np.fft.fft(tone, nfft))
    k = int(np.argmax(spec))
    freqs = np.fft.fftfreq(nfft, d=1.0 / preamble.sample_rate_hz)
    return float(freqs[k])


def compensate_cfo(sig: IqSignal, delta_f_hz: float) -> IqSignal:
    if delta_f_hz == 0:
        return sig.with_samples(sig.samples.copy())
    n = np.arange(len(sig))
    return sig.with_samples(sig.samples * np.exp(-2j * np.pi * delta_f_hz * n / sig.sample_rate_hz))


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.abs(x) ** 2)))


def normalize_rms(sig: IqSignal) -> IqSignal:
    r = rms(sig.samples) if len(sig) else 0.0
    if not r > 0:
        raise DegenerateSignalError("cannot normalize a zero-power signal")
    return sig.with_samples(sig.samples / r)


def correct_cfo(preamble: IqSignal, cfg: LoraConfig) -> tuple[IqSignal, float]:
    """Coarse dechirp estimate followed by the fine lag-one-symbol estimate.

    Returns the corrected preamble and the total estimated offset in Hz.
    """
    coarse = estimate_cfo_coarse(preamble, cfg)
    x = compensate_cfo(preamble, coarse)
    fine = estimate_cfo(x, cfg)
    return compensate_cfo(x, fine), coarse + fine


def preprocess_packet(rx: IqSignal, cfg: LoraConfig) -> IqSignal:
    start = detect_sync(rx, cfg)
    pre = rx.with_samples(rx.samples[start : start + cfg.preamble_length])
    pre, _ = correct_cfo(pre, cfg)
    return normalize_rms(pre)
