"""STFT and the channel-independent (frame-ratio) spectrogram."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError
from .waveform import IqSignal

N_FFT = 64
HOP = 32
EPS = 1e-12
CLIP_DB = 40.0


def frame_count(length: int, n_fft: int = N_FFT, hop: int = HOP) -> int:
    if length < n_fft:
        raise InsufficientDataError(f"signal of {length} samples is shorter than one {n_fft}-sample frame")
    return (length - n_fft) // hop + 1


def _frames(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    # x: (..., L) -> (..., M, n_fft) strided view
    M = frame_count(x.shape[-1], n_fft, hop)
    return np.lib.stride_tricks.sliding_window_view(x, n_fft, axis=-1)[..., ::hop, :][..., :M, :]


def stft(sig: IqSignal | np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Rectangular-window STFT, shape ``(n_fft, M)`` with bins in DFT order."""
    x = sig.samples if isinstance(sig, IqSignal) else np.asarray(sig)
    return np.fft.fft(_frames(x, n_fft, hop), axis=-1).T


@dataclass
class Spectrogram:
    """Per-bin adjacent-frame power ratio in dB, shape ``(n_fft, M - 1)``.

    ``values`` holds the unclipped dB ratio; ``model_input()`` gives the
    clipped and scaled time-major matrix fed to the classifier.
    """

    values: np.ndarray
    n_fft: int = N_FFT
    hop: int = HOP

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def model_input(self) -> np.ndarray:
        return scale_for_model(self.values).T


def ratio_db(power: np.ndarray) -> np.ndarray:
    """``10 log10(P[m] / P[m-1])`` along the last-but-one (frame) axis, with the EPS floor."""
    p = np.maximum(power, EPS)
    return 10.0 * (np.log10(p[..., 1:, :]) - np.log10(p[..., :-1, :]))


def scale_for_model(db: np.ndarray) -> np.ndarray:
    return np.clip(db, -CLIP_DB, CLIP_DB) / CLIP_DB


def channel_ind_spectrogram(sig: IqSignal | np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> Spectrogram:
    x = sig.samples if isinstance(sig, IqSignal) else np.asarray(sig)
    if frame_count(x.shape[-1], n_fft, hop) < 2:
        raise InsufficientDataError("need at least two STFT frames for a frame ratio")
    power = np.abs(np.fft.fft(_frames(x, n_fft, hop), axis=-1)) ** 2
    return Spectrogram(ratio_db(power).T, n_fft, hop)


def model_inputs(signals: np.ndarray, n_fft: int = N_FFT, hop: int = HOP, dtype=np.float32) -> np.ndarray:
    """Batch path: equal-length signals ``(B, L)`` to model inputs ``(B, M - 1, n_fft)``."""
    signals = np.asarray(signals)
    if frame_count(signals.shape[-1], n_fft, hop) < 2:
        raise InsufficientDataError("need at least two STFT frames for a frame ratio")
    power = np.abs(np.fft.fft(_frames(signals, n_fft, hop), axis=-1)) ** 2
    return scale_for_model(ratio_db(power)).astype(dtype)
