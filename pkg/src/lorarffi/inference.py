"""Single-packet prediction and multi-packet probability fusion."""

from __future__ import annotations

from collections import deque
from typing import Hashable, Sequence

import numpy as np

from .errors import DimensionError, InsufficientDataError
from .features import N_FFT, Spectrogram, channel_ind_spectrogram
from .nn import Transformer
from .preprocess import preprocess_packet
from .waveform import IqSignal, LoraConfig


def predict(model: Transformer, spec: Spectrogram) -> np.ndarray:
    """Softmax output for one spectrogram, as float64."""
    if spec.height != N_FFT:
        raise DimensionError(f"spectrogram height must be {N_FFT}, got {spec.height}")
    return model.forward(spec.model_input()[None])[0].astype(np.float64)


def predict_batch(model: Transformer, inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Probabilities for equal-width model inputs ``(n, T, 64)``."""
    out = [model.forward(inputs[i : i + batch_size]) for i in range(0, inputs.shape[0], batch_size)]
    return np.concatenate(out).astype(np.float64)


def merge_predictions(history: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise mean of probability vectors."""
    if len(history) == 0:
        raise InsufficientDataError("no predictions to merge")
    sizes = {np.shape(p) for p in history}
    if len(sizes) != 1:
        raise DimensionError(f"prediction vectors have mixed shapes {sorted(sizes)}")
    return np.mean(np.asarray(history, dtype=np.float64), axis=0)


def classify(p: np.ndarray) -> int:
    """Index of the largest probability; ties go to the lowest index."""
    return int(np.argmax(p))


class HistoryStore:
    """Per-source FIFO of the last ``n_pkt - 1`` probability vectors."""

    def __init__(self, n_pkt: int):
        if n_pkt < 1:
            raise ValueError("n_pkt must be >= 1")
        self.n_pkt = n_pkt
        self._fifos: dict[Hashable, deque] = {}

    def __len__(self):
        return len(self._fifos)

    def retained(self, source_id) -> list:
        return list(self._fifos.get(source_id, ()))

    def fuse(self, source_id, p: np.ndarray) -> np.ndarray:
        """Merge ``p`` with the retained history, then retain ``p``."""
        fifo = self._fifos.setdefault(source_id, deque(maxlen=self.n_pkt - 1))
        merged = merge_predictions([*fifo, p])
        if fifo.maxlen:
            fifo.append(np.asarray(p, dtype=np.float64))
        return merged

    def reset(self, source_id=None):
        if source_id is None:
            self._fifos.clear()
        else:
            self._fifos.pop(source_id, None)

    @property
    def n_floats(self) -> int:
        return sum(v.size for fifo in self._fifos.values() for v in fifo)


class InferenceEngine:
    """A loaded classifier plus a multi-packet history keyed by claimed source.

    Prediction is read-only and may be shared; calls for the same
    ``source_id`` must be serialized by the caller.
    """

    def __init__(self, model: Transformer, n_pkt: int = 1):
        self.model = model
        self.history = HistoryStore(n_pkt)

    @property
    def n_pkt(self) -> int:
        return self.history.n_pkt

    def infer_probs(self, source_id, p: np.ndarray) -> tuple[int, np.ndarray]:
        merged = self.history.fuse(source_id, p)
        return classify(merged), merged

    def infer_packet(self, source_id, rx: IqSignal, cfg: LoraConfig) -> tuple[int, np.ndarray]:
        pre = preprocess_packet(rx, cfg)
        p = predict(self.model, channel_ind_spectrogram(pre))
        return self.infer_probs(source_id, p)


def infer_packet(engine: InferenceEngine, source_id, rx: IqSignal, cfg: LoraConfig):
    return engine.infer_packet(source_id, rx, cfg)
