"""Accuracy sweeps over test SNR, spreading factor and fusion window."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .features import model_inputs
from .impairments import apply_awgn
from .inference import InferenceEngine, predict_batch
from .nn import Transformer
from .preprocess import preprocess_packet
from .waveform import LoraConfig


@dataclass
class CellResult:
    snr_db: float
    sf: int
    n_pkt: int
    accuracy: float
    n_samples: int
    confusion: np.ndarray  # rows: true label, columns: predicted


def cell_seed(seed: int, snr_db: float, sf: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, sf, int(round((snr_db + 1000.0) * 1000))])


def noisy_probabilities(model: Transformer, records, cfg: LoraConfig, snr_db: float, seed: int) -> np.ndarray:
    """Corrupt each record at ``snr_db``, run the receive chain and return per-packet probabilities."""
    rng = np.random.default_rng(cell_seed(seed, snr_db, cfg.sf))
    pre = [preprocess_packet(apply_awgn(r.signal, snr_db, rng), cfg).samples for r in records]
    return predict_batch(model, model_inputs(np.asarray(pre)))


def fused_decisions(probs: np.ndarray, labels: np.ndarray, n_pkt: int) -> np.ndarray:
    """Stream each device's packets, in order, through a fresh fusion window of ``n_pkt``."""
    engine = InferenceEngine(model=None, n_pkt=n_pkt)
    out = np.empty(labels.shape[0], dtype=int)
    for i, (p, source) in enumerate(zip(probs, labels)):
        out[i] = engine.infer_probs(int(source), p)[0]
    return out


def run_sweep(model: Transformer, records, cfgs: dict, snrs, sfs, n_pkts, seed: int = 0,
              n_classes: int | None = None) -> list[CellResult]:
    """Evaluate every ``(snr, sf, n_pkt)`` cell in that nesting order.

    The noisy packets of a ``(snr, sf)`` pair are shared by all fusion windows.
    """
    K = n_classes or model.n_classes
    results = []
    for snr in snrs:
        for sf in sfs:
            if sf not in cfgs:
                raise ConfigurationError(f"SF {sf} has no configuration")
            subset = [r for r in records if r.sf == sf]
            if not subset:
                raise ConfigurationError(f"no test records with SF {sf}")
            subset.sort(key=lambda r: r.label)  # stable: keeps per-device order
            labels = np.array([r.label for r in subset])
            probs = noisy_probabilities(model, subset, cfgs[sf], snr, seed)
            for n_pkt in n_pkts:
                pred = fused_decisions(probs, labels, n_pkt)
                conf = np.zeros((K, K), dtype=np.int64)
                np.add.at(conf, (labels, pred), 1)
                results.append(CellResult(float(snr), sf, n_pkt, float(np.mean(pred == labels)), labels.shape[0], conf))
    return results
