"""Classifier assembly, augmentation strategies, training loop and checkpoints."""

from __future__ import annotations

import logging
import math
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, FormatError
from .features import N_FFT, model_inputs
from .impairments import CLEAN, PacketRecord, apply_awgn
from .nn import Transformer, rmsprop_step
from .preprocess import preprocess_packet
from .waveform import LoraConfig

log = logging.getLogger(__name__)

STRATEGIES = ("none", "offline", "online")


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int = 10
    d_model: int = N_FFT
    n_heads: int = 4
    d_ff: int = 128
    n_blocks: int = 2

    def __post_init__(self):
        if self.d_model != N_FFT:
            raise ConfigurationError(f"d_model must equal the spectrogram height {N_FFT}")
        if self.d_model % self.n_heads:
            raise ConfigurationError("d_model must be divisible by n_heads")
        if self.n_blocks != 2:
            raise ConfigurationError("the classifier uses exactly two encoder blocks")
        if self.n_classes < 2 or self.d_ff < 1:
            raise ConfigurationError("need n_classes >= 2 and d_ff >= 1")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr_init: float = 1e-3
    lr_factor: float = 0.2
    lr_patience: int = 10
    stop_patience: int = 20
    val_fraction: float = 0.1
    augmentation: str = "online"
    snr_range_db: tuple = (0.0, 40.0)
    seed: int = 0
    max_epochs: int = 200
    min_delta: float = 1e-4

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ConfigurationError("val_fraction must lie in (0, 1)")
        if self.augmentation not in STRATEGIES:
            raise ConfigurationError(f"augmentation must be one of {STRATEGIES}")
        lo, hi = self.snr_range_db
        if lo > hi:
            raise ConfigurationError("snr range low bound exceeds high bound")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("batch_size and max_epochs must be positive")


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def append(self, train_loss, val_loss, lr):
        self.train_loss.append(float(train_loss))
        self.val_loss.append(float(val_loss))
        self.lr.append(float(lr))


@dataclass
class Checkpoint:
    model_cfg: ModelConfig
    params: dict
    history: History = field(default_factory=History)
    version: int = 1

    def to_model(self) -> Transformer:
        c = self.model_cfg
        m = Transformer(c.d_model, c.n_heads, c.d_ff, c.n_blocks, c.n_classes, dtype=np.float32)
        m.params = {k: np.array(v, dtype=np.float32) for k, v in self.params.items()}
        return m


def build_model(cfg: ModelConfig, seed: int, dtype=np.float32) -> Transformer:
    return Transformer(cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.n_blocks, cfg.n_classes, dtype=dtype).init(seed)


# ---------------------------------------------------------------------------
# augmentation


def _is_clean_range(snr_range) -> bool:
    lo, hi = snr_range
    return math.isinf(lo) and math.isinf(hi) and lo > 0


def add_noise(signals: np.ndarray, snr_range, rng: np.random.Generator) -> np.ndarray:
    """AWGN on each row of ``signals`` at an SNR drawn uniformly from ``snr_range``."""
    if _is_clean_range(snr_range):
        return signals.copy()
    B, L = signals.shape
    snr = rng.uniform(snr_range[0], snr_range[1], size=B)
    power = np.mean(np.abs(signals) ** 2, axis=1)
    sigma = np.sqrt(power * 10.0 ** (-snr / 10.0) / 2)
    noise = rng.standard_normal((B, L)) + 1j * rng.standard_normal((B, L))
    return signals + (sigma[:, None] * noise).astype(signals.dtype)


def augment_offline(dataset: Sequence[PacketRecord], snr_range, seed: int) -> list[PacketRecord]:
    """Replace every record by one noisy copy at a uniformly drawn SNR."""
    rng = np.random.default_rng(seed)
    out = []
    for r in dataset:
        if _is_clean_range(snr_range):
            snr = CLEAN
        else:
            snr = float(rng.uniform(*snr_range))
        out.append(
            PacketRecord(
                signal=apply_awgn(r.signal, snr, rng),
                label=r.label,
                sf=r.sf,
                applied_cfo_hz=r.applied_cfo_hz,
                applied_snr_db=snr,
                seed_tag=r.seed_tag,
            )
        )
    return out


def augment_online(batch, snr_range, rng: np.random.Generator):
    """Fresh noise for a mini-batch; accepts a ``(B, L)`` array or a list of records."""
    if isinstance(batch, np.ndarray):
        return add_noise(batch, snr_range, rng)
    out = []
    for r in batch:
        snr = CLEAN if _is_clean_range(snr_range) else float(rng.uniform(*snr_range))
        out.append(
            PacketRecord(apply_awgn(r.signal, snr, rng), r.label, r.sf, r.applied_cfo_hz, snr, r.seed_tag)
        )
    return out


# ---------------------------------------------------------------------------
# training


def lora_configs(records, sample_rate_hz: float, bandwidth_hz: float = 125_000.0, n_preamble: int = 8):
    """One ``LoraConfig`` per spreading factor present in ``records``."""
    return {sf: LoraConfig(sf, bandwidth_hz, sample_rate_hz, n_preamble) for sf in sorted({r.sf for r in records})}


def preprocess_records(records, cfgs: dict) -> dict:
    """Group records by SF into ``(signals (n, L) complex64, labels (n,))`` after the receive chain."""
    sig, lab = defaultdict(list), defaultdict(list)
    for r in records:
        sig[r.sf].append(preprocess_packet(r.signal, cfgs[r.sf]).samples)
        lab[r.sf].append(r.label)
    return {sf: (np.asarray(sig[sf], dtype=np.complex64), np.asarray(lab[sf])) for sf in sorted(sig)}


def stratified_split(labels: np.ndarray, sfs: np.ndarray, fraction: float, rng: np.random.Generator):
    """Boolean validation mask holding ``fraction`` of every (class, SF) cell."""
    mask = np.zeros(labels.shape[0], dtype=bool)
    for key in sorted(set(zip(labels.tolist(), sfs.tolist()))):
        idx = np.flatnonzero((labels == key[0]) & (sfs == key[1]))
        n_val = max(1, int(round(fraction * idx.shape[0]))) if idx.shape[0] > 1 else 0
        mask[rng.permutation(idx)[:n_val]] = True
    return mask


def _batches(buckets: dict, batch_size: int, rng: np.random.Generator):
    plan = []
    for sf in sorted(buckets):
        n = buckets[sf][1].shape[0]
        order = rng.permutation(n)
        plan.extend((sf, order[i : i + batch_size]) for i in range(0, n, batch_size))
    return [plan[i] for i in rng.permutation(len(plan))]


def evaluate(model: Transformer, buckets: dict, batch_size: int = 64):
    """Mean cross-entropy and accuracy over pre-featurized buckets ``{sf: (X, y)}``."""
    total, correct, n = 0.0, 0, 0
    for sf in sorted(buckets):
        X, y = buckets[sf]
        for i in range(0, y.shape[0], batch_size):
            xb, yb = X[i : i + batch_size], y[i : i + batch_size]
            probs = model.forward(xb)
            picked = np.maximum(probs[np.arange(yb.shape[0]), yb].astype(np.float64), 1e-12)
            total += float(-np.log(picked).sum())
            correct += int((probs.argmax(axis=1) == yb).sum())
            n += yb.shape[0]
    return total / n, correct / n


class PlateauScheduler:
    """Shrink the learning rate after ``patience`` epochs without improvement."""

    def __init__(self, lr, factor, patience, min_delta=1e-4):
        self.lr, self.factor, self.patience, self.min_delta = lr, factor, patience, min_delta
        self.best = math.inf
        self.wait = 0

    def step(self, val_loss) -> float:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr *= self.factor
                self.wait = 0
        return self.lr


def train(dataset: Sequence[PacketRecord], model_cfg: ModelConfig, train_cfg: TrainConfig,
          sample_rate_hz: float = 250_000.0, bandwidth_hz: float = 125_000.0,
          n_preamble: int = 8, on_epoch=None) -> Checkpoint:
    """Fit the classifier and return the checkpoint with the best validation loss.

    Records are pushed through the receive chain once and kept as IQ; the
    chosen strategy adds noise either once up front (``offline``), per
    mini-batch (``online``) or not at all (``none``), and spectrograms are
    computed after augmentation. Mini-batches never mix spreading factors.
    """
    labels = np.array([r.label for r in dataset])
    missing = sorted(set(range(model_cfg.n_classes)) - set(labels.tolist()))
    if missing:
        raise ConfigurationError(f"training data has no records for classes {missing}")
    tc = train_cfg
    root = np.random.SeedSequence(tc.seed)
    split_ss, aug_ss, val_ss, shuffle_ss, init_ss = root.spawn(5)

    cfgs = lora_configs(dataset, sample_rate_hz, bandwidth_hz, n_preamble)
    sfs = np.array([r.sf for r in dataset])
    val_mask = stratified_split(labels, sfs, tc.val_fraction, np.random.default_rng(split_ss))
    train_b = preprocess_records([r for r, v in zip(dataset, val_mask) if not v], cfgs)
    val_b = preprocess_records([r for r, v in zip(dataset, val_mask) if v], cfgs)

    if tc.augmentation == "offline":
        rng = np.random.default_rng(aug_ss)
        train_b = {sf: (add_noise(x, tc.snr_range_db, rng), y) for sf, (x, y) in train_b.items()}
    if tc.augmentation in ("offline", "online"):
        # fixed noisy validation set so that epochs are comparable
        rng = np.random.default_rng(val_ss)
        val_b = {sf: (add_noise(x, tc.snr_range_db, rng), y) for sf, (x, y) in val_b.items()}
    val_feats = {sf: (model_inputs(x), y) for sf, (x, y) in val_b.items()}
    if tc.augmentation != "online":
        train_feats = {sf: (model_inputs(x), y) for sf, (x, y) in train_b.items()}

    model = build_model(model_cfg, int(init_ss.generate_state(1)[0]))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    online_rng = np.random.default_rng(aug_ss)
    sched = PlateauScheduler(tc.lr_init, tc.lr_factor, tc.lr_patience, tc.min_delta)
    state: dict = {}
    history = History()
    best_loss, best_params, since_best = math.inf, None, 0

    for epoch in range(tc.max_epochs):
        lr = sched.lr
        losses, counts = [], []
        for sf, idx in _batches(train_b, tc.batch_size, shuffle_rng):
            if tc.augmentation == "online":
                X = model_inputs(add_noise(train_b[sf][0][idx], tc.snr_range_db, online_rng))
            else:
                X = train_feats[sf][0][idx]
            y = train_b[sf][1][idx]
            loss, grads = model.loss_and_grads(X, y)
            rmsprop_step(model.params, grads, state, lr)
            losses.append(loss)
            counts.append(y.shape[0])
        train_loss = float(np.dot(losses, counts) / np.sum(counts))
        val_loss, val_acc = evaluate(model, val_feats)
        history.append(train_loss, val_loss, lr)
        log.info("epoch %d train %.4f val %.4f acc %.3f lr %.2e", epoch + 1, train_loss, val_loss, val_acc, lr)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss, val_acc, lr)
        if val_loss < best_loss - tc.min_delta:
            best_loss, since_best = val_loss, 0
            best_params = {k: v.copy() for k, v in model.params.items()}
        else:
            since_best += 1
            if since_best >= tc.stop_patience:
                break
        sched.step(val_loss)
    return Checkpoint(model_cfg, best_params, history)


# ---------------------------------------------------------------------------
# checkpoint files

CKPT_MAGIC = b"RFFC"
CKPT_VERSION = 1
_CK_HEADER = struct.Struct("<4sHHHHHHH")  # magic, version, n_classes, d_model, n_heads, d_ff, n_blocks, n_tensors


def encode_checkpoint(c: Checkpoint) -> bytes:
    m = c.model_cfg
    names = sorted(c.params)
    parts = [_CK_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, m.n_classes, m.d_model, m.n_heads, m.d_ff, m.n_blocks, len(names))]
    for name in names:
        arr = np.asarray(c.params[name], dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    h = c.history
    parts.append(struct.pack("<I", len(h)))
    for row in zip(h.train_loss, h.val_loss, h.lr):
        parts.append(struct.pack("<3d", *row))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, fmt):
        s = struct.Struct(fmt)
        if self.pos + s.size > len(self.buf):
            raise FormatError("checkpoint file truncated")
        out = s.unpack_from(self.buf, self.pos)
        self.pos += s.size
        return out

    def raw(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError("checkpoint file truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out


def decode_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    magic, version, K, d, H, dff, nb, nt = r.take(_CK_HEADER.format)
    if magic != CKPT_MAGIC:
        raise FormatError(f"not a checkpoint file (magic {magic!r})")
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        cfg = ModelConfig(K, d, H, dff, nb)
    except ConfigurationError as e:
        raise FormatError(f"invalid model configuration in checkpoint: {e}") from e
    params = {}
    for _ in range(nt):
        (n,) = r.take("<H")
        try:
            name = r.raw(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError("bad tensor name in checkpoint") from e
        (rank,) = r.take("<B")
        dims = r.take(f"<{rank}I")
        count = int(np.prod(dims)) if rank else 1
        params[name] = np.frombuffer(r.raw(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    expected = {k: v.shape for k, v in build_model(cfg, 0).params.items()}
    if {k: v.shape for k, v in params.items()} != expected:
        raise FormatError("checkpoint tensors do not match the model configuration")
    (n_epochs,) = r.take("<I")
    history = History()
    for _ in range(n_epochs):
        history.append(*r.take("<3d"))
    if r.pos != len(buf):
        raise FormatError("trailing bytes after checkpoint history")
    return Checkpoint(cfg, params, history, version)


def save_checkpoint(c: Checkpoint, path) -> None:
    Path(path).write_bytes(encode_checkpoint(c))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
