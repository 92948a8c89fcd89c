"""Binary dataset files (little-endian).

Layout::

    "RFFD" | version u16 | fs f64 | K u16 | count u32
    per record: label u16 | sf u8 | snr_db f32 (NaN = clean) | cfo_hz f32
                | seed_tag u64 | n u32 | n x (re f32, im f32)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .impairments import CLEAN, PacketRecord
from .waveform import IqSignal

MAGIC = b"RFFD"
VERSION = 1
_HEADER = struct.Struct("<4sHdHI")
_RECORD = struct.Struct("<HBffQI")


@dataclass
class DatasetFile:
    records: list
    sample_rate_hz: float
    n_classes: int


def encode_dataset(records, sample_rate_hz: float, n_classes: int) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, float(sample_rate_hz), n_classes, len(records))]
    for r in records:
        snr = math.nan if math.isinf(r.applied_snr_db) else r.applied_snr_db
        samples = np.asarray(r.signal.samples, dtype="<c8")
        parts.append(_RECORD.pack(r.label, r.sf, snr, r.applied_cfo_hz, r.seed_tag, samples.shape[0]))
        parts.append(samples.tobytes())
    return b"".join(parts)


def decode_dataset(buf: bytes) -> DatasetFile:
    if len(buf) < _HEADER.size:
        raise FormatError("dataset file truncated in header")
    magic, version, fs, K, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"not a dataset file (magic {magic!r})")
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    if not fs > 0:
        raise FormatError("dataset sample rate must be positive")
    pos = _HEADER.size
    records = []
    for i in range(count):
        if pos + _RECORD.size > len(buf):
            raise FormatError(f"dataset file truncated at record {i}")
        label, sf, snr, cfo, tag, n = _RECORD.unpack_from(buf, pos)
        pos += _RECORD.size
        end = pos + 8 * n
        if end > len(buf):
            raise FormatError(f"dataset file truncated inside record {i}")
        samples = np.frombuffer(buf, dtype="<c8", count=n, offset=pos)
        pos = end
        records.append(
            PacketRecord(
                signal=IqSignal(samples.astype(np.complex128), fs),
                label=label,
                sf=sf,
                applied_cfo_hz=float(cfo),
                applied_snr_db=CLEAN if math.isnan(snr) else float(snr),
                seed_tag=tag,
            )
        )
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last record")
    return DatasetFile(records, fs, K)


def save_dataset(path, records, sample_rate_hz: float, n_classes: int) -> None:
    Path(path).write_bytes(encode_dataset(records, sample_rate_hz, n_classes))


def load_dataset(path) -> DatasetFile:
    return decode_dataset(Path(path).read_bytes())
