"""Command-line harness: ``gen``, ``train``, ``eval`` and ``report``.

Config files are flat ``key = value`` text; ``#`` starts a comment.
Exit codes: 0 success, 2 usage or configuration error, 3 runtime or data error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .datafile import load_dataset, save_dataset
from .errors import ConfigurationError, FormatError, RffiError
from .evaluation import run_sweep
from .impairments import gen_dataset, make_device_bank
from .model import STRATEGIES, ModelConfig, TrainConfig, load_checkpoint, lora_configs, save_checkpoint, train
from .waveform import LoraConfig

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("lorarffi")


class UsageError(Exception):
    """Bad flags, config values or paths; maps to exit code 2."""


def _int_list(text):
    return [int(v) for v in str(text).replace(",", " ").split()]


def _float_list(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


GEN_KEYS = {
    "n_devices": (int, 10),
    "sfs": (_int_list, [7, 8, 9]),
    "train_per_cell": (int, 200),
    "test_per_cell": (int, 50),
    "bandwidth_hz": (float, 125_000.0),
    "sample_rate_hz": (float, 250_000.0),
    "n_preamble": (int, 8),
    "seed": (int, 0),
}

TRAIN_KEYS = {
    "strategy": (str, "online"),
    "batch_size": (int, 32),
    "lr_init": (float, 1e-3),
    "lr_factor": (float, 0.2),
    "lr_patience": (int, 10),
    "stop_patience": (int, 20),
    "val_fraction": (float, 0.1),
    "snr_low_db": (float, 0.0),
    "snr_high_db": (float, 40.0),
    "max_epochs": (int, 200),
    "bandwidth_hz": (float, 125_000.0),
    "n_preamble": (int, 8),
    "d_ff": (int, 128),
    "n_heads": (int, 4),
    "seed": (int, 0),
}

EVAL_KEYS = {
    "snr": (_float_list, [40.0, 30.0, 20.0, 10.0, 0.0]),
    "sf": (_int_list, [7, 8, 9]),
    "npkt": (_int_list, [1]),
    "bandwidth_hz": (float, 125_000.0),
    "n_preamble": (int, 8),
    "seed": (int, 0),
}


def read_config(path, schema: dict) -> dict:
    """Parse a key=value file against ``schema`` ({key: (type, default)})."""
    values = {k: default for k, (_, default) in schema.items()}
    if path is None:
        return values
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    for n, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{p}:{n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in schema:
            raise UsageError(f"{p}:{n}: unknown key {key!r}")
        try:
            values[key] = schema[key][0](raw)
        except ValueError as e:
            raise UsageError(f"{p}:{n}: bad value for {key}: {e}") from e
    return values


def _print_config(name, values):
    print(f"[{name}] effective config")
    for k in sorted(values):
        print(f"  {k} = {values[k]}")


def _out_dir(path) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"output directory does not exist: {p}")
    return p


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = read_config(args.config, GEN_KEYS)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = _out_dir(args.out)
    _print_config("gen", cfg)
    try:
        lora = [LoraConfig(sf, cfg["bandwidth_hz"], cfg["sample_rate_hz"], cfg["n_preamble"]) for sf in cfg["sfs"]]
        bank = make_device_bank(cfg["n_devices"], cfg["seed"])
    except ConfigurationError as e:
        raise UsageError(str(e)) from e
    n_cells = len(bank) * len(lora)
    splits = {
        "train": gen_dataset(bank, lora, cfg["train_per_cell"], "clean", cfg["seed"]),
        "test": gen_dataset(bank, lora, cfg["test_per_cell"], "clean", cfg["seed"], cell_offset=n_cells),
    }
    for name, records in splits.items():
        path = out / f"{name}.rffd"
        save_dataset(path, records, cfg["sample_rate_hz"], len(bank))
        counts = Counter((r.label, r.sf) for r in records)
        print(f"{name}: {len(records)} records -> {path}")
        for (dev, sf), n in sorted(counts.items()):
            print(f"  device {dev} sf {sf}: {n}")
    return EXIT_OK


def _load_dataset_arg(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"dataset not found: {p}")
    return load_dataset(p)


def cmd_train(args) -> int:
    cfg = read_config(args.config, TRAIN_KEYS)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.strategy is not None:
        cfg["strategy"] = args.strategy
    out = _out_dir(args.out)
    _print_config("train", cfg)
    data = _load_dataset_arg(args.dataset)
    try:
        model_cfg = ModelConfig(n_classes=data.n_classes, d_ff=cfg["d_ff"], n_heads=cfg["n_heads"])
        train_cfg = TrainConfig(
            batch_size=cfg["batch_size"],
            lr_init=cfg["lr_init"],
            lr_factor=cfg["lr_factor"],
            lr_patience=cfg["lr_patience"],
            stop_patience=cfg["stop_patience"],
            val_fraction=cfg["val_fraction"],
            augmentation=cfg["strategy"],
            snr_range_db=(cfg["snr_low_db"], cfg["snr_high_db"]),
            seed=cfg["seed"],
            max_epochs=cfg["max_epochs"],
        )
        ckpt = train(
            data.records, model_cfg, train_cfg,
            sample_rate_hz=data.sample_rate_hz, bandwidth_hz=cfg["bandwidth_hz"], n_preamble=cfg["n_preamble"],
            on_epoch=lambda e, tl, vl, va, lr: print(f"epoch {e + 1}: train {tl:.4f} val {vl:.4f} acc {va:.3f} lr {lr:.2e}"),
        )
    except ConfigurationError as e:
        raise UsageError(str(e)) from e
    save_checkpoint(ckpt, out / "model.rffc")
    with open(out / "history.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        h = ckpt.history
        for i, row in enumerate(zip(h.train_loss, h.val_loss, h.lr), 1):
            w.writerow([i, *map(_fmt, row)])
    print(f"checkpoint -> {out / 'model.rffc'} ({len(ckpt.history)} epochs)")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = read_config(args.config, EVAL_KEYS)
    for key, parse in (("snr", _float_list), ("sf", _int_list), ("npkt", _int_list)):
        flag = getattr(args, key)
        if flag is not None:
            cfg[key] = parse(flag)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = _out_dir(args.out)
    _print_config("eval", cfg)
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    if any(n < 1 for n in cfg["npkt"]):
        raise UsageError("npkt values must be >= 1")
    ckpt = load_checkpoint(args.checkpoint)
    data = _load_dataset_arg(args.dataset)
    present = sorted({r.sf for r in data.records})
    missing = [sf for sf in cfg["sf"] if sf not in present]
    if missing:
        raise UsageError(f"SF {missing} not present in test dataset (has {present})")
    try:
        cfgs = lora_configs(data.records, data.sample_rate_hz, cfg["bandwidth_hz"], cfg["n_preamble"])
    except ConfigurationError as e:
        raise UsageError(str(e)) from e
    results = run_sweep(ckpt.to_model(), data.records, cfgs, cfg["snr"], cfg["sf"], cfg["npkt"], cfg["seed"],
                        n_classes=ckpt.model_cfg.n_classes)
    conf_dir = out / "confusion"
    conf_dir.mkdir(exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["snr_db", "sf", "n_pkt", "accuracy", "n_samples"])
        for r in results:
            w.writerow([_fmt(r.snr_db), r.sf, r.n_pkt, _fmt(r.accuracy), r.n_samples])
            name = f"cm_snr{r.snr_db:g}_sf{r.sf}_npkt{r.n_pkt}.csv"
            np.savetxt(conf_dir / name, r.confusion, fmt="%d", delimiter=",")
            print(f"snr {r.snr_db:g} dB sf {r.sf} n_pkt {r.n_pkt}: accuracy {r.accuracy:.4f} ({r.n_samples})")
    return EXIT_OK


REPORT_FILES = ("accuracy_vs_snr_by_sf.svg", "accuracy_vs_snr_by_strategy.svg", "accuracy_vs_npkt_by_snr.svg")


def read_metrics(path) -> list[dict]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"metrics file not found: {p}")
    with open(p, newline="") as f:
        reader = csv.DictReader(f)
        need = {"snr_db", "sf", "n_pkt", "accuracy", "n_samples"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise UsageError(f"{p}: missing metrics columns (need {sorted(need)})")
        try:
            rows = [
                {"snr_db": float(r["snr_db"]), "sf": int(r["sf"]), "n_pkt": int(r["n_pkt"]),
                 "accuracy": float(r["accuracy"]), "n_samples": int(r["n_samples"])}
                for r in reader
            ]
        except (TypeError, ValueError) as e:
            raise UsageError(f"{p}: malformed metrics row: {e}") from e
    if not rows:
        raise UsageError(f"{p}: no metrics rows")
    return rows


def _series(rows, key, where):
    pts = sorted((r[key], r["accuracy"]) for r in rows if all(r[k] == v for k, v in where.items()))
    return [p[0] for p in pts], [p[1] for p in pts]


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = _out_dir(args.out)
    tables = [(Path(p).stem, read_metrics(p)) for p in args.metrics]
    _print_config("report", {"metrics": [str(p) for p in args.metrics], "out": str(out)})
    plt.rcParams["svg.hashsalt"] = "lorarffi"
    plt.rcParams["svg.fonttype"] = "none"
    meta = {"Date": None}

    name, rows = tables[0]
    base_n = min(r["n_pkt"] for r in rows)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for sf in sorted({r["sf"] for r in rows}):
        ax.plot(*_series(rows, "snr_db", {"sf": sf, "n_pkt": base_n}), marker="o", label=f"SF {sf}")
    ax.set(xlabel="SNR (dB)", ylabel="accuracy", title=f"{name}, N_pkt={base_n}", ylim=(0, 1.02))
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / REPORT_FILES[0], metadata=meta)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, rows_i in tables:
        sf0 = min(r["sf"] for r in rows_i)
        n0 = min(r["n_pkt"] for r in rows_i)
        ax.plot(*_series(rows_i, "snr_db", {"sf": sf0, "n_pkt": n0}), marker="o", label=f"{label} (SF {sf0})")
    ax.set(xlabel="SNR (dB)", ylabel="accuracy", title="augmentation strategies", ylim=(0, 1.02))
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / REPORT_FILES[1], metadata=meta)
    plt.close(fig)

    sf0 = min(r["sf"] for r in rows)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for snr in sorted({r["snr_db"] for r in rows}):
        ax.plot(*_series(rows, "n_pkt", {"sf": sf0, "snr_db": snr}), marker="o", label=f"{snr:g} dB")
    ax.set(xlabel="N_pkt", ylabel="accuracy", title=f"{name}, SF {sf0}", ylim=(0, 1.02))
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / REPORT_FILES[2], metadata=meta)
    plt.close(fig)
    for f in REPORT_FILES:
        print(f"plot -> {out / f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lorarffi", description="Simulated LoRa RF fingerprint identification.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="synthesize train/test datasets")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a classifier on a dataset file")
    t.add_argument("dataset")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--strategy", choices=STRATEGIES)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy sweep over SNR, SF and N_pkt")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("--config")
    e.add_argument("--seed", type=int)
    e.add_argument("--snr", help="comma-separated test SNRs in dB")
    e.add_argument("--sf", help="comma-separated spreading factors")
    e.add_argument("--npkt", help="comma-separated fusion window sizes")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="plot metrics CSVs")
    r.add_argument("metrics", nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, RffiError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
