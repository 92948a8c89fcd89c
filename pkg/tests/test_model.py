import math

import numpy as np
import pytest

from lorarffi.errors import ConfigurationError, FormatError
from lorarffi.impairments import CLEAN, gen_dataset, make_device_bank
from lorarffi.model import (
    Checkpoint,
    History,
    ModelConfig,
    PlateauScheduler,
    TrainConfig,
    add_noise,
    augment_offline,
    augment_online,
    build_model,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
    stratified_split,
    train,
)
from lorarffi.waveform import LoraConfig


@pytest.fixture(scope="module")
def small_set():
    return gen_dataset(make_device_bank(3, 0), [LoraConfig(7)], 12, "clean", seed=4)


def test_model_config_validation():
    with pytest.raises(ConfigurationError):
        ModelConfig(d_model=32)
    with pytest.raises(ConfigurationError):
        ModelConfig(n_heads=5)
    with pytest.raises(ConfigurationError):
        ModelConfig(n_blocks=3)
    with pytest.raises(ConfigurationError):
        ModelConfig(n_classes=1)


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(augmentation="sometimes")
    with pytest.raises(ConfigurationError):
        TrainConfig(val_fraction=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(snr_range_db=(30, 10))


def test_add_noise_snr(rng):
    x = np.exp(1j * rng.uniform(0, 2 * np.pi, (4, 50_000)))
    y = add_noise(x, (10.0, 10.0), rng)
    snr = 10 * np.log10(1 / np.mean(np.abs(y - x) ** 2, axis=1))
    np.testing.assert_allclose(snr, 10.0, atol=0.2)
    assert np.array_equal(add_noise(x, (CLEAN, CLEAN), rng), x)


def test_augment_offline(small_set):
    out = augment_offline(small_set, (0.0, 40.0), seed=1)
    assert len(out) == len(small_set)
    assert all(0 <= r.applied_snr_db <= 40 for r in out)
    assert [r.label for r in out] == [r.label for r in small_set]
    again = augment_offline(small_set, (0.0, 40.0), seed=1)
    assert all(np.array_equal(a.signal.samples, b.signal.samples) for a, b in zip(out, again))
    clean = augment_offline(small_set, (CLEAN, CLEAN), seed=1)
    assert all(np.array_equal(a.signal.samples, b.signal.samples) for a, b in zip(clean, small_set))


def test_augment_online_fresh_noise(small_set, rng):
    a = augment_online(small_set[:4], (0.0, 40.0), rng)
    b = augment_online(small_set[:4], (0.0, 40.0), rng)
    assert not np.array_equal(a[0].signal.samples, b[0].signal.samples)
    arr = np.stack([r.signal.samples for r in small_set[:4]])
    assert augment_online(arr, (5.0, 5.0), rng).shape == arr.shape


def test_stratified_split(rng):
    labels = np.repeat(np.arange(3), 20)
    sfs = np.tile([7, 8], 30)
    mask = stratified_split(labels, sfs, 0.1, rng)
    for lab in range(3):
        for sf in (7, 8):
            assert mask[(labels == lab) & (sfs == sf)].sum() == 1


def test_plateau_scheduler():
    s = PlateauScheduler(1e-3, 0.2, patience=2)
    lrs = [s.step(v) for v in [1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.5]]
    assert lrs == pytest.approx([1e-3, 1e-3, 1e-3, 2e-4, 2e-4, 4e-5, 4e-5])


@pytest.mark.parametrize("strategy", ["none", "offline", "online"])
def test_train_runs_and_is_deterministic(small_set, strategy):
    mc = ModelConfig(n_classes=3)
    tc = TrainConfig(augmentation=strategy, max_epochs=3, seed=5, val_fraction=0.25, batch_size=8)
    a = train(small_set, mc, tc)
    b = train(small_set, mc, tc)
    assert len(a.history) == 3
    assert a.history.lr == [1e-3] * 3
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert a.history.val_loss == b.history.val_loss


def test_train_learns_clean(small_set):
    ck = train(small_set, ModelConfig(n_classes=3),
               TrainConfig(augmentation="none", max_epochs=15, seed=0, val_fraction=0.25, batch_size=8))
    assert ck.history.train_loss[-1] < ck.history.train_loss[0]
    assert min(ck.history.val_loss) < math.log(3)


def test_train_early_stopping(small_set):
    tc = TrainConfig(augmentation="none", max_epochs=50, stop_patience=2, lr_init=1e-9, seed=0,
                     val_fraction=0.25, batch_size=8)
    ck = train(small_set, ModelConfig(n_classes=3), tc)
    assert len(ck.history) < 50


def test_train_missing_class(small_set):
    with pytest.raises(ConfigurationError):
        train(small_set, ModelConfig(n_classes=4), TrainConfig(max_epochs=1))


def ckpt():
    cfg = ModelConfig()
    m = build_model(cfg, 3)
    h = History()
    h.append(2.3, 2.2, 1e-3)
    h.append(1.9, 2.0, 2e-4)
    return Checkpoint(cfg, m.params, h)


def test_checkpoint_roundtrip_bit_exact(tmp_path, rng):
    c = ckpt()
    path = tmp_path / "m.rffc"
    save_checkpoint(c, path)
    back = load_checkpoint(path)
    assert back.model_cfg == c.model_cfg
    assert back.history == c.history
    for k in c.params:
        assert back.params[k].tobytes() == c.params[k].tobytes()
    X = rng.standard_normal((3, 62, 64)).astype(np.float32)
    assert c.to_model().forward(X).tobytes() == back.to_model().forward(X).tobytes()
    assert encode_checkpoint(back) == path.read_bytes()


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b[:8],
        lambda b: b[:-1],
        lambda b: b + b"\x00",
        lambda b: b"NOPE" + b[4:],
        lambda b: b[:4] + (2).to_bytes(2, "little") + b[6:],
        lambda b: b[:8] + (32).to_bytes(2, "little") + b[10:],
    ],
    ids=["header", "truncated", "trailing", "magic", "version", "width"],
)
def test_checkpoint_corrupt(mutate):
    with pytest.raises(FormatError):
        decode_checkpoint(mutate(encode_checkpoint(ckpt())))


def test_checkpoint_shape_mismatch():
    c = ckpt()
    c.params["head.W"] = np.zeros((64, 9), dtype=np.float32)
    with pytest.raises(FormatError):
        decode_checkpoint(encode_checkpoint(c))


# ---------------------------------------------------------------------------
# listed contract examples

from lorarffi.evaluation import run_sweep  # noqa: E402
from lorarffi.features import channel_ind_spectrogram  # noqa: E402
from lorarffi.inference import predict  # noqa: E402
from lorarffi.model import lora_configs  # noqa: E402
from lorarffi.preprocess import preprocess_packet  # noqa: E402

from toy import TOY_BANK  # noqa: E402


def test_offline_snr_histogram_uniform():
    recs = gen_dataset(make_device_bank(10, 0), [LoraConfig(7)], 300, "clean", seed=0)
    out = augment_offline(recs, (0.0, 40.0), seed=3)
    assert len(out) == 3000
    counts, _ = np.histogram([r.applied_snr_db for r in out], bins=8, range=(0, 40))
    chi2 = float(((counts - 375.0) ** 2 / 375.0).sum())
    assert chi2 < 18.48  # 99th percentile, 7 degrees of freedom


@pytest.fixture(scope="module")
def toy_ckpt():
    cfg = LoraConfig(7)
    recs = gen_dataset(TOY_BANK, [cfg], 40, "clean", seed=1)
    ck = train(recs, ModelConfig(n_classes=2),
               TrainConfig(augmentation="online", snr_range_db=(20.0, 40.0), max_epochs=30, seed=0))
    return ck


def test_toy_separable_reaches_full_accuracy(toy_ckpt):
    test = gen_dataset(TOY_BANK, [LoraConfig(7)], 30, "clean", seed=1, cell_offset=5)
    (res,) = run_sweep(toy_ckpt.to_model(), test, lora_configs(test, 250e3), [40.0], [7], [1], seed=0)
    assert res.accuracy == 1.0


def test_toy_clean_packet_confident(toy_ckpt):
    cfg = LoraConfig(7)
    rec = gen_dataset(TOY_BANK[:1], [cfg], 1, "clean", seed=77)[0]
    p = predict(toy_ckpt.to_model(), channel_ind_spectrogram(preprocess_packet(rec.signal, cfg)))
    assert p[0] > 0.99


def test_lr_reductions_are_factor_point_two(small_set):
    # a min_delta no epoch can meet forces a plateau every lr_patience epochs
    tc = TrainConfig(augmentation="none", max_epochs=6, lr_patience=1, stop_patience=100, min_delta=10.0,
                     seed=0, val_fraction=0.25, batch_size=8)
    lrs = train(small_set, ModelConfig(n_classes=3), tc).history.lr
    ratios = {round(b / a, 12) for a, b in zip(lrs, lrs[1:])}
    assert ratios <= {1.0, 0.2} and 0.2 in ratios
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_none_and_online_diverge(small_set):
    kw = dict(max_epochs=1, seed=2, val_fraction=0.25, batch_size=8)
    a = train(small_set, ModelConfig(n_classes=3), TrainConfig(augmentation="none", **kw))
    b = train(small_set, ModelConfig(n_classes=3), TrainConfig(augmentation="online", **kw))
    assert a.history.train_loss[0] != b.history.train_loss[0]
