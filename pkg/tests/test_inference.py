import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lorarffi.errors import DimensionError, InsufficientDataError
from lorarffi.features import Spectrogram, channel_ind_spectrogram
from lorarffi.impairments import CLEAN, make_device_bank, synth_packet
from lorarffi.inference import (
    HistoryStore,
    InferenceEngine,
    classify,
    infer_packet,
    merge_predictions,
    predict,
)
from lorarffi.nn import Transformer
from lorarffi.preprocess import preprocess_packet
from lorarffi.waveform import LoraConfig


def prob_vectors(k):
    return arrays(np.float64, k, elements=st.floats(0.001, 1.0)).map(lambda v: v / v.sum())


def test_merge_mean():
    out = merge_predictions([np.array([0.2, 0.8]), np.array([0.6, 0.4])])
    np.testing.assert_allclose(out, [0.4, 0.6])


def test_merge_single_is_identity():
    p = np.array([0.1, 0.7, 0.2])
    assert np.array_equal(merge_predictions([p]), p)


@given(st.lists(prob_vectors(5), min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_merge_properties(ps):
    m = merge_predictions(ps)
    assert m.sum() == pytest.approx(1.0)
    assert np.all(m >= np.min(ps, axis=0) - 1e-15) and np.all(m <= np.max(ps, axis=0) + 1e-15)
    np.testing.assert_allclose(merge_predictions(ps[::-1]), m, atol=1e-15)


def test_merge_errors():
    with pytest.raises(InsufficientDataError):
        merge_predictions([])
    with pytest.raises(DimensionError):
        merge_predictions([np.ones(3) / 3, np.ones(4) / 4])


def test_classify_ties_lowest_index():
    assert classify(np.array([0.25, 0.25, 0.25, 0.25])) == 0
    assert classify(np.array([0.1, 0.45, 0.45])) == 1
    assert classify(np.array([0.1, 0.2, 0.7])) == 2


def test_unanimous_window_decision():
    # every packet voting for class 3 must decide 3
    store = HistoryStore(5)
    for _ in range(5):
        p = np.full(10, 0.05)
        p[3] = 0.55
        decided = classify(store.fuse("dev", p))
    assert decided == 3


def test_history_window_rolls():
    store = HistoryStore(3)
    vs = [np.eye(3)[i] for i in (0, 1, 2, 2)]
    outs = [store.fuse("a", v) for v in vs]
    np.testing.assert_allclose(outs[0], [1, 0, 0])
    np.testing.assert_allclose(outs[1], [0.5, 0.5, 0])
    np.testing.assert_allclose(outs[2], [1 / 3, 1 / 3, 1 / 3])
    np.testing.assert_allclose(outs[3], [0, 1 / 3, 2 / 3])
    assert len(store.retained("a")) == 2


def test_history_keyed_per_source():
    store = HistoryStore(4)
    store.fuse("a", np.array([1.0, 0.0]))
    out = store.fuse("b", np.array([0.0, 1.0]))
    np.testing.assert_allclose(out, [0, 1])
    store.reset("a")
    assert store.retained("a") == [] and len(store.retained("b")) == 1
    store.reset()
    assert len(store) == 0


def test_npkt_one_keeps_nothing():
    store = HistoryStore(1)
    p = np.array([0.3, 0.7])
    assert np.array_equal(store.fuse("x", p), p)
    assert store.retained("x") == [] and store.n_floats == 0


@pytest.mark.parametrize("K, n_pkt", [(10, 1), (10, 5), (10, 20), (3, 7)])
def test_storage_bound(K, n_pkt, rng):
    store = HistoryStore(n_pkt)
    for _ in range(3 * n_pkt + 1):
        for src in range(K):
            store.fuse(src, rng.dirichlet(np.ones(K)))
    assert store.n_floats == K * K * (n_pkt - 1)


def test_invalid_npkt():
    with pytest.raises(ValueError):
        HistoryStore(0)


@pytest.fixture(scope="module")
def tiny_model():
    return Transformer(n_classes=4).init(0)


def test_predict_validates_height(tiny_model):
    with pytest.raises(DimensionError):
        predict(tiny_model, Spectrogram(np.zeros((32, 10))))


def test_predict_sums_to_one(tiny_model):
    cfg = LoraConfig(7)
    rec = synth_packet(make_device_bank(4, 0)[1], cfg, CLEAN, 2)
    p = predict(tiny_model, channel_ind_spectrogram(preprocess_packet(rec.signal, cfg)))
    assert p.shape == (4,) and p.dtype == np.float64
    assert p.sum() == pytest.approx(1.0, abs=1e-5)


def test_engine_end_to_end(tiny_model):
    cfg = LoraConfig(7)
    bank = make_device_bank(4, 0)
    eng = InferenceEngine(tiny_model, n_pkt=3)
    singles = []
    for i in range(3):
        rec = synth_packet(bank[2], cfg, 20.0, i)
        decision, merged = infer_packet(eng, "node-2", rec.signal, cfg)
        singles.append(predict(tiny_model, channel_ind_spectrogram(preprocess_packet(rec.signal, cfg))))
        assert 0 <= decision < 4
    np.testing.assert_allclose(merged, np.mean(singles, axis=0), atol=1e-12)
    assert eng.n_pkt == 3 and len(eng.history.retained("node-2")) == 2


def test_merge_two_one_hots():
    np.testing.assert_array_equal(merge_predictions([np.array([1.0, 0.0]), np.array([0.0, 1.0])]), [0.5, 0.5])


def test_classify_examples():
    assert classify(np.array([0.1, 0.7, 0.2])) == 1
    assert classify(np.array([0.5, 0.5])) == 0


@given(arrays(np.float64, 6, elements=st.floats(-30, 30)), st.floats(-100, 100))
@settings(max_examples=50, deadline=None)
def test_classify_softmax_shift(z, c):
    from lorarffi.nn import softmax

    assert classify(softmax(z)) == classify(softmax(z + c))


@pytest.mark.parametrize("sf", [7, 8, 9])
def test_predict_all_widths(sf):
    model = Transformer().init(1)
    cfg = LoraConfig(sf)
    spec = channel_ind_spectrogram(preprocess_packet(synth_packet(make_device_bank(10, 0)[3], cfg, 30.0, 1).signal, cfg))
    p = predict(model, spec)
    assert p.shape == (10,) and abs(p.sum() - 1) < 1e-6
    assert np.array_equal(p, predict(model, spec))


def test_npkt_one_matches_single_packet(tiny_model):
    cfg = LoraConfig(7)
    eng = InferenceEngine(tiny_model, n_pkt=1)
    for i, p in enumerate(make_device_bank(4, 0)):
        rx = synth_packet(p, cfg, 15.0, i).signal
        decision, merged = eng.infer_packet("src", rx, cfg)
        single = predict(tiny_model, channel_ind_spectrogram(preprocess_packet(rx, cfg)))
        assert decision == classify(single)
        np.testing.assert_array_equal(merged, single)


@given(st.integers(1, 6), st.integers(0, 20))
@settings(max_examples=40, deadline=None)
def test_fifo_bound_and_warmup(n_pkt, n_seen):
    store = HistoryStore(n_pkt)
    vs = [np.eye(3)[i % 3] for i in range(n_seen + 1)]
    for v in vs[:-1]:
        store.fuse(0, v)
        assert len(store.retained(0)) <= n_pkt - 1
    used = min(n_seen + 1, n_pkt)
    np.testing.assert_allclose(store.fuse(0, vs[-1]), np.mean(vs[-used:], axis=0))
