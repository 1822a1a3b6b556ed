import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calldetect.activity import (
    ContextTablePredictor,
    InsufficientDataError,
    NextCallPredictor,
    PipelineConfig,
    bucket,
    convolve_sum,
    extract_features,
    max_pool,
    prediction_signal,
    read_feature_csv,
    reduce_signal,
    train_predictor,
    write_feature_csv,
)
from calldetect.metrics import CallTrace, CallUniverse, Label
from calldetect.simulator import (
    Case,
    DeviceModel,
    case_templates,
    derive_seed,
    generate_case_dataset,
    generate_reference_experiment,
    run_experiment,
)

import oracles

ABCDE = CallUniverse("abcde")

# all-ones signal of length 450 through the cascade with window 100, worked
# out with oracles.cascade: 351 sums of 100 -> 4 pooled maxima -> 4 * 100
ALL_ONES_450_W100 = 400


def trace(s, universe=ABCDE, label=Label.UNLABELED):
    return CallTrace.from_names(list(s), universe, label)


class ConstantPredictor(NextCallPredictor):
    def __init__(self, value):
        self.value = value

    def predict(self, contexts):
        return np.full(len(contexts), self.value, dtype=np.int32)


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(bucket_size=1)
    with pytest.raises(ValueError):
        PipelineConfig(window_size=1)
    assert PipelineConfig() == PipelineConfig(32, 100)


def test_bucket_windows():
    rows = bucket(trace("abcde"), PipelineConfig(3, 2))
    assert [ABCDE.decode(r) for r in rows] == [list("abc"), list("bcd"), list("cde")]
    assert len(bucket(trace("abc"), PipelineConfig(3, 2))) == 1
    rows = bucket(trace("aaaa"), PipelineConfig(2, 2))
    assert rows.tolist() == [[0, 0]] * 3


def test_bucket_too_short():
    with pytest.raises(InsufficientDataError):
        bucket(trace("ab"), PipelineConfig(3, 2))


@given(st.lists(st.integers(0, 4), min_size=2, max_size=200), st.integers(2, 40))
def test_bucket_row_count(xs, size):
    t = CallTrace(np.array(xs, dtype=np.int32), ABCDE)
    if len(xs) < size:
        with pytest.raises(InsufficientDataError):
            bucket(t, PipelineConfig(size, 2))
    else:
        rows = bucket(t, PipelineConfig(size, 2))
        assert rows.shape == (len(xs) - size + 1, size)
        assert rows[:, -1].tolist() == xs[size - 1:]


def test_predictor_periodic():
    model = train_predictor(trace("ab" * 20), PipelineConfig(2, 2))
    assert model.predict_one([0]) == 1
    assert model.predict_one([1]) == 0


def test_predictor_fallback_majority():
    t = trace("a" * 18 + "bc")
    model = train_predictor(t, PipelineConfig(3, 2))
    assert model.predict_one([4, 4]) == 0


def test_predictor_tie_breaks_low_id():
    # context (a) is followed once by c and once by b
    model = train_predictor(trace("acab"), PipelineConfig(2, 2))
    assert model.predict_one([0]) == 1
    # global target counts: c, a, b once each -> a
    assert model.predict_one([4]) == 0


def test_predictor_deterministic_and_serializable():
    model = train_predictor(trace("abcabdabe" * 5), PipelineConfig(4, 2))
    again = ContextTablePredictor.from_dict(model.to_dict())
    rows = bucket(trace("abcabdabeabdeabc"), PipelineConfig(4, 2))
    assert model.predict(rows[:, :-1]).tolist() == again.predict(rows[:, :-1]).tolist()
    assert model.predict(rows[:, :-1]).tolist() == model.predict(rows[:, :-1]).tolist()
    with pytest.raises(ValueError):
        model.predict(np.zeros((2, 5), dtype=np.int32))


def test_predictor_matches_dictionary_oracle():
    r = np.random.default_rng(0)
    xs = r.integers(0, 3, 400)
    t = CallTrace(xs.astype(np.int32), CallUniverse("xyz"))
    cfg = PipelineConfig(4, 2)
    model = train_predictor(t, cfg)
    table = {}
    for i in range(len(xs) - 3):
        table.setdefault(tuple(xs[i:i + 3]), []).append(int(xs[i + 3]))
    for ctx, targets in table.items():
        counts = [targets.count(c) for c in range(3)]
        assert model.predict_one(list(ctx)) == counts.index(max(counts))


def test_signal_perfect_and_constant_wrong():
    t = trace("abc" * 10)
    cfg = PipelineConfig(3, 2)
    rows = bucket(t, cfg)
    assert not prediction_signal(train_predictor(t, cfg), rows).any()
    assert prediction_signal(ConstantPredictor(3), rows).tolist() == [1] * len(rows)


def case5_predictor(cfg, seed=1, mean=400, sd=100):
    ref = generate_reference_experiment(Case.CASE5_HD, seed, mean, sd)
    return ref, train_predictor(ref.trace, cfg)


def test_case5_in_sample_signal_is_zero():
    cfg = PipelineConfig(32, 50)
    ref, model = case5_predictor(cfg)
    sig = prediction_signal(model, bucket(ref.trace, cfg))
    assert sig.dtype == np.uint8 and sig.size == len(ref.trace) - 31
    assert not sig.any()


def test_case5_bursts_track_malicious_events():
    cfg = PipelineConfig(32, 50)
    ref, model = case5_predictor(cfg, mean=1000, sd=300)
    device = DeviceModel(*case_templates(Case.CASE5_HD), 0.99, 0.01, 1000, 300)
    bursts = injected = 0
    for s in range(20):
        exp = run_experiment(device, derive_seed(5, s), universe=ref.trace.universe)
        sig = prediction_signal(model, bucket(exp.trace, cfg))
        assert set(np.unique(sig)) <= {0, 1}
        ones = np.flatnonzero(sig)
        # a mispredicted row must see a malicious call in its window
        windows_hit = np.zeros(sig.size, dtype=bool)
        for off in exp.malicious_offsets:
            windows_hit[max(0, off - 31):off + 4] = True
        assert windows_hit[ones].all()
        # ones closer than one bucket belong to the same burst
        bursts += 0 if ones.size == 0 else 1 + int(np.count_nonzero(np.diff(ones) >= cfg.bucket_size))
        injected += exp.n_malicious
    assert abs(bursts - injected) <= 0.3 * injected


def test_convolve_sum_examples():
    assert convolve_sum([0, 1, 0, 1], 2).tolist() == [1, 1, 1]
    assert convolve_sum([0] * 10, 3).tolist() == [0] * 8
    assert convolve_sum([1] * 17, 5).tolist() == [5] * 13
    with pytest.raises(InsufficientDataError):
        convolve_sum([1, 1], 3)


def test_max_pool_examples():
    assert max_pool([1, 5, 2, 0, 3, 3], 2).tolist() == [5, 2, 3]
    assert max_pool([4, 1, 7], 2).tolist() == [4, 7]
    assert max_pool([6] * 9, 4).tolist() == [6] * 3
    with pytest.raises(ValueError):
        max_pool([], 2)


def test_conv_pool_match_oracles_random():
    r = np.random.default_rng(2024)
    for _ in range(200):
        n = int(r.integers(1, 2001))
        w = int(r.integers(1, min(n, 120) + 1))
        x = r.integers(0, 50, n).tolist()
        assert convolve_sum(x, w).tolist() == oracles.conv(x, w)
        assert max_pool(x, w).tolist() == oracles.pool(x, w)


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=300), st.integers(1, 50))
def test_conv_pool_hypothesis(xs, w):
    assert max_pool(xs, w).tolist() == oracles.pool(xs, w)
    if len(xs) >= w:
        assert convolve_sum(xs, w).tolist() == oracles.conv(xs, w)


def test_reduce_examples():
    cfg = PipelineConfig(2, 100)
    assert reduce_signal(np.zeros(12345, dtype=np.uint8), cfg) == 0
    assert reduce_signal([1, 0, 1, 1], cfg) == 3
    assert reduce_signal([], cfg) == 0
    assert oracles.cascade([1] * 450, 100) == ALL_ONES_450_W100
    assert reduce_signal(np.ones(450, dtype=np.uint8), cfg) == ALL_ONES_450_W100


@settings(max_examples=100)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=2000), st.integers(2, 60))
def test_reduce_matches_oracle(bits, w):
    assert reduce_signal(bits, PipelineConfig(2, w)) == oracles.cascade(bits, w)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=1500), st.integers(2, 40), st.data())
def test_reduce_monotone_under_flip(bits, w, data):
    zeros = [i for i, b in enumerate(bits) if b == 0]
    if not zeros:
        return
    i = data.draw(st.sampled_from(zeros))
    flipped = list(bits)
    flipped[i] = 1
    cfg = PipelineConfig(2, w)
    assert reduce_signal(flipped, cfg) >= reduce_signal(bits, cfg)


def test_features_basic():
    u = CallUniverse(["malloc", "free"])
    t = CallTrace.from_names(["malloc", "malloc", "free", "free"], u, Label.AUTHENTIC)
    cfg = PipelineConfig(2, 2)
    fv = extract_features(t, train_predictor(t, cfg), cfg)
    assert fv.totals.tolist() == [2, 2]
    assert fv.frequencies.tolist() == [0.5, 0.5]
    assert fv.label is Label.AUTHENTIC
    assert len(fv) == 5 and fv.as_array().shape == (5,)
    assert fv.as_array(ablate_activity=True)[-1] == 0


def test_features_short_trace():
    u = CallUniverse(["malloc", "free"])
    t = CallTrace.from_names(["malloc"], u)
    cfg = PipelineConfig(4, 2)
    model = ConstantPredictor(0)
    with pytest.raises(InsufficientDataError):
        extract_features(t, model, cfg)
    fv = extract_features(t, model, cfg, strict=False)
    assert fv.activity_value == 0 and fv.frequencies.tolist() == [1.0, 0.0]
    empty = extract_features(CallTrace.from_names([], u), model, cfg, strict=False)
    assert empty.frequencies.tolist() == [0.0, 0.0]


def test_authentic_activity_is_zero():
    cfg = PipelineConfig(32, 50)
    ds = generate_case_dataset(Case.CASE5_HD, 1, 5, 1, mean=400, sd=100)
    _, model = case5_predictor(cfg)
    for e in ds.by_label(Label.AUTHENTIC):
        fv = extract_features(e.trace, model, cfg)
        assert fv.activity_value == 0
        assert abs(fv.frequencies.sum() - 1) < 1e-9


def test_case5_stochastic_dominance():
    cfg = PipelineConfig(32, 50)
    ds = generate_case_dataset(Case.CASE5_HD, 17, 30, 30, mean=1000, sd=300)
    ref = generate_reference_experiment(Case.CASE5_HD, 17, 1000, 300)
    model = train_predictor(ref.trace, cfg)
    act = {lab: [extract_features(e.trace, model, cfg, strict=False).activity_value for e in ds.by_label(lab)]
           for lab in (Label.AUTHENTIC, Label.COMPROMISED)}
    assert np.median(act[Label.COMPROMISED]) > max(act[Label.AUTHENTIC])


def test_feature_csv_roundtrip(tmp_path):
    u = CallUniverse(["malloc", "free"])
    cfg = PipelineConfig(2, 2)
    t1 = CallTrace.from_names(["malloc", "free", "free"], u, Label.COMPROMISED)
    t2 = CallTrace.from_names(["malloc", "malloc", "free"], u)
    model = train_predictor(t1, cfg)
    feats = [extract_features(t, model, cfg) for t in (t1, t2)]
    path = tmp_path / "f.csv"
    write_feature_csv(path, feats, u)
    header = path.read_text().splitlines()[0]
    assert header == "call_total_malloc,call_total_free,call_freq_malloc,call_freq_free,activity_value,label"
    u2, back = read_feature_csv(path)
    assert u2 == u
    for a, b in zip(feats, back):
        assert a.totals.tolist() == b.totals.tolist()
        assert a.frequencies.tolist() == b.frequencies.tolist()
        assert (a.activity_value, a.label) == (b.activity_value, b.label)
