import numpy as np
import pytest

from acoustic_features import (HNR_MAX, HNR_MIN, N_ACOUSTIC, VOICING_THRESHOLD, EmptySignalError, FeatureManager,
                               FrameSequence, autocorrelation_pitch, extract_features, frame_energy, frame_signal,
                               load_feature_cache, pitch_windows, raw_features, save_feature_cache, smooth_f0,
                               zscore_columns)
from config import settings_manager
from corpus_io import AudioSignal, write_wav


def test_frame_count_follows_hop(sine_factory):
    signal = sine_factory(200.0, 16000, seconds=1.0)
    frames = frame_signal(signal)
    assert frames.shape == (1 + (16000 - 320) // 160, 320)


def test_signal_shorter_than_a_frame_is_zero_padded():
    frames = frame_signal(AudioSignal(np.ones(100), 16000))
    assert frames.shape == (1, 320)
    assert frames[0, :100].sum() == 100 and not frames[0, 100:].any()


def test_empty_signal_is_rejected():
    with pytest.raises(EmptySignalError):
        frame_signal(AudioSignal(np.zeros(0), 16000))


def test_low_sample_rate_is_rejected():
    with pytest.raises(ValueError):
        frame_signal(AudioSignal(np.zeros(1000), 4000))


@pytest.mark.parametrize("rate", [8000, 16000, 44100])
@pytest.mark.parametrize("freq", [100.0, 150.0, 220.0, 330.0, 440.0])
def test_pitch_of_a_sine_is_within_five_percent(sine_factory, freq, rate):
    windows = pitch_windows(sine_factory(freq, rate, seconds=0.3))
    f0, voicing, hnr = autocorrelation_pitch(windows[len(windows) // 2], rate)
    assert f0 == pytest.approx(freq, rel=0.05)
    assert voicing >= VOICING_THRESHOLD
    assert HNR_MIN <= hnr <= HNR_MAX


def test_two_hundred_hertz_sine_is_strongly_voiced(sine_factory):
    windows = pitch_windows(sine_factory(200.0, 16000, seconds=0.3))
    f0, voicing, hnr = autocorrelation_pitch(windows[10], 16000)
    assert f0 == pytest.approx(200.0, rel=0.05)
    assert voicing > 0.9 and hnr >= 20.0


@pytest.mark.parametrize("freq", [55.0, 70.0])
def test_low_pitch_is_found_with_a_long_enough_context(sine_factory, freq):
    raw = raw_features(sine_factory(freq, 16000, seconds=0.5))
    middle = raw[5:-5, 0]
    assert middle.min() == pytest.approx(freq, rel=0.05)
    assert middle.max() == pytest.approx(freq, rel=0.05)


@pytest.mark.parametrize("freq", [55.0, 70.0, 90.0])
def test_short_window_never_reports_an_edge_lag(sine_factory, freq):
    windows = frame_signal(sine_factory(freq, 16000, seconds=0.3))
    f0, voicing, hnr = autocorrelation_pitch(windows[10], 16000)
    assert f0 == 0.0 or f0 == pytest.approx(freq, rel=0.05)
    if f0 == 0.0:
        assert hnr == HNR_MIN


def test_pitch_windows_are_centred_on_frames(sine_factory):
    signal = sine_factory(200.0, 16000, seconds=0.5)
    frames = frame_signal(signal)
    contexts = pitch_windows(signal)
    assert contexts.shape == (len(frames), 640)
    np.testing.assert_array_equal(contexts[:, 160:480], frames)
    assert not contexts[0, :160].any()


def test_harmonic_tone_does_not_report_an_octave_error():
    rate = 16000
    t = np.arange(int(0.3 * rate)) / rate
    tone = np.sin(2 * np.pi * 150 * t) + 0.5 * np.sin(2 * np.pi * 300 * t) + 0.25 * np.sin(2 * np.pi * 450 * t)
    windows = pitch_windows(AudioSignal(0.3 * tone, rate))
    f0, _, _ = autocorrelation_pitch(windows[10], rate)
    assert f0 == pytest.approx(150.0, rel=0.05)


def test_silence_is_unvoiced():
    raw = raw_features(AudioSignal(np.zeros(8000), 16000))
    assert not raw[:, 0].any()
    assert not raw[:, 3].any()
    assert np.all(raw[:, 4] == HNR_MIN)


def test_all_zero_window_is_unvoiced():
    assert autocorrelation_pitch(np.zeros(320), 16000) == (0.0, 0.0, HNR_MIN)


def test_uniform_white_noise_is_unvoiced():
    rng = np.random.default_rng(7)
    raw = raw_features(AudioSignal(rng.uniform(-0.5, 0.5, 16000), 16000))
    assert not raw[:, 0].any()
    assert np.all(raw[:, 3] < VOICING_THRESHOLD)


@pytest.mark.parametrize("seed", range(5))
def test_voicing_and_hnr_stay_in_range_for_arbitrary_windows(seed):
    rng = np.random.default_rng(seed)
    rate = int(rng.choice([8000, 16000, 44100]))
    for _ in range(40):
        size = int(rng.integers(1, 2000))
        kind = rng.integers(3)
        if kind == 0:
            window = rng.uniform(-1, 1, size)
        elif kind == 1:
            window = np.sin(2 * np.pi * rng.uniform(20, 2000) * np.arange(size) / rate) + 0.1 * rng.standard_normal(size)
        else:
            window = np.repeat(rng.uniform(-1, 1, max(1, size // 7)), 7)[:size]
        f0, voicing, hnr = autocorrelation_pitch(window, rate)
        assert 0.0 <= voicing <= 1.0
        assert HNR_MIN <= hnr <= HNR_MAX
        assert np.isfinite(f0) and (f0 == 0.0 or 50.0 <= f0 <= 500.0 + 1e-9)
        assert (f0 == 0.0) == (voicing < VOICING_THRESHOLD)


def test_window_too_short_for_any_lag_is_unvoiced():
    assert autocorrelation_pitch(np.ones(10), 16000) == (0.0, 0.0, HNR_MIN)


def test_frame_energy_of_a_sine():
    rate = 16000
    window = 0.4 * np.sin(2 * np.pi * 200 * np.arange(320) / rate)
    rms, loudness = frame_energy(window)
    assert rms == pytest.approx(0.4 / np.sqrt(2), rel=1e-3)
    assert loudness == pytest.approx(rms ** 0.3)


def test_smooth_f0_stays_inside_voiced_runs():
    assert smooth_f0([0, 100, 200, 100, 0]) == [0.0, 100.0, 100.0, 100.0, 0.0]
    assert smooth_f0([100, 100, 300, 100, 100, 0, 150]) == [100.0, 100.0, 100.0, 100.0, 100.0, 0.0, 150.0]


def test_zscore_zero_variance_column_becomes_zeros():
    matrix = np.array([[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]])
    scored = zscore_columns(matrix)
    np.testing.assert_allclose(scored[:, 0], [-np.sqrt(1.5), 0.0, np.sqrt(1.5)])
    assert not scored[:, 1].any()


def test_extract_features_normalizes_per_utterance(sine_factory):
    sequence = extract_features(sine_factory(200.0, 16000, seconds=0.5))
    assert sequence.values.shape == (len(sequence), N_ACOUSTIC)
    np.testing.assert_allclose(sequence.values.mean(axis=0), 0.0, atol=1e-9)
    assert sequence.frames[5].f0 == pytest.approx(200.0, rel=0.05)


def test_feature_cache_keeps_float32_values(tmp_path):
    matrix = np.arange(15, dtype=np.float64).reshape(5, 3) / 7.0
    path = tmp_path / "features.pcf"
    save_feature_cache(path, {"a": FrameSequence(values=matrix), "b": FrameSequence(values=np.zeros((0, 3)))})
    loaded = load_feature_cache(path)
    assert sorted(loaded) == ["a", "b"]
    np.testing.assert_array_equal(loaded["a"].values, matrix.astype(np.float32))
    assert loaded["b"].values.shape == (0, 3)


def test_feature_cache_with_wrong_magic_is_rejected(tmp_path):
    path = tmp_path / "bad.pcf"
    path.write_bytes(b"XXXX\x00\x00\x00\x00")
    with pytest.raises(ValueError):
        load_feature_cache(path)


def test_feature_manager_reuses_its_cache(tmp_path, document_factory, sine_factory):
    wav = tmp_path / "doc.wav"
    write_wav(wav, sine_factory(200.0, 16000, seconds=0.5))
    doc = document_factory([("a", "NN"), ("b", "NN")])
    doc.audio_path = str(wav)
    cache = tmp_path / "cache.pcf"

    manager = FeatureManager(cache_path=str(cache), workers=1)
    first = manager.extract_corpus([doc])["doc"]
    assert manager.save_cache()

    doc.audio_path = None
    reloaded = FeatureManager(cache_path=str(cache), workers=1).get_features(doc)
    np.testing.assert_allclose(reloaded.values, first.values, atol=1e-5)


def test_feature_manager_without_audio_returns_none(document_factory):
    manager = FeatureManager(cache_path="", workers=2)
    assert manager.extract_corpus([document_factory([("a", "NN")])]) == {"doc": None}


def test_feature_manager_takes_its_cache_from_settings(tmp_path, monkeypatch, document_factory, sine_factory):
    cache = tmp_path / "from_env.pcf"
    monkeypatch.setenv("PROSCOREF_FEATURE_CACHE", str(cache))
    settings_manager.reload()
    wav = tmp_path / "doc.wav"
    write_wav(wav, sine_factory(150.0, 16000, seconds=0.4))
    doc = document_factory([("a", "NN")])
    doc.audio_path = str(wav)

    manager = FeatureManager(workers=1)
    assert manager.cache_path == str(cache)
    manager.extract_corpus([doc])
    assert manager.save_cache()
    assert list(load_feature_cache(cache)) == ["doc"]


def test_extract_features_is_deterministic():
    rng = np.random.default_rng(6)
    t = np.arange(8000) / 16000
    signal = AudioSignal(0.4 * np.sin(2 * np.pi * 180.0 * t) + 0.01 * rng.standard_normal(8000), 16000)
    first, second = extract_features(signal), extract_features(signal)
    np.testing.assert_array_equal(first.values, second.values)
    np.testing.assert_array_equal(first.raw, second.raw)
