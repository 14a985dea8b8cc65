import numpy as np
import pytest
from scipy.io import wavfile

from audiocap.audiofeat import (
    LOG_FLOOR,
    FeatureError,
    MelConfig,
    MelSpectrogram,
    apply_masks,
    dft,
    filter_centres,
    hann,
    log_mel,
    mel_filterbank,
    read_wav,
    spec_augment,
)

SR = 44100


def direct_dft(x):
    n = len(x)
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    return (x[None, :] * np.exp(-2j * np.pi * k * t / n)).sum(axis=1)


@pytest.mark.parametrize("n", [1, 2, 3, 8, 17, 64, 100, 255, 256])
def test_dft_matches_direct_transform(n):
    rng = np.random.default_rng(n)
    x = rng.uniform(-1, 1, n)
    assert np.max(np.abs(dft(x) - direct_dft(x))) < 1e-9


def test_hann_is_periodic():
    w = hann(8)
    assert w[0] == 0.0
    assert w[4] == pytest.approx(1.0)
    np.testing.assert_allclose(w[1:], w[1:][::-1], atol=1e-15)


@pytest.mark.parametrize("n, frames", [(1024, 1), (1024 + 511, 1), (1024 + 512 * 9, 10), (1024 + 512 * 9 + 100, 10)])
def test_frame_count(n, frames):
    m = log_mel(np.random.default_rng(0).normal(size=n), SR)
    assert m.shape == (frames, 64)
    assert np.all(np.isfinite(m.values))


def test_short_audio_faults():
    with pytest.raises(FeatureError):
        log_mel(np.zeros(1023), SR)
    with pytest.raises(FeatureError):
        log_mel(np.zeros(2048), 0)


def test_silence_hits_floor():
    m = log_mel(np.zeros(2048), SR)
    assert np.all(m.values == np.log(LOG_FLOOR))


def test_filterbank_shape_and_peaks():
    fb = mel_filterbank(SR)
    assert fb.shape == (64, 513)
    assert fb.min() >= 0.0 and fb.max() <= 1.0
    centres = filter_centres(SR)
    bins = np.arange(513) * SR / 1024
    for k in range(20, 64):
        # the peak bin of each filter is a bin adjacent to its centre frequency
        assert abs(bins[np.argmax(fb[k])] - centres[k]) <= SR / 1024


@pytest.mark.parametrize("k", [20, 31, 45, 58, 62])
def test_sine_at_centre_frequency_peaks_in_that_filter(k):
    f = filter_centres(SR)[k]
    t = np.arange(1024 + 512 * 4) / SR
    m = log_mel(np.sin(2 * np.pi * f * t), SR)
    assert np.all(np.argmax(m.values, axis=1) == k)


def test_gain_shifts_log_energy():
    rng = np.random.default_rng(1)
    x = rng.normal(size=4096)
    c = 3.0
    a, b = log_mel(x, SR).values, log_mel(c * x, SR).values
    unfloored = a > np.log(LOG_FLOOR)
    np.testing.assert_allclose(b[unfloored] - a[unfloored], 2 * np.log(c), atol=1e-9)


def test_config_bins():
    m = log_mel(np.ones(4096), 16000, MelConfig(n_mels=40))
    assert m.shape[1] == 40


def test_mel_file_round_trip(tmp_path):
    m = log_mel(np.random.default_rng(2).normal(size=3000), SR)
    m.save(tmp_path / "a.mel")
    back = MelSpectrogram.load(tmp_path / "a.mel")
    assert back.values.tobytes() == m.values.tobytes()
    assert (back.sample_rate, back.hop) == (SR, 512)
    back.save(tmp_path / "b.mel")
    assert (tmp_path / "a.mel").read_bytes() == (tmp_path / "b.mel").read_bytes()
    (tmp_path / "c.mel").write_bytes((tmp_path / "a.mel").read_bytes()[:-8])
    with pytest.raises(FeatureError):
        MelSpectrogram.load(tmp_path / "c.mel")


def test_read_wav_formats(tmp_path):
    x = np.sin(np.linspace(0, 20, 2048)) * 0.5
    wavfile.write(tmp_path / "i16.wav", SR, (x * 32767).astype(np.int16))
    wavfile.write(tmp_path / "f32.wav", SR, x.astype(np.float32))
    a, ra = read_wav(tmp_path / "i16.wav")
    b, rb = read_wav(tmp_path / "f32.wav")
    assert ra == rb == SR
    np.testing.assert_allclose(a, x, atol=1e-4)
    np.testing.assert_allclose(b, x, atol=1e-7)
    wavfile.write(tmp_path / "st.wav", SR, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(FeatureError):
        read_wav(tmp_path / "st.wav")


# --------------------------------------------------------------------------
# SpecAugment
# --------------------------------------------------------------------------


@pytest.fixture
def mel():
    return MelSpectrogram(np.random.default_rng(5).normal(size=(50, 64)), SR, 512)


def test_no_masks_is_identity(mel):
    out = spec_augment(mel, 0, f_masks=0, t_masks=0)
    assert out.values.tobytes() == mel.values.tobytes()


def test_full_frequency_band(mel):
    k = 17
    out = apply_masks(mel.values, [(k, 1)], [], fill=mel.values.mean())
    assert np.all(out[:, k] == out[0, k])
    others = np.arange(64) != k
    assert out[:, others].tobytes() == mel.values[:, others].tobytes()


def test_deterministic_per_seed(mel):
    a = spec_augment(mel, 123).values
    b = spec_augment(mel, 123).values
    assert a.tobytes() == b.tobytes()
    assert a.shape == mel.shape


@pytest.mark.parametrize("seed", range(20))
def test_mask_locality(mel, seed):
    out = spec_augment(mel, seed, F=10, T_max=8).values
    changed = out != mel.values
    fill = mel.values.mean()
    assert np.all(out[changed] == fill)
    # changed cells form whole rows or whole columns
    rows = changed.all(axis=1)
    cols = changed.all(axis=0)
    assert np.array_equal(changed, rows[:, None] | cols[None, :])
    assert cols.sum() <= 2 * 10 and rows.sum() <= 2 * 8


def test_mask_bounds(mel):
    with pytest.raises(FeatureError):
        spec_augment(mel, 0, F=64)
    with pytest.raises(FeatureError):
        spec_augment(mel, 0, T_max=50)
    with pytest.raises(FeatureError):
        apply_masks(mel.values, [(60, 5)], [], 0.0)
