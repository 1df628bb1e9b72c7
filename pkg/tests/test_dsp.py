import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from crossdys.dsp import (
    ENERGY_FLOOR_DB,
    MFCC_NAMES,
    AudioError,
    InsufficientPeriodicity,
    PitchTrack,
    PulseTrain,
    Waveform,
    f0_contour,
    frame_energy,
    mfcc_frames,
    mfcc_stats,
    pulse_train,
    read_wav,
    write_wav,
)

SR = 16000


def sine(f, dur=1.0, amp=1.0, sr=SR, phase=0.0):
    t = np.arange(int(round(dur * sr))) / sr
    return amp * np.sin(2 * np.pi * f * t + phase)


# -- WAV -----------------------------------------------------------------------

def test_pcm16_full_scale(tmp_path):
    path = tmp_path / "a.wav"
    wavfile.write(path, SR, np.full(100, 32767, dtype=np.int16))
    w = read_wav(path)
    assert w.sample_rate == SR
    assert np.allclose(w.samples, 1.0, atol=1e-4)


def test_stereo_average(tmp_path):
    x = (sine(220, 0.1) * 20000).astype(np.int16)
    path = tmp_path / "s.wav"
    wavfile.write(path, SR, np.column_stack([x, -x]))
    assert np.all(read_wav(path).samples == 0.0)


def test_float32_round_trip(tmp_path):
    w = Waveform(sine(300, 0.1, 0.5), SR)
    path = tmp_path / "f.wav"
    write_wav(path, w, pcm16=False)
    assert np.allclose(read_wav(path).samples, w.samples, atol=1e-7)


def _mulaw_file(path):
    data = bytes(range(64))
    fmt = struct.pack("<HHIIHH", 7, 1, 8000, 8000, 1, 8)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def test_mulaw_rejected(tmp_path):
    path = tmp_path / "u.wav"
    _mulaw_file(path)
    with pytest.raises(AudioError):
        read_wav(path)


def test_truncated_rejected(tmp_path):
    path = tmp_path / "t.wav"
    write_wav(path, Waveform(sine(200, 0.1), SR))
    path.write_bytes(path.read_bytes()[:30])
    with pytest.raises(AudioError):
        read_wav(path)


def test_pcm24_rejected(tmp_path):
    path = tmp_path / "i32.wav"
    wavfile.write(path, SR, np.zeros(10, dtype=np.int32))
    with pytest.raises(AudioError, match="unsupported"):
        read_wav(path)


# -- pitch ---------------------------------------------------------------------

def test_sine_100hz_tracks():
    p = f0_contour(Waveform(sine(100), SR))
    voiced = p.f0[p.f0 > 0]
    assert voiced.size == p.f0.size
    assert np.all(np.abs(voiced - 100) <= 2)


def test_lag_peak_matches_brute_force():
    # the winning lag equals the brute-force argmax of the normalized correlation
    x = sine(137.0, 0.2)
    W = int(round(3 * SR / 70))
    frame = x[:W]
    lags = np.arange(int(SR / 600), int(np.ceil(SR / 70)) + 1)
    r = [np.dot(frame[: W - L], frame[L:]) / np.sqrt(np.dot(frame[: W - L], frame[: W - L]) * np.dot(frame[L:], frame[L:]))
         for L in lags]
    # first strong peak: the fundamental, not a multiple
    best = lags[int(np.argmax(np.array(r) - 0.01 * np.log2(70 * lags / SR)))]
    p = f0_contour(Waveform(x, SR))
    assert abs(SR / p.f0[0] - best) <= 1.0


@pytest.mark.parametrize("seed", range(5))
def test_white_noise_unvoiced(seed):
    x = np.random.default_rng(seed).standard_normal(SR) * 0.3
    p = f0_contour(Waveform(x, SR))
    assert np.mean(p.f0 == 0) >= 0.9


def test_silence_unvoiced():
    p = f0_contour(Waveform(np.zeros(SR // 2), SR))
    assert np.all(p.f0 == 0)


def test_too_short():
    with pytest.raises(AudioError):
        f0_contour(Waveform(np.zeros(100), SR))


def test_pitch_range_invariant():
    x = np.concatenate([sine(90, 0.4), np.zeros(SR // 5), sine(450, 0.4, 0.5)])
    p = f0_contour(Waveform(x, SR))
    v = p.f0[p.f0 > 0]
    assert np.all((v >= p.floor) & (v <= p.ceiling))


def test_shift_invariance():
    x = np.concatenate([np.zeros(SR // 5), sine(150, 0.3), np.zeros(SR // 5), sine(210, 0.3), np.zeros(SR // 5)])
    hop = SR // 100
    base = f0_contour(Waveform(x, SR)).f0 > 0
    for k in (1, 3, 7):
        shifted = f0_contour(Waveform(np.concatenate([np.zeros(k * hop), x]), SR)).f0 > 0
        n = min(base.size, shifted.size - k)
        assert np.array_equal(shifted[k : k + n][2:-2], base[:n][2:-2])


# -- pulses --------------------------------------------------------------------

def test_impulse_train_periods():
    x = np.zeros(SR)
    x[40::160] = 1.0
    p = f0_contour(Waveform(x, SR))
    pt = pulse_train(Waveform(x, SR), p)
    assert np.all(np.abs(pt.periods - 0.010) <= 1 / SR)


def test_sine_pulses_and_amplitudes():
    w = Waveform(sine(100), SR)
    pt = pulse_train(w, f0_contour(w))
    assert abs(pt.n - 99) <= 2
    assert np.allclose(pt.amplitudes, 1.0, atol=1e-3)


def test_unvoiced_track_rejected():
    w = Waveform(np.zeros(SR // 2), SR)
    with pytest.raises(InsufficientPeriodicity):
        pulse_train(w, f0_contour(w))


@settings(max_examples=25, deadline=None)
@given(st.floats(80.0, 400.0), st.floats(0.0, 2 * np.pi))
def test_stationary_period_accuracy(f0, phase):
    w = Waveform(sine(f0, 0.5, 0.8, phase=phase), SR)
    pt = pulse_train(w, f0_contour(w))
    assert np.all(np.abs(pt.periods - 1 / f0) < 1.5 / SR)


def test_pulse_train_invariants():
    with pytest.raises(ValueError):
        PulseTrain(np.array([0.0, 0.01, 0.005]), np.ones(2))
    pt = PulseTrain.from_periods([0.01, 0.011, 0.012])
    assert pt.n == 3
    assert np.allclose(pt.periods, [0.01, 0.011, 0.012])


def test_pitch_track_invariant():
    with pytest.raises(ValueError):
        PitchTrack(np.array([0.0, 0.01]), np.array([50.0, 0.0]), 70.0, 600.0)


# -- energy --------------------------------------------------------------------

def test_square_wave_zero_db():
    x = np.sign(sine(200, 0.5, phase=0.1))
    assert np.allclose(frame_energy(Waveform(x, SR)).energy_db, 0.0, atol=1e-9)


def test_zero_frames_floor():
    e = frame_energy(Waveform(np.zeros(SR // 10), SR))
    assert np.all(e.energy_db == ENERGY_FLOOR_DB)


def test_half_scale_sine():
    # 200 Hz fits exactly five periods in a 25 ms frame
    e = frame_energy(Waveform(sine(200, 0.5, 0.5), SR))
    assert np.allclose(e.energy_db, 10 * np.log10(0.125), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 10.0), st.integers(0, 2**31 - 1))
def test_energy_amplitude_covariance(g, seed):
    x = np.random.default_rng(seed).uniform(-0.5, 0.5, SR // 10)
    a = frame_energy(Waveform(x, SR)).energy_db
    b = frame_energy(Waveform(x, SR).scaled(g)).energy_db
    assert np.allclose(b - a, 20 * np.log10(g), atol=1e-9)


# -- MFCC ----------------------------------------------------------------------

def test_mfcc_dimension():
    assert mfcc_stats(Waveform(sine(440, 0.3), SR)).shape == (26,)
    assert len(MFCC_NAMES) == 26


def test_constant_signal_zero_std():
    s = mfcc_stats(Waveform(np.full(SR // 5, 0.3), SR))
    assert np.allclose(s[13:], 0.0, atol=1e-12)


def test_too_short_for_mfcc():
    with pytest.raises(AudioError):
        mfcc_stats(Waveform(np.zeros(410), SR))


def oracle_mfcc(x, sr):
    """Straight-line recomputation: explicit loops and matrices, no FFT or DCT routines."""
    x = list(x)
    y = [x[0] - 0.97 * x[0]] + [x[n] - 0.97 * x[n - 1] for n in range(1, len(x))]
    L, H, nfft = 400, 160, 512
    n_frames = 1 + (len(y) - L) // H
    win = [0.5 - 0.5 * np.cos(2 * np.pi * n / L) for n in range(L)]
    mel = lambda f: 2595 * np.log10(1 + f / 700)
    imel = lambda m: 700 * (10 ** (m / 2595) - 1)
    lo, hi = mel(0.0), mel(sr / 2)
    edges = [imel(lo + (hi - lo) * j / 27) for j in range(28)]
    n = np.arange(nfft)
    out = []
    for f in range(n_frames):
        frame = y[f * H : f * H + L]
        seg = np.zeros(nfft)
        seg[:L] = [frame[i] * win[i] for i in range(L)]
        power = []
        for k in range(nfft // 2 + 1):
            re = np.sum(seg * np.cos(2 * np.pi * k * n / nfft))
            im = -np.sum(seg * np.sin(2 * np.pi * k * n / nfft))
            power.append(re * re + im * im)
        logmel = []
        for m in range(26):
            a, c, b = edges[m], edges[m + 1], edges[m + 2]
            acc = 0.0
            for k, pw in enumerate(power):
                fk = k * sr / nfft
                wgt = max(0.0, min((fk - a) / (c - a), (b - fk) / (b - c)))
                acc += wgt * pw
            logmel.append(np.log(max(acc, 1e-10)))
        cep = []
        for q in range(1, 13):
            s = sum(logmel[m] * np.cos(np.pi * q * (2 * m + 1) / 52) for m in range(26))
            cep.append(s * np.sqrt(2 / 26))
        energy = sum(v * v for v in frame)
        out.append(cep + [np.log(max(energy, 1e-10))])
    return np.array(out)


def test_mfcc_oracle_1khz_sine():
    x = sine(1000, 0.12, 0.6)
    got = mfcc_frames(Waveform(x, SR))
    want = oracle_mfcc(x, SR)
    assert got.shape == want.shape
    assert np.max(np.abs(got - want)) < 1e-6
