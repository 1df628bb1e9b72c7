"""Audio ingestion and frame-level signal analysis.

F0 is estimated per frame from the normalized autocorrelation, pulses are
picked at waveform peaks one period apart, energy is a plain dB mean-square
track and the MFCC block follows the usual pre-emphasis / mel / DCT chain.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct, next_fast_len, rfft, irfft
from scipy.io import wavfile

ENERGY_FLOOR_DB = -120.0


class AudioError(ValueError):
    pass


class InsufficientPeriodicity(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise AudioError("sample_rate must be positive")
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1:
            raise AudioError("waveform must be mono")
        object.__setattr__(self, "samples", x)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def scaled(self, gain: float) -> "Waveform":
        return Waveform(self.samples * gain, self.sample_rate)


@dataclass(frozen=True)
class PitchTrack:
    frame_times: np.ndarray
    f0: np.ndarray
    floor: float
    ceiling: float
    strength: np.ndarray | None = None  # normalized autocorrelation at the chosen lag

    def __post_init__(self):
        if len(self.frame_times) != len(self.f0):
            raise ValueError("frame_times and f0 differ in length")
        v = self.f0[self.f0 != 0]
        if np.any((v < self.floor) | (v > self.ceiling)):
            raise ValueError(f"voiced F0 outside [{self.floor}, {self.ceiling}] Hz")

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0


@dataclass(frozen=True)
class PulseTrain:
    pulse_times: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.pulse_times, dtype=float)
        a = np.asarray(self.amplitudes, dtype=float)
        if t.size and np.any(np.diff(t) <= 0):
            raise ValueError("pulse_times must be strictly increasing")
        if a.size != max(t.size - 1, 0):
            raise ValueError("need one amplitude per period")
        object.__setattr__(self, "pulse_times", t)
        object.__setattr__(self, "amplitudes", a)

    @property
    def periods(self) -> np.ndarray:
        return np.diff(self.pulse_times)

    @property
    def n(self) -> int:
        return self.amplitudes.size

    @classmethod
    def from_periods(cls, periods, amplitudes=None, start: float = 0.0) -> "PulseTrain":
        periods = np.asarray(periods, dtype=float)
        if amplitudes is None:
            amplitudes = np.ones_like(periods)
        return cls(start + np.concatenate([[0.0], np.cumsum(periods)]), amplitudes)


@dataclass(frozen=True)
class EnergyTrack:
    frame_times: np.ndarray
    energy_db: np.ndarray


@dataclass
class PitchConfig:
    floor: float = 70.0
    ceiling: float = 600.0
    hop: float = 0.010
    voicing_threshold: float = 0.45
    silence_db: float = -50.0  # relative to the loudest frame, so gain cannot flip voicing
    octave_cost: float = 0.01


@dataclass
class MfccConfig:
    pre_emphasis: float = 0.97
    frame: float = 0.025
    hop: float = 0.010
    n_mels: int = 26
    n_mfcc: int = 12
    fmin: float = 0.0
    fmax: float | None = None


def read_wav(path) -> Waveform:
    """Read PCM16 or float32 WAV; stereo is averaged down to mono."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", wavfile.WavFileWarning)
            sr, data = wavfile.read(path)
    except wavfile.WavFileWarning as exc:
        raise AudioError(f"{path}: truncated or malformed WAV ({exc})") from None
    except ValueError as exc:
        raise AudioError(f"{path}: unsupported WAV ({exc})") from None
    except Exception as exc:  # struct.error etc. on cut-off headers
        raise AudioError(f"{path}: unreadable WAV ({exc})") from None
    if data.dtype == np.int16:
        x = data.astype(float) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(float)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype} (need PCM16 or float32)")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return Waveform(x, float(sr))


def write_wav(path, w: Waveform, pcm16: bool = True):
    x = np.clip(w.samples, -1.0, 32767 / 32768)
    if pcm16:
        wavfile.write(path, int(w.sample_rate), np.round(x * 32768).astype(np.int16))
    else:
        wavfile.write(path, int(w.sample_rate), x.astype(np.float32))


def frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n = 1 + (len(x) - frame_len) // hop
    if len(x) < frame_len or n < 1:
        raise AudioError(f"audio shorter than one analysis frame ({len(x)} < {frame_len} samples)")
    return np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop][:n]


def _lag_correlation(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """r[f, tau] = sum a*b / sqrt(sum a^2 sum b^2), a = frame[:W-tau], b = frame[tau:]."""
    W = frames.shape[1]
    nfft = next_fast_len(2 * W)
    spec = rfft(frames, nfft, axis=1)
    acf = irfft(spec * np.conj(spec), nfft, axis=1)[:, : max_lag + 1]
    sq = frames ** 2
    csum = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(sq, axis=1)], axis=1)
    total = csum[:, -1:]
    lags = np.arange(max_lag + 1)
    head = csum[:, W - lags]  # energy of frame[:W-tau]
    tail = total - csum[:, lags]  # energy of frame[tau:]
    denom = np.sqrt(head * tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, acf / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(r, -1.0, 1.0)


def _parabolic(y0: float, y1: float, y2: float) -> tuple[float, float]:
    denom = y0 - 2 * y1 + y2
    if denom >= 0:
        return 0.0, y1
    shift = 0.5 * (y0 - y2) / denom
    shift = float(np.clip(shift, -0.5, 0.5))
    return shift, y1 - 0.25 * (y0 - y2) * shift


def _frame_db(frames: np.ndarray) -> np.ndarray:
    ms = np.mean(frames ** 2, axis=1)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(ms)
    return np.maximum(db, ENERGY_FLOOR_DB)


def f0_contour(w: Waveform, floor: float = 70.0, ceiling: float = 600.0,
               cfg: PitchConfig | None = None) -> PitchTrack:
    """Per-frame F0 (0 = unvoiced) from the normalized autocorrelation.

    Frames are 3/floor seconds long. Among the local maxima of the lag
    correlation in [1/ceiling, 1/floor] the one with the best
    ``r - octave_cost * log2(floor * lag)`` wins; the frame is voiced when its
    correlation clears ``voicing_threshold`` and its level lies within
    ``silence_db`` of the loudest frame.
    """
    cfg = cfg or PitchConfig(floor=floor, ceiling=ceiling)
    floor, ceiling = cfg.floor, cfg.ceiling
    sr = w.sample_rate
    W = int(round(3.0 * sr / floor))
    hop = max(1, int(round(cfg.hop * sr)))
    frames = frame_signal(w.samples, W, hop)
    times = (np.arange(frames.shape[0]) * hop + W / 2.0) / sr

    lag_min = max(2, int(np.floor(sr / ceiling)))
    lag_max = min(W - 2, int(np.ceil(sr / floor)))
    r = _lag_correlation(frames, lag_max + 1)
    db = _frame_db(frames)
    peak_db = float(np.max(db))

    f0 = np.zeros(frames.shape[0])
    strength = np.zeros(frames.shape[0])
    for k in range(frames.shape[0]):
        if db[k] <= ENERGY_FLOOR_DB or db[k] - peak_db < cfg.silence_db:
            continue
        rk = r[k]
        seg = rk[lag_min : lag_max + 1]
        inner = np.arange(lag_min, lag_max + 1)
        is_peak = (seg >= rk[inner - 1]) & (seg > rk[inner + 1]) & (seg > 0)
        best = None
        for lag in inner[is_peak]:
            shift, val = _parabolic(rk[lag - 1], rk[lag], rk[lag + 1])
            tau = lag + shift
            score = val - cfg.octave_cost * np.log2(floor * tau / sr)
            if best is None or score > best[0]:
                best = (score, tau, min(val, 1.0))
        if best is None:
            continue
        _, tau, val = best
        strength[k] = val
        hz = sr / tau
        if val >= cfg.voicing_threshold and floor <= hz <= ceiling:
            f0[k] = hz
    return PitchTrack(times, f0, floor, ceiling, strength)


def _voiced_regions(p: PitchTrack, hop: float, duration: float) -> list[tuple[float, float, np.ndarray, np.ndarray]]:
    regions = []
    voiced = p.f0 > 0
    k, n = 0, len(voiced)
    while k < n:
        if not voiced[k]:
            k += 1
            continue
        j = k
        while j + 1 < n and voiced[j + 1]:
            j += 1
        start = 0.0 if k == 0 else p.frame_times[k] - hop / 2
        end = duration if j == n - 1 else p.frame_times[j] + hop / 2
        regions.append((start, end, p.frame_times[k : j + 1], p.f0[k : j + 1]))
        k = j + 1
    return regions


def pulse_train(w: Waveform, p: PitchTrack) -> PulseTrain:
    """Glottal pulses: one waveform peak per local period inside voiced stretches.

    Consecutive stretches are concatenated, so the gap across an unvoiced
    stretch shows up as one long period (a voice break).
    """
    if np.count_nonzero(p.f0 > 0) < 2:
        raise InsufficientPeriodicity("fewer than 2 voiced frames")
    x, sr = w.samples, w.sample_rate
    hop = float(np.median(np.diff(p.frame_times))) if len(p.frame_times) > 1 else 0.01
    pulses: list[float] = []
    peak_idx: list[int] = []
    for start, end, t_f, f_f in _voiced_regions(p, hop, w.duration):
        lo, hi = int(np.floor(start * sr)), min(len(x), int(np.ceil(end * sr)))

        def period_at(t):
            return sr / np.interp(t / sr, t_f, f_f)

        first_T = period_at(lo)
        win = x[lo : min(hi, lo + int(np.ceil(first_T)))]
        if win.size < 3:
            continue
        i0 = lo + int(np.argmax(np.abs(win)))
        polarity = 1.0 if x[i0] >= 0 else -1.0
        pos = i0
        region_pulses = [pos]
        while True:
            T = period_at(pos)
            a = int(np.ceil(pos + 0.75 * T))
            b = int(np.floor(pos + 1.25 * T)) + 1
            if b > hi:
                break
            seg = polarity * x[a:b]
            k = int(np.argmax(seg))
            if seg[k] <= 0:
                break
            pos = a + k
            region_pulses.append(pos)
        for i in region_pulses:
            if 0 < i < len(x) - 1:
                shift, _ = _parabolic(polarity * x[i - 1], polarity * x[i], polarity * x[i + 1])
            else:
                shift = 0.0
            t = (i + shift) / sr
            if pulses and t <= pulses[-1]:
                continue
            pulses.append(t)
            peak_idx.append(i)
    if len(pulses) < 3:
        raise InsufficientPeriodicity(f"only {len(pulses)} glottal pulses found")
    amps = np.array([np.max(np.abs(x[peak_idx[k] : max(peak_idx[k + 1], peak_idx[k] + 1)]))
                     for k in range(len(peak_idx) - 1)])
    amps = np.maximum(amps, np.finfo(float).tiny)
    return PulseTrain(np.array(pulses), amps)


def frame_energy(w: Waveform, frame: float = 0.025, hop: float = 0.010) -> EnergyTrack:
    """10*log10 of the per-frame mean square, floored at -120 dB."""
    sr = w.sample_rate
    L = int(round(frame * sr))
    H = max(1, int(round(hop * sr)))
    frames = frame_signal(w.samples, L, H)
    times = (np.arange(frames.shape[0]) * H + L / 2.0) / sr
    return EnergyTrack(times, _frame_db(frames))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(sr: float, nfft: int, n_mels: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    fmax = sr / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(nfft // 2 + 1) * sr / nfft
    lower = (freqs[None, :] - edges[:-2, None]) / (edges[1:-1, None] - edges[:-2, None])
    upper = (edges[2:, None] - freqs[None, :]) / (edges[2:, None] - edges[1:-1, None])
    return np.maximum(0.0, np.minimum(lower, upper))


MFCC_NAMES = (
    [f"mfcc{k}_mean" for k in range(1, 13)] + ["log_energy_mean"]
    + [f"mfcc{k}_std" for k in range(1, 13)] + ["log_energy_std"]
)


def mfcc_frames(w: Waveform, cfg: MfccConfig | None = None) -> np.ndarray:
    """(n_frames, n_mfcc + 1) matrix: cepstra 1..n_mfcc then log frame energy."""
    cfg = cfg or MfccConfig()
    sr = w.sample_rate
    x = w.samples
    if x.size == 0:
        raise AudioError("empty audio")
    # x[-1] taken equal to x[0] so a constant signal gives identical frames
    y = x - cfg.pre_emphasis * np.concatenate([[x[0]], x[:-1]])
    L = int(round(cfg.frame * sr))
    H = max(1, int(round(cfg.hop * sr)))
    frames = frame_signal(y, L, H)
    if frames.shape[0] < 2:
        raise AudioError("need at least 2 frames for MFCC statistics")
    nfft = 1 << (L - 1).bit_length()
    win = np.hanning(L + 1)[:-1]  # periodic Hann
    power = np.abs(np.fft.rfft(frames * win, nfft, axis=1)) ** 2
    fb = mel_filterbank(sr, nfft, cfg.n_mels, cfg.fmin, cfg.fmax)
    logmel = np.log(np.maximum(power @ fb.T, 1e-10))
    cep = dct(logmel, type=2, norm="ortho", axis=1)[:, 1 : cfg.n_mfcc + 1]
    log_e = np.log(np.maximum(np.sum(frames ** 2, axis=1), 1e-10))
    return np.column_stack([cep, log_e])


def mfcc_stats(w: Waveform, cfg: MfccConfig | None = None) -> np.ndarray:
    """Utterance mean and std of 12 MFCCs + log energy: 26 values."""
    m = mfcc_frames(w, cfg)
    return np.concatenate([m.mean(axis=0), m.std(axis=0)])
