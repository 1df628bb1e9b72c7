"""The 39 clinical features (voice quality, pronunciation, prosody) per utterance."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import dsp
from .dsp import EnergyTrack, InsufficientPeriodicity, PitchTrack, PulseTrain, Waveform
from .textgrid import (
    CORNER_VOWELS,
    PhoneClass,
    PhoneClassMap,
    RunClass,
    SegmentRun,
    Tier,
    classify_runs,
)

log = logging.getLogger(__name__)

VOICE_QUALITY = ["jitter", "shimmer", "ppq", "apq", "hnr", "n_voice_breaks", "deg_voice_breaks"]
PHONEME_CORRECTNESS = ["pcc", "pcv", "pct"]
VOWEL_SPACE = ["vsa_tri", "vsa_quad", "fcr", "vai", "f2_ratio"]
SPEECH_RATE = ["speaking_rate", "articulation_rate", "n_pauses", "pause_duration", "phone_ratio"]
PITCH = ["f0_mean", "f0_std", "f0_min", "f0_max", "f0_range"]
LOUDNESS = ["energy_mean", "energy_std", "energy_min", "energy_max", "energy_range"]
RHYTHM = ["pct_v", "delta_v", "delta_c", "varco_v", "varco_c", "rpvi_v", "rpvi_c", "npvi_v", "npvi_c"]

FEATURE_GROUPS = {
    "voice_quality": VOICE_QUALITY,
    "phoneme_correctness": PHONEME_CORRECTNESS,
    "vowel_space": VOWEL_SPACE,
    "speech_rate": SPEECH_RATE,
    "pitch": PITCH,
    "loudness": LOUDNESS,
    "rhythm": RHYTHM,
}
FEATURE_NAMES = [name for group in FEATURE_GROUPS.values() for name in group]
assert len(FEATURE_NAMES) == 39

# 1.25 / 70 Hz rounded to 10 us; compared strictly
VOICE_BREAK_THRESHOLD = 0.01786
_TIME_EPS = 1e-12


class FeatureError(ValueError):
    """A feature is undefined for this input; ``reason`` is the missing-value code."""

    def __init__(self, message: str, reason: str = "undefined"):
        self.reason = reason
        super().__init__(message)


# -- voice quality ------------------------------------------------------------

def _mean_abs_successive(x: np.ndarray) -> float:
    return float(np.mean(np.abs(np.diff(x))))


def _five_point_quotient(x: np.ndarray) -> float:
    # sum over i = 3..N-2 (1-based) of |x_i - mean(x_{i-2..i+2})| / (N - 4)
    n = x.size
    local = np.convolve(x, np.ones(5) / 5.0, mode="valid")
    return float(np.sum(np.abs(x[2 : n - 2] - local)) / (n - 4))


def _need(p: PulseTrain, k: int):
    if p.n < k:
        raise FeatureError(f"need at least {k} periods, got {p.n}", "insufficient_pulses")


def jitter_rel(p: PulseTrain) -> float:
    _need(p, 2)
    T = p.periods
    return _mean_abs_successive(T) / float(np.mean(T))


def shimmer_rel(p: PulseTrain) -> float:
    _need(p, 2)
    A = p.amplitudes
    return _mean_abs_successive(A) / float(np.mean(A))


def ppq_rel(p: PulseTrain) -> float:
    _need(p, 5)
    T = p.periods
    return _five_point_quotient(T) / float(np.mean(T))


def apq_rel(p: PulseTrain) -> float:
    _need(p, 5)
    A = p.amplitudes
    return _five_point_quotient(A) / float(np.mean(A))


HNR_MIN_DB, HNR_MAX_DB = -20.0, 40.0


def hnr_from_ratio(ratio: float) -> float:
    return 10.0 * math.log10(ratio)


def hnr_db(w: Waveform, p: PitchTrack) -> float:
    """Mean over voiced frames of 10*log10(r / (1 - r)), r the correlation at the F0 lag."""
    voiced = p.f0 > 0
    if not np.any(voiced):
        raise FeatureError("no voiced frames", "no_voiced_frames")
    if p.strength is not None:
        r = p.strength[voiced]
    else:
        r = _strength_at_f0(w, p)[voiced]
    r = np.clip(r, 1e-12, 1.0 - 1e-12)
    frame_hnr = 10.0 * np.log10(r / (1.0 - r))
    return float(np.clip(np.mean(frame_hnr), HNR_MIN_DB, HNR_MAX_DB))


def _strength_at_f0(w: Waveform, p: PitchTrack) -> np.ndarray:
    sr = w.sample_rate
    W = int(round(3.0 * sr / p.floor))
    hop = int(round((p.frame_times[1] - p.frame_times[0]) * sr)) if len(p.frame_times) > 1 else 1
    frames = dsp.frame_signal(w.samples, W, hop)[: len(p.f0)]
    out = np.zeros(len(p.f0))
    for k in np.flatnonzero(p.f0 > 0):
        tau = sr / p.f0[k]
        lag = int(round(tau))
        a, b = frames[k, : W - lag], frames[k, lag:]
        d = math.sqrt(float(a @ a) * float(b @ b))
        out[k] = float(a @ b) / d if d > 0 else 0.0
    return out


def voice_breaks(p: PulseTrain, total_dur: float, threshold: float = VOICE_BREAK_THRESHOLD) -> tuple[int, float]:
    """Count of inter-pulse gaps strictly longer than ``threshold`` and their share of ``total_dur``."""
    if total_dur <= 0:
        raise FeatureError("total duration must be positive", "zero_duration")
    T = p.periods
    breaks = T[T > threshold + _TIME_EPS]
    return int(breaks.size), float(np.sum(breaks) / total_dur)


def _drop_breaks(p: PulseTrain, threshold: float) -> PulseTrain:
    keep = p.periods <= threshold + _TIME_EPS
    return PulseTrain.from_periods(p.periods[keep], p.amplitudes[keep])


# -- phoneme correctness ----------------------------------------------------------

def align_phones(canonical: Sequence[str], decoded: Sequence[str]) -> list[tuple[str | None, str | None]]:
    """Levenshtein alignment with unit costs.

    Among equal-cost paths the backtrace prefers match, then substitution,
    then deletion (canonical phone dropped), then insertion.
    """
    n, m = len(canonical), len(decoded)
    D = np.zeros((n + 1, m + 1), dtype=int)
    D[:, 0] = np.arange(n + 1)
    D[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = D[i - 1, j - 1] + (canonical[i - 1] != decoded[j - 1])
            D[i, j] = min(sub, D[i - 1, j] + 1, D[i, j - 1] + 1)
    pairs = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and canonical[i - 1] == decoded[j - 1] and D[i, j] == D[i - 1, j - 1]:
            pairs.append((canonical[i - 1], decoded[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and D[i, j] == D[i - 1, j - 1] + 1:
            pairs.append((canonical[i - 1], decoded[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and D[i, j] == D[i - 1, j] + 1:
            pairs.append((canonical[i - 1], None))
            i -= 1
        else:
            pairs.append((None, decoded[j - 1]))
            j -= 1
    return pairs[::-1]


def phoneme_correctness(canonical: Sequence[str], decoded: Sequence[str],
                        phone_map: PhoneClassMap) -> tuple[float | None, float | None, float]:
    """(PCC, PCV, PCT) in percent. PCC/PCV are None when the target has no consonants/vowels."""
    canonical = [phone_map.normalize(x) for x in canonical if phone_map.classify(x) != PhoneClass.SILENCE]
    decoded = [phone_map.normalize(x) for x in decoded]
    if not canonical:
        raise FeatureError("empty canonical phoneme sequence", "empty_canonical")
    total = {PhoneClass.CONSONANT: 0, PhoneClass.VOWEL: 0}
    correct = {PhoneClass.CONSONANT: 0, PhoneClass.VOWEL: 0}
    for c, d in align_phones(canonical, decoded):
        if c is None:
            continue
        cls = phone_map.classify(c)
        total[cls] += 1
        if c == d:
            correct[cls] += 1

    def pct(k, t):
        return 100.0 * k / t if t else None

    pcc = pct(correct[PhoneClass.CONSONANT], total[PhoneClass.CONSONANT])
    pcv = pct(correct[PhoneClass.VOWEL], total[PhoneClass.VOWEL])
    pct_all = pct(sum(correct.values()), sum(total.values()))
    return pcc, pcv, pct_all


# -- vowel space --------------------------------------------------------------------

FORMANT_KEYS = CORNER_VOWELS + ("front", "back")


@dataclass
class FormantConfig:
    window: float = 0.025
    pre_emphasis_hz: float = 50.0
    max_bandwidth: float = 400.0
    fmin: float = 100.0
    fmax: float = 4000.0
    order: int | None = None  # default 2 + sr/1000


@dataclass
class VowelFormants:
    """(F1, F2) per corner category plus the front/back F2-ratio vowels."""

    formants: dict[str, tuple[float, float]] = field(default_factory=dict)
    imputed: set[str] = field(default_factory=set)

    def get(self, key: str) -> tuple[float, float]:
        try:
            return self.formants[key]
        except KeyError:
            raise FeatureError(f"no formants for /{key}/", "missing_corner_vowel") from None


def burg_lpc(x: np.ndarray, order: int) -> np.ndarray:
    """Burg's method; returns [1, a1, ..., a_order] of the prediction-error filter."""
    x = np.asarray(x, dtype=float)
    a = np.array([1.0])
    f, b = x[1:].copy(), x[:-1].copy()
    for _ in range(order):
        den = f @ f + b @ b
        if den <= 0 or f.size == 0:
            break
        k = -2.0 * (f @ b) / den
        ext = np.concatenate([a, [0.0]])
        a = ext + k * ext[::-1]
        f, b = (f + k * b)[1:], (b + k * f)[:-1]
    if a.size < order + 1:
        a = np.concatenate([a, np.zeros(order + 1 - a.size)])
    return a


def lpc_formants(frame: np.ndarray, sr: float, cfg: FormantConfig) -> list[tuple[float, float]]:
    """(frequency, bandwidth) of each LPC resonance, sorted by frequency."""
    order = cfg.order or int(2 + round(sr / 1000.0))
    alpha = math.exp(-2.0 * math.pi * cfg.pre_emphasis_hz / sr)
    y = np.concatenate([[frame[0]], frame[1:] - alpha * frame[:-1]])
    y = y * np.hamming(y.size)
    a = burg_lpc(y, order)
    roots = np.roots(a)
    roots = roots[np.imag(roots) > 0]
    freqs = np.angle(roots) * sr / (2 * math.pi)
    bws = -np.log(np.abs(roots)) * sr / math.pi
    idx = np.argsort(freqs)
    return [(float(freqs[k]), float(bws[k])) for k in idx]


def measure_formants(w: Waveform, t: float, cfg: FormantConfig) -> tuple[float, float] | None:
    sr = w.sample_rate
    half = int(round(cfg.window * sr / 2))
    c = int(round(t * sr))
    if c - half < 0 or c + half > w.samples.size:
        return None
    frame = w.samples[c - half : c + half]
    if not np.any(frame):
        return None
    cands = [f for f, bw in lpc_formants(frame, sr, cfg) if bw < cfg.max_bandwidth and cfg.fmin < f < cfg.fmax]
    if len(cands) < 2:
        return None
    return cands[0], cands[1]


def vowel_formants(w: Waveform, tier: Tier, phone_map: PhoneClassMap,
                   cfg: FormantConfig | None = None) -> VowelFormants:
    """Mid-vowel F1/F2 averaged per corner category (and front/back vowel) over occurrences."""
    cfg = cfg or FormantConfig()
    front, back = (phone_map.normalize(x) for x in phone_map.front_back_pair)
    found: dict[str, list[tuple[float, float]]] = {}
    n_vowels = 0
    for iv in tier.intervals:
        if phone_map.classify(iv.label) != PhoneClass.VOWEL:
            continue
        n_vowels += 1
        label = phone_map.normalize(iv.label)
        keys = []
        corner = phone_map.corner_of(label)
        if corner:
            keys.append(corner)
        if label == front:
            keys.append("front")
        if label == back:
            keys.append("back")
        if not keys or iv.duration < cfg.window:
            continue
        fm = measure_formants(w, iv.midpoint, cfg)
        if fm is None:
            continue
        for key in keys:
            found.setdefault(key, []).append(fm)
    if n_vowels == 0:
        raise FeatureError("no vowel intervals", "no_vowel_intervals")
    return VowelFormants({k: (float(np.mean([f[0] for f in v])), float(np.mean([f[1] for f in v])))
                          for k, v in found.items()})


def speaker_formant_means(per_utt: Sequence[tuple[str, VowelFormants | None]]) -> dict[str, dict[str, tuple[float, float]]]:
    """Pass 1 of imputation: per-speaker mean formants over measured (not imputed) values."""
    acc: dict[str, dict[str, list[tuple[float, float]]]] = {}
    for speaker, vf in per_utt:
        if vf is None:
            continue
        for key, fm in vf.formants.items():
            if key not in vf.imputed:
                acc.setdefault(speaker, {}).setdefault(key, []).append(fm)
    return {spk: {k: (float(np.mean([f[0] for f in v])), float(np.mean([f[1] for f in v])))
                  for k, v in d.items()} for spk, d in acc.items()}


def impute_formants(vf: VowelFormants, fallback: dict[str, tuple[float, float]]) -> VowelFormants:
    """Pass 2: fill absent categories from the speaker means."""
    out = VowelFormants(dict(vf.formants), set(vf.imputed))
    for key in FORMANT_KEYS:
        if key not in out.formants and key in fallback:
            out.formants[key] = fallback[key]
            out.imputed.add(key)
    return out


def vsa_tri(vf: VowelFormants) -> float:
    (f1i, f2i), (f1a, f2a), (f1u, f2u) = vf.get("i"), vf.get("a"), vf.get("u")
    return 0.5 * abs(f1i * (f2a - f2u) + f1a * (f2u - f2i) + f1u * (f2i - f2a))


def vsa_quad(vf: VowelFormants) -> float:
    (f1i, f2i), (f1ae, f2ae), (f1a, f2a), (f1u, f2u) = vf.get("i"), vf.get("ae"), vf.get("a"), vf.get("u")
    return 0.5 * abs((f2i * f1ae + f2ae * f1a + f2a * f1u + f2u * f1i)
                     - (f1i * f2ae + f1ae * f2a + f1a * f2u + f1u * f2i))


def fcr(vf: VowelFormants) -> float:
    (f1i, f2i), (f1a, f2a), (f1u, f2u) = vf.get("i"), vf.get("a"), vf.get("u")
    return (f2u + f2a + f1i + f1u) / (f2i + f1a)


def vai(vf: VowelFormants) -> float:
    (f1i, f2i), (f1a, f2a), (f1u, f2u) = vf.get("i"), vf.get("a"), vf.get("u")
    return (f2i + f1a) / (f2u + f2a + f1i + f1u)


def f2_ratio(vf: VowelFormants) -> float:
    return vf.get("front")[1] / vf.get("back")[1]


# -- prosody ----------------------------------------------------------------------------

def speech_rate_features(tier: Tier, phone_map: PhoneClassMap, pause_threshold: float = 0.1) -> dict[str, float]:
    """Syllables are counted as vocalic runs; pauses are silences longer than ``pause_threshold``."""
    total = tier.duration
    if total <= 0:
        raise FeatureError("zero-length tier", "zero_duration")
    runs = classify_runs(tier, phone_map)
    syllables = sum(r.cls == RunClass.VOCALIC for r in runs)
    pauses = [r.duration for r in runs if r.cls == RunClass.SILENCE and r.duration > pause_threshold]
    pause_dur = float(sum(pauses))
    speech = sum(r.duration for r in runs if r.cls != RunClass.SILENCE)
    articulation_time = total - pause_dur
    return {
        "speaking_rate": syllables / total,
        "articulation_rate": syllables / articulation_time if articulation_time > 0 else None,
        "n_pauses": float(len(pauses)),
        "pause_duration": pause_dur,
        "phone_ratio": speech / total,
    }


def _five_stats(x: np.ndarray) -> tuple[float, float, float, float, float] | None:
    if x.size == 0:
        return None
    lo, hi = float(np.min(x)), float(np.max(x))
    return float(np.mean(x)), float(np.std(x)), lo, hi, hi - lo


def pitch_stats(p: PitchTrack):
    """mean, std, min, max, range of F0 over voiced frames; None if none are voiced."""
    return _five_stats(p.f0[p.f0 > 0])


def energy_stats(e: EnergyTrack):
    return _five_stats(e.energy_db[e.energy_db > dsp.ENERGY_FLOOR_DB])


def _pvi(d: np.ndarray) -> tuple[float, float]:
    diff = np.abs(d[:-1] - d[1:])
    rpvi = float(np.mean(diff))
    npvi = float(100.0 * np.mean(diff / ((d[:-1] + d[1:]) / 2.0)))
    return rpvi, npvi


def rhythm_metrics(runs: Sequence[SegmentRun]) -> dict[str, float | None]:
    """%V, deltas, Varcos and PVIs over vocalic / consonantal run durations (seconds)."""
    v = np.array([r.duration for r in runs if r.cls == RunClass.VOCALIC])
    c = np.array([r.duration for r in runs if r.cls == RunClass.CONSONANTAL])
    out: dict[str, float | None] = dict.fromkeys(RHYTHM)
    if v.size and c.size:
        out["pct_v"] = 100.0 * v.sum() / (v.sum() + c.sum())
    for x, tag in ((v, "v"), (c, "c")):
        if x.size < 2:
            continue
        delta = float(np.std(x))
        out[f"delta_{tag}"] = delta
        out[f"varco_{tag}"] = delta * 100.0 / float(np.mean(x))
        out[f"rpvi_{tag}"], out[f"npvi_{tag}"] = _pvi(x)
    return out


# -- assembly -----------------------------------------------------------------------------

@dataclass
class FeatureVector:
    values: dict[str, float | None]
    reasons: dict[str, str] = field(default_factory=dict)
    mfcc: np.ndarray | None = None

    def __post_init__(self):
        for name in FEATURE_NAMES:
            self.values.setdefault(name, None)
            if self.values[name] is None:
                self.reasons.setdefault(name, "undefined")

    def __getitem__(self, name: str):
        return self.values[name]

    @property
    def present(self) -> list[str]:
        return [k for k in FEATURE_NAMES if self.values[k] is not None]

    def as_array(self, with_mfcc: bool = False) -> np.ndarray:
        vals = [np.nan if self.values[k] is None else self.values[k] for k in FEATURE_NAMES]
        if with_mfcc:
            vals += list(self.mfcc) if self.mfcc is not None else [np.nan] * len(dsp.MFCC_NAMES)
        return np.array(vals, dtype=float)


@dataclass
class ExtractionConfig:
    pitch: dsp.PitchConfig = field(default_factory=dsp.PitchConfig)
    mfcc: dsp.MfccConfig = field(default_factory=dsp.MfccConfig)
    formants: FormantConfig = field(default_factory=FormantConfig)
    energy_frame: float = 0.025
    energy_hop: float = 0.010
    pause_threshold: float = 0.1
    voice_break_threshold: float = VOICE_BREAK_THRESHOLD
    with_mfcc: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionConfig":
        d = dict(d)
        pitch = dsp.PitchConfig(**d.pop("pitch", {}))
        mfcc = dsp.MfccConfig(**d.pop("mfcc", {}))
        formants = FormantConfig(**d.pop("formants", {}))
        return cls(pitch=pitch, mfcc=mfcc, formants=formants, **d)

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return asdict(self)


def _set(values, reasons, names, result, reason):
    if result is None:
        for n in names:
            values[n] = None
            reasons[n] = reason
    else:
        for n, v in zip(names, result):
            values[n] = None if v is None else float(v)
            if v is None:
                reasons[n] = reason


def extract_all(w: Waveform, tier: Tier, canonical: Sequence[str], decoded: Sequence[str],
                phone_map: PhoneClassMap, cfg: ExtractionConfig | None = None,
                formants: VowelFormants | None = None) -> FeatureVector:
    """Compute all 39 features; anything undefined for this input is left missing with a reason.

    ``formants`` should be the speaker-imputed formants (see
    :func:`extract_corpus`); when omitted they are measured from this
    utterance alone.
    """
    cfg = cfg or ExtractionConfig()
    values: dict[str, float | None] = {}
    reasons: dict[str, str] = {}

    def attempt(names, fn):
        try:
            _set(values, reasons, names, fn(), "undefined")
        except (FeatureError, InsufficientPeriodicity, dsp.AudioError) as exc:
            reason = getattr(exc, "reason", None) or type(exc).__name__
            log.debug("features %s missing: %s", names, exc)
            _set(values, reasons, names, None, reason)

    track = None
    try:
        track = dsp.f0_contour(w, cfg=cfg.pitch)
    except dsp.AudioError as exc:
        _set(values, reasons, VOICE_QUALITY + PITCH, None, "too_short")
        log.debug("no pitch track: %s", exc)

    if track is not None:
        pulses = None
        try:
            pulses = dsp.pulse_train(w, track)
        except InsufficientPeriodicity:
            _set(values, reasons, ["jitter", "shimmer", "ppq", "apq", "n_voice_breaks", "deg_voice_breaks"],
                 None, "insufficient_pulses")
        if pulses is not None:
            clean = _drop_breaks(pulses, cfg.voice_break_threshold)
            attempt(["jitter"], lambda: (jitter_rel(clean),))
            attempt(["shimmer"], lambda: (shimmer_rel(clean),))
            attempt(["ppq"], lambda: (ppq_rel(clean),))
            attempt(["apq"], lambda: (apq_rel(clean),))
            attempt(["n_voice_breaks", "deg_voice_breaks"],
                    lambda: voice_breaks(pulses, w.duration, cfg.voice_break_threshold))
        attempt(["hnr"], lambda: (hnr_db(w, track),))
        stats = pitch_stats(track)
        _set(values, reasons, PITCH, stats, "no_voiced_frames")

    attempt(PHONEME_CORRECTNESS, lambda: phoneme_correctness(canonical, decoded, phone_map))

    def vowel_space():
        vf = formants if formants is not None else vowel_formants(w, tier, phone_map, cfg.formants)
        out = []
        for fn in (vsa_tri, vsa_quad, fcr, vai, f2_ratio):
            try:
                out.append(fn(vf))
            except FeatureError:
                out.append(None)
        return out

    try:
        _set(values, reasons, VOWEL_SPACE, vowel_space(), "missing_corner_vowel")
    except FeatureError as exc:
        _set(values, reasons, VOWEL_SPACE, None, exc.reason)

    def rate():
        r = speech_rate_features(tier, phone_map, cfg.pause_threshold)
        return [r[k] for k in SPEECH_RATE]

    attempt(SPEECH_RATE, rate)

    try:
        energy = dsp.frame_energy(w, cfg.energy_frame, cfg.energy_hop)
        _set(values, reasons, LOUDNESS, energy_stats(energy), "all_frames_silent")
    except dsp.AudioError:
        _set(values, reasons, LOUDNESS, None, "too_short")

    rh = rhythm_metrics(classify_runs(tier, phone_map))
    _set(values, reasons, RHYTHM, [rh[k] for k in RHYTHM], "too_few_runs")

    mfcc = None
    if cfg.with_mfcc:
        try:
            mfcc = dsp.mfcc_stats(w, cfg.mfcc)
        except dsp.AudioError as exc:
            log.debug("no MFCC block: %s", exc)
    reasons = {k: v for k, v in reasons.items() if values.get(k) is None}
    return FeatureVector(values, reasons, mfcc)


@dataclass
class Utterance:
    utterance_id: str
    speaker_id: str
    waveform: Waveform
    tier: Tier
    canonical: list[str]
    decoded: list[str]
    phone_map: PhoneClassMap


def _measure(u: Utterance, cfg: ExtractionConfig) -> VowelFormants | None:
    try:
        return vowel_formants(u.waveform, u.tier, u.phone_map, cfg.formants)
    except FeatureError:
        return None


def extract_corpus(utterances: Sequence[Utterance], cfg: ExtractionConfig | None = None,
                   executor=None) -> list[FeatureVector]:
    """Two-pass extraction: measure formants, impute per speaker, then compute everything.

    ``executor`` may be any ``concurrent.futures`` executor; results keep input order.
    """
    cfg = cfg or ExtractionConfig()
    mapper = executor.map if executor is not None else map
    measured = list(mapper(_measure, utterances, [cfg] * len(utterances)))
    means = speaker_formant_means([(u.speaker_id, vf) for u, vf in zip(utterances, measured)])
    filled = []
    for u, vf in zip(utterances, measured):
        if vf is None:
            has_vowel = any(u.phone_map.classify(iv.label) == PhoneClass.VOWEL for iv in u.tier.intervals)
            filled.append(impute_formants(VowelFormants(), means.get(u.speaker_id, {})) if has_vowel else None)
        else:
            filled.append(impute_formants(vf, means.get(u.speaker_id, {})))
    return list(mapper(_extract_one, utterances, filled, [cfg] * len(utterances)))


def _extract_one(u: Utterance, vf: VowelFormants | None, cfg: ExtractionConfig) -> FeatureVector:
    if vf is None:
        fv = extract_all(u.waveform, u.tier, u.canonical, u.decoded, u.phone_map, cfg, formants=VowelFormants())
        for n in VOWEL_SPACE:
            fv.reasons[n] = "no_vowel_intervals"
        return fv
    return extract_all(u.waveform, u.tier, u.canonical, u.decoded, u.phone_map, cfg, formants=vf)
