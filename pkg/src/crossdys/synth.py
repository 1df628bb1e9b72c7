"""Synthetic corpora for tests and demos.

The real corpora are access-restricted, so everything here is generated:
vowel-like segments are formant-filtered pulse trains, consonants are
filtered noise, and severity drives jitter, breathiness, tempo, vowel
centralization and decoding errors.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .dsp import Waveform, write_wav
from .features import FEATURE_NAMES
from .pipeline import SEVERITIES, FeatureTable
from .textgrid import Interval, PhoneClassMap, Tier, format_textgrid

# label sets per language; corner vowels first, in i/ae/a/u order
INVENTORIES = {
    "en": {"vowels": ["IY", "AE", "AA", "UW", "AH", "EH"], "consonants": ["P", "T", "K", "S", "M", "N", "L", "R"]},
    "ko": {"vowels": ["i", "E", "a", "u", "o", "eo"], "consonants": ["p", "t", "k", "s", "m", "n", "l", "h"]},
    "ta": {"vowels": ["i:", "ae", "a:", "u:", "e", "o"], "consonants": ["p", "t", "k", "s", "m", "n", "l", "zh"]},
}
_FORMANTS = [(300, 2300), (700, 1800), (800, 1200), (350, 900), (600, 1200), (500, 1600)]
_CENTER = (500.0, 1500.0)


def phone_map_config(language: str) -> dict:
    inv = INVENTORIES[language]
    v = inv["vowels"]
    return {
        "language": language,
        "vowels": v,
        "consonants": inv["consonants"],
        "silence": ["sil", "sp"],
        "corner_vowels": {"i": [v[0]], "ae": [v[1]], "a": [v[2]], "u": [v[3]]},
        "front_back_pair": [v[0], v[3]],
    }


def phone_map(language: str) -> PhoneClassMap:
    return PhoneClassMap.from_dict(phone_map_config(language))


def resonator(x: np.ndarray, freq: float, bw: float, sr: float) -> np.ndarray:
    r = np.exp(-np.pi * bw / sr)
    theta = 2 * np.pi * freq / sr
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return lfilter([sum(a)], a, x)


def synth_vowel(duration: float, f1: float, f2: float, f0: float, sr: int, rng,
                jitter: float = 0.0, shimmer: float = 0.0, breath: float = 0.0) -> np.ndarray:
    n = int(round(duration * sr))
    src = np.zeros(n)
    t = rng.uniform(0, 0.5 / f0)
    while t < duration:
        i = int(t * sr)
        if i < n:
            src[i] = 1.0 + shimmer * rng.standard_normal()
        t += (1.0 + jitter * rng.standard_normal()) / f0
    src = lfilter([1.0], [1.0, -0.9], src)  # glottal roll-off
    y = resonator(resonator(resonator(src, f1, 50, sr), f2, 60, sr), 2600, 150, sr)
    y = y / (np.max(np.abs(y)) + 1e-12)
    if breath:
        y = y + breath * rng.standard_normal(n)
    ramp = min(n // 2, int(0.005 * sr))
    if ramp:
        env = np.ones(n)
        env[:ramp] = np.linspace(0, 1, ramp)
        env[-ramp:] = np.linspace(1, 0, ramp)
        y = y * env
    return 0.5 * y


def synth_consonant(duration: float, sr: int, rng) -> np.ndarray:
    n = int(round(duration * sr))
    return 0.05 * resonator(rng.standard_normal(n), 3500, 1500, sr) / 3.0


def sentence_syllables(language: str, sentence_id: int) -> list[tuple[str, str]]:
    """Deterministic CV syllables for a sentence id; every corner vowel appears."""
    inv = INVENTORIES[language]
    r = np.random.default_rng(10_000 + sentence_id)
    n = int(r.integers(5, 9))
    vowels = list(inv["vowels"][:4]) + [inv["vowels"][int(k)] for k in r.integers(0, 6, n - 4)]
    r.shuffle(vowels)
    return [(inv["consonants"][int(r.integers(0, len(inv["consonants"])))], v) for v in vowels]


_SEV = {  # jitter, shimmer, breath, tempo, centralization, decode error, f0
    "mild": (0.004, 0.03, 0.01, 1.0, 0.0, 0.05, 130.0),
    "moderate": (0.015, 0.08, 0.05, 1.3, 0.25, 0.2, 120.0),
    "severe": (0.035, 0.15, 0.12, 1.7, 0.5, 0.4, 110.0),
}


def synth_utterance(language: str, severity: str, sentence_id: int, rng, sr: int = 16000):
    """Returns (waveform, phone tier, canonical phones, decoded phones)."""
    jit, shim, breath, tempo, central, err, f0 = _SEV[severity]
    f0 = f0 * float(np.exp(0.1 * rng.standard_normal()))
    inv = INVENTORIES[language]
    sylls = sentence_syllables(language, sentence_id)
    chunks, intervals, t = [], [], 0.0

    def add(label, x):
        nonlocal t
        dur = len(x) / sr
        intervals.append(Interval(label, t, t + dur))
        chunks.append(x)
        t += dur

    def silence(dur):
        return 0.0005 * rng.standard_normal(int(round(dur * sr)))

    add("sil", silence(0.15))
    for k, (c, v) in enumerate(sylls):
        add(c, synth_consonant(tempo * rng.uniform(0.05, 0.09), sr, rng))
        j = inv["vowels"].index(v)
        f1, f2 = _FORMANTS[j]
        f1 = f1 + central * (_CENTER[0] - f1)
        f2 = f2 + central * (_CENTER[1] - f2)
        add(v, synth_vowel(tempo * rng.uniform(0.09, 0.16), f1, f2, f0, sr, rng, jit, shim, breath))
        if k == len(sylls) // 2 and rng.random() < 0.5 + 0.4 * central:
            add("sp", silence(tempo * rng.uniform(0.15, 0.3)))
    add("sil", silence(0.15))
    w = Waveform(np.concatenate(chunks), sr)
    # rebuild the tier from sample counts so boundaries are exact
    tier = Tier("phones", tuple(intervals), 0.0, intervals[-1].xmax)
    canonical = [p for s in sylls for p in s]
    everything = inv["vowels"] + inv["consonants"]
    decoded = [p if rng.random() >= err else everything[int(rng.integers(0, len(everything)))] for p in canonical]
    return w, tier, canonical, decoded


def write_corpus(out_dir, languages=("en", "ko", "ta"), speakers_per_class: int = 2, sentences: int = 3,
                 seed: int = 0, sr: int = 16000) -> dict[str, Path]:
    """Write WAV/TextGrid files, per-language configs and one JSON-lines manifest per language.

    Returns {language: manifest path}; configs sit next to them as ``config_<lang>.json``.
    """
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    manifests = {}
    for lang in languages:
        (out / lang).mkdir(parents=True, exist_ok=True)
        lines = []
        for severity in SEVERITIES:
            for s in range(speakers_per_class):
                spk = f"{lang}_{severity[:3]}{s}"
                for sent in range(sentences):
                    uid = f"{spk}_s{sent:03d}"
                    w, tier, can, dec = synth_utterance(lang, severity, sent, rng, sr)
                    write_wav(out / lang / f"{uid}.wav", w)
                    (out / lang / f"{uid}.TextGrid").write_text(format_textgrid([tier]), encoding="utf-8")
                    lines.append(json.dumps({
                        "utterance_id": uid, "speaker_id": spk, "language": lang, "severity": severity,
                        "sentence_id": f"{sent:03d}", "wav_path": f"{lang}/{uid}.wav",
                        "textgrid_path": f"{lang}/{uid}.TextGrid",
                        "canonical_phones": " ".join(can), "decoded_phones": " ".join(dec),
                    }))
        path = out / f"manifest_{lang}.jsonl"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        (out / f"config_{lang}.json").write_text(
            json.dumps({"language": lang, "phone_map": phone_map_config(lang)}, indent=2), encoding="utf-8")
        manifests[lang] = path
    return manifests


# -- feature-level fixtures --------------------------------------------------------------------

SHARED, PAIRED, UNIQUE = "pct", "f0_max", "apq"
SEPARATION_SETS = {"en": [SHARED], "ko": [SHARED, PAIRED], "ta": [SHARED, PAIRED, UNIQUE]}


def separation_tables(seed: int, speakers_per_class: int = 4, utterances: int = 6,
                      shared_signal: float = 0.6, unique_signal: float = 2.0) -> dict[str, FeatureTable]:
    """Three languages where only ``apq`` separates Tamil severities and is noise elsewhere.

    ``pct`` is weakly informative everywhere, ``f0_max`` is noise. Speaker
    offsets make leave-one-speaker-out non-trivial.
    """
    rng = np.random.default_rng(seed)
    tables = {}
    for lang in ("en", "ko", "ta"):
        rows = []
        for c, severity in enumerate(SEVERITIES):
            for s in range(speakers_per_class):
                spk = f"{lang}{severity[:3]}{s}"
                off = rng.normal(0, 0.3, 3)
                for u in range(utterances):
                    row = dict.fromkeys(FEATURE_NAMES, np.nan)
                    row.update(utterance_id=f"{spk}_{u}", speaker_id=spk, severity=severity,
                               sentence_id=str(u))
                    row[SHARED] = shared_signal * c + off[0] + rng.normal()
                    row[PAIRED] = off[1] + rng.normal()
                    row[UNIQUE] = (unique_signal * c if lang == "ta" else 0.0) + off[2] + rng.normal(0, 0.5)
                    rows.append(row)
        df = pd.DataFrame(rows)
        tables[lang] = FeatureTable(lang, df[["utterance_id", "speaker_id", "severity", "sentence_id"]
                                             + FEATURE_NAMES])
    return tables
