"""Corpus manifests, per-language configs and the end-to-end experiment runner."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import dsp, gbdt, pipeline
from .features import FEATURE_NAMES, ExtractionConfig, FeatureVector, Utterance, extract_corpus
from .pipeline import SEVERITIES, FeatureTable, Strategy
from .textgrid import PhoneClassMap, find_tier, read_textgrid

log = logging.getLogger(__name__)

MANIFEST_FIELDS = ("utterance_id", "speaker_id", "language", "severity", "sentence_id",
                   "wav_path", "textgrid_path", "canonical_phones", "decoded_phones")


class ManifestError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str, utterance: str | None = None):
        self.stage, self.utterance = stage, utterance
        where = f" [{utterance}]" if utterance else ""
        super().__init__(f"{stage}{where}: {message}")


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    speaker_id: str
    language: str
    severity: str
    sentence_id: str
    wav_path: Path
    textgrid_path: Path
    canonical_phones: tuple[str, ...]
    decoded_phones: tuple[str, ...]
    tier: str | None = None


def load_manifest(path) -> list[ManifestEntry]:
    """Read a JSON-lines manifest; relative paths resolve against the manifest's folder."""
    path = Path(path)
    base = path.parent
    entries, seen = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise ManifestError(f"{path}:{lineno}: entry must be an object")
            absent = [k for k in MANIFEST_FIELDS if k not in rec]
            if absent:
                raise ManifestError(f"{path}:{lineno}: missing fields {absent}")
            if rec["severity"] not in SEVERITIES:
                raise ManifestError(f"{path}:{lineno}: severity {rec['severity']!r} not in {list(SEVERITIES)}")
            uid = str(rec["utterance_id"])
            if uid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate utterance_id {uid!r} (first on line {seen[uid]})")
            seen[uid] = lineno
            for k in ("canonical_phones", "decoded_phones"):
                if not isinstance(rec[k], str):
                    raise ManifestError(f"{path}:{lineno}: {k} must be a space-separated string")
            entries.append(ManifestEntry(
                utterance_id=uid,
                speaker_id=str(rec["speaker_id"]),
                language=str(rec["language"]),
                severity=rec["severity"],
                sentence_id=str(rec["sentence_id"]),
                wav_path=base / rec["wav_path"],
                textgrid_path=base / rec["textgrid_path"],
                canonical_phones=tuple(rec["canonical_phones"].split()),
                decoded_phones=tuple(rec["decoded_phones"].split()),
                tier=rec.get("tier"),
            ))
    return entries


@dataclass
class LanguageConfig:
    language: str
    phone_map: PhoneClassMap
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)

    def to_dict(self) -> dict:
        return {"language": self.language, "phone_map": self.phone_map.to_dict(),
                "extraction": self.extraction.to_dict()}


def load_language_config(path) -> LanguageConfig:
    """JSON with ``language``, ``phone_map`` (inline object or path) and optional ``extraction``."""
    path = Path(path)
    cfg = json.loads(path.read_text(encoding="utf-8"))
    pm = cfg["phone_map"]
    if isinstance(pm, str):
        pm = json.loads((path.parent / pm).read_text(encoding="utf-8"))
    pm = dict(pm)
    pm.setdefault("language", cfg["language"])
    return LanguageConfig(cfg["language"], PhoneClassMap.from_dict(pm),
                          ExtractionConfig.from_dict(cfg.get("extraction", {})))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not JSON serializable: {type(x)}")


def dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n", encoding="utf-8")


def read_header(path) -> dict:
    """``# key=value`` lines at the top of an artifact CSV."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("# "):
                break
            k, _, v = line[2:].rstrip("\n").partition("=")
            out[k] = v
    return out


def write_csv(df: pd.DataFrame, path, header: dict) -> None:
    lines = [f"# {k}={v}" for k, v in sorted(header.items())]
    body = df.to_csv(index=False, na_rep="", float_format="%.17g", lineterminator="\n")
    Path(path).write_text("".join(l + "\n" for l in lines) + body, encoding="utf-8")


def read_csv(path) -> tuple[pd.DataFrame, dict]:
    header = read_header(path)
    df = pd.read_csv(path, skiprows=len(header), keep_default_na=False, na_values=[""],
                     dtype={"utterance_id": str, "speaker_id": str, "sentence_id": str, "language": str})
    return df, header


# -- stages -------------------------------------------------------------------------------------

def _load_utterance(e: ManifestEntry, lc: LanguageConfig) -> Utterance:
    try:
        w = dsp.read_wav(e.wav_path)
    except (OSError, dsp.AudioError) as exc:
        raise StageError("extract", str(exc), e.utterance_id) from exc
    try:
        tier = find_tier(read_textgrid(e.textgrid_path), e.tier)
    except (OSError, ValueError) as exc:
        raise StageError("extract", f"{e.textgrid_path.name}: {exc}", e.utterance_id) from exc
    try:
        for iv in tier.intervals:
            lc.phone_map.classify(iv.label)
    except ValueError as exc:
        raise StageError("extract", str(exc), e.utterance_id) from exc
    return Utterance(e.utterance_id, e.speaker_id, w, tier, list(e.canonical_phones),
                     list(e.decoded_phones), lc.phone_map)


def _manifest_digest(entries: Sequence[ManifestEntry]) -> list[dict]:
    # content hashes rather than paths so the hash does not depend on where the corpus lives
    return [{"utterance_id": e.utterance_id, "speaker_id": e.speaker_id, "severity": e.severity,
             "sentence_id": e.sentence_id,
             "wav": hashlib.sha256(Path(e.wav_path).read_bytes()).hexdigest(),
             "textgrid": hashlib.sha256(Path(e.textgrid_path).read_bytes()).hexdigest(),
             "canonical": " ".join(e.canonical_phones), "decoded": " ".join(e.decoded_phones),
             "tier": e.tier} for e in entries]


def extract_features(entries: Sequence[ManifestEntry], lc: LanguageConfig,
                     jobs: int = 1) -> tuple[FeatureTable, dict, str]:
    """Feature table for one language, {utterance_id: {feature: reason}} and the stage hash."""
    entries = [e for e in entries if e.language == lc.language]
    if not entries:
        raise StageError("extract", f"no manifest entries for language {lc.language}")
    try:
        digest = _manifest_digest(entries)
    except OSError as exc:
        raise StageError("extract", str(exc)) from exc
    chash = config_hash({"language": lc.to_dict(), "manifest": digest})
    utts = [_load_utterance(e, lc) for e in entries]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            vectors = extract_corpus(utts, lc.extraction, executor=ex)
    else:
        vectors = extract_corpus(utts, lc.extraction)
    table, reasons = feature_table(lc.language, entries, vectors, lc.extraction.with_mfcc)
    return table, reasons, chash


def feature_table(language: str, entries: Sequence[ManifestEntry], vectors: Sequence[FeatureVector],
                  with_mfcc: bool = False) -> tuple[FeatureTable, dict]:
    rows, reasons = [], {}
    for e, fv in zip(entries, vectors):
        row = {"utterance_id": e.utterance_id, "speaker_id": e.speaker_id, "severity": e.severity,
               "sentence_id": e.sentence_id, "language": language}
        row.update({k: (np.nan if fv.values.get(k) is None else fv.values[k]) for k in FEATURE_NAMES})
        if with_mfcc:
            mf = fv.mfcc if fv.mfcc is not None else [np.nan] * len(dsp.MFCC_NAMES)
            row.update(dict(zip(dsp.MFCC_NAMES, (float(v) for v in mf))))
        rows.append(row)
        if fv.reasons:
            reasons[e.utterance_id] = dict(sorted(fv.reasons.items()))
            for name, why in sorted(fv.reasons.items()):
                log.info("%s: %s missing (%s)", e.utterance_id, name, why)
    cols = ["utterance_id", "speaker_id", "severity", "sentence_id", "language"] + FEATURE_NAMES
    if with_mfcc:
        cols += list(dsp.MFCC_NAMES)
    return FeatureTable(language, pd.DataFrame(rows, columns=cols)), reasons


def save_features(table: FeatureTable, reasons: dict, chash: str, seed: int, out_dir) -> Path:
    out = Path(out_dir)
    header = {"config_hash": chash, "seed": seed, "language": table.language}
    path = out / f"features_{table.language}.csv"
    write_csv(table.df, path, header)
    dump_json({**header, "missing": reasons}, out / f"reasons_{table.language}.json")
    return path


def load_features(path) -> tuple[FeatureTable, str]:
    df, header = read_csv(path)
    langs = sorted(set(df["language"])) if "language" in df.columns else []
    lang = header.get("language") or (langs[0] if len(langs) == 1 else None)
    if lang is None or (langs and langs != [lang]):
        raise StageError("load", f"{Path(path).name}: expected exactly one language, found {langs}")
    return FeatureTable(lang, df), header.get("config_hash", "")


def select_stage(table: FeatureTable, parent_hash: str, exp: "ExperimentConfig",
                 out_dir=None) -> tuple[pipeline.SelectionCurve, str]:
    chash = config_hash({"parent": parent_hash, "selection_rounds": exp.selection_rounds,
                         "max_depth": exp.max_depth, "seed": exp.seed, "with_mfcc": exp.with_mfcc})
    columns = [c for c in table.feature_columns if exp.with_mfcc or c in FEATURE_NAMES]
    try:
        curve = pipeline.select_features(table, exp.train_config(exp.selection_rounds), columns)
    except pipeline.PipelineError as exc:
        raise StageError("select", f"{table.language}: {exc}") from exc
    if out_dir is not None:
        dump_json({"config_hash": chash, "seed": exp.seed, **curve.to_dict()},
                  Path(out_dir) / f"selection_{table.language}.json")
    return curve, chash


def load_selection(path) -> tuple[pipeline.SelectionCurve, str]:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return pipeline.SelectionCurve.from_dict(d), d.get("config_hash", "")


def assemble_stage(tables: dict, sets: dict, strategy, parent_hash: str, exp: "ExperimentConfig",
                   out_dir=None) -> tuple[pipeline.CrossTable, str, dict]:
    """Optionally subsample one language, then stack tables under ``strategy``."""
    strategy = Strategy(strategy)
    tables = dict(tables)
    meta = {"language": exp.fraction_language, "fraction": exp.fraction, "n_sentences": None,
            "n_sentences_total": None}
    if exp.fraction_language in tables:
        t = tables[exp.fraction_language]
        meta["n_sentences_total"] = int(t.df["sentence_id"].nunique())
        try:
            t = pipeline.subsample_language(t, exp.fraction, exp.seed)
        except pipeline.PipelineError as exc:
            raise StageError("assemble", str(exc)) from exc
        meta["n_sentences"] = int(t.df["sentence_id"].nunique())
        tables[exp.fraction_language] = t
    elif exp.fraction != 1.0:
        raise StageError("assemble", f"no table for subsampled language {exp.fraction_language}")
    chash = config_hash({"parent": parent_hash, "strategy": strategy.value, "subsample": meta,
                         "seed": exp.seed})
    try:
        cross = pipeline.assemble(tables, sets, strategy)
    except pipeline.PipelineError as exc:
        raise StageError("assemble", str(exc)) from exc
    if out_dir is not None:
        header = {"config_hash": chash, "seed": exp.seed, "strategy": strategy.value,
                  "fraction": exp.fraction, "fraction_language": exp.fraction_language}
        df = cross.df.copy()
        df[cross.columns] = cross.values()
        write_csv(df, Path(out_dir) / f"cross_{strategy.value}.csv", header)
        dump_json({"config_hash": chash, "seed": exp.seed, "subsample": meta, **cross.mask_dict()},
                  Path(out_dir) / f"cross_{strategy.value}_mask.json")
    return cross, chash, meta


def load_cross(path) -> tuple[pipeline.CrossTable, str]:
    df, header = read_csv(path)
    cols = [c for c in df.columns if c not in pipeline.META and c != "language"]
    mask = ~np.isnan(df[cols].to_numpy(dtype=float))
    return pipeline.CrossTable(df, cols, mask, Strategy(header["strategy"])), header.get("config_hash", "")


def _grid(table, exp: "ExperimentConfig", columns=None) -> tuple[int, pipeline.CVReport, dict]:
    """Best round count by pooled LOSO accuracy; ties go to fewer rounds."""
    try:
        reports = pipeline.evaluate_loso_grid(table, exp.train_config(max(exp.rounds_grid)),
                                              exp.rounds_grid, columns)
    except pipeline.PipelineError as exc:
        raise StageError("evaluate", str(exc)) from exc
    best = max(reports, key=lambda r: (reports[r].accuracy, -r))
    curve = {str(r): reports[r].accuracy for r in sorted(reports)}
    return best, reports[best], curve


def evaluate_stage(cross: pipeline.CrossTable, tables: dict, sets: dict, parent_hash: str,
                   exp: "ExperimentConfig", subsample: dict | None = None,
                   out_dir=None) -> tuple[pipeline.CVReport, dict]:
    """Global round grid search, LOSO on the cross table and the monolingual comparison."""
    chash = config_hash({"parent": parent_hash, "rounds_grid": sorted(exp.rounds_grid),
                         "max_depth": exp.max_depth, "seed": exp.seed})
    rounds, cv, grid_curve = _grid(cross, exp)
    mono, comparison = {}, {}
    for lang in cv.per_language:
        if lang not in tables:
            continue
        t = tables[lang]
        if subsample and lang == subsample.get("language") and subsample.get("fraction", 1.0) < 1.0:
            t = pipeline.subsample_language(t, subsample["fraction"], exp.seed)
        mrounds, mrep, _ = _grid(t, exp, list(sets[lang]))
        mono[lang] = {"macro_f1": mrep.macro_f1, "accuracy": mrep.accuracy, "rounds": mrounds,
                      "columns": list(sets[lang])}
        cross_f1 = cv.per_language[lang]["macro_f1"]
        comparison[lang] = {
            "monolingual": mrep.macro_f1, "cross": cross_f1,
            # undefined when the monolingual score is zero
            "relative_increase": pipeline.relative_increase(mrep.macro_f1, cross_f1) if mrep.macro_f1 else None,
        }
    report = {
        "config_hash": chash,
        "seed": exp.seed,
        "strategy": cross.strategy.value,
        "languages": list(cv.per_language),
        "subsample": subsample or {"language": exp.fraction_language, "fraction": exp.fraction},
        "selected": {k: list(v) for k, v in sets.items()},
        "grid": {"rounds_accuracy": grid_curve, "chosen_rounds": rounds},
        "f1": {**{lang: v["macro_f1"] for lang, v in cv.per_language.items()}, "average": cv.average_f1},
        "monolingual": mono,
        "comparison": comparison,
        "cv": cv.to_dict(),
    }
    if out_dir is not None:
        dump_json(report, Path(out_dir) / "report.json")
        write_report_views(report, out_dir)
    return cv, report


def sweep_stage(tables: dict, sets: dict, parent_hash: str, exp: "ExperimentConfig",
                fractions: Sequence[float], strategies: Sequence = tuple(Strategy),
                out_dir=None) -> dict:
    """Average F1 per strategy as one language's share of sentences varies."""
    chash = config_hash({"parent": parent_hash, "fractions": list(fractions),
                         "strategies": [Strategy(s).value for s in strategies],
                         "language": exp.fraction_language, "rounds_grid": sorted(exp.rounds_grid),
                         "max_depth": exp.max_depth, "seed": exp.seed})
    rows = []
    for f in fractions:
        sub = ExperimentConfig(**{**asdict(exp), "fraction": float(f)})
        for s in strategies:
            row = {"fraction": float(f), "strategy": Strategy(s).value}
            try:
                cross, _, meta = assemble_stage(tables, sets, s, parent_hash, sub)
                rounds, cv, _ = _grid(cross, sub)
            except StageError as exc:
                log.warning("sweep %s at %g: %s", row["strategy"], f, exc)
                rows.append({**row, "error": str(exc), "average_f1": None})
                continue
            rows.append({**row, "n_sentences": meta["n_sentences"], "rounds": rounds, "average_f1": cv.average_f1,
                         "f1": {k: v["macro_f1"] for k, v in cv.per_language.items()}})
    result = {"config_hash": chash, "seed": exp.seed, "language": exp.fraction_language, "results": rows}
    if out_dir is not None:
        dump_json(result, Path(out_dir) / "sweep.json")
        (Path(out_dir) / "sweep.txt").write_text(
            f"# config_hash={chash} seed={exp.seed}\n" + format_sweep(result), encoding="utf-8")
    return result


# -- experiment -------------------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Everything downstream of extraction that determines a run."""

    strategy: str = "proposed"
    seed: int = 0
    rounds_grid: list[int] = field(default_factory=lambda: list(range(100, 1001, 100)))
    max_depth: int = 3
    selection_rounds: int = 100
    fraction: float = 1.0
    fraction_language: str = "ta"
    with_mfcc: bool = False

    def train_config(self, rounds: int) -> gbdt.TrainConfig:
        return gbdt.TrainConfig(rounds=rounds, max_depth=self.max_depth, seed=self.seed)


@dataclass
class ExperimentResult:
    cv: pipeline.CVReport
    report: dict
    out_dir: Path


def _combine(hashes) -> str:
    return config_hash(sorted(hashes.items()) if isinstance(hashes, dict) else list(hashes))


def run_experiment(manifests: Sequence, configs: Sequence, strategy: str = "proposed",
                   fraction: float = 1.0, seed: int = 0, out_dir=".", exp: ExperimentConfig | None = None,
                   jobs: int = 1) -> ExperimentResult:
    """Extraction, per-language selection, assembly, grid search and LOSO evaluation.

    Writes features_<lang>.csv, reasons_<lang>.json, selection_<lang>.json,
    cross_<strategy>.csv with its mask JSON, report.json, confusion.txt,
    confusion.csv and summary.txt into ``out_dir``.
    """
    exp = exp or ExperimentConfig()
    exp = ExperimentConfig(**{**asdict(exp), "strategy": Strategy(strategy).value, "fraction": fraction,
                              "seed": seed})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lcs = [c if isinstance(c, LanguageConfig) else load_language_config(c) for c in configs]
    langs = [lc.language for lc in lcs]
    if len(set(langs)) != len(langs):
        raise StageError("config", f"duplicate language configs {langs}")
    entries = [e for m in manifests for e in (m if isinstance(m, list) else load_manifest(m))]
    unknown = sorted({e.language for e in entries} - set(langs))
    if unknown:
        raise StageError("config", f"no language config for {unknown}")

    tables, sets, hashes = {}, {}, {}
    for lc in lcs:
        if exp.with_mfcc:
            lc = LanguageConfig(lc.language, lc.phone_map,
                                ExtractionConfig.from_dict({**lc.extraction.to_dict(), "with_mfcc": True}))
        table, reasons, fhash = extract_features(entries, lc, jobs)
        save_features(table, reasons, fhash, exp.seed, out)
        curve, shash = select_stage(table, fhash, exp, out)
        tables[lc.language], sets[lc.language], hashes[lc.language] = table, curve.optimal_set, shash
    cross, ahash, meta = assemble_stage(tables, sets, exp.strategy, _combine(hashes), exp, out)
    cv, report = evaluate_stage(cross, tables, sets, ahash, exp, meta, out)
    return ExperimentResult(cv, report, out)


# -- rendering --------------------------------------------------------------------------------------

def write_report_views(report: dict, out_dir) -> None:
    """Text renderings derived only from report.json."""
    out = Path(out_dir)
    cm = np.array(report["cv"]["confusion"])
    tag = f"# config_hash={report['config_hash']} seed={report['seed']}\n"
    (out / "confusion.txt").write_text(tag + pipeline.format_confusion(cm), encoding="utf-8")
    (out / "confusion.csv").write_text(tag + pipeline.confusion_csv(cm), encoding="utf-8")
    (out / "summary.txt").write_text(tag + format_summary(report), encoding="utf-8")


def format_summary(report: dict) -> str:
    """Per-language macro-F1 with the average, then monolingual vs cross-lingual."""
    langs = [k for k in report["f1"] if k != "average"]
    lines = ["experiment".ljust(14) + "".join(l.rjust(10) for l in langs) + "average".rjust(10),
             report["strategy"].ljust(14) + "".join(f"{report['f1'][l]:10.2f}" for l in langs)
             + f"{report['f1']['average']:10.2f}", ""]
    if report.get("comparison"):
        lines.append("language".ljust(14) + "mono".rjust(10) + "cross".rjust(10) + "rel.inc%".rjust(10))
        for lang, c in report["comparison"].items():
            rel = "n/a" if c["relative_increase"] is None else f"{c['relative_increase']:.2f}"
            lines.append(lang.ljust(14) + f"{c['monolingual']:10.2f}{c['cross']:10.2f}{rel:>10}")
        lines.append("")
    sub = report.get("subsample") or {}
    if sub.get("n_sentences") is not None:
        lines.append(f"{sub['language']}: {sub['n_sentences']} of {sub['n_sentences_total']} sentences "
                     f"(fraction {sub['fraction']})")
    lines.append(f"rounds: {report['grid']['chosen_rounds']}")
    return "\n".join(lines) + "\n"


def format_sweep(result: dict) -> str:
    strategies = sorted({r["strategy"] for r in result["results"]}, key=lambda s: list(Strategy).index(Strategy(s)))
    fractions = sorted({r["fraction"] for r in result["results"]})
    cell = {(r["fraction"], r["strategy"]): r["average_f1"] for r in result["results"]}
    lines = ["fraction".ljust(10) + "".join(s.rjust(14) for s in strategies)]
    for f in fractions:
        lines.append(f"{f:<10g}" + "".join("n/a".rjust(14) if cell[(f, s)] is None else f"{cell[(f, s)]:14.2f}"
                                           for s in strategies))
    return "\n".join(lines) + "\n"
