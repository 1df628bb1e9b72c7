"""Feature selection, cross-lingual table assembly and leave-one-speaker-out evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from . import gbdt
from .features import FEATURE_NAMES

log = logging.getLogger(__name__)

SEVERITIES = ("mild", "moderate", "severe")
LANGUAGES = ("en", "ko", "ta")
META = ["utterance_id", "speaker_id", "severity", "sentence_id"]


class PipelineError(ValueError):
    pass


class Strategy(str, Enum):
    INTERSECTION = "intersection"
    UNION = "union"
    PROPOSED = "proposed"


def _column_order(cols) -> list[str]:
    rank = {name: k for k, name in enumerate(FEATURE_NAMES)}
    return sorted(cols, key=lambda c: (rank.get(c, len(rank)), c))


@dataclass
class FeatureTable:
    """One language: metadata columns plus one column per feature (NaN = missing)."""

    language: str
    df: pd.DataFrame

    def __post_init__(self):
        missing = [c for c in ("utterance_id", "speaker_id", "severity") if c not in self.df.columns]
        if missing:
            raise PipelineError(f"feature table lacks columns {missing}")
        bad = set(self.df["severity"]) - set(SEVERITIES)
        if bad:
            raise PipelineError(f"unknown severity labels {sorted(bad)}")
        if "sentence_id" not in self.df.columns:
            self.df = self.df.assign(sentence_id="")
        self.df = self.df.reset_index(drop=True)

    @property
    def feature_columns(self) -> list[str]:
        return [c for c in self.df.columns if c not in META and c != "language"]

    @property
    def labels(self) -> np.ndarray:
        return self.df["severity"].map(SEVERITIES.index).to_numpy()

    @property
    def groups(self) -> np.ndarray:
        return self.df["speaker_id"].astype(str).to_numpy()

    def values(self, columns: Sequence[str]) -> np.ndarray:
        return self.df[list(columns)].to_numpy(dtype=float)

    def mask(self, columns: Sequence[str]) -> np.ndarray:
        return ~np.isnan(self.values(columns))

    def to_csv(self, path):
        self.df.to_csv(path, index=False, na_rep="")

    @classmethod
    def from_csv(cls, path, language: str) -> "FeatureTable":
        df = pd.read_csv(path, dtype={"utterance_id": str, "speaker_id": str, "sentence_id": str},
                         keep_default_na=False, na_values=[""])
        return cls(language, df)


@dataclass
class CrossTable:
    df: pd.DataFrame  # META + "language" + feature columns
    columns: list[str]
    mask: np.ndarray  # (rows, columns) bool
    strategy: Strategy

    @property
    def labels(self) -> np.ndarray:
        return self.df["severity"].map(SEVERITIES.index).to_numpy()

    @property
    def groups(self) -> np.ndarray:
        return self.df["speaker_id"].astype(str).to_numpy()

    @property
    def languages(self) -> np.ndarray:
        return self.df["language"].to_numpy()

    def values(self, columns: Sequence[str] | None = None) -> np.ndarray:
        cols = self.columns if columns is None else list(columns)
        idx = [self.columns.index(c) for c in cols]
        raw = self.df[cols].to_numpy(dtype=float)
        return np.where(self.mask[:, idx], raw, np.nan)

    def mask_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "columns": self.columns,
            "rows": [
                {"utterance_id": u, "language": lang, "present": [c for c, m in zip(self.columns, row) if m]}
                for u, lang, row in zip(self.df["utterance_id"], self.df["language"], self.mask)
            ],
        }


# -- folds & metrics --------------------------------------------------------------------

def loso_folds(table) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """One (speaker, train_idx, test_idx) fold per speaker, in sorted speaker order."""
    groups = table.groups
    speakers = sorted(set(groups))
    if len(speakers) < 2:
        raise PipelineError("leave-one-speaker-out needs at least 2 speakers")
    folds = []
    for spk in speakers:
        test = np.flatnonzero(groups == spk)
        train = np.flatnonzero(groups != spk)
        folds.append((spk, train, test))
    check_folds(groups, folds)
    return folds


def check_folds(groups: np.ndarray, folds) -> None:
    speakers = set(groups)
    if len(folds) != len(speakers):
        raise PipelineError(f"{len(folds)} folds for {len(speakers)} speakers")
    seen = np.zeros(len(groups), dtype=int)
    for spk, train, test in folds:
        leak = set(groups[train]) & set(groups[test])
        if leak:
            raise PipelineError(f"speaker leakage in fold {spk}: {sorted(leak)}")
        seen[test] += 1
    if np.any(seen != 1):
        raise PipelineError("test sets do not partition the rows")


def confusion_matrix(y_true, y_pred, n_classes: int = 3) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (np.asarray(y_true, int), np.asarray(y_pred, int)), 1)
    return cm


def f1_scores(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm)
    tp = np.diag(cm).astype(float)
    denom = 2 * tp + (cm.sum(axis=0) - tp) + (cm.sum(axis=1) - tp)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, 200.0 * tp / np.where(denom > 0, denom, 1), 0.0)


def macro_f1(cm: np.ndarray) -> float:
    """Unweighted mean F1 (percent) over classes that occur in the truth or the predictions."""
    cm = np.asarray(cm)
    active = (cm.sum(axis=0) + cm.sum(axis=1)) > 0
    if not np.any(active):
        return 0.0
    return float(np.mean(f1_scores(cm)[active]))


@dataclass
class CVReport:
    folds: list[dict]
    confusion: np.ndarray
    per_class_f1: list[float]
    macro_f1: float
    accuracy: float
    per_language: dict[str, dict] = field(default_factory=dict)
    columns: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def average_f1(self) -> float:
        if not self.per_language:
            return self.macro_f1
        return float(np.mean([v["macro_f1"] for v in self.per_language.values()]))

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "average_f1": self.average_f1,
            "per_class_f1": dict(zip(SEVERITIES, self.per_class_f1)),
            "confusion": self.confusion.tolist(),
            "per_language": self.per_language,
            "columns": self.columns,
            "config": self.config,
            "folds": self.folds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CVReport":
        return cls(d["folds"], np.array(d["confusion"]), [d["per_class_f1"][s] for s in SEVERITIES],
                   d["macro_f1"], d["accuracy"], d.get("per_language", {}), d.get("columns", []),
                   d.get("config", {}))


def format_confusion(cm: np.ndarray, labels: Sequence[str] = SEVERITIES) -> str:
    """Aligned text rendering; rows are true classes, columns predictions."""
    cm = np.asarray(cm)
    width = max(max(len(s) for s in labels), len(str(cm.max())) if cm.size else 1) + 2
    lines = ["true\\pred".ljust(width + 2) + "".join(s.rjust(width) for s in labels)]
    for s, row in zip(labels, cm):
        lines.append(s.ljust(width + 2) + "".join(str(v).rjust(width) for v in row))
    return "\n".join(lines) + "\n"


def confusion_csv(cm: np.ndarray, labels: Sequence[str] = SEVERITIES) -> str:
    rows = ["true," + ",".join(labels)]
    rows += [s + "," + ",".join(str(v) for v in row) for s, row in zip(labels, np.asarray(cm))]
    return "\n".join(rows) + "\n"


def _train_rows(X: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # rows with no present cell carry nothing to split on
    return idx[~np.all(np.isnan(X[idx]), axis=1)]


def evaluate_loso(table, cfg: gbdt.TrainConfig, columns: Sequence[str] | None = None) -> CVReport:
    """Leave-one-speaker-out: train per fold, pool test predictions."""
    return evaluate_loso_grid(table, cfg, [cfg.rounds], columns)[cfg.rounds]


def evaluate_loso_grid(table, cfg: gbdt.TrainConfig, rounds_grid: Sequence[int],
                       columns: Sequence[str] | None = None) -> dict[int, CVReport]:
    """LOSO reports for several round counts from one training run per fold.

    Boosting is sequential and deterministic, so the first r trees of a
    longer run are exactly the r-round model.
    """
    grid = sorted(set(int(r) for r in rounds_grid))
    if not grid or grid[0] < 1:
        raise PipelineError("rounds grid must hold positive integers")
    if isinstance(table, CrossTable):
        cols = table.columns if columns is None else list(columns)
        languages = table.languages
    else:
        cols = table.feature_columns if columns is None else list(columns)
        languages = None
    X = table.values(cols)
    y = table.labels
    uids = table.df["utterance_id"].astype(str).to_numpy()
    preds = {r: np.full(len(y), -1) for r in grid}
    fold_info = []
    full = cfg.replace(rounds=grid[-1])
    for spk, train_idx, test_idx in loso_folds(table):
        rows = _train_rows(X, train_idx)
        try:
            model = gbdt.train(gbdt.TrainMatrix(X[rows], y[rows], cols), full, n_classes=len(SEVERITIES))
        except gbdt.TrainingError as exc:
            raise PipelineError(f"fold {spk}: {exc}") from exc
        for r in grid:
            preds[r][test_idx] = np.argmax(model.margins(X[test_idx], n_rounds=r), axis=1)
        fold_info.append((spk, rows.size, test_idx))
    return {r: _report(preds[r], y, uids, languages, fold_info, cols, cfg.replace(rounds=r)) for r in grid}


def _report(pred, y, uids, languages, fold_info, cols, cfg) -> CVReport:
    folds = [{
        "speaker": spk,
        "n_train": int(n_train),
        "test": [{"utterance_id": u, "true": SEVERITIES[t], "pred": SEVERITIES[q]}
                 for u, t, q in zip(uids[test_idx], y[test_idx], pred[test_idx])],
    } for spk, n_train, test_idx in fold_info]
    cm = confusion_matrix(y, pred)
    per_language = {}
    if languages is not None:
        for lang in sorted(set(languages), key=lambda s: (LANGUAGES.index(s) if s in LANGUAGES else 99, s)):
            sel = languages == lang
            lcm = confusion_matrix(y[sel], pred[sel])
            per_language[lang] = {"macro_f1": macro_f1(lcm), "accuracy": float(np.mean(y[sel] == pred[sel])),
                                  "confusion": lcm.tolist()}
    return CVReport(
        folds=folds,
        confusion=cm,
        per_class_f1=[float(v) for v in f1_scores(cm)],
        macro_f1=macro_f1(cm),
        accuracy=float(np.mean(pred == y)),
        per_language=per_language,
        columns=list(cols),
        config=_cfg_dict(cfg),
    )


def _cfg_dict(cfg: gbdt.TrainConfig) -> dict:
    from dataclasses import asdict
    return asdict(cfg)


# -- selection ------------------------------------------------------------------------------

@dataclass
class SelectionStep:
    features: list[str]
    dropped: str | None
    accuracy: float
    importance: dict[str, float] = field(default_factory=dict)


@dataclass
class SelectionCurve:
    language: str
    steps: list[SelectionStep]
    optimal_set: list[str]

    def to_dict(self) -> dict:
        return {
            "language": self.language,
            "optimal_set": self.optimal_set,
            "steps": [{"n_features": len(s.features), "features": s.features, "dropped": s.dropped,
                       "accuracy": s.accuracy, "importance": s.importance} for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionCurve":
        steps = [SelectionStep(s["features"], s["dropped"], s["accuracy"], s.get("importance", {}))
                 for s in d["steps"]]
        return cls(d["language"], steps, d["optimal_set"])


def select_features(table: FeatureTable, cfg: gbdt.TrainConfig, columns: Sequence[str] | None = None) -> SelectionCurve:
    """Backward elimination by gain importance.

    Each step scores the current set by LOSO accuracy, fits one model on every
    row and drops the feature with the smallest total gain (ties: the
    alphabetically last). The optimal set is the best-scoring step, preferring
    fewer features on ties.
    """
    current = _column_order(columns if columns is not None else FEATURE_NAMES)
    absent = [c for c in current if c not in table.df.columns]
    if absent:
        raise PipelineError(f"{table.language}: feature table lacks {absent}")
    y = table.labels
    steps = []
    while current:
        acc = evaluate_loso(table, cfg, current).accuracy
        X = table.values(current)
        rows = _train_rows(X, np.arange(len(y)))
        model = gbdt.train(gbdt.TrainMatrix(X[rows], y[rows], current), cfg, n_classes=len(SEVERITIES))
        imp = gbdt.gain_importance(model)
        if len(current) > 1:
            low = min(imp.values())
            dropped = max(c for c in current if imp[c] == low)
        else:
            dropped = None
        steps.append(SelectionStep(list(current), dropped, acc, imp))
        log.info("%s: %d features, LOSO accuracy %.4f, drop %s", table.language, len(current), acc, dropped)
        if dropped is None:
            break
        current = [c for c in current if c != dropped]
    best = max(range(len(steps)), key=lambda k: (steps[k].accuracy, -len(steps[k].features)))
    return SelectionCurve(table.language, steps, steps[best].features)


# -- assembly ---------------------------------------------------------------------------------

def assemble(tables: Mapping[str, FeatureTable], sets: Mapping[str, Sequence[str]],
             strategy: Strategy | str) -> CrossTable:
    """Stack per-language tables into one cross-lingual table.

    intersection: columns shared by every language's set.
    union: every selected column, values kept wherever extracted.
    proposed: every selected column, but a row of language l keeps only the
    cells of its own set; the rest become missing.
    """
    strategy = Strategy(strategy)
    langs = list(tables)
    if len(set(langs)) != len(langs):
        raise PipelineError("languages must be distinct")
    for lang in langs:
        if lang not in sets:
            raise PipelineError(f"no feature set for language {lang}")
        t = tables[lang]
        for c in sets[lang]:
            if c not in t.df.columns or t.df[c].isna().all():
                raise PipelineError(f"{lang}: selected feature {c!r} was never extracted")
    owner: dict[str, str] = {}
    for lang in langs:
        for spk in set(tables[lang].groups):
            if spk in owner and owner[spk] != lang:
                raise PipelineError(f"speaker id {spk!r} occurs in both {owner[spk]} and {lang}")
            owner[spk] = lang

    chosen = [set(sets[lang]) for lang in langs]
    if strategy == Strategy.INTERSECTION:
        cols = _column_order(set.intersection(*chosen))
    else:
        cols = _column_order(set.union(*chosen))
    if not cols:
        raise PipelineError(f"{strategy.value} of the selected feature sets is empty")

    frames, masks = [], []
    for lang in langs:
        df = tables[lang].df
        part = df[[c for c in META if c in df.columns]].copy()
        part.insert(0, "language", lang)
        for c in cols:
            part[c] = df[c].to_numpy(dtype=float) if c in df.columns else np.nan
        present = ~np.isnan(part[cols].to_numpy(dtype=float)) if cols else np.zeros((len(df), 0), bool)
        if strategy == Strategy.PROPOSED:
            own = np.array([c in sets[lang] for c in cols], dtype=bool)
            present = present & own[None, :]
        frames.append(part)
        masks.append(present)
    df = pd.concat(frames, ignore_index=True)
    mask = np.concatenate(masks, axis=0) if masks else np.zeros((0, len(cols)), bool)
    return CrossTable(df, cols, mask, strategy)


# -- sweeps ---------------------------------------------------------------------------------------

def n_sentences_for(fraction: float, total: int) -> int:
    return int(math.floor(fraction * total + 0.5))


def subsample_language(table: FeatureTable, fraction: float, seed: int) -> FeatureTable:
    """Keep a random subset of sentence ids; every speaker keeps the same sentences."""
    if not 0 < fraction <= 1:
        raise PipelineError("fraction must lie in (0, 1]")
    sentences = sorted(set(table.df["sentence_id"].astype(str)))
    k = n_sentences_for(fraction, len(sentences))
    if k == 0:
        raise PipelineError(f"fraction {fraction} keeps no sentences out of {len(sentences)}")
    if k == len(sentences):
        return FeatureTable(table.language, table.df.copy())
    rng = np.random.default_rng(seed)
    keep = {sentences[i] for i in rng.choice(len(sentences), size=k, replace=False)}
    df = table.df[table.df["sentence_id"].astype(str).isin(keep)]
    return FeatureTable(table.language, df.reset_index(drop=True))


def relative_increase(mono: float, cross: float) -> float:
    """Percentage change from a monolingual to a cross-lingual score."""
    if mono == 0:
        raise ZeroDivisionError("monolingual score is zero")
    return (cross - mono) / mono * 100.0
