import numpy as np
import pandas as pd
import pytest

from crossdys import gbdt, pipeline
from crossdys.pipeline import (
    CrossTable,
    FeatureTable,
    PipelineError,
    Strategy,
    assemble,
    check_folds,
    confusion_matrix,
    evaluate_loso,
    evaluate_loso_grid,
    loso_folds,
    macro_f1,
    n_sentences_for,
    relative_increase,
    select_features,
    subsample_language,
)
from crossdys.synth import SEPARATION_SETS, separation_tables

FAST = gbdt.TrainConfig(rounds=5, max_depth=2)


def abc_tables(n_speakers=2, utterances=2):
    tables = {}
    rng = np.random.default_rng(0)
    for lang in ("en", "ko", "ta"):
        rows = []
        for sev in pipeline.SEVERITIES:
            for s in range(n_speakers):
                for u in range(utterances):
                    rows.append({"utterance_id": f"{lang}-{sev}-{s}-{u}", "speaker_id": f"{lang}-{sev}-{s}",
                                 "severity": sev, "sentence_id": str(u),
                                 "A": rng.normal(), "B": rng.normal(), "C": rng.normal()})
        tables[lang] = FeatureTable(lang, pd.DataFrame(rows))
    return tables


ABC_SETS = {"en": ["A"], "ko": ["A", "B"], "ta": ["A", "B", "C"]}


def grid(cross: CrossTable):
    """3x3 language-by-feature presence, a column counting as absent when it is not in the table."""
    out = {}
    for lang in ("en", "ko", "ta"):
        rows = cross.languages == lang
        out[lang] = [bool(c in cross.columns and cross.mask[rows, cross.columns.index(c)].all()) for c in "ABC"]
    return out


def test_proposed_mask_table():
    cross = assemble(abc_tables(), ABC_SETS, "proposed")
    assert grid(cross) == {"en": [True, False, False], "ko": [True, True, False], "ta": [True, True, True]}


def test_intersection_and_union_mask_tables():
    inter = assemble(abc_tables(), ABC_SETS, Strategy.INTERSECTION)
    union = assemble(abc_tables(), ABC_SETS, Strategy.UNION)
    assert inter.columns == ["A"]
    assert grid(inter) == {lang: [True, False, False] for lang in ("en", "ko", "ta")}
    assert grid(union) == {lang: [True, True, True] for lang in ("en", "ko", "ta")}


def test_presence_nesting():
    t = abc_tables()
    masks = {s: assemble(t, ABC_SETS, s) for s in Strategy}
    full = {s: pd.DataFrame(m.mask, columns=m.columns).reindex(columns=list("ABC"), fill_value=False).to_numpy()
            for s, m in masks.items()}
    assert np.all(full[Strategy.INTERSECTION] <= full[Strategy.PROPOSED])
    assert np.all(full[Strategy.PROPOSED] <= full[Strategy.UNION])


def test_masked_cells_are_missing_in_values():
    cross = assemble(abc_tables(), ABC_SETS, "proposed")
    X = cross.values()
    assert np.array_equal(~np.isnan(X), cross.mask)


def test_assemble_errors():
    t = abc_tables()
    with pytest.raises(PipelineError, match="no feature set"):
        assemble(t, {"en": ["A"], "ko": ["A"]}, "union")
    with pytest.raises(PipelineError, match="never extracted"):
        assemble(t, {**ABC_SETS, "en": ["Z"]}, "union")
    t["en"].df["C"] = np.nan
    with pytest.raises(PipelineError, match="never extracted"):
        assemble(t, {**ABC_SETS, "en": ["C"]}, "union")
    with pytest.raises(PipelineError, match="empty"):
        assemble(abc_tables(), {"en": ["A"], "ko": ["B"], "ta": ["C"]}, "intersection")


def test_speaker_ids_must_not_repeat_across_languages():
    t = abc_tables()
    t["ko"].df["speaker_id"] = t["en"].df["speaker_id"]
    with pytest.raises(PipelineError, match="both"):
        assemble(t, ABC_SETS, "proposed")


def test_bad_severity_rejected():
    with pytest.raises(PipelineError, match="severity"):
        FeatureTable("en", pd.DataFrame({"utterance_id": ["a"], "speaker_id": ["s"], "severity": ["profound"]}))


# -- folds and metrics ---------------------------------------------------------------

def test_loso_folds_partition():
    t = abc_tables()["en"]
    folds = loso_folds(t)
    assert len(folds) == 6
    for spk, train, test in folds:
        assert set(t.groups[test]) == {spk}
        assert spk not in set(t.groups[train])
        assert len(train) + len(test) == len(t.df)


def test_check_folds_detects_leak():
    groups = np.array(["a", "a", "b", "b"])
    with pytest.raises(PipelineError, match="leakage"):
        check_folds(groups, [("a", np.array([1, 2, 3]), np.array([0])), ("b", np.array([0, 1]), np.array([2, 3]))])
    with pytest.raises(PipelineError, match="partition"):
        check_folds(groups, [("a", np.array([2, 3]), np.array([0])), ("b", np.array([0, 1]), np.array([2, 3]))])


def test_single_speaker_rejected():
    t = abc_tables(n_speakers=1)["en"]
    t.df["speaker_id"] = "one"
    with pytest.raises(PipelineError):
        loso_folds(t)


def test_macro_f1_by_hand():
    cm = confusion_matrix([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 0])
    # class F1: 2*1/(2+1+1)=0.5, 2*2/(4+1)=0.8, 2*1/(2+1)=2/3
    assert macro_f1(cm) == pytest.approx(100 * (0.5 + 0.8 + 2 / 3) / 3)
    assert macro_f1(confusion_matrix([0, 1, 2], [0, 1, 2])) == 100.0


def test_macro_f1_ignores_absent_classes():
    assert macro_f1(confusion_matrix([0, 0, 1], [0, 0, 1])) == 100.0
    assert macro_f1(np.zeros((3, 3), int)) == 0.0


def test_evaluate_loso_report():
    tables = separation_tables(0, speakers_per_class=2, utterances=3)
    cross = assemble(tables, SEPARATION_SETS, "proposed")
    rep = evaluate_loso(cross, FAST)
    assert len(rep.folds) == 18
    assert rep.confusion.sum() == len(cross.df)
    assert set(rep.per_language) == {"en", "ko", "ta"}
    assert rep.average_f1 == pytest.approx(np.mean([v["macro_f1"] for v in rep.per_language.values()]))
    back = pipeline.CVReport.from_dict(rep.to_dict())
    assert back.to_dict() == rep.to_dict()
    for fold in rep.folds:
        assert {r["utterance_id"].rsplit("_", 1)[0] for r in fold["test"]} == {fold["speaker"]}


def test_grid_matches_separate_runs():
    tables = separation_tables(1, speakers_per_class=2, utterances=3)
    cross = assemble(tables, SEPARATION_SETS, "union")
    reports = evaluate_loso_grid(cross, FAST, [2, 6])
    for r in (2, 6):
        single = evaluate_loso(cross, FAST.replace(rounds=r))
        assert reports[r].to_dict() == single.to_dict()


def test_grid_rejects_bad_rounds():
    with pytest.raises(PipelineError):
        evaluate_loso_grid(abc_tables()["en"], FAST, [0, 5])


# -- selection -------------------------------------------------------------------------

def test_selection_drops_lowest_gain_and_keeps_signal():
    t = separation_tables(2)["ta"]
    curve = select_features(t, FAST, ["pct", "f0_max", "apq"])
    assert [len(s.features) for s in curve.steps] == [3, 2, 1]
    for step in curve.steps[:-1]:
        low = min(step.importance.values())
        assert step.importance[step.dropped] == low
    assert curve.steps[-1].dropped is None
    assert "apq" in curve.optimal_set
    best = max(s.accuracy for s in curve.steps)
    assert min(len(s.features) for s in curve.steps if s.accuracy == best) == len(curve.optimal_set)


def test_selection_tie_drops_alphabetically_last():
    t = separation_tables(3)["en"]
    t.df["zcr_x"] = 0.0
    t.df["aaa_x"] = 0.0
    curve = select_features(t, FAST, ["pct", "aaa_x", "zcr_x"])
    assert curve.steps[0].dropped == "zcr_x"
    assert curve.steps[1].dropped == "aaa_x"


def test_selection_needs_extracted_columns():
    t = abc_tables()["en"]
    with pytest.raises(PipelineError, match="lacks"):
        select_features(t, FAST, ["A", "jitter"])


def test_selection_curve_round_trip():
    curve = select_features(separation_tables(0)["ko"], FAST, ["pct", "f0_max"])
    assert pipeline.SelectionCurve.from_dict(curve.to_dict()) == curve


# -- subsampling and comparison -----------------------------------------------------------

def sentence_table(n_sentences, speakers=3):
    rows = [{"utterance_id": f"s{s}_{k}", "speaker_id": f"s{s}", "severity": pipeline.SEVERITIES[s % 3],
             "sentence_id": f"{k:03d}", "A": 0.0} for s in range(speakers) for k in range(n_sentences)]
    return FeatureTable("ta", pd.DataFrame(rows))


def test_subsample_keeps_same_sentences_for_everyone():
    t = subsample_language(sentence_table(260), 0.4, seed=7)
    per_speaker = t.df.groupby("speaker_id")["sentence_id"].apply(frozenset)
    assert per_speaker.nunique() == 1
    assert len(per_speaker.iloc[0]) == 104


def test_subsample_identity_and_errors():
    t = sentence_table(10)
    assert subsample_language(t, 1.0, 0).df.equals(t.df)
    with pytest.raises(PipelineError):
        subsample_language(t, 0.0, 0)
    with pytest.raises(PipelineError, match="no sentences"):
        subsample_language(t, 0.04, 0)


def test_subsample_seeded():
    t = sentence_table(50)
    a = subsample_language(t, 0.3, 1).df
    assert a.equals(subsample_language(t, 0.3, 1).df)
    assert not a.equals(subsample_language(t, 0.3, 2).df)


@pytest.mark.parametrize("fraction, total, k", [(0.4, 260, 104), (0.2, 260, 52), (0.5, 5, 3), (1.0, 7, 7)])
def test_n_sentences(fraction, total, k):
    assert n_sentences_for(fraction, total) == k


def test_relative_increase():
    assert relative_increase(50.0, 60.0) == pytest.approx(20.0)
    assert relative_increase(80.0, 60.0) == pytest.approx(-25.0)
    with pytest.raises(ZeroDivisionError):
        relative_increase(0.0, 10.0)


def test_csv_round_trip(tmp_path):
    t = separation_tables(0)["en"]
    path = tmp_path / "en.csv"
    t.to_csv(path)
    back = FeatureTable.from_csv(path, "en")
    pd.testing.assert_frame_equal(back.df, t.df, check_dtype=False)
