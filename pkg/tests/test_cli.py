import json

import pytest

from crossdys import experiment as ex
from crossdys.cli import main

from conftest import FAST_EXP

GRID = ["--rounds-grid", "5,10", "--depth", "2"]


def manifest_line(uid="u1", **kw):
    rec = {"utterance_id": uid, "speaker_id": "s1", "language": "en", "severity": "mild", "sentence_id": "1",
           "wav_path": "a.wav", "textgrid_path": "a.TextGrid", "canonical_phones": "AH T", "decoded_phones": "AH"}
    rec.update(kw)
    return json.dumps(rec)


def test_manifest_valid(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text("\n".join(manifest_line(f"u{k}") for k in range(3)) + "\n\n")
    entries = ex.load_manifest(path)
    assert [e.utterance_id for e in entries] == ["u0", "u1", "u2"]
    assert entries[0].wav_path == tmp_path / "a.wav"
    assert entries[0].canonical_phones == ("AH", "T")


@pytest.mark.parametrize("lines, match", [
    ([manifest_line("a"), manifest_line("a")], r":2: duplicate utterance_id 'a' \(first on line 1\)"),
    ([manifest_line(severity="profound")], ":1: severity 'profound'"),
    ([manifest_line("a"), "{not json"], ":2: invalid JSON"),
    ([json.dumps({"utterance_id": "x"})], ":1: missing fields"),
    ([manifest_line(canonical_phones=["AH"])], "space-separated"),
])
def test_manifest_errors(tmp_path, lines, match):
    path = tmp_path / "m.jsonl"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ex.ManifestError, match=match):
        ex.load_manifest(path)


def test_config_hash_canonical():
    assert ex.config_hash({"a": 1, "b": [1, 2]}) == ex.config_hash({"b": [1, 2], "a": 1})
    assert ex.config_hash({"a": 1}) != ex.config_hash({"a": 2})
    assert len(ex.config_hash({})) == 16


def test_csv_header_round_trip(tmp_path):
    import numpy as np
    import pandas as pd
    df = pd.DataFrame({"x": [0.1, np.nan, 1e-300], "id": ["a", "b", "c"]})
    ex.write_csv(df, tmp_path / "t.csv", {"config_hash": "abc", "seed": 3})
    back, header = ex.read_csv(tmp_path / "t.csv")
    assert header == {"config_hash": "abc", "seed": "3"}
    assert back["x"].iloc[0] == 0.1 and np.isnan(back["x"].iloc[1]) and back["x"].iloc[2] == 1e-300


@pytest.fixture(scope="module")
def run_dir(corpus, tmp_path_factory):
    root, manifests, configs = corpus
    out = tmp_path_factory.mktemp("run")
    result = ex.run_experiment(manifests, configs, "proposed", 0.4, 0, out, exp=FAST_EXP)
    return out, result


def test_run_experiment_outputs(run_dir):
    out, result = run_dir
    report = json.loads((out / "report.json").read_text())
    assert set(report["f1"]) == {"en", "ko", "ta", "average"}
    assert report["subsample"] == {"language": "ta", "fraction": 0.4, "n_sentences": 2, "n_sentences_total": 5}
    assert report["grid"]["chosen_rounds"] in (5, 10)
    assert set(report["comparison"]) == {"en", "ko", "ta"}
    for name in ("features_en.csv", "selection_ta.json", "cross_proposed.csv", "cross_proposed_mask.json",
                 "confusion.txt", "confusion.csv", "summary.txt"):
        assert (out / name).exists(), name
    # every artifact carries the hash and seed
    for name in ("report.json", "selection_en.json", "cross_proposed_mask.json"):
        d = json.loads((out / name).read_text())
        assert "config_hash" in d and d["seed"] == 0
    assert ex.read_header(out / "features_ko.csv")["seed"] == "0"
    ta = [r for f in report["cv"]["folds"] for r in f["test"] if r["utterance_id"].startswith("ta")]
    assert len({r["utterance_id"].rsplit("_s", 1)[1] for r in ta}) == 2


def test_run_experiment_deterministic(run_dir, corpus, tmp_path):
    out, _ = run_dir
    root, manifests, configs = corpus
    ex.run_experiment(manifests, configs, "proposed", 0.4, 0, tmp_path, exp=FAST_EXP)
    assert (tmp_path / "report.json").read_bytes() == (out / "report.json").read_bytes()


def test_report_regenerates_views(run_dir, tmp_path, capsys):
    out, _ = run_dir
    assert main(["report", "--in", str(out), "--out", str(tmp_path)]) == 0
    for name in ("summary.txt", "confusion.txt", "confusion.csv", "report.json"):
        assert (tmp_path / name).read_text() == (out / name).read_text()
    assert "average" in capsys.readouterr().out


def test_run_rejects_missing_config(corpus, tmp_path):
    root, manifests, configs = corpus
    with pytest.raises(ex.StageError, match="no language config"):
        ex.run_experiment(manifests, configs[:2], out_dir=tmp_path, exp=FAST_EXP)


def test_cli_chain(corpus, tmp_path, capsys):
    root, manifests, configs = corpus
    work = str(tmp_path)
    args = ["extract", "--out", work]
    for m, c in zip(manifests, configs):
        args += ["--manifest", str(m), "--config", str(c)]
    assert main(args) == 0
    assert main(["select", "--rounds", "5", "--depth", "2", "--out", work]) == 0
    assert main(["assemble", "--strategy", "union", "--out", work]) == 0
    assert main(["evaluate", "--strategy", "union", *GRID, "--out", work]) == 0
    assert main(["sweep", "--fractions", "0.4,1.0", "--strategies", "union,proposed", *GRID, "--out", work]) == 0
    text = capsys.readouterr().out
    assert "union" in text and "fraction" in text
    sweep = json.loads((tmp_path / "sweep.json").read_text())
    assert len(sweep["results"]) == 4
    assert (tmp_path / "sweep.txt").exists()
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["strategy"] == "union"


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "m.jsonl"
    bad.write_text(manifest_line(severity="profound") + "\n")
    cfg = tmp_path / "c.json"
    cfg.write_text("{}")
    assert main(["extract", "--manifest", str(bad), "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "m.jsonl:1" in capsys.readouterr().err
    assert main(["select", "--out", str(tmp_path / "empty")]) == 1
    assert "no feature tables" in capsys.readouterr().err
    assert main(["report", "--in", str(tmp_path)]) == 1
    assert main(["evaluate", "--out", str(tmp_path)]) == 1
