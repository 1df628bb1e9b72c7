"""Command-line front end.

Every command reads and writes one working directory (``--out``/``--in``),
so stages chain by file name::

    crossdys extract --manifest en.jsonl --config en.json --out work
    crossdys select --out work
    crossdys assemble --strategy proposed --out work
    crossdys evaluate --rounds-grid 100:1000:100 --depth 3 --seed 0 --out work
    crossdys sweep --language ta --fractions 0.2,0.4,0.6,0.8,1.0 --out work
    crossdys report --in work
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .gbdt import parse_rounds_grid
from .pipeline import PipelineError, Strategy

log = logging.getLogger("crossdys")


def _fractions(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _exp(args) -> ex.ExperimentConfig:
    kw = {}
    for name in ("seed", "max_depth", "selection_rounds", "fraction", "fraction_language"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    if getattr(args, "rounds_grid", None):
        kw["rounds_grid"] = parse_rounds_grid(args.rounds_grid)
    if getattr(args, "mfcc", False):
        kw["with_mfcc"] = True
    return ex.ExperimentConfig(**kw)


def _feature_files(args, work: Path) -> list[Path]:
    files = [Path(f) for f in (getattr(args, "features", None) or [])]
    files = files or sorted(work.glob("features_*.csv"))
    if not files:
        raise ex.StageError("load", f"no feature tables in {work}")
    return files


def _tables(args, work: Path):
    tables, hashes = {}, {}
    for f in _feature_files(args, work):
        t, h = ex.load_features(f)
        if t.language in tables:
            raise ex.StageError("load", f"two feature tables for language {t.language}")
        tables[t.language], hashes[t.language] = t, h
    return tables, hashes


def _selections(work: Path, languages) -> tuple[dict, dict]:
    sets, hashes = {}, {}
    for lang in languages:
        path = work / f"selection_{lang}.json"
        if not path.exists():
            raise ex.StageError("load", f"{path.name} not found; run select first")
        curve, h = ex.load_selection(path)
        sets[lang], hashes[lang] = curve.optimal_set, h
    return sets, hashes


def cmd_extract(args) -> None:
    entries = [e for m in args.manifest for e in ex.load_manifest(m)]
    for c in args.config:
        lc = ex.load_language_config(c)
        if args.mfcc:
            lc.extraction.with_mfcc = True
        table, reasons, chash = ex.extract_features(entries, lc, args.jobs)
        path = ex.save_features(table, reasons, chash, args.seed, args.out)
        n_missing = sum(len(v) for v in reasons.values())
        print(f"{path}: {len(table.df)} utterances, {n_missing} missing cells")


def cmd_select(args) -> None:
    exp = _exp(args)
    for f in _feature_files(args, args.out):
        table, fhash = ex.load_features(f)
        curve, _ = ex.select_stage(table, fhash, exp, args.out)
        best = max(s.accuracy for s in curve.steps)
        print(f"{table.language}: {len(curve.optimal_set)} features, LOSO accuracy {best:.4f}: "
              + " ".join(curve.optimal_set))


def cmd_assemble(args) -> None:
    exp = _exp(args)
    tables, _ = _tables(args, args.out)
    sets, shashes = _selections(args.out, tables)
    cross, _, meta = ex.assemble_stage(tables, sets, args.strategy, ex._combine(shashes), exp, args.out)
    print(f"cross_{cross.strategy.value}.csv: {len(cross.df)} rows, {len(cross.columns)} columns, "
          f"{int(cross.mask.sum())} present cells")


def cmd_evaluate(args) -> None:
    exp = _exp(args)
    path = args.out / f"cross_{args.strategy}.csv"
    if not path.exists():
        raise ex.StageError("load", f"{path.name} not found; run assemble first")
    cross, ahash = ex.load_cross(path)
    mask_meta = ex.json.loads((args.out / f"cross_{args.strategy}_mask.json").read_text(encoding="utf-8"))
    tables, _ = _tables(args, args.out)
    sets, _ = _selections(args.out, tables)
    sub = mask_meta.get("subsample")
    if sub:
        exp = ex.ExperimentConfig(**{**ex.asdict(exp), "fraction": sub["fraction"],
                                     "fraction_language": sub["language"]})
    _, report = ex.evaluate_stage(cross, tables, sets, ahash, exp, sub, args.out)
    print(ex.format_summary(report), end="")


def cmd_sweep(args) -> None:
    exp = _exp(args)
    tables, _ = _tables(args, args.out)
    sets, shashes = _selections(args.out, tables)
    strategies = [Strategy(s) for s in args.strategies.split(",")]
    result = ex.sweep_stage(tables, sets, ex._combine(shashes), exp, _fractions(args.fractions),
                            strategies, args.out)
    print(ex.format_sweep(result), end="")


def cmd_report(args) -> None:
    src = args.input
    path = src / "report.json"
    if not path.exists():
        raise ex.StageError("report", f"{path} not found")
    report = ex.json.loads(path.read_text(encoding="utf-8"))
    dest = args.out or src
    dest.mkdir(parents=True, exist_ok=True)
    ex.write_report_views(report, dest)
    if dest != src:
        ex.dump_json(report, dest / "report.json")
    print(ex.format_summary(report), end="")
    sweep = src / "sweep.json"
    if sweep.exists():
        print()
        print(ex.format_sweep(ex.json.loads(sweep.read_text(encoding="utf-8"))), end="")


def cmd_run(args) -> None:
    result = ex.run_experiment(args.manifest, args.config, args.strategy, args.fraction, args.seed,
                               args.out, exp=_exp(args), jobs=args.jobs)
    print(ex.format_summary(result.report), end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossdys", description="Cross-lingual dysarthria severity classification.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def workdir(sp, flag="--out"):
        sp.add_argument(flag, type=Path, default=Path("."), help="working directory (default: .)")

    def training(sp, grid=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--depth", dest="max_depth", type=int, default=3)
        if grid:
            sp.add_argument("--rounds-grid", default="100:1000:100", help="lo:hi:step or a comma list")

    s = sub.add_parser("extract", help="compute feature tables from a manifest")
    s.add_argument("--manifest", action="append", required=True, type=Path)
    s.add_argument("--config", action="append", required=True, type=Path)
    s.add_argument("--mfcc", action="store_true", help="also compute the 26 MFCC statistics")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    workdir(s)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("select", help="per-language backward elimination by gain")
    s.add_argument("--features", action="append", type=Path)
    s.add_argument("--rounds", dest="selection_rounds", type=int, default=100)
    s.add_argument("--mfcc", action="store_true", help="let MFCC columns take part in selection")
    training(s, grid=False)
    workdir(s)
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("assemble", help="stack languages into one table")
    s.add_argument("--strategy", choices=[v.value for v in Strategy], default="proposed")
    s.add_argument("--features", action="append", type=Path)
    s.add_argument("--fraction", type=float, default=1.0)
    s.add_argument("--language", dest="fraction_language", default="ta")
    s.add_argument("--seed", type=int, default=0)
    workdir(s)
    s.set_defaults(func=cmd_assemble)

    s = sub.add_parser("evaluate", help="grid search and leave-one-speaker-out evaluation")
    s.add_argument("--strategy", choices=[v.value for v in Strategy], default="proposed")
    s.add_argument("--features", action="append", type=Path)
    training(s)
    workdir(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="vary the share of one language's sentences")
    s.add_argument("--language", dest="fraction_language", default="ta")
    s.add_argument("--fractions", default="0.2,0.4,0.6,0.8,1.0")
    s.add_argument("--strategies", default="intersection,union,proposed")
    s.add_argument("--features", action="append", type=Path)
    training(s)
    workdir(s)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", help="re-render text views from report.json")
    s.add_argument("--in", dest="input", type=Path, default=Path("."))
    s.add_argument("--out", type=Path, default=None, help="write views elsewhere (default: --in)")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("run", help="extract, select, assemble and evaluate in one go")
    s.add_argument("--manifest", action="append", required=True, type=Path)
    s.add_argument("--config", action="append", required=True, type=Path)
    s.add_argument("--strategy", choices=[v.value for v in Strategy], default="proposed")
    s.add_argument("--fraction", type=float, default=1.0)
    s.add_argument("--language", dest="fraction_language", default="ta")
    s.add_argument("--selection-rounds", type=int, default=100)
    s.add_argument("--mfcc", action="store_true")
    s.add_argument("--jobs", type=int, default=1)
    training(s)
    workdir(s)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    out = getattr(args, "out", None)
    if out is not None and args.command != "report":
        out.mkdir(parents=True, exist_ok=True)
    try:
        args.func(args)
    except (ex.StageError, ex.ManifestError, PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
