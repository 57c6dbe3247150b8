"""Command-line entry point: ``namestate <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every subcommand that writes files also writes a JSON run manifest
(``--manifest``, or a default next to its primary output); ``namestate
rerun MANIFEST`` replays it.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from namestate import __version__
from namestate.errors import DataError, NumericError

log = logging.getLogger("namestate")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_SEED = 42


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser, seed: bool = False, threads: bool = False) -> None:
    p.add_argument("--manifest", type=Path, help="where to write the run manifest (JSON)")
    if seed:
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed for every random step (default 42)")
    if threads:
        p.add_argument("--threads", type=int, default=1, help="worker threads; outputs do not depend on it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="namestate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"namestate {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic roll file")
    p.add_argument("--out", type=Path, required=True, help="output roll CSV")
    p.add_argument("--states", type=int, default=5, help="number of states from the built-in bank")
    p.add_argument("--names", type=int, default=2000, help="number of distinct last names")
    p.add_argument("--noise", type=float, default=0.1, help="probability a record ignores its name's home state")
    p.add_argument("--records-log-mean", type=float, default=1.0, help="log-normal mean of records per name")
    p.add_argument("--records-log-sigma", type=float, default=1.0, help="log-normal sigma of records per name")
    _add_common(p, seed=True)

    p = sub.add_parser("preprocess", help="raw rolls -> clean records (last_name,sex,state)")
    p.add_argument("--input", type=Path, nargs="+", required=True, help="one or more roll files")
    p.add_argument("--output", type=Path, required=True, help="clean-records CSV")
    p.add_argument("--floor", type=int, default=3, help="minimum occurrences of a last name (default 3)")
    p.add_argument("--delimiter", choices=("comma", "tab"), default="comma", help="input field delimiter")
    p.add_argument("--col-first", default="first_name", help="column with the person's name")
    p.add_argument("--col-last", default="last_name", help="last-name column ('' if absent)")
    p.add_argument("--col-relative", default="relative_name", help="father's/husband's name column ('' if absent)")
    p.add_argument("--col-sex", default="sex", help="sex column ('' if absent)")
    p.add_argument("--col-state", default="state", help="state column")
    _add_common(p, threads=True)

    p = sub.add_parser("stats", help="histograms, popularity/female-share table and the train/test split")
    p.add_argument("--input", type=Path, required=True, help="clean-records CSV")
    p.add_argument("--out-dir", type=Path, required=True, help="writes histograms.csv, names.csv, split.csv")
    p.add_argument("--train-fraction", type=float, default=0.8, help="share of names used for training")
    _add_common(p, seed=True, threads=True)

    p = sub.add_parser("train", help="train a recurrent classifier")
    p.add_argument("--model", choices=("rnn", "lstm", "gru"), required=True, help="architecture preset")
    p.add_argument("--histograms", type=Path, help="histograms.csv from stats")
    p.add_argument("--split", type=Path, help="split.csv from stats")
    p.add_argument("--out-dir", type=Path, required=True, help="model.nst, metrics.csv, checkpoints/")
    p.add_argument("--epochs", type=int, default=10, help="number of epochs (default 10)")
    p.add_argument("--hidden", type=int, help="override preset hidden units")
    p.add_argument("--batch-size", type=int, help="override preset batch size")
    p.add_argument("--optimizer", choices=("sgd", "adam"), help="override preset optimizer")
    p.add_argument("--lr", type=float, help="override preset learning rate")
    p.add_argument("--momentum", type=float, help="override preset momentum (sgd)")
    p.add_argument("--clip-norm", type=float, help="clip the global gradient norm (off by default)")
    p.add_argument("--checkpoint-every", type=int, default=1, help="checkpoint interval in epochs")
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32", help="training precision")
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.add_argument("--dry-run", action="store_true", help="resolve the configuration and write the manifest only")
    _add_common(p, seed=True, threads=True)

    p = sub.add_parser("evaluate", help="top-k accuracy tables for a model or baseline")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model-file", type=Path, help="trained model.nst")
    src.add_argument("--baseline", choices=("majority", "naivebayes"), help="evaluate a baseline instead")
    p.add_argument("--histograms", type=Path, required=True, help="histograms.csv from stats")
    p.add_argument("--split", type=Path, help="split.csv; required unless --partition all")
    p.add_argument("--partition", choices=("test", "train", "all"), default="test", help="names to evaluate on")
    p.add_argument("--out-dir", type=Path, required=True, help="writes table1.csv, slices.csv, table2.csv, outcomes.csv")
    p.add_argument("--top-k", type=int, default=3, help="k for top-k accuracy (default 3)")
    p.add_argument("--sample-n", type=int, default=3000, help="size of popularity slices (default 3000)")
    p.add_argument("--per-state-n", type=int, default=1000, help="names sampled per state (default 1000)")
    p.add_argument("--label", help="row label in the tables")
    _add_common(p, seed=True, threads=True)

    p = sub.add_parser("predict", help="ranked states (and languages) for one name")
    p.add_argument("--model-file", type=Path, required=True, help="trained model.nst")
    p.add_argument("--name", required=True, help="last name")
    p.add_argument("--top-k", type=int, default=3, help="number of states to print")
    p.add_argument("--languages", action="store_true", help="also print predicted languages")
    p.add_argument("--language-table", type=Path, help="state,language,weight,source CSV (default: bundled)")
    p.add_argument("--language-k", type=int, default=3, help="number of languages to print")
    _add_common(p)

    p = sub.add_parser("plotdata", help="lowess curves for the popularity and gender figures")
    p.add_argument("--outcomes", type=Path, required=True, help="outcomes.csv from evaluate")
    p.add_argument("--figure", choices=("popularity", "gender"), required=True, help="x axis")
    p.add_argument("--output", type=Path, required=True, help="x,y,smoothed CSV")
    p.add_argument("--fraction", type=float, default=2.0 / 3.0, help="lowess span (default 2/3)")
    p.add_argument("--iterations", type=int, default=3, help="robustifying iterations (default 3)")
    p.add_argument("--max-popularity", type=int, default=2000, help="popularity cut-off for the popularity figure")
    _add_common(p)

    p = sub.add_parser("rerun", help="replay a run manifest")
    p.add_argument("manifest_file", type=Path, help="manifest JSON written by an earlier run")
    return parser


# ------------------------------------------------------------------ commands

def _schema_value(v: str) -> Optional[str]:
    return v or None


def cmd_synth(args) -> dict:
    from namestate.synth import default_spec, generate

    spec = default_spec(args.states, args.names, args.noise, args.seed,
                        records_log_mean=args.records_log_mean, records_log_sigma=args.records_log_sigma)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    n = generate(spec, args.out)
    print(f"wrote {n} rows to {args.out}")
    return {"outputs": [str(args.out)]}


def cmd_preprocess(args) -> dict:
    from namestate.ingest import RollSchema, load_rolls, preprocess, write_clean

    schema = RollSchema(first=args.col_first, last=_schema_value(args.col_last),
                        relative=_schema_value(args.col_relative), sex=_schema_value(args.col_sex),
                        state=args.col_state)
    delimiter = "\t" if args.delimiter == "tab" else ","
    readers = [load_rolls(p, schema, delimiter) for p in args.input]
    records = preprocess(readers, floor=args.floor, threads=args.threads)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    write_clean(records, args.output)
    skipped = sum(r.skipped for r in readers)
    read = sum(r.read for r in readers)
    print(f"read {read} rows, skipped {skipped} malformed, kept {len(records)} clean records")
    return {"outputs": [str(args.output)], "skipped_rows": skipped}


def cmd_stats(args) -> dict:
    import csv

    from namestate.corpus import aggregate, female_share, popularity, split_by_name, write_histograms, write_split
    from namestate.ingest import read_clean

    records = read_clean(args.input)
    hists = aggregate(records, threads=args.threads)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_histograms(hists, args.out_dir / "histograms.csv")
    with open(args.out_dir / "names.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("last_name", "popularity", "female_share"))
        for h in hists:
            share = female_share(h)
            w.writerow((h.last_name, popularity(h), "" if share is None else repr(share)))
    split = split_by_name(hists, args.train_fraction, args.seed)
    write_split(split, args.out_dir / "split.csv")
    print(f"{len(hists)} names, {len(split.states)} states; "
          f"{len(split.train_names)} train names ({len(split.train_pairs)} pairs), {len(split.test_names)} test names")
    return {"outputs": [str(args.out_dir / f) for f in ("histograms.csv", "names.csv", "split.csv")]}


def cmd_train(args) -> dict:
    from namestate.corpus import read_histograms, read_split
    from namestate.train import preset, train

    config = preset(args.model, epochs=args.epochs, hidden_dim=args.hidden, batch_size=args.batch_size,
                    optimizer=args.optimizer, learning_rate=args.lr, momentum=args.momentum, seed=args.seed,
                    checkpoint_interval=args.checkpoint_every, clip_norm=args.clip_norm, dtype=args.dtype)
    info = {"config": config.to_dict(), "outputs": [str(args.out_dir / "model.nst"), str(args.out_dir / "metrics.csv")]}
    if args.dry_run:
        print(json.dumps(config.to_dict(), sort_keys=True))
        return info
    if args.histograms is None or args.split is None:
        raise UsageError("train needs --histograms and --split (unless --dry-run)")
    corpus = read_split(args.split, read_histograms(args.histograms))
    train(corpus, config, args.out_dir, resume=args.resume, threads=args.threads)
    print(f"saved {args.out_dir / 'model.nst'}")
    return info


def cmd_evaluate(args) -> dict:
    from namestate import evaluation as ev
    from namestate.corpus import read_histograms, read_split
    from namestate.models import load_model

    hists = read_histograms(args.histograms)
    if args.partition == "all":
        train_h, eval_h = hists, hists
    else:
        if args.split is None:
            raise UsageError("--split is required unless --partition all")
        split = read_split(args.split, hists)
        train_h = split.train_histograms
        eval_h = split.test_histograms if args.partition == "test" else split.train_histograms
    k = args.top_k
    if args.model_file is not None:
        model = load_model(args.model_file)
        predictor = ev.ModelPredictor(model, k, args.threads)
        label = args.label or model.kind
    elif args.baseline == "majority":
        predictor = ev.MajorityPredictor(train_h)
        label = args.label or "majority"
    else:
        predictor = ev.NaiveBayesPredictor(train_h, k)
        label = args.label or "naivebayes"

    outcomes, full = ev.evaluate(predictor, eval_h, k)
    weighted = ev.slice_weighted_random(outcomes, args.sample_n, args.seed)
    top, bottom = ev.slice_extremes(outcomes, args.sample_n)
    per_state = ev.per_state_accuracy(outcomes, args.per_state_n, args.seed)
    reports = [full, weighted, top, bottom]

    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    ev.write_table1(out / "table1.csv", [ev.table1_row(label, reports)])
    ev.write_slices(out / "slices.csv", label, reports)
    ev.write_table2(out / "table2.csv", label, per_state)
    ev.write_outcomes(out / "outcomes.csv", outcomes)
    for r in reports:
        print(f"{r.slice_name}: n={r.n} top{k}_accuracy={r.topk_accuracy:.3f} modal_accuracy={r.modal_accuracy:.3f}")
    return {"outputs": [str(out / f) for f in ("table1.csv", "slices.csv", "table2.csv", "outcomes.csv")]}


def cmd_predict(args) -> dict:
    from namestate.ingest import normalize_and_filter
    from namestate.langmap import default_table, load_table, predict_languages
    from namestate.models import load_model, predict_proba, rank_states

    model = load_model(args.model_file)
    name = normalize_and_filter(args.name.strip())
    if name is None:
        raise DataError(f"{args.name!r} is not a usable last name (3+ characters from a-z, 0-9)")
    probs = predict_proba(model, [name])[0]
    for state, p in rank_states(model, probs, args.top_k):
        print(f"{state}\t{p:.4f}")
    if args.languages:
        if args.language_table is not None:
            table, _ = load_table(args.language_table, model.states)
        else:
            table, _ = default_table(model.states)
        state_probs = dict(zip(model.states, (float(p) for p in probs)))
        print("languages:")
        for lang, s in predict_languages(state_probs, table, args.language_k):
            print(f"{lang}\t{s:.4f}")
    return {"outputs": []}


def cmd_plotdata(args) -> dict:
    import csv

    from namestate.evaluation import read_outcomes
    from namestate.lowess import lowess

    outcomes = read_outcomes(args.outcomes)
    if args.figure == "popularity":
        pts = [(o.popularity, o.name, int(o.hit)) for o in outcomes if o.popularity <= args.max_popularity]
    else:
        pts = [(o.female_share, o.name, int(o.hit)) for o in outcomes if o.female_share is not None]
    pts.sort()
    if len(pts) < 2:
        raise DataError("need at least 2 points for lowess")
    xs, smoothed = lowess([p[0] for p in pts], [p[2] for p in pts], args.fraction, args.iterations)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("x", "y", "smoothed"))
        for (x, _, y), s in zip(pts, smoothed):
            w.writerow((repr(float(x)), y, repr(float(s))))
    print(f"wrote {len(pts)} points to {args.output}")
    return {"outputs": [str(args.output)]}


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "stats": cmd_stats,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "plotdata": cmd_plotdata,
}


def _default_manifest_path(args) -> Optional[Path]:
    if args.manifest is not None:
        return args.manifest
    for attr in ("out_dir",):
        if getattr(args, attr, None) is not None:
            return getattr(args, attr) / "manifest.json"
    for attr in ("output", "out"):
        if getattr(args, attr, None) is not None:
            p = getattr(args, attr)
            return p.with_name(p.name + ".manifest.json")
    return None


def write_manifest(path: Path, argv: Sequence[str], args, info: dict, wall: float) -> None:
    params = {k: (str(v) if isinstance(v, Path) else [str(x) for x in v] if isinstance(v, list) else v)
              for k, v in sorted(vars(args).items()) if k not in ("manifest",)}
    doc = {
        "subcommand": args.command,
        "argv": list(argv),
        "parameters": params,
        "seed": getattr(args, "seed", None),
        "artifact_version": __version__,
        **info,
        "wall_seconds": round(wall, 3),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "rerun":
        try:
            doc = json.loads(args.manifest_file.read_text(encoding="utf-8"))
            replay = doc["argv"]
        except (OSError, ValueError, KeyError) as exc:
            print(f"namestate: cannot read manifest {args.manifest_file}: {exc}", file=sys.stderr)
            return EXIT_DATA
        return main(replay)
    if getattr(args, "threads", 1) < 1:
        print("namestate: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.perf_counter()
    try:
        info = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"namestate {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"namestate: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"namestate: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    path = _default_manifest_path(args)
    if path is not None:
        write_manifest(path, argv, args, info, time.perf_counter() - t0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
