"""Command-line front door.

Subcommands: build-prior, synth, train, grid-search, compare, eval,
report. Single-method commands read an optional JSON config file (keys
mirror ExperimentConfig; individual flags override it). Exit codes: 0 on
success, 1 for usage problems, 2 for data/format/training failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .errors import FormatError, ParseError, TrainingDiverged
from .experiment import (DEFAULT_ALPHAS, AlphaGrid, ExperimentConfig,
                         MethodSpec, build_prior_for_kind, default_methods,
                         evaluate_model, generate_dataset, grid_search_alpha,
                         grid_to_csv, load_dataset, load_experiment_config,
                         method_kind, run_comparison, run_trial, save_dataset)
from .metrics import (PRIMARY_METRIC, build_report, many_shot_from_labels,
                      parse_report_csv, report_to_csv, report_to_plotdata,
                      report_to_table)
from .priors import (build_glove_prior, build_temporal_prior,
                     build_uniform_prior, build_verb_noun_prior,
                     load_embeddings, mix_priors, save_prior)
from .seqmodel import ProtocolConfig, load_checkpoint, save_checkpoint
from .synthdata import GrammarConfig
from .vocab import ActionVocab, parse_annotations

# CLI spellings for the prior/method kinds.
_KIND_ALIASES = {
    "onehot": "onehot",
    "uniform": "uniform",
    "vn": "verb_noun",
    "glove": "glove",
    "temporal": "temporal",
    "mix": "glove+verb_noun",
}
_PRIOR_CHOICES = [k for k in _KIND_ALIASES if k != "onehot"]


def _parse_modalities(spec) -> tuple[tuple[str, int], ...]:
    """'rgb:16,flow:16' (or a [[name, dim], ...] list) -> ((name, dim), ...)."""
    if not isinstance(spec, str):
        return tuple((str(n), int(d)) for n, d in spec)
    out = []
    for part in spec.split(","):
        name, _, dim = part.partition(":")
        if not name or not dim:
            raise ValueError(f"bad modality spec {part!r}; use name:dim")
        try:
            out.append((name.strip(), int(dim)))
        except ValueError:
            raise ValueError(f"bad modality dim in {part!r}") from None
    return tuple(out)


def _load_embeddings_file(path: str):
    """Load a word-embedding text file, inferring the dimension from the
    first non-empty line."""
    text = Path(path).read_text()
    for line in text.splitlines():
        if line.strip():
            dimension = len(line.split()) - 1
            break
    else:
        raise ParseError(f"{path}: empty embedding file")
    if dimension < 1:
        raise ParseError(f"{path}: first line has no embedding values")
    return load_embeddings(text, dimension)


def _add_training_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default="",
                   help="JSON experiment config; flags below override it")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--hidden-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--early-stop-time", type=float, default=None,
                   help="anticipation time (s) scored for model selection")
    p.add_argument("--many-shot-threshold", type=int, default=None)


def _experiment_config(args, trials: int | None = None) -> ExperimentConfig:
    config = (load_experiment_config(args.config) if args.config
              else ExperimentConfig())
    overrides = {}
    for field, value in [
        ("epochs", args.epochs), ("batch_size", args.batch_size),
        ("trials", trials if trials is not None else args.trials),
        ("hidden_size", args.hidden_size),
        ("learning_rate", args.learning_rate), ("seed", args.seed),
        ("early_stop_time", args.early_stop_time),
        ("many_shot_threshold", args.many_shot_threshold),
    ]:
        if value is not None:
            overrides[field] = value
    return replace(config, **overrides) if overrides else config


_SYNTH_DEFAULTS = {
    "verbs": 10, "nouns": 12, "density": 0.5, "videos": 200,
    "video_length": 25, "noise": 0.25, "sigma_within": 0.25,
    "sigma_between": 1.0, "markov_concentration": 1.0,
    "modalities": "rgb:16,flow:16", "embed_dim": None,
    "cohort_similarity": 0.6, "seed": 0, "stride": 0.25, "encode_steps": 6,
    "decode_steps": 8, "snippet_len": 5,
}


def _cmd_synth(args) -> int:
    settings = dict(_SYNTH_DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{args.config}: invalid JSON ({exc})") from None
        unknown = set(loaded) - set(settings)
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        settings.update(loaded)
    for key in settings:
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    grammar_config = GrammarConfig(
        num_verbs=settings["verbs"],
        num_nouns=settings["nouns"],
        action_density=settings["density"],
        sigma_within=settings["sigma_within"],
        sigma_between=settings["sigma_between"],
        markov_concentration=settings["markov_concentration"],
        modalities=_parse_modalities(settings["modalities"]),
        seed=settings["seed"],
    )
    protocol = ProtocolConfig(snippet_stride=settings["stride"],
                              encode_steps=settings["encode_steps"],
                              decode_steps=settings["decode_steps"],
                              snippet_len=settings["snippet_len"])
    dataset = generate_dataset(
        grammar_config, protocol,
        num_videos=settings["videos"],
        video_length=settings["video_length"],
        noise_sigma=settings["noise"],
        embed_dim=settings["embed_dim"],
        cohort_similarity=settings["cohort_similarity"],
        seed=settings["seed"],
    )
    save_dataset(dataset, args.out_dir)
    print(f"wrote dataset to {args.out_dir}: K={dataset.K}, "
          f"train={dataset.train.num_samples}, val={dataset.val.num_samples}, "
          f"test={dataset.test.num_samples}")
    return 0


def _cmd_build_prior(args) -> int:
    vocab = ActionVocab.from_json(Path(args.vocab).read_text())
    kind = _KIND_ALIASES[args.kind]
    if kind in ("glove", "glove+verb_noun") and not args.embeddings:
        raise ValueError(f"--kind {args.kind} requires --embeddings")
    if kind == "temporal" and not args.annotations:
        raise ValueError("--kind temporal requires --annotations")
    if kind == "uniform":
        prior = build_uniform_prior(vocab.K)
    elif kind == "verb_noun":
        prior = build_verb_noun_prior(vocab)
    elif kind == "glove":
        prior = build_glove_prior(vocab, _load_embeddings_file(args.embeddings))
    elif kind == "temporal":
        annotations = parse_annotations(Path(args.annotations).read_text())
        prior = build_temporal_prior(annotations, vocab)
    else:
        table = _load_embeddings_file(args.embeddings)
        prior = mix_priors([build_glove_prior(vocab, table),
                            build_verb_noun_prior(vocab)], [0.5, 0.5])
    save_prior(prior, args.out, vocab_hash=vocab.content_hash())
    print(f"wrote prior {prior.kind} (K={prior.K}) to {args.out}")
    return 0


def _method_and_alpha(args, config: ExperimentConfig) -> tuple[str, float]:
    """Resolve --method/--alpha flags against the config's smoothing."""
    if args.method:
        kind = _KIND_ALIASES[args.method]
        alpha = args.alpha if args.alpha is not None else DEFAULT_ALPHAS[kind]
    else:
        kind = method_kind(config.smoothing)
        alpha = args.alpha if args.alpha is not None else config.smoothing.alpha
    return kind, alpha


def _cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    config = _experiment_config(args, trials=1)
    kind, alpha = _method_and_alpha(args, config)
    prior = build_prior_for_kind(kind, dataset)
    lines: list[str] = []

    def log(msg: str) -> None:
        lines.append(msg)
        if args.verbose:
            print(msg)

    result, probs = run_trial(dataset, prior, alpha, 0, config, log=log)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.params, out / "checkpoint.bin")
    (out / "train_log.txt").write_text("\n".join(lines) + "\n")
    many_shot = many_shot_from_labels(dataset.train.targets, dataset.vocab,
                                      config.many_shot_threshold)
    report = build_report([(probs, dataset.test.targets)], dataset.protocol,
                          dataset.vocab, many_shot)
    (out / "metrics.csv").write_text(report_to_csv({kind: report}))
    step = dataset.protocol.step_for_time(config.early_stop_time)
    cell = report.cell(PRIMARY_METRIC, step)
    print(f"{kind} alpha={alpha:g}: best epoch {result.best_epoch}, "
          f"val_top5 {result.best_score:.2f}, test {PRIMARY_METRIC}"
          f"@{config.early_stop_time:g}s {cell.mean:.2f}")
    return 0


def _cmd_grid_search(args) -> int:
    dataset = load_dataset(args.data)
    config = _experiment_config(args)
    kind = (_KIND_ALIASES[args.method] if args.method
            else method_kind(config.smoothing))
    grid = config.alpha_grid
    grid_overrides = {}
    for field, value in [("start", args.alpha_start), ("stop", args.alpha_stop),
                         ("step", args.alpha_step)]:
        if value is not None:
            grid_overrides[field] = value
    if grid_overrides:
        grid = replace(grid, **grid_overrides)
    log = print if args.verbose else None
    result = grid_search_alpha(dataset, kind, config, grid, log=log)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "grid.csv").write_text(grid_to_csv(result))
    (out / "best_alpha.json").write_text(json.dumps(
        {"kind": kind, "best_alpha": result.best_alpha}) + "\n")
    print(f"best alpha for {kind}: {result.best_alpha:g}")
    return 0


def _cmd_compare(args) -> int:
    dataset = load_dataset(args.data)
    config = _experiment_config(args)
    overrides: dict[str, float] = {}
    for spec in args.set_alpha or []:
        name, _, value = spec.partition("=")
        if name not in _KIND_ALIASES or not value:
            raise ValueError(f"bad --set-alpha {spec!r}; use kind=alpha")
        overrides[_KIND_ALIASES[name]] = float(value)
    if args.methods:
        names = [m.strip() for m in args.methods.split(",") if m.strip()]
        bad = [m for m in names if m not in _KIND_ALIASES]
        if bad:
            raise ValueError(f"unknown methods {bad}; "
                             f"choose from {sorted(_KIND_ALIASES)}")
        kinds = [_KIND_ALIASES[m] for m in names]
    else:
        kinds = [m.kind for m in default_methods()]
    methods = [MethodSpec(name=k, kind=k,
                          alpha=overrides.get(k, DEFAULT_ALPHAS[k]))
               for k in kinds]
    reports = run_comparison(dataset, methods, config, out_dir=args.out_dir,
                             jobs=args.jobs, log=print)
    print()
    print(report_to_table(reports, PRIMARY_METRIC), end="")
    return 0


def _cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    params = load_checkpoint(args.checkpoint)
    if params.config.num_classes != dataset.K:
        raise ValueError(f"checkpoint has {params.config.num_classes} classes, "
                         f"dataset has {dataset.K}")
    if params.config.feature_dims != tuple(d for _, d in dataset.modalities):
        raise ValueError("checkpoint feature dims do not match the dataset")
    split = getattr(dataset, args.split)
    probs = evaluate_model(params, split, dataset.protocol)
    many_shot = many_shot_from_labels(dataset.train.targets, dataset.vocab,
                                      args.many_shot_threshold)
    report = build_report([(probs, split.targets)], dataset.protocol,
                          dataset.vocab, many_shot)
    name = args.name or Path(args.checkpoint).stem
    csv_text = report_to_csv({name: report})
    if args.out:
        Path(args.out).write_text(csv_text)
        print(f"wrote {args.out}")
    else:
        print(csv_text, end="")
    return 0


def _cmd_report(args) -> int:
    src = Path(args.runs)
    if src.is_dir():
        src = src / "report.csv"
    reports = parse_report_csv(src.read_text())
    if args.format == "csv":
        text = report_to_csv(reports)
    elif args.format == "table":
        text = report_to_table(reports, args.metric)
    else:
        text = report_to_plotdata(reports)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softact",
        description="Soft-label action anticipation: synthetic datasets, "
                    "smoothing priors, training, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset bundle")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default="",
                   help="JSON with the keys below; flags override it")
    p.add_argument("--verbs", type=int, default=None)
    p.add_argument("--nouns", type=int, default=None)
    p.add_argument("--density", type=float, default=None,
                   help="fraction of verb-noun cells that are actions")
    p.add_argument("--videos", type=int, default=None)
    p.add_argument("--video-length", type=int, default=None,
                   help="actions per video")
    p.add_argument("--noise", type=float, default=None,
                   help="feature noise sigma")
    p.add_argument("--sigma-within", type=float, default=None)
    p.add_argument("--sigma-between", type=float, default=None)
    p.add_argument("--markov-concentration", type=float, default=None)
    p.add_argument("--modalities", default=None, help="e.g. rgb:16,flow:16")
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--cohort-similarity", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--stride", type=float, default=None,
                   help="snippet stride in seconds")
    p.add_argument("--encode-steps", type=int, default=None)
    p.add_argument("--decode-steps", type=int, default=None)
    p.add_argument("--snippet-len", type=int, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("build-prior",
                       help="build a smoothing prior and save it as CSV")
    p.add_argument("--kind", required=True, choices=_PRIOR_CHOICES)
    p.add_argument("--vocab", required=True, help="vocab JSON file")
    p.add_argument("--embeddings", default="",
                   help="word embedding text file (glove/mix)")
    p.add_argument("--annotations", default="",
                   help="annotation CSV (temporal)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_prior)

    p = sub.add_parser("train", help="train one model and score the test split")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--method", choices=sorted(_KIND_ALIASES), default="",
                   help="smoothing method (default: the config's smoothing)")
    p.add_argument("--alpha", type=float, default=None,
                   help="smoothing strength (default: the method's tuned value)")
    p.add_argument("--verbose", action="store_true")
    _add_training_args(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("grid-search", help="search alpha on the validation split")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--method", choices=_PRIOR_CHOICES, default="")
    p.add_argument("--alpha-start", type=float, default=None)
    p.add_argument("--alpha-stop", type=float, default=None)
    p.add_argument("--alpha-step", type=float, default=None)
    p.add_argument("--verbose", action="store_true")
    _add_training_args(p)
    p.set_defaults(func=_cmd_grid_search)

    p = sub.add_parser("compare", help="train several methods and write a "
                                       "combined report")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--methods", default="",
                   help="comma list (default: all six methods)")
    p.add_argument("--set-alpha", action="append", metavar="KIND=ALPHA",
                   help="override a method's alpha, e.g. uniform=0.2")
    p.add_argument("--jobs", type=int, default=1)
    _add_training_args(p)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint on a split")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--out", default="", help="metrics CSV path (default stdout)")
    p.add_argument("--name", default="", help="row label in the CSV")
    p.add_argument("--many-shot-threshold", type=int, default=100)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="reformat a comparison report")
    p.add_argument("--runs", required=True,
                   help="comparison output directory or report.csv path")
    p.add_argument("--format", choices=["csv", "table", "plotdata"],
                   default="table")
    p.add_argument("--metric", default=PRIMARY_METRIC)
    p.add_argument("--out", default="")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (ParseError, FormatError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
