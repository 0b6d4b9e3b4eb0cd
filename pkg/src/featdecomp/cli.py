"""``featdecomp`` command line.

Exit status: 0 on success, 1 for usage or configuration errors, 2 when the
run itself fails.

Settings precedence: built-in defaults < ``--config`` file < flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ABLATIONS, ConfigError, RunConfig, load_config, resolve_paths, with_overrides
from .evaluation import PROTOCOLS, format_table, read_score_dump, report_from_dump, roc_curve
from .manifest import ManifestError, load_manifest
from .training import CheckpointError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("featdecomp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def cmd_train(args) -> int:
    from .pipeline import train_from_config

    cfg = with_overrides(load_config(args.config), seed=args.seed, ablate=args.ablate or (),
                         protocol=args.protocol, out_dir=args.out_dir)
    if args.config:
        cfg = resolve_paths(cfg, Path(args.config).resolve().parent)
    result, splits = train_from_config(cfg)
    print(f"train/val/test = {len(splits.train)}/{len(splits.validation)}/{len(splits.test)}")
    print(f"epochs run {result.epochs_run}, best epoch {result.best_epoch}, "
          f"best val AUC {result.best_auc:.4f}{' (early stop)' if result.stopped_early else ''}")
    print(f"outputs in {cfg.out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .pipeline import evaluate_checkpoint

    report = evaluate_checkpoint(args.checkpoint, args.manifest, args.protocol, args.out_dir,
                                 target_language=args.target_language, label=args.label or "")
    print(format_table([report]), end="")
    return EXIT_OK


def _plot_roc(dumps, labels, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    for dump, label in zip(dumps, labels):
        for group, (s, l) in sorted(read_score_dump(dump).items()):
            fpr, tpr, _ = roc_curve(s, l)
            ax.plot(fpr, tpr, label=f"{label}: {group}")
    ax.plot([0, 1], [0, 1], color="grey", lw=0.5, ls="--")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(fontsize="small")
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def _plot_loss(logs, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for log_path in logs:
        steps, totals = [], []
        with open(log_path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if rec.get("type") == "step":
                    steps.append(rec["step"])
                    totals.append(rec["total"])
        ax.plot(steps, totals, label=Path(log_path).parent.name or str(log_path))
    ax.set_xlabel("step")
    ax.set_ylabel("total loss")
    ax.legend(fontsize="small")
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def cmd_report(args) -> int:
    labels = args.labels or [Path(d).parent.name or Path(d).stem for d in args.dumps]
    if len(labels) != len(args.dumps):
        raise UsageError(f"got {len(labels)} labels for {len(args.dumps)} dumps")
    reports = [report_from_dump(d, label=lab) for d, lab in zip(args.dumps, labels)]
    table = format_table(reports)
    print(table, end="")
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    if args.plot_roc:
        _plot_roc(args.dumps, labels, Path(args.plot_roc))
    if args.plot_loss:
        _plot_loss(args.train_logs or [], Path(args.plot_loss))
    return EXIT_OK


def cmd_preprocess_cache(args) -> int:
    from .training import ClipSource

    entries = load_manifest(args.manifest)
    source = ClipSource(cache_audio=False, spec_cache_dir=args.cache_dir)
    Path(args.cache_dir).mkdir(parents=True, exist_ok=True)
    for e in entries:
        source.eval_spectrogram(e)
    print(f"cached {len(entries)} spectrograms in {args.cache_dir}")
    return EXIT_OK


def cmd_synth_corpus(args) -> int:
    from .synthetic import make_corpus

    entries = make_corpus(args.out_dir, n_clips=args.n_clips, seed=args.seed)
    print(f"wrote {len(entries)} clips and manifest.jsonl to {args.out_dir}")
    return EXIT_OK


def cmd_init_config(args) -> int:
    text = RunConfig().dump()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="featdecomp", description="Dual-stream synthetic speech detector.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a detector from a config file")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--ablate", action="append", choices=sorted(ABLATIONS), metavar="SWITCH",
                   help="repeatable; one of: " + ", ".join(sorted(ABLATIONS)))
    t.add_argument("--protocol", choices=PROTOCOLS)
    t.add_argument("--out-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a manifest with a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--protocol", required=True, choices=PROTOCOLS)
    e.add_argument("--out-dir", required=True)
    e.add_argument("--target-language")
    e.add_argument("--label")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="merge score dumps into one table")
    r.add_argument("dumps", nargs="+")
    r.add_argument("--labels", nargs="+")
    r.add_argument("--out")
    r.add_argument("--plot-roc", metavar="PNG")
    r.add_argument("--plot-loss", metavar="PNG")
    r.add_argument("--train-logs", nargs="+", metavar="JSONL")
    r.set_defaults(func=cmd_report)

    c = sub.add_parser("preprocess-cache", help="precompute evaluation spectrograms")
    c.add_argument("--manifest", required=True)
    c.add_argument("--cache-dir", required=True)
    c.set_defaults(func=cmd_preprocess_cache)

    s = sub.add_parser("synth-corpus", help="write the toy noise/tone corpus")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--n-clips", type=int, default=400)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth_corpus)

    i = sub.add_parser("init-config", help="print the default config as YAML")
    i.add_argument("--output")
    i.set_defaults(func=cmd_init_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"featdecomp: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ManifestError, CheckpointError, OSError, ValueError, RuntimeError) as exc:
        print(f"featdecomp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
