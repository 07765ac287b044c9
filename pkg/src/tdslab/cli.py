"""``tdslab`` command line: gen, train, eval, drift, compare.

Exit status: 0 success, 1 usage or config error, 2 runtime error. Every
subcommand that writes a directory drops ``config.echo`` next to its outputs
and an ``INCOMPLETE`` marker that is removed only on success.
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import read_checkpoint
from .config import KEYS, build_experiment, echo_text, read_config
from .dataset import MemoryManifest, read_manifest
from .errors import ConfigError, TdsLabError
from .generator import generate_dataset, iter_spans
from .metrics import cate_drift_table, entity_cv, stat_drift_table
from .trainer import METHODS, RunLog, TrainConfig, Trainer, collapse_diagnostics, evaluate, train_incremental

MARKER = "INCOMPLETE"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p):
    p.add_argument("--config", help="key=value config file; flags override it")
    group = p.add_argument_group("config keys")
    for k in KEYS:
        group.add_argument(f"--{k.name}", dest=f"key_{k.name}", metavar="V", default=None, help=k.help or None)


def build_parser():
    parser = _Parser(prog="tdslab", description="Temporal-shift experiments on synthetic span data.")
    parser.add_argument("--version", action="version", version=f"tdslab {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen", help="generate span files and a manifest")
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("train", help="single-pass incremental training with next-span evaluation")
    p.add_argument("--data", required=True, help="directory holding manifest.txt")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="metrics of a checkpoint on one span")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--span", type=int, default=None, help="default: last span")
    p.add_argument("--out", help="write eval.ndjson here as well")
    p.add_argument("--with-collapse", action="store_true", help="add collapse diagnostics")

    p = sub.add_parser("drift", help="per-feature CV and JSD tables as NDJSON")
    p.add_argument("--data", required=True)
    p.add_argument("--out")

    p = sub.add_parser("compare", help="train several methods over seeds and report deltas vs erm")
    p.add_argument("--methods", default="erm,elbo_tds")
    p.add_argument("--seeds", default="5", help="a count N (seeds 0..N-1) or a comma list")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    return parser


def _experiment(args):
    values = read_config(args.config) if getattr(args, "config", None) else {}
    for k in KEYS:
        v = getattr(args, f"key_{k.name}", None)
        if v is not None:
            values[k.name] = v
    return build_experiment(values)


def _emit(rows, path=None):
    lines = [json.dumps(r, sort_keys=True) for r in rows]
    if path is not None:
        Path(path).write_text("".join(line + "\n" for line in lines))
    for line in lines:
        print(line)


class _Outdir:
    """Creates the directory, the INCOMPLETE marker and the config echo."""

    def __init__(self, path, echo):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / MARKER).write_text("run did not finish; outputs here are partial\n")
        (self.path / "config.echo").write_text(echo)

    def done(self):
        (self.path / MARKER).unlink()


def _echo_extra(command, schema_hash=None):
    extra = [("command", command), ("tool_version", __version__)]
    if schema_hash:
        extra.append(("schema_hash", schema_hash))
    return extra


def cmd_gen(args):
    exp = _experiment(args)
    out = _Outdir(args.out, echo_text(exp, _echo_extra("gen", exp.gen.schema.hash())))
    generate_dataset(exp.gen, out.path)
    out.done()


def cmd_train(args):
    exp = _experiment(args)
    manifest = read_manifest(args.data)
    out = _Outdir(args.out, echo_text(exp, _echo_extra("train", manifest.schema.hash())
                                      + [("data", str(Path(args.data).resolve()))]))
    train_incremental(manifest, exp.train, out.path, resume=args.resume, collapse=exp.collapse)
    out.done()


def cmd_eval(args):
    manifest = read_manifest(args.data)
    _, meta = read_checkpoint(args.checkpoint, expect_schema_hash=manifest.schema.hash())
    config = TrainConfig.from_dict(meta["config"])
    trainer = Trainer(manifest.schema, config)
    trainer.load(args.checkpoint)
    span_t = manifest.n_spans - 1 if args.span is None else args.span
    if not 0 <= span_t < manifest.n_spans:
        raise ConfigError(f"span {span_t} outside 0..{manifest.n_spans - 1}")
    seen = [t for t in trainer.trained_spans if t >= span_t]
    if seen:
        print(f"tdslab: warning: checkpoint was trained on span(s) {seen}; this is not a held-out evaluation",
              file=sys.stderr)
    span = manifest.load_span(span_t)
    report = evaluate(trainer.model, span, manifest.schema)
    if args.with_collapse:
        report.view_variance, report.probe_error = collapse_diagnostics(
            trainer.model, span, manifest.schema, config.augment, seed=config.seed)
    rows = [{"span": span_t, "metric": m, "value": v, "method": config.method, "seed": config.seed,
             "trained_spans": trainer.trained_spans} for m, v in report.rows()]
    if args.out:
        out = _Outdir(args.out, f"command=eval\ncheckpoint={Path(args.checkpoint).resolve()}\n"
                                f"data={Path(args.data).resolve()}\nspan={span_t}\ntool_version={__version__}\n")
        _emit(rows, out.path / "eval.ndjson")
        out.done()
    else:
        _emit(rows)


def cmd_drift(args):
    manifest = read_manifest(args.data)
    spans = [manifest.load_span(t) for t in range(manifest.n_spans)]
    rows = stat_drift_table(spans, manifest.schema) + entity_cv(spans, manifest.schema) \
        + cate_drift_table(spans, manifest.schema)
    if args.out:
        out = _Outdir(args.out, f"command=drift\ndata={Path(args.data).resolve()}\n"
                                f"schema_hash={manifest.schema.hash()}\ntool_version={__version__}\n")
        _emit(rows, out.path / "drift.ndjson")
        out.done()
    else:
        _emit(rows)


def _seed_list(text):
    text = text.strip()
    if "," in text:
        return [int(s) for s in text.split(",") if s.strip()]
    n = int(text)
    if n < 1:
        raise ConfigError("--seeds needs at least one seed")
    return list(range(n))


def compare_rows(logs, methods, baseline="erm"):
    """``logs[(method, seed)]`` are RunLogs. One row per (method, span, metric)
    with mean/std over seeds of the difference to ``baseline``."""
    seeds = sorted({s for (_, s) in logs})
    rows = []
    for method in methods:
        if method == baseline:
            continue
        keys = sorted({(r["span"], r["metric"]) for r in logs[(method, seeds[0])].records
                       if r["metric"].startswith(("auc.", "gauc.")) and r["metric"].count(".") == 1})
        for span, metric in keys:
            ours = np.array([logs[(method, s)].values(metric)[span] for s in seeds])
            base = np.array([logs[(baseline, s)].values(metric)[span] for s in seeds])
            diff = ours - base
            rows.append({"span": span, "metric": metric, "method": method, "baseline": baseline,
                         "n_seeds": len(seeds), "mean": float(ours.mean()), "baseline_mean": float(base.mean()),
                         "delta_mean": float(diff.mean()), "delta_std": float(diff.std()),
                         "relative_delta_mean": float((diff / base).mean())})
    return rows


def cmd_compare(args):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
    if "erm" not in methods:
        methods = ["erm"] + methods
    seeds = _seed_list(args.seeds)
    exp = _experiment(args)
    out = _Outdir(args.out, echo_text(exp, _echo_extra("compare") + [("methods", ",".join(methods)),
                                                                       ("seeds", ",".join(map(str, seeds)))]))
    logs = {}
    for seed in seeds:
        run = exp.with_seed(seed)
        manifest = MemoryManifest(run.gen.schema, list(iter_spans(run.gen)))
        for method in methods:
            cfg = TrainConfig.from_dict({**run.train.to_dict(), "method": method})
            run_dir = out.path / "runs" / method / f"seed{seed}"
            logs[(method, seed)], _ = train_incremental(manifest, cfg, run_dir, collapse=run.collapse)
    _emit(compare_rows(logs, methods), out.path / "compare.ndjson")
    out.done()


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "drift": cmd_drift, "compare": cmd_compare}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"tdslab: usage error: {exc}", file=sys.stderr)
        return 1
    except (TdsLabError, OSError, ValueError, ArithmeticError, RuntimeError, KeyError) as exc:
        print(f"tdslab: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
