"""Command-line front end: ``edaseg <command> [flags]``.

Exit status is 0 on success, 1 on a usage error and 2 when the command
itself fails. Diagnostics go to stderr; results go to stdout or files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from edaseg import analyzer, pnm
from edaseg.arch import SpecError, load_spec, preset, preset_names
from edaseg.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from edaseg.lanesynth import (CLASS_NAMES, SceneConfig, generate_dataset, read_dataset,
                              render_prediction, u8_to_image, write_dataset)
from edaseg.metrics import ConfusionMatrix
from edaseg.network import predict
from edaseg.tensor import ShapeError
from edaseg.train import IGNORE_INDEX, TrainConfig, TrainingError, evaluate, train_loop

log = logging.getLogger("edaseg")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
RUNTIME_ERRORS = (ValueError, OSError, ShapeError, SpecError, CheckpointError, TrainingError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Report usage problems through an exception so the exit code is ours."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _specs(args):
    """Architectures from repeated --arch / --spec flags, in command-line order."""
    out = []
    for kind, value in args.sources or []:
        if kind == "spec":
            out.append(load_spec(value))
            continue
        try:
            out.append(preset(value))
        except SpecError as e:
            raise UsageError(str(e)) from None
    return out


class _Source(argparse.Action):
    def __call__(self, parser, namespace, values, option_string=None):
        items = list(getattr(namespace, self.dest) or [])
        items.append((option_string.lstrip("-"), values))
        setattr(namespace, self.dest, items)


def _emit(text):
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _figure(args, fn, *a):
    if getattr(args, "figure", None):
        from edaseg import plotting

        getattr(plotting, fn)(*a, args.figure)
        log.info("wrote figure %s", args.figure)


def _pred_labels(directory, count):
    base = os.path.join(directory, "labels")
    base = base if os.path.isdir(base) else directory
    out = []
    for i in range(count):
        path = os.path.join(base, f"{i:06d}.pgm")
        if not os.path.exists(path):
            raise ValueError(f"prediction {path} not found")
        out.append(pnm.read_pgm(path))
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_presets(args):
    for name in preset_names():
        spec = preset(name)
        _emit(f"{name}\tdepth={spec.depth}\tparams={analyzer.count_params(spec)}")
    return EXIT_OK


def cmd_generate(args):
    config = SceneConfig(width=args.width, height=args.height)
    config.validate()
    if args.count < 0:
        raise ValueError("--count must be >= 0")
    write_dataset(args.out, generate_dataset(args.count, args.seed, config))
    _emit(f"wrote {args.count} scenes ({args.width}x{args.height}) to {args.out}")
    return EXIT_OK


def cmd_analyze(args):
    specs = _specs(args)
    if not specs:
        raise UsageError("analyze: give at least one --arch or --spec")
    if args.diff and len(specs) != 2:
        raise UsageError("analyze: --diff needs exactly two architectures")
    reports = {s.name: analyzer.analyze(s, height=args.height, width=args.width) for s in specs}
    if args.diff:
        (na, ra), (nb, rb) = reports.items()
        pa, pb = (sum(r.params for r in x) for x in (ra, rb))
        ma, mb = (sum(r.macs for r in x) for x in (ra, rb))
        if args.format == "json":
            _emit(json.dumps({"a": na, "b": nb, "params_a": pa, "params_b": pb,
                              "macs_a": ma, "macs_b": mb, "params_diff": pb - pa,
                              "macs_diff": mb - ma}, indent=2))
        else:
            _emit(f"# {na} vs {nb} at {args.height}x{args.width}")
            _emit(analyzer.diff_reports(ra, rb))
            _emit(f"params_diff {pb - pa}\nmacs_diff {mb - ma}")
    elif args.format == "json":
        _emit(json.dumps({name: json.loads(analyzer.render_report(r, "json"))
                          for name, r in reports.items()}, indent=2))
    else:
        _emit("# MACs count multiply-accumulates (one per multiply-add, not FLOPs)")
        for name, r in reports.items():
            _emit(f"# {name} at {args.height}x{args.width}: "
                  f"params {sum(x.params for x in r)}, MACs {sum(x.macs for x in r)}")
            _emit(analyzer.render_report(r))
    _figure(args, "plot_stage_costs", reports)
    return EXIT_OK


def cmd_train(args):
    specs = _specs(args)
    if len(specs) != 1:
        raise UsageError("train: give exactly one --arch or --spec")
    samples = read_dataset(args.data)
    if not samples:
        raise ValueError(f"{args.data} holds no samples")
    config = TrainConfig(arch=specs[0], max_iter=args.iters, batch_size=args.batch,
                         base_lr=args.lr, seed=args.seed,
                         class_weighting=not args.no_class_weights)
    # one BLAS thread keeps every reduction order, and so the checkpoint, reproducible
    with threadpool_limits(limits=1):
        result = train_loop(config, samples)
    save_checkpoint(result.net, args.out)
    log_path = args.log or args.out + ".log.tsv"
    with open(log_path, "w") as f:
        f.write("iter\tlr\tloss\n")
        f.write("\n".join(result.log_lines()) + "\n")
    _emit(f"trained {specs[0].name} for {args.iters} iterations; "
          f"final loss {result.log[-1][2]:.4f}; checkpoint {args.out}; log {log_path}")
    _figure(args, "plot_loss_curve", result.log)
    return EXIT_OK


def cmd_eval(args):
    if (args.model is None) == (args.pred is None):
        raise UsageError("eval: give exactly one of --model or --pred")
    samples = read_dataset(args.data)
    if args.model:
        cm = evaluate(load_checkpoint(args.model), samples)
    else:
        cm = ConfusionMatrix(len(CLASS_NAMES), IGNORE_INDEX)
        for s, p in zip(samples, _pred_labels(args.pred, len(samples))):
            cm.update(p, s.label)
    iou = cm.iou_per_class()
    score = cm.miou()
    if args.format == "json":
        _emit(json.dumps({"miou": None if np.isnan(score) else score,
                          "iou": {CLASS_NAMES[c]: (None if np.isnan(v) else float(v))
                                  for c, v in enumerate(iou) if c != IGNORE_INDEX},
                          "pixels": int(cm.total)}, indent=2))
    else:
        for c, v in enumerate(iou):
            if c != IGNORE_INDEX:
                _emit(f"IoU {CLASS_NAMES[c]:<5} " + ("exempt" if np.isnan(v) else f"{v:.3f}"))
        _emit(f"mIoU {score:.3f}")
    _figure(args, "plot_class_iou", iou)
    return EXIT_OK


def cmd_bench(args):
    from edaseg.bench import benchmark_inference

    models = _specs(args) + [load_checkpoint(m) for m in args.model or []]
    if not models:
        raise UsageError("bench: give at least one --arch, --spec or --model")
    reports = [benchmark_inference(m, args.height, args.width, args.runs, args.warmup, args.seed)
               for m in models]
    if args.format == "json":
        _emit(json.dumps([r.to_dict() for r in reports], indent=2))
    else:
        _emit("arch\theight\twidth\truns\tmean_ms\tmedian_ms\tstd_ms")
        for r in reports:
            _emit(f"{r.arch}\t{r.height}\t{r.width}\t{r.runs}\t"
                  f"{r.mean:.2f}\t{r.median:.2f}\t{r.std:.2f}")
        for r in reports[1:]:
            _emit(f"ratio {r.arch}/{reports[0].arch} {r.mean / reports[0].mean:.3f}")
    _figure(args, "plot_latency", reports)
    return EXIT_OK


def cmd_infer(args):
    net = load_checkpoint(args.model)
    image = u8_to_image(pnm.read_ppm(args.input))[None]
    label = predict(net, image)[0]
    pnm.write_ppm(args.out, render_prediction(label))
    if args.labels:
        pnm.write_pgm(args.labels, label)
    _emit(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_sources(p, model=False):
    p.add_argument("--arch", dest="sources", action=_Source, metavar="NAME",
                   help="preset name (repeatable)")
    p.add_argument("--spec", dest="sources", action=_Source, metavar="FILE",
                   help="architecture JSON file (repeatable)")
    if model:
        p.add_argument("--model", action="append", metavar="CKPT", help="checkpoint (repeatable)")


def build_parser():
    parser = _Parser(prog="edaseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("presets", help="list built-in architectures")
    p.set_defaults(func=cmd_presets)

    p = sub.add_parser("generate", help="write a synthetic lane dataset")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--count", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=144)
    p.add_argument("--height", type=int, default=96)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("analyze", help="per-stage shapes, parameters, MACs, receptive field")
    _add_sources(p)
    p.add_argument("--width", type=int, default=720)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--diff", action="store_true", help="compare two architectures")
    p.add_argument("--figure", metavar="PNG", help="also plot per-stage MACs")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train on a dataset directory")
    _add_sources(p)
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--iters", type=int, default=3000)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="CKPT")
    p.add_argument("--log", metavar="TSV", help="training log (default CKPT.log.tsv)")
    p.add_argument("--no-class-weights", action="store_true")
    p.add_argument("--figure", metavar="PNG", help="also plot the loss curve")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="mIoU of a checkpoint or of saved predictions")
    p.add_argument("--model", metavar="CKPT")
    p.add_argument("--pred", metavar="DIR", help="predicted label PGMs instead of a model")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--figure", metavar="PNG", help="also plot per-class IoU")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="single-threaded inference latency")
    _add_sources(p, model=True)
    p.add_argument("--width", type=int, default=720)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--figure", metavar="PNG", help="also plot latency distributions")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("infer", help="segment one PPM image")
    p.add_argument("--model", required=True, metavar="CKPT")
    p.add_argument("--input", required=True, metavar="PPM")
    p.add_argument("--out", required=True, metavar="PPM", help="colour-coded prediction")
    p.add_argument("--labels", metavar="PGM", help="also write raw class ids")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"edaseg {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except RUNTIME_ERRORS as e:
        print(f"edaseg {args.command}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
