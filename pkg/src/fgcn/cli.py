"""The ``fgcn`` command line: train, eval, predict, verify, synth, ablate.

Exit codes are a stable contract: 0 success, 1 usage or configuration
error, 2 data error, 3 numerical failure (divergence or a failed
verification property). All outputs go to the chosen output directory;
report files are byte-deterministic for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__, checkpoint, report
from .ablation import run_ablation
from .config import (config_snapshot, fusion_from, load_run_config,
                     model_config_from, resolve_path, resolve_topology,
                     synth_spec_from, train_config_from)
from .data import SequenceReader, load_dataset, preprocess, synth_to_dir
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .model import FeedbackGCN, streaming_predict
from .training import evaluate_model, evaluate_two_stream, train_model
from .verify import SUITES, run_suites

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped onto the exit-code contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _flat_sets(args):
    out = []
    for group in args.set or ():
        out.extend(group)
    return out


def build_parser():
    parser = _Parser(prog="fgcn",
                     description="Staged feedback graph network for skeleton "
                                 "action recognition.")
    parser.add_argument("--version", action="version", version=f"fgcn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_common(p, needs_config=True):
        p.add_argument("--config", required=needs_config,
                       help="config file (searched in $FGCN_CONFIG_DIR as fallback)")
        p.add_argument("--set", action="append", nargs="+", metavar="KEY=VALUE",
                       help="override config keys")
        p.add_argument("--out", help="output directory (overrides out_dir)")

    p_train = sub.add_parser("train", help="train on a manifest of sequences")
    add_common(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True,
                        help="checkpoint of the (spatial) model")
    p_eval.add_argument("--checkpoint-motion",
                        help="checkpoint of the motion model (two-stream runs)")
    p_eval.add_argument("--manifest", help="override the test manifest")
    p_eval.add_argument("--confusion", action="store_true",
                        help="also write the confusion matrix")

    p_pred = sub.add_parser("predict", help="stream one sequence, printing each "
                                            "stage's distribution as it is ready")
    p_pred.add_argument("--config", required=True)
    p_pred.add_argument("--set", action="append", nargs="+", metavar="KEY=VALUE")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--sequence", required=True, help="canonical sequence file")

    p_verify = sub.add_parser("verify", help="run oracle verification suites")
    p_verify.add_argument("suites", nargs="*", metavar="SUITE",
                          help=f"subset of {sorted(SUITES)} (default: all)")

    p_synth = sub.add_parser("synth", help="generate the synthetic dataset")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--set", action="append", nargs="+", metavar="KEY=VALUE",
                         help="override generator keys")

    p_abl = sub.add_parser("ablate", help="stage-count and clip-length sweeps")
    add_common(p_abl)

    return parser


# ---------------------------------------------------------------------------
# shared helpers


def _load_split(values, key, split):
    path = values[key]
    if not path:
        raise ConfigError(f"config key {key!r} is required for this command")
    resolved = resolve_path(values, path)
    if not os.path.exists(resolved):
        raise DataError(f"dataset manifest not found: {resolved}")
    dataset = load_dataset(resolved, split)
    if values["center"] or values["normalize_scale"]:
        topo = resolve_topology(values)
        dataset.sequences = [
            preprocess(s, topo, values["center"], values["normalize_scale"])
            for s in dataset.sequences]
    return dataset


def _stream_names(values):
    if values["two_stream"]:
        return ["spatial", "motion"]
    return [values["stream"]]


def _checkpoint_name(stream):
    return f"model-{stream}.ckpt"


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    values = load_run_config(args.config, _flat_sets(args))
    out_dir = report.ensure_dir(args.out or values["out_dir"])
    train_ds = _load_split(values, "train_manifest", "train")
    test_ds = _load_split(values, "test_manifest", "test") if values["test_manifest"] else None
    tconfig = train_config_from(values)
    spec = fusion_from(values)

    summary = [("stages", values["stages"]), ("clip_len", values["clip_len"]),
               ("fusion", values["fusion"]), ("seed", values["seed"])]
    models = {}
    wall_clock = 0.0
    for stream in _stream_names(values):
        model = FeedbackGCN(model_config_from(values, stream, train_ds.num_classes))
        models[stream] = model
        log_path = os.path.join(out_dir, f"train-log-{stream}.txt")
        records = []

        def on_epoch(record, _log=log_path, _records=records, _stream=stream):
            _records.append(record)
            with open(_log, "a", encoding="utf-8") as fh:
                fh.write(report.format_epoch_record(record) + "\n")
            print(f"[{_stream}] {report.format_epoch_record(record)}")

        def on_checkpoint(epoch, _model=model, _stream=stream):
            path = os.path.join(out_dir, f"model-{_stream}-epoch{epoch:04d}.ckpt")
            checkpoint.save(path, _model.state_arrays())

        open(log_path, "w", encoding="utf-8").close()
        train_report = train_model(train_ds, model, spec, tconfig,
                                   on_epoch=on_epoch, on_checkpoint=on_checkpoint)
        wall_clock += train_report.wall_clock
        ckpt_path = os.path.join(out_dir, _checkpoint_name(stream))
        checkpoint.save(ckpt_path, model.state_arrays())
        report.render_training_curves(
            os.path.join(out_dir, f"training-{stream}.png"), records,
            title=f"training ({stream})")
        summary += [
            (f"{stream}.epochs", train_report.stopped_epoch),
            (f"{stream}.final_train_loss", train_report.epochs[-1]["train_loss"]),
            (f"{stream}.final_train_acc", train_report.final_train_accuracy),
            (f"{stream}.checkpoint", _checkpoint_name(stream)),
        ]

    if test_ds is not None:
        if values["two_stream"]:
            combined, spatial, motion = evaluate_two_stream(
                test_ds, models["spatial"], models["motion"], spec, values["alpha"])
            summary += [("spatial.eval_acc", spatial.accuracy),
                        ("motion.eval_acc", motion.accuracy),
                        ("two_stream.eval_acc", combined.accuracy)]
            for stream, result in (("spatial", spatial), ("motion", motion)):
                for t, acc in enumerate(result.stage_accuracies, start=1):
                    summary.append((f"{stream}.eval_stage{t}_acc", acc))
                report.render_stage_accuracy(
                    os.path.join(out_dir, f"stages-{stream}.png"),
                    result.stage_accuracies, result.accuracy,
                    title=f"early predictions ({stream})")
        else:
            stream = values["stream"]
            result = evaluate_model(test_ds, models[stream], spec)
            summary.append((f"{stream}.eval_acc", result.accuracy))
            for t, acc in enumerate(result.stage_accuracies, start=1):
                summary.append((f"{stream}.eval_stage{t}_acc", acc))
            report.render_stage_accuracy(
                os.path.join(out_dir, f"stages-{stream}.png"),
                result.stage_accuracies, result.accuracy,
                title=f"early predictions ({stream})")

    summary_path = os.path.join(out_dir, "summary.txt")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("# effective configuration\n")
        fh.write(config_snapshot(values))
        fh.write("# results\n")
        for key, value in summary:
            fh.write(f"{key}={report._fmt(value)}\n")
    print(f"summary written to {summary_path} (wall clock {wall_clock:.1f}s)")
    return EXIT_OK


def _build_eval_models(args, values, classes):
    models = {}
    if values["two_stream"]:
        if not args.checkpoint_motion:
            raise ConfigError("two-stream evaluation needs --checkpoint-motion "
                              "(or set two_stream=false)")
        pairs = (("spatial", args.checkpoint), ("motion", args.checkpoint_motion))
    else:
        pairs = ((values["stream"], args.checkpoint),)
    for stream, path in pairs:
        if not os.path.exists(path):
            raise DataError(f"checkpoint not found: {path}")
        model = FeedbackGCN(model_config_from(values, stream, classes))
        model.load_state(checkpoint.load(path))
        models[stream] = model
    return models


def cmd_eval(args):
    values = load_run_config(args.config, _flat_sets(args))
    if args.manifest:
        values["test_manifest"] = args.manifest
    out_dir = report.ensure_dir(args.out or values["out_dir"])
    test_ds = _load_split(values, "test_manifest", "test")
    spec = fusion_from(values)
    models = _build_eval_models(args, values, test_ds.num_classes)

    pairs = [("fusion", values["fusion"]), ("sequences", len(test_ds))]
    if values["two_stream"]:
        combined, spatial, motion = evaluate_two_stream(
            test_ds, models["spatial"], models["motion"], spec, values["alpha"])
        results = (("spatial", spatial), ("motion", motion))
        pairs += [("spatial.accuracy", spatial.accuracy),
                  ("motion.accuracy", motion.accuracy),
                  ("two_stream.accuracy", combined.accuracy)]
        headline = combined
        print(f"two-stream accuracy {combined.accuracy:.6f} "
              f"(spatial {spatial.accuracy:.6f}, motion {motion.accuracy:.6f})")
    else:
        stream = values["stream"]
        result = evaluate_model(test_ds, models[stream], spec)
        results = ((stream, result),)
        pairs.append((f"{stream}.accuracy", result.accuracy))
        headline = result
        print(f"{stream} accuracy {result.accuracy:.6f}")

    for stream, result in results:
        table = os.path.join(out_dir, f"stage-table-{stream}.tsv")
        report.write_stage_table(table, result.stage_accuracies, result.accuracy)
        report.render_stage_accuracy(
            os.path.join(out_dir, f"stages-{stream}.png"),
            result.stage_accuracies, result.accuracy,
            title=f"early predictions ({stream})")
        print(f"[{stream}] stage accuracies:")
        for t, acc in enumerate(result.stage_accuracies, start=1):
            print(f"  stage {t}: {acc:.6f}")
        for t, acc in enumerate(result.stage_accuracies, start=1):
            pairs.append((f"{stream}.stage{t}_accuracy", acc))

    if args.confusion:
        report.write_confusion(os.path.join(out_dir, "confusion.tsv"),
                               headline.confusion)
        report.render_confusion(os.path.join(out_dir, "confusion.png"),
                                headline.confusion)

    report.write_key_values(os.path.join(out_dir, "eval-report.txt"), pairs,
                            header="evaluation")
    return EXIT_OK


def cmd_predict(args):
    values = load_run_config(args.config, _flat_sets(args))
    if values["normalize_scale"]:
        raise ConfigError("normalize_scale needs the whole sequence and cannot "
                          "be used with streaming prediction")
    if not os.path.exists(args.sequence):
        raise DataError(f"sequence file not found: {args.sequence}")
    stream = values["stream"]
    topo = resolve_topology(values)
    with SequenceReader(args.sequence) as reader:
        if reader.num_joints != topo.num_vertices:
            raise DataError(
                f"{args.sequence}: {reader.num_joints} joints, topology "
                f"{values['topology']!r} has {topo.num_vertices}")
        model = FeedbackGCN(model_config_from(values, stream, reader.num_classes))
        if not os.path.exists(args.checkpoint):
            raise DataError(f"checkpoint not found: {args.checkpoint}")
        model.load_state(checkpoint.load(args.checkpoint))
        spec = fusion_from(values)

        frames = reader.frames()
        if values["center"]:
            frames = _centered_frames(frames, topo.center)

        def on_stage(t, probs, frames_read):
            rendered = ",".join(f"{v:.6f}" for v in probs)
            print(f"stage={t + 1} frames_read={frames_read} probs={rendered}")

        prediction = streaming_predict(model, spec, reader.num_frames, frames,
                                       on_stage=on_stage)
    fused = prediction.fused_array()[0]
    rendered = ",".join(f"{v:.6f}" for v in fused)
    print(f"fused probs={rendered} class={int(np.argmax(fused))}")
    return EXIT_OK


def _centered_frames(frames, center):
    origin = None
    for frame in frames:
        if origin is None:
            origin = frame[:, center].copy()
        yield frame - origin[:, None, :]


def cmd_verify(args):
    names = args.suites or sorted(SUITES)
    results = run_suites(names)
    failed = 0
    for suite, check in results:
        status = "pass" if check.ok else "FAIL"
        detail = f"  ({check.detail})" if check.detail else ""
        print(f"[{status}] {check.name}{detail}")
        failed += 0 if check.ok else 1
    print(f"{len(results) - failed}/{len(results)} properties passed")
    if failed:
        raise NumericalError(f"{failed} verification properties failed")
    return EXIT_OK


def cmd_synth(args):
    spec = synth_spec_from(_flat_sets(args))
    manifests = synth_to_dir(spec, args.seed, args.out)
    print(f"wrote {spec.classes}-class dataset to {args.out}")
    for split, path in manifests.items():
        print(f"  {split}: {path}")
    return EXIT_OK


def cmd_ablate(args):
    values = load_run_config(args.config, _flat_sets(args))
    out_dir = report.ensure_dir(args.out or values["out_dir"])
    train_ds = _load_split(values, "train_manifest", "train")
    test_ds = _load_split(values, "test_manifest", "test")

    def on_cell(row):
        print(f"{row['axis']}={row['value']}: "
              f"train {row['train_acc']:.3f}, eval {row['eval_acc']:.3f}")

    rows = run_ablation(values, train_ds, test_ds, on_cell=on_cell)
    table_rows = [(r["axis"], r["value"], r["train_acc"], r["eval_acc"],
                   ",".join(f"{a:.6f}" for a in r["stage_accs"]))
                  for r in rows]
    table_path = os.path.join(out_dir, "ablation.tsv")
    report.write_tsv(table_path,
                     ("axis", "value", "train_acc", "eval_acc", "stage_accs"),
                     table_rows)
    for axis, label in (("stages", "stage count"), ("clip_len", "clip length")):
        axis_rows = [r for r in rows if r["axis"] == axis]
        report.render_sweep(
            os.path.join(out_dir, f"ablation-{axis}.png"), label,
            [r["value"] for r in axis_rows], [r["eval_acc"] for r in axis_rows],
            title=f"sweep over {label}")
    print(f"ablation table written to {table_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "predict": cmd_predict,
        "verify": cmd_verify,
        "synth": cmd_synth,
        "ablate": cmd_ablate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"fgcn: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"fgcn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ShapeError, FloatingPointError) as exc:
        print(f"fgcn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
