"""Command line entry point: ``visionbeam {generate,train,eval,sweep,pattern}``.

Exit codes: 0 ok, 2 usage error, 3 missing or unwritable files, 4 model and
data disagree (head size vs labels).
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import formats
from .beamforming import beam_pattern, build_steering_codebook
from .blockage import BlockagePredictor, NUMERICAL_ZERO, detection_target, status_accuracy
from .dataset import (
    NUM_BEAMS,
    SCENARIOS,
    generate_dataset,
    load_images,
    load_manifest,
    load_sample,
    read_labels,
    split_indices,
)
from .learning import (
    ClassifierModel,
    TrainConfig,
    build_classifier,
    forward_logits,
    replace_head,
    top_k_from_logits,
    train,
)
from .scene import ABSENT

log = logging.getLogger("visionbeam")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_MISMATCH = 0, 2, 3, 4
DEFAULT_FRACTIONS = (0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0)
TASK_CLASSES = {"beam": NUM_BEAMS, "detect": 2}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# ---------------------------------------------------------------- task data


class TaskData:
    """Images and 0-based class targets of one task over a dataset directory."""

    def __init__(self, root: Path, task: str):
        try:
            self.manifest = load_manifest(root)
        except (FileNotFoundError, ValueError) as exc:
            raise CliError(f"cannot open dataset {root}: {exc}", EXIT_IO)
        self.root = Path(root)
        beams, statuses = read_labels(root)
        if task == "beam":
            # absent users carry no beam label
            self.indices = np.flatnonzero(statuses != ABSENT)
            self.targets = beams[self.indices] - 1
        else:
            self.indices = np.arange(len(statuses))
            self.targets = np.array([detection_target(s) for s in statuses], dtype=np.int64)
        self.statuses = statuses
        self._images = None

    @property
    def images(self) -> np.ndarray:
        if self._images is None:
            self._images = load_images(self.root, self.indices)
        return self._images

    def split(self, train_frac: float, seed: int):
        """Positions (into ``indices``) of the train split in seeded order, and the test split."""
        train_pos, test_pos = split_indices(len(self.indices), train_frac, seed)
        order = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 4]))).permutation(len(train_pos))
        return train_pos[order], test_pos


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(
            batch_size=args.batch,
            learning_rate=args.lr,
            weight_decay=args.wd,
            lr_drop_epochs=tuple(args.drops),
            lr_drop_factor=args.drop_factor,
            num_epochs=args.epochs,
            seed=args.seed,
            optimizer=args.optimizer,
            momentum=args.momentum,
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE)


def _initial_model(args, num_classes: int) -> ClassifierModel:
    if args.init is None:
        return build_classifier(num_classes, args.seed)
    try:
        base = formats.read_model(args.init)
    except (OSError, formats.FormatError) as exc:
        raise CliError(f"cannot read checkpoint {args.init}: {exc}", EXIT_IO)
    return replace_head(base, num_classes, args.seed)


def _fit(data: TaskData, positions: np.ndarray, args, num_classes: int):
    targets = data.targets[positions]
    if len(targets) and targets.max() >= num_classes:
        raise CliError(
            f"labels reach class {targets.max()} but the head has {num_classes} outputs", EXIT_MISMATCH
        )
    model = _initial_model(args, num_classes)
    return train(model, data.images[positions], targets, _train_config(args))


def _write_text(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO)


def _log_csv(history) -> str:
    out = io.StringIO()
    out.write("epoch,lr,train_loss,train_acc\n")
    for e in history:
        out.write(f"{e.epoch},{e.lr:.6g},{e.train_loss:.10f},{e.train_acc:.6f}\n")
    return out.getvalue()


def _metrics_csv(rows) -> str:
    return "metric,value\n" + "".join(f"{k},{v:.6f}\n" for k, v in rows)


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    if args.count < 10:
        raise CliError("--count must be at least 10", EXIT_USAGE)
    try:
        manifest = generate_dataset(args.scenario, args.count, args.seed, args.out, num_beams=args.beams)
    except OSError as exc:
        raise CliError(f"cannot write dataset to {args.out}: {exc}", EXIT_IO)
    _, statuses = read_labels(args.out)
    counts = {s: int(np.sum(statuses == s)) for s in (-1, 0, 1)}
    print(
        f"wrote {manifest.sample_count} {manifest.scenario} samples to {args.out} "
        f"(seed {manifest.seed}; status counts absent={counts[-1]} unblocked={counts[0]} blocked={counts[1]})"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    data = TaskData(Path(args.data), args.task)
    num_classes = args.classes or TASK_CLASSES[args.task]
    train_pos, test_pos = data.split(args.split, args.seed)
    model, history = _fit(data, train_pos, args, num_classes)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        formats.write_model(out / "model.bsnn", model)
    except OSError as exc:
        raise CliError(f"cannot write checkpoint to {out}: {exc}", EXIT_IO)
    _write_text(str(out / "train_log.csv"), _log_csv(history))
    print(f"trained {args.task} model on {len(train_pos)} samples ({len(test_pos)} held out); "
          f"final loss {history[-1].train_loss:.4f}, train acc {history[-1].train_acc:.4f}")
    return EXIT_OK


def _load_checkpoint(path: str) -> ClassifierModel:
    try:
        return formats.read_model(path)
    except (OSError, formats.FormatError) as exc:
        raise CliError(f"cannot read checkpoint {path}: {exc}", EXIT_IO)


def cmd_eval(args) -> int:
    model = _load_checkpoint(args.model)
    if args.task == "blockage":
        if model.num_classes != 2:
            raise CliError("blockage evaluation needs a 2-class detector", EXIT_MISMATCH)
        data = TaskData(Path(args.data), "detect")
        _, test_pos = data.split(args.split, args.seed)
        samples = [load_sample(data.root, int(i)) for i in data.indices[test_pos]]
        report = status_accuracy(BlockagePredictor(model, args.threshold), samples)
        _write_text(args.out, _metrics_csv([("status_accuracy", report.accuracy), ("anomalies", report.anomalies)]))
        if args.confusion:
            _write_text(args.confusion, report.to_csv())
        return EXIT_OK
    data = TaskData(Path(args.data), args.task)
    _, test_pos = data.split(args.split, args.seed)
    targets = data.targets[test_pos]
    if len(targets) and targets.max() >= model.num_classes:
        raise CliError("test labels exceed the checkpoint's head size", EXIT_MISMATCH)
    logits = forward_logits(model, data.images[test_pos])
    if args.task == "detect":
        rows = [("accuracy", top_k_from_logits(logits, targets, 1))]
    else:
        rows = [(f"top{k}", top_k_from_logits(logits, targets, k)) for k in args.topk]
    _write_text(args.out, _metrics_csv(rows))
    return EXIT_OK


def run_sweep(data: TaskData, args, fractions: Sequence[float]) -> List[dict]:
    num_classes = args.classes or TASK_CLASSES[args.task]
    train_pos, test_pos = data.split(args.split, args.seed)
    test_images, test_targets = data.images[test_pos], data.targets[test_pos]
    results = []
    for f in fractions:
        subset = train_pos[: int(math.ceil(f * len(train_pos) - 1e-9))]
        model, _ = _fit(data, subset, args, num_classes)
        logits = forward_logits(model, test_images)
        row = {"fraction": f}
        if args.task == "beam":
            for k in (1, 2, 3):
                row[f"top{k}"] = top_k_from_logits(logits, test_targets, k)
        else:
            row["acc"] = top_k_from_logits(logits, test_targets, 1)
        log.info("fraction %.3f: %s", f, row)
        results.append(row)
    return results


def cmd_sweep(args) -> int:
    fractions = sorted(args.fractions)
    if not fractions or fractions[0] <= 0 or fractions[-1] > 1:
        raise CliError("fractions must lie in (0, 1]", EXIT_USAGE)
    data = TaskData(Path(args.data), args.task)
    rows = run_sweep(data, args, fractions)
    cols = list(rows[0].keys())
    text = ",".join(cols) + "\n" + "".join(
        ",".join(f"{r[c]:.6g}" if c == "fraction" else f"{r[c]:.6f}" for c in cols) + "\n" for r in rows
    )
    _write_text(args.out, text)
    return EXIT_OK


def pattern_csv(beam_index: int, num_beams: int, num_antennas: int, step_deg: float = 0.5) -> str:
    codebook = build_steering_codebook(num_antennas, num_beams)
    angles = np.linspace(-90.0, 90.0, int(round(180.0 / step_deg)) + 1)
    gains = beam_pattern(codebook.beam(beam_index), np.deg2rad(angles))
    return "angle_deg,gain\n" + "".join(f"{a:.1f},{g:.10g}\n" for a, g in zip(angles, gains))


def cmd_pattern(args) -> int:
    if not 1 <= args.beam <= args.beams:
        raise CliError(f"--beam must lie in 1..{args.beams}", EXIT_USAGE)
    _write_text(args.out, pattern_csv(args.beam, args.beams, args.antennas))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_training_flags(p):
    p.add_argument("--data", required=True, help="dataset directory written by 'generate'")
    p.add_argument("--task", choices=("beam", "detect"), default="beam",
                   help="beam: predict the codebook index; detect: user present vs not")
    p.add_argument("--classes", type=int, default=None,
                   help="head size (default 64 for beam, 2 for detect)")
    p.add_argument("--init", default=None,
                   help="start from this checkpoint, replacing its head")
    p.add_argument("--batch", type=int, default=150, help="minibatch size")
    p.add_argument("--lr", type=float, default=1e-4, help="initial learning rate")
    p.add_argument("--wd", type=float, default=1e-3, help="weight decay")
    p.add_argument("--drops", type=_int_list, default=[4, 8],
                   help="epochs after which the learning rate drops, comma separated")
    p.add_argument("--drop-factor", type=float, default=0.1, help="learning-rate drop factor")
    p.add_argument("--epochs", type=int, default=10, help="training epochs")
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd", help="update rule")
    p.add_argument("--momentum", type=float, default=0.9, help="heavy-ball momentum for sgd (0 = plain)")
    p.add_argument("--split", type=float, default=0.7, help="training fraction of the train/test split")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed for every random stage")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="visionbeam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="render a synthetic dataset")
    p.add_argument("--scenario", choices=SCENARIOS, required=True, help="beam or blockage scenes")
    p.add_argument("--count", type=int, default=5000, help="number of samples")
    p.add_argument("--beams", type=int, default=NUM_BEAMS, help="codebook size")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="train a classifier on the train split")
    _add_training_flags(p)
    p.add_argument("--out", required=True, help="directory for model.bsnn and train_log.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model", required=True, help="checkpoint file (model.bsnn)")
    p.add_argument("--task", choices=("beam", "detect", "blockage"), default="beam",
                   help="blockage runs the two-stage link-status predictor")
    p.add_argument("--topk", type=_int_list, default=[1, 2, 3], help="k values for top-k accuracy")
    p.add_argument("--split", type=float, default=0.7, help="training fraction used at train time")
    p.add_argument("--threshold", type=float, default=NUMERICAL_ZERO,
                   help="sub-6 energy threshold for the blockage task")
    p.add_argument("--confusion", default=None, help="write the status confusion matrix CSV here")
    p.add_argument("--out", default=None, help="metrics CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="accuracy versus training-set fraction")
    _add_training_flags(p)
    p.add_argument("--fractions", type=_float_list, default=list(DEFAULT_FRACTIONS),
                   help="training-set fractions, comma separated")
    p.add_argument("--out", default=None, help="sweep CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pattern", parents=[common], help="export one codebook beam's array pattern")
    p.add_argument("--beam", type=int, required=True, help="1-based beam index")
    p.add_argument("--beams", type=int, default=NUM_BEAMS, help="codebook size")
    p.add_argument("--antennas", type=int, default=64, help="array size")
    p.add_argument("--out", default=None, help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_pattern)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"visionbeam: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
