"""Command-line entry points, one verb per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import dsp, gradsuite
from . import protocol as P
from .io import read_fmap, write_fmap, write_kv
from .models import STUDENT_PRESETS, build_model, load_model
from .report import emit_report, load_curve
from .trainer import Dataset, TrainConfig, save_checkpoint, train_student, train_teacher_head, write_log

log = logging.getLogger("fskws")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _seed(args) -> int:
    env = os.environ.get("FSKWS_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"FSKWS_SEED must be an integer, got {env!r}") from None
    return args.seed


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if text.lower() == "none":
        return None
    return text


def _print_summary(values: dict, path=None) -> None:
    lines = [f"{k}={v!r}" for k, v in values.items()]
    sys.stdout.write("\n".join(lines) + "\n")
    if path is not None:
        write_kv(path, values)


# ------------------------------------------------------------------ commands

def cmd_featurize(args) -> int:
    manifest = D.load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = dsp.MfccConfig()
    rows, written = [], {}
    for row in manifest.rows:
        if row.path.suffix.lower() != ".wav":
            rows.append(row)
            continue
        try:
            rel = row.path.relative_to(manifest.root)
        except ValueError:
            rel = Path(row.path.name)
        dest = (out / rel).with_suffix(".fmap")
        if row.path not in written:
            dest.parent.mkdir(parents=True, exist_ok=True)
            write_fmap(dest, dsp.mfcc(dsp.load_wav(row.path), cfg))
            written[row.path] = dest
        rows.append(D.ManifestRow(written[row.path], row.label, row.split))
    D.write_manifest(out / "manifest.csv", rows, root=out, meta=manifest.meta or None)
    print(f"featurized={len(written)}")
    return 0


def cmd_synth(args) -> int:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k] = _parse_value(v)
    overrides["seed"] = _seed(args)
    try:
        cfg = D.preset(args.preset, **overrides)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    manifest = D.synth_dataset(cfg, args.out)
    print(f"rows={len(manifest.rows)} labels={len(manifest.labels())}")
    return 0


def _datasets(manifest, with_teacher: bool):
    x, y, names, t = manifest.load_split("train", with_teacher)
    vx, vy, _, vt = manifest.load_split("val", with_teacher)
    if len(y) == 0:
        raise ValueError("manifest has no train rows")
    if len(vy) == 0:
        raise ValueError("manifest has no val rows")
    return Dataset(x, y, t, names), Dataset(vx, vy, vt, names)


def _train_config(args, strategy: str) -> TrainConfig:
    n_batches, epochs = args.n_batches, args.epochs
    if n_batches is None and epochs is None:
        # triplet heads count batches, everything else counts epochs
        if strategy == "triplet":
            n_batches = 3000
        else:
            epochs = 10
    return TrainConfig(strategy=strategy, lam=args.lam, batch_size=args.batch_size, n_batches=n_batches,
                       epochs=epochs, lr=args.lr, seed=_seed(args), val_interval=args.val_interval)


def _finish_training(model, result, cfg, args) -> int:
    save_checkpoint(model, result, cfg, args.out)
    write_log(args.log or str(args.out) + ".log.csv", result.history)
    print(f"step={result.checkpoint.step} val_loss={result.checkpoint.val_loss!r}")
    return 0


def cmd_train_teacher(args) -> int:
    manifest = D.load_manifest(args.manifest)
    train, val = _datasets(manifest, with_teacher=False)
    cfg = _train_config(args, args.loss)
    model = build_model(dict(arch=args.arch, in_dim=train.x.shape[2], frames=train.x.shape[1],
                             emb_dim=args.emb_dim), seed=cfg.seed)
    result = train_teacher_head(model, train, val, cfg)
    return _finish_training(model, result, cfg, args)


def cmd_train_student(args) -> int:
    manifest = D.load_manifest(args.manifest)
    cfg = _train_config(args, args.strategy)
    train, val = _datasets(manifest, with_teacher=cfg.loss_config().uses_kd)
    emb_dim = train.teacher.shape[1] if train.teacher is not None else args.emb_dim
    model = build_model(dict(arch="student", preset=args.preset, emb_dim=emb_dim,
                             frames=train.x.shape[1], in_dim=train.x.shape[2]), seed=cfg.seed)
    result = train_student(model, train, val, cfg)
    return _finish_training(model, result, cfg, args)


def _embedder(path):
    """Trained encoder, or mean pooling over time when no model is given."""
    if path is None:
        return None
    return load_model(path)


def _embed(model, groups: dict) -> dict:
    if model is None:
        return {k: P._unit(v.mean(axis=1)) for k, v in groups.items()}
    return P.embed_groups(model, groups)


def cmd_enroll(args) -> int:
    manifest = D.load_manifest(args.manifest)
    labels = args.labels.split(",") if args.labels else None
    groups = manifest.load_groups(args.split, labels)
    if not groups:
        raise ValueError(f"no rows in split {args.split!r} for the requested labels")
    protos = P.enroll(_embed(_embedder(args.model), groups), args.shots, np.random.default_rng(_seed(args)))
    write_fmap(args.out, protos.prototypes)
    Path(str(args.out) + ".labels").write_text("\n".join(protos.labels) + "\n")
    print(f"prototypes={len(protos.labels)} shots={protos.shots}")
    return 0


def _write_curve(curve, args, prefix: str) -> None:
    if args.out:
        Path(args.out).write_text(curve.to_csv())
    s = curve.summary()
    summary = {f"{prefix}_at_far_0.01": s["at_far_0.01"], f"{prefix}_at_far_0.05": s["at_far_0.05"],
               "auroc": s["auroc"]}
    _print_summary(summary, args.summary)


def cmd_evaluate(args) -> int:
    manifest = D.load_manifest(args.manifest)
    model = _embedder(args.model)
    seed = _seed(args)
    if args.protocol == "mswc":
        groups = manifest.load_groups(args.split)
        curve = P.mswc_protocol(_embed(model, groups), args.shots, args.trials, seed)
        _write_curve(curve, args, "det")
        return 0
    enrolled = args.enrolled.split(",") if args.enrolled else manifest.meta.get("enrolled", "").split(",")
    others = args.others.split(",") if args.others else manifest.meta.get("others", "").split(",")
    enrolled, others = [e for e in enrolled if e], [o for o in others if o]
    if not enrolled or not others:
        raise ValueError("gsc protocol needs enrolled and others labels (flags or manifest metadata)")
    train = _embed(model, manifest.load_groups("train", enrolled))
    test = _embed(model, manifest.load_groups("test", enrolled + others))
    curve = P.gsc_protocol(train, test, enrolled, others, args.shots, args.repeats, seed)
    _write_curve(curve, args, "acc")
    return 0


def cmd_report(args) -> int:
    curves = []
    for item in args.curve:
        if "=" not in item:
            raise UsageError(f"--curve expects name=path, got {item!r}")
        name, path = item.split("=", 1)
        curves.append((name, load_curve(path)))
    out, spath = emit_report(curves, args.out)
    sys.stdout.write(spath.read_text())
    return 0


def cmd_gradcheck(args) -> int:
    names = args.case or None
    if names:
        unknown = [n for n in names if n not in gradsuite.CASES]
        if unknown:
            raise UsageError(f"unknown gradcheck case(s) {unknown}; choose from {sorted(gradsuite.CASES)}")
    failed = 0
    for r in gradsuite.run_suite(args.points, _seed(args), names):
        status = "PASS" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status} {r.name} max_rel_error={r.max_rel_error:.3e} checked={r.n_checked} skipped={r.n_skipped}")
    print(f"cases={len(names or gradsuite.CASES)} failed={failed}")
    return 0 if failed == 0 else 2


# -------------------------------------------------------------------- parser

def _add_training_flags(p, epochs_default):
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="weights path (WGT1); .cfg and .meta are written beside it")
    p.add_argument("--log", help="training log CSV (default <out>.log.csv)")
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--n-batches", type=int, default=None)
    p.add_argument("--epochs", type=int, default=epochs_default)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--val-interval", type=int, default=None)
    p.add_argument("--emb-dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fskws", description="Few-shot keyword spotting toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("featurize", help="WAV rows -> 49x10 MFCC FMAP files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--preset", default="default", choices=sorted(D.PRESETS))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a generator field")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-teacher", help="train a pooling or attention head on frame features")
    _add_training_flags(p, epochs_default=None)
    p.add_argument("--arch", choices=("pooling", "attention"), default="attention")
    p.add_argument("--loss", choices=("triplet", "scaf"), default="scaf")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-student", help="train the MFCC student")
    _add_training_flags(p, epochs_default=10)
    p.add_argument("--strategy", choices=("triplet", "scaf", "kd", "kd+triplet", "kd+scaf"), default="kd+scaf")
    p.add_argument("--preset", choices=sorted(STUDENT_PRESETS), default="res15")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("enroll", help="write K-shot prototypes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", help="weights path; omit to mean-pool raw features")
    p.add_argument("--shots", type=int, required=True)
    p.add_argument("--split", default="train", choices=D.SPLITS)
    p.add_argument("--labels", help="comma-separated labels (default: all in split)")
    p.add_argument("--out", required=True, help="prototype FMAP; labels go to <out>.labels")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("evaluate", help="run an evaluation protocol")
    p.add_argument("protocol", choices=("mswc", "gsc"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", help="weights path; omit to mean-pool raw features")
    p.add_argument("--shots", type=int, default=1)
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--split", default="test", choices=D.SPLITS, help="split scored by the mswc protocol")
    p.add_argument("--enrolled", help="gsc: comma-separated enrolled labels")
    p.add_argument("--others", help="gsc: comma-separated others labels")
    p.add_argument("--out", help="curve CSV")
    p.add_argument("--summary", help="key=value summary file")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="combine curves into one CSV and a summary table")
    p.add_argument("--curve", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--case", action="append", help="run only this case (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"fskws: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
