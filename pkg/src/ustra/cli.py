"""Command line: ``ustra generate | train | evaluate | predict``.

Exit codes: 0 success, 2 validation error, 3 numeric failure, 4 I/O error.
"""
import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import checkpoint
from .config import ABLATIONS, TrainConfig, apply_overrides, load_config_file
from .data import ScenarioConfig, generate_synthetic, read_dataset, read_manifest, write_dataset
from .errors import NumericError, UstraError, ValidationError
from .metrics import evaluate_predictions
from .model import predict_samples
from .training import train
from .uncertainty import uncertainty_traces

log = logging.getLogger("ustra")

EXIT_IO = 4
BEST, LAST, LOG = "best.ustr", "last.ustr", "train_log.jsonl"


def _log_config(command, config, seed):
    log.info("%s config %s", command, json.dumps(config, sort_keys=True, default=str))
    log.info("%s seed %d", command, seed)


# -- generate ------------------------------------------------------------------


def cmd_generate(args):
    if os.path.isdir(args.out) and os.listdir(args.out) and not args.force:
        raise ValidationError(f"{args.out} exists and is not empty; pass --force to overwrite")
    base = dict(
        T=args.frames, N=args.objects, d_obj=args.feat_dim, d_frame=args.feat_dim,
        fps=args.fps, noise=args.noise, seed=args.seed,
    )
    splits = {"train": ScenarioConfig(num_pos=args.num_pos, num_neg=args.num_neg, **base)}
    if args.num_test_pos + args.num_test_neg > 0:
        splits["test"] = ScenarioConfig(num_pos=args.num_test_pos, num_neg=args.num_test_neg, **base)
    _log_config("generate", {k: dataclasses.asdict(v) for k, v in splits.items()}, args.seed)
    data = {name: generate_synthetic(cfg, name) for name, cfg in splits.items()}
    if args.force and os.path.isdir(args.out):
        for name in data:
            sub = os.path.join(args.out, name)
            if os.path.isdir(sub):
                for f in os.listdir(sub):
                    if f.endswith(".stra"):
                        os.remove(os.path.join(sub, f))
    write_dataset(args.out, data)
    for name, samples in data.items():
        pos = sum(s.positive for s in samples)
        print(f"{name}: {len(samples)} videos ({pos} positive, {len(samples) - pos} negative)")
    return 0


# -- train ---------------------------------------------------------------------


def _train_config(args):
    cfg = TrainConfig()
    if args.config:
        cfg = load_config_file(args.config, cfg)
    flags = {
        "epochs": args.epochs, "hidden_dim": args.hidden_dim, "seed": args.seed,
        "lr": args.lr, "batch_size": args.batch_size, "m_train": args.m_train,
    }
    cfg = apply_overrides(cfg, {k: v for k, v in flags.items() if v is not None})
    if args.ablate:
        cfg = cfg.ablate(*args.ablate)
    cfg.validate()
    return cfg


def _splits(root):
    return sorted({r["split"] for r in read_manifest(root)})


def cmd_train(args):
    cfg = _train_config(args)
    _log_config("train", cfg.to_dict(), cfg.seed)
    train_set = read_dataset(args.data, "train")
    if args.val == "auto":
        val_split = "test" if "test" in _splits(args.data) else "train"
    else:
        val_split = args.val
    val_set = read_dataset(args.data, val_split)
    log.info("train: %d videos, validation split %r (%d videos)", len(train_set), val_split, len(val_set))
    os.makedirs(args.out, exist_ok=True)
    result = train(train_set, cfg, val_set)
    extra = {"train": cfg.to_dict()}
    checkpoint.save_checkpoint(
        os.path.join(args.out, BEST), result.best_params, result.model_config,
        {**extra, "epoch": result.best_epoch, "val_ap": result.best_ap},
    )
    checkpoint.save_checkpoint(
        os.path.join(args.out, LAST), result.params, result.model_config,
        {**extra, "epoch": cfg.epochs},
    )
    checkpoint.write_log(os.path.join(args.out, LOG), result.logs)
    print(f"best epoch {result.best_epoch} val_ap {result.best_ap}; wrote {args.out}")
    return 0


# -- evaluate / predict --------------------------------------------------------


def _resolve_model(path, which):
    if os.path.isdir(path):
        path = os.path.join(path, BEST if which == "best" else LAST)
    return checkpoint.load_checkpoint(path)


def _check_compatible(mcfg, samples):
    for s in samples:
        if (s.d_obj, s.d_frame) != (mcfg.d_obj, mcfg.d_frame):
            raise ValidationError(
                f"{s.video_id}: feature dims ({s.d_obj}, {s.d_frame}) do not match "
                f"the model ({mcfg.d_obj}, {mcfg.d_frame})"
            )
        if s.T != mcfg.seq_len:
            raise ValidationError(f"{s.video_id}: T = {s.T} but the model was trained with T = {mcfg.seq_len}")


def _inference_setup(args, command):
    params, mcfg, meta = _resolve_model(args.model, args.checkpoint)
    m_test = args.m_test if args.m_test is not None else meta.get("train", {}).get("m_test", TrainConfig.m_test)
    eval_batch = meta.get("train", {}).get("eval_batch", TrainConfig.eval_batch)
    config = {
        "model": args.model, "checkpoint": args.checkpoint, "data": args.data,
        "split": args.split, "m_test": m_test, "model_config": mcfg.to_dict(),
    }
    _log_config(command, config, args.seed)
    samples = read_dataset(args.data, args.split)
    if not samples:
        raise ValidationError(f"split {args.split!r} of {args.data} is empty")
    _check_compatible(mcfg, samples)
    return params, mcfg, samples, m_test, eval_batch


def _oracle_predictions(samples, m):
    out = []
    for s in samples:
        a = np.zeros((m, s.T, 2))
        a[:, :, 1 if s.positive else 0] = 1.0
        out.append(a)
    return out


def cmd_evaluate(args):
    params, mcfg, samples, m_test, eval_batch = _inference_setup(args, "evaluate")
    if args.debug_oracle_scores:
        log.warning("evaluate: scoring with ground-truth labels (--debug-oracle-scores)")
        preds = _oracle_predictions(samples, m_test)
    else:
        preds = predict_samples(params, mcfg, samples, m_test, args.seed, eval_batch)
    report = evaluate_predictions(
        preds, samples, mtta_mode=args.mtta_mode, uncertainty_population=args.uncertainty_population
    )
    vals = [report.ap, report.mtta_s, report.mau, report.meu]
    if not all(np.isfinite(vals)):
        raise NumericError(f"non-finite metrics {vals}")
    report.write(args.out)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_predict(args):
    params, mcfg, samples, m_test, eval_batch = _inference_setup(args, "predict")
    preds = predict_samples(params, mcfg, samples, m_test, args.seed, eval_batch)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "frame", "score_accident", "trace_aleatoric", "trace_epistemic"])
        for s, p in zip(samples, preds):
            score = p[:, :, 1].mean(axis=0)
            alt, ept = uncertainty_traces(p)
            for t in range(s.T):
                w.writerow([s.video_id, t + 1, repr(float(score[t])), repr(float(alt[t])), repr(float(ept[t]))])
    print(f"wrote {sum(s.T for s in samples)} rows to {args.out}")
    return 0


# -- entry point ---------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="ustra", description="Uncertainty-aware accident anticipation")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic collision dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--num-pos", type=int, default=100)
    g.add_argument("--num-neg", type=int, default=200)
    g.add_argument("--num-test-pos", type=int, default=30)
    g.add_argument("--num-test-neg", type=int, default=60)
    g.add_argument("--frames", type=int, default=50)
    g.add_argument("--objects", type=int, default=5)
    g.add_argument("--feat-dim", type=int, default=32)
    g.add_argument("--fps", type=float, default=10.0)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="run directory for checkpoints and the log")
    t.add_argument("--config", help="key=value file overriding TrainConfig defaults")
    t.add_argument("--epochs", type=int)
    t.add_argument("--hidden-dim", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--m-train", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--ablate", action="append", choices=ABLATIONS, default=[])
    t.add_argument("--val", default="auto", help="validation split (default: test if present, else train)")
    t.set_defaults(func=cmd_train)

    for name, func, out_help in (
        ("evaluate", cmd_evaluate, "metrics report (JSON)"),
        ("predict", cmd_predict, "per-frame CSV"),
    ):
        e = sub.add_parser(name, help=f"write a {out_help}")
        e.add_argument("--model", required=True, help="checkpoint file or training run directory")
        e.add_argument("--checkpoint", choices=("best", "last"), default="best")
        e.add_argument("--data", required=True)
        e.add_argument("--split", default="test")
        e.add_argument("--out", required=True, help=out_help)
        e.add_argument("--seed", type=int, default=0)
        e.add_argument("--m-test", type=int)
        e.set_defaults(func=func)
        if name == "evaluate":
            e.add_argument("--debug-oracle-scores", action="store_true")
            e.add_argument("--mtta-mode", choices=("per_threshold", "joint"), default="per_threshold")
            e.add_argument("--uncertainty-population", choices=("all", "positive"), default="all")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UstraError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
