"""Command-line entry point.

Subcommands: train, infer, eval, gradcheck, synth, dump-filters, bench.
Exit codes: 0 success, 1 verification failure, 2 config error, 3 data error,
4 numeric divergence. PAREFINE_THREADS caps math-library worker threads
(default: logical cores); it must be honored before numpy loads, so heavy
imports happen inside main().
"""

import argparse
import os
import sys
from pathlib import Path


def _apply_thread_cap():
    cap = os.environ.get("PAREFINE_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parefine",
                                description="Pixel-adaptive filter refinement for "
                                            "binary segmentation")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on a dataset directory")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--data", required=True, help="dataset root (images/ labels/ [masks/] split.txt)")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--d", type=int, dest="d_filter", help="PA-filter size D")
    t.add_argument("--k", type=int, help="erasure pixel count (absolute)")
    t.add_argument("--lambda", type=float, dest="lam", help="consistency loss weight")
    t.add_argument("--iters", type=int, dest="max_iters")
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--patch-ratio", type=float, dest="patch_ratio")
    t.add_argument("--eval-every", type=int, dest="eval_every")
    t.add_argument("--no-pa", action="store_true", help="disable the PA-filter head")
    t.add_argument("--no-rce", action="store_true", help="disable the auxiliary erased branch")
    t.add_argument("--resume", help="checkpoint to resume from")

    i = sub.add_parser("infer", help="run the main branch on one image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--out", required=True, help="output PGM path for the refined map")
    i.add_argument("--mask-out", help="also write the 0.5-thresholded binary mask here")
    i.add_argument("--coarse-out", help="also write the coarse map here")

    e = sub.add_parser("eval", help="score prediction maps against ground truth")
    e.add_argument("--pred-dir", required=True)
    e.add_argument("--gt-dir", required=True)
    e.add_argument("--mask-dir")
    e.add_argument("--out", help="directory for metrics.txt/.json and the figure")

    sub.add_parser("gradcheck", help="finite-difference verification suite")

    s = sub.add_parser("synth", help="generate a synthetic vessel dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n-train", type=int, default=20)
    s.add_argument("--n-test", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", default="64x64", help="HxW, e.g. 64x64")

    d = sub.add_parser("dump-filters", help="render per-pixel filters as a PGM grid")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--image", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--region", help="top,left,height,width (default: centered 41x41)")
    d.add_argument("--stride", type=int, default=8)

    b = sub.add_parser("bench", help="memory-scaling report for the filter head")
    b.add_argument("--out", help="directory for bench.tsv and the figure")
    b.add_argument("--hw", default="64x64")
    return p


def _parse_hw(text):
    h, _, w = text.partition("x")
    return int(h), int(w)


def _resolved_config(cfg, extra: dict) -> str:
    from .config import config_to_kv_text
    lines = [f"# resolved configuration", ]
    for key, val in extra.items():
        lines.append(f"# {key}={val}")
    return "\n".join(lines) + "\n" + config_to_kv_text(cfg)


def cmd_train(args) -> int:
    from . import checkpoint, figures
    from .config import TrainConfig, config_from_kv, parse_kv_file
    from .data import load_dataset
    from .train import train

    kv = parse_kv_file(args.config) if args.config else {}
    cfg = config_from_kv(kv)
    overrides = {}
    for name in ("seed", "d_filter", "k", "lam", "max_iters", "lr", "batch",
                 "patch_ratio", "eval_every"):
        if getattr(args, name, None) is not None:
            overrides[name] = str(getattr(args, name))
    if args.no_pa:
        overrides["use_pa"] = "0"
    if args.no_rce:
        overrides["use_rce"] = "0"
    cfg = config_from_kv(overrides, base=cfg)

    train_set = load_dataset(args.data, "train")
    eval_set = load_dataset(args.data, "test")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.cfg").write_text(_resolved_config(cfg, {
        "command": "train", "data": args.data, "out": args.out}))

    result = train(train_set, eval_set, cfg, out_dir=out, resume_from=args.resume)
    if result.loss_rows:
        figures.save_loss_curves(result.loss_rows, out / "loss_curve.png")
    for line in result.metric_lines:
        print(line)
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_infer(args) -> int:
    from . import checkpoint, pnm
    from .train import infer_from_checkpoint

    ck = checkpoint.load(args.ckpt)
    image = pnm.load_image(args.image, channels=3)
    coarse, refined = infer_from_checkpoint(image, ck)
    pnm.write_image(args.out, refined)
    if args.mask_out:
        pnm.write_image(args.mask_out, (refined >= 0.5).astype(refined.dtype))
    if args.coarse_out:
        pnm.write_image(args.coarse_out, coarse)
    print(f"refined map: {args.out}")
    return 0


def cmd_eval(args) -> int:
    import json as _json

    from . import figures, metrics, pnm

    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    from .errors import DataError
    stems = sorted(p.stem for p in pred_dir.iterdir() if p.suffix in (".pgm", ".ppm"))
    if not stems:
        raise DataError(f"{pred_dir}: no prediction maps found")
    ids, reports = [], []
    rows = ["id\tF1\tAUC\tACC"]
    for stem in stems:
        pred = pnm.load_image(_first_match(pred_dir, stem), channels=1)
        gt_path = _first_match(gt_dir, stem)
        if gt_path is None:
            raise DataError(f"no ground truth for prediction {stem!r}")
        gt = pnm.load_image(gt_path, channels=1) > 0.5
        mask = None
        if args.mask_dir:
            mpath = _first_match(Path(args.mask_dir), stem)
            if mpath is None:
                raise DataError(f"no mask for prediction {stem!r}")
            mask = pnm.load_image(mpath, channels=1) > 0.5
        rep = metrics.evaluate(pred, gt, mask)
        ids.append(stem)
        reports.append(rep)
        rows.append(_fmt_row(stem, rep))
    mean_rep = _mean_row(reports)
    rows.append(mean_rep)
    table = "\n".join(rows)
    print(table)
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "metrics.txt").write_text(table + "\n")
        (outdir / "metrics.json").write_text(_json.dumps(
            {stem: rep.to_dict() for stem, rep in zip(ids, reports)},
            sort_keys=True, indent=2) + "\n")
        figures.save_metric_bars(ids, reports, outdir / "metrics_bars.png")
    return 0


def _fmt_row(name, rep) -> str:
    auc = "nan" if rep.auc is None else f"{rep.auc:.2f}"
    return f"{name}\t{rep.f1:.2f}\t{auc}\t{rep.acc:.2f}"


def _mean_row(reports) -> str:
    import numpy as np
    f1 = np.mean([r.f1 for r in reports])
    aucs = [r.auc for r in reports if r.auc is not None]
    auc = f"{np.mean(aucs):.2f}" if aucs else "nan"
    acc = np.mean([r.acc for r in reports])
    return f"mean\t{f1:.2f}\t{auc}\t{acc:.2f}"


def _first_match(directory, stem):
    for ext in (".pgm", ".ppm"):
        p = directory / (stem + ext)
        if p.exists():
            return p
    return None


def cmd_gradcheck(args) -> int:
    from .verify import run_suite
    ok, results = run_suite(verbose=True)
    failed = [name for name, rep in results if not rep.passed]
    print(f"{len(results) - len(failed)}/{len(results)} gradient checks passed")
    if failed:
        print("failed: " + ", ".join(failed))
        return 1
    return 0


def cmd_synth(args) -> int:
    from .data import SynthConfig, save_sample, synth_vessels, write_split_manifest

    h, w = _parse_hw(args.size)
    out = Path(args.out)
    train_ids, test_ids = [], []
    for i in range(args.n_train + args.n_test):
        cfg = SynthConfig(height=h, width=w, seed=args.seed + i)
        sample = synth_vessels(cfg)
        save_sample(out, sample)
        (train_ids if i < args.n_train else test_ids).append(sample.id)
    write_split_manifest(out / "split.txt", train_ids, test_ids)
    print(f"wrote {len(train_ids)} train / {len(test_ids)} test samples to {out}")
    return 0


def cmd_dump_filters(args) -> int:
    import numpy as np

    from . import checkpoint, mrsg, pnm, tensor
    from .backbone import unet_forward

    ck = checkpoint.load(args.ckpt)
    tensor.set_precision(ck.config.precision)
    image = pnm.load_image(args.image, channels=3)
    coarse, _ = unet_forward(image, ck.store, ck.config.unet_config(), mode="infer",
                             update_running=False)
    bank, _ = mrsg.mrsg_assemble(coarse, ck.config.d_filter, ck.store, mode="infer",
                                 update_running=False)
    h, w = coarse.shape[1:]
    if args.region:
        top, left, rh, rw = (int(v) for v in args.region.split(","))
    else:
        rh = rw = 41
        top, left = max(0, (h - rh) // 2), max(0, (w - rw) // 2)
    grid = mrsg.export_filters(bank, (top, left, rh, rw), args.stride)
    pnm.save_pnm(args.out, grid)
    print(f"filter grid ({grid.shape[0]}x{grid.shape[1]}): {args.out}")
    return 0


def cmd_bench(args) -> int:
    from . import bench, figures

    hw = _parse_hw(args.hw)
    rows = bench.memory_report(hw=hw)
    text = bench.report_text(rows, hw)
    print(text, end="")
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "bench.tsv").write_text(text)
        figures.save_memory_scaling(rows, outdir / "bench_memory.png")
    return 0


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    from .errors import (CheckpointError, DataError, NumericError, ParameterError,
                         PnmFormatError, UnsupportedPnmError)
    handlers = {
        "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
        "gradcheck": cmd_gradcheck, "synth": cmd_synth,
        "dump-filters": cmd_dump_filters, "bench": cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, PnmFormatError, UnsupportedPnmError, CheckpointError,
            FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
