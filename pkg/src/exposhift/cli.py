"""Command-line front end.

Subcommands cover the whole workflow: synthesize data, fit normalization
statistics, train both phases, enhance single frames or bursts, emit metric
tables, and run the finite-difference verification suite.  Configuration
files are plain ``key=value`` lines matching TrainConfig fields (tuples as
comma-separated integers); ``--seed S`` derives the data/init/train seeds as
S, S+1, S+2.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .conditioning import fit_norm_stats
from .grad_suite import DEFAULT_INSTANCES, run_grad_suite
from .harness import (
    Checkpoint,
    Provenance,
    TrainConfig,
    ablation_bpn_direct,
    enhance_sequence,
    enhance_with_t1,
    evaluate,
    group_cv_report,
    load_checkpoint,
    load_norm_stats,
    save_checkpoint,
    save_norm_stats,
    split_groups,
    train_bpn,
    train_esn,
)
from .metrics import entropy, noise_variance
from .rawproc import (
    brightness,
    raw_to_rgb_reference,
    read_cidraw,
    rgb_to_gray,
    write_ppm,
)
from .synthcam import eligible_indices, generate_dataset, load_dataset

__all__ = ["main"]


def _parse_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _coerce_field(name: str, value: str, current):
    if isinstance(current, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        return tuple(int(tok) for tok in value.split(",") if tok)
    raise SystemExit(f"config: unsupported field {name!r}")


def _train_config(args, inherit: Provenance | None = None) -> TrainConfig:
    cfg = TrainConfig.paper_scale() if getattr(args, "paper_scale", False) else TrainConfig()
    if inherit is not None:
        cfg = replace(
            cfg,
            data_seed=inherit.data_seed,
            init_seed=inherit.init_seed,
            train_seed=inherit.train_seed,
        )
    overrides = {}
    if getattr(args, "config", None):
        raw = _parse_config_file(args.config)
        known = {f.name: getattr(cfg, f.name) for f in fields(TrainConfig)}
        for key, value in raw.items():
            if key not in known:
                raise SystemExit(f"config: unknown key {key!r}")
            overrides[key] = _coerce_field(key, value, known[key])
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("data_seed", args.seed)
        overrides.setdefault("init_seed", args.seed + 1)
        overrides.setdefault("train_seed", args.seed + 2)
    return replace(cfg, **overrides)


def _write_csv(path: Path, header: list[str], rows, comment: str | None = None):
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(row[h]) for h in header))
    path.write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    generate_dataset(
        n_groups=args.groups,
        extent=args.extent,
        seed=args.seed if args.seed is not None else 0,
        out_dir=args.out,
    )
    print(f"wrote {args.groups} groups to {args.out}")
    return 0


def _cmd_fit_stats(args) -> int:
    groups = load_dataset(args.data)
    cfg = _train_config(args)
    train_idx, _ = split_groups(len(groups), cfg.val_fraction, cfg.data_seed)
    stats = fit_norm_stats([groups[i] for i in train_idx])
    save_norm_stats(stats, args.out)
    print(f"fitted stats over {len(train_idx)} training groups -> {args.out}")
    return 0


def _cmd_train_esn(args) -> int:
    groups = load_dataset(args.data)
    cfg = _train_config(args)
    stats = load_norm_stats(args.stats)
    params, esn_cfg, log = train_esn(groups, stats, cfg)
    prov = Provenance(
        data_seed=cfg.data_seed,
        init_seed=cfg.init_seed,
        train_seed=cfg.train_seed,
        esn_epochs=cfg.esn_epochs,
        final_train_loss=log.train_loss[-1],
        final_val_loss=log.val_loss[-1],
    )
    ckpt = Checkpoint(esn_config=esn_cfg, esn_params=params, stats=stats, provenance=prov)
    save_checkpoint(ckpt, args.out)
    print(
        f"shifter trained: epoch-1 val {log.val_loss[0]:.5f} -> final val "
        f"{log.val_loss[-1]:.5f} ({cfg.esn_epochs} epochs) -> {args.out}"
    )
    return 0


def _cmd_train_bpn(args) -> int:
    groups = load_dataset(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _train_config(args, inherit=ckpt.provenance)
    bpn_params, bpn_cfg, log = train_bpn(
        groups, ckpt.esn_params, ckpt.esn_config, ckpt.stats, cfg
    )
    prov = replace(
        ckpt.provenance,
        bpn_epochs=cfg.bpn_epochs,
        final_bpn_loss=log.train_loss[-1],
    )
    out = Checkpoint(
        esn_config=ckpt.esn_config,
        esn_params=ckpt.esn_params,
        stats=ckpt.stats,
        bpn_config=bpn_cfg,
        bpn_params=bpn_params,
        provenance=prov,
    )
    save_checkpoint(out, args.out)
    print(
        f"predictor trained: final loss {log.train_loss[-1]:.6f} "
        f"({cfg.bpn_epochs} epochs) -> {args.out}"
    )
    return 0


def _cmd_enhance(args) -> int:
    frame = read_cidraw(Path(args.file).read_bytes())
    ckpt = load_checkpoint(args.checkpoint)
    if args.t1 is not None:
        rgb = enhance_with_t1(frame, ckpt, args.t1)
        t1 = args.t1
    else:
        rgb, t1 = evaluate(frame, ckpt)
    Path(args.out).write_bytes(write_ppm(rgb))
    print(f"enhanced {args.file} with t1={t1:.6g} s -> {args.out}")
    return 0


def _cmd_enhance_seq(args) -> int:
    files = sorted(Path(args.dir).glob("*.cidraw"))
    if not files:
        raise SystemExit(f"enhance-seq: no .cidraw files in {args.dir}")
    frames = [read_cidraw(p.read_bytes()) for p in files]
    ckpt = load_checkpoint(args.checkpoint)
    images, raw_trace, filtered = enhance_sequence(frames, ckpt, args.filter, args.beta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (path, image) in enumerate(zip(files, images)):
        (out / f"frame_{i:04d}.ppm").write_bytes(write_ppm(image))
        rows.append(
            {
                "index": i,
                "file": path.name,
                "t1_raw": raw_trace[i],
                "t1_filtered": filtered[i],
            }
        )
    _write_csv(out / "t1_trace.csv", ["index", "file", "t1_raw", "t1_filtered"], rows)
    print(f"enhanced {len(files)} frames (filter={args.filter}) -> {out}")
    return 0


def _cmd_eval_metrics(args) -> int:
    groups = load_dataset(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    note = "synthetic multi-exposure groups; not comparable to results on real captures"

    image_rows = []
    for gi, group in enumerate(groups):
        for fi in eligible_indices(group):
            frame = group.frames[fi]
            rgb_in = raw_to_rgb_reference(frame)
            rgb_out, t1 = evaluate(frame, ckpt)
            image_rows.append(
                {
                    "group": gi,
                    "frame": fi,
                    "t0": frame.meta.exposure_time,
                    "t1": t1,
                    "brightness_in": brightness(rgb_in),
                    "brightness_out": brightness(rgb_out),
                    "nv_in": noise_variance(rgb_to_gray(rgb_in)),
                    "nv_out": noise_variance(rgb_to_gray(rgb_out)),
                    "entropy_in": entropy(rgb_in),
                    "entropy_out": entropy(rgb_out),
                }
            )
    _write_csv(
        out / "images.csv",
        [
            "group",
            "frame",
            "t0",
            "t1",
            "brightness_in",
            "brightness_out",
            "nv_in",
            "nv_out",
            "entropy_in",
            "entropy_out",
        ],
        image_rows,
        comment=note,
    )
    group_rows = group_cv_report(groups, ckpt)
    _write_csv(
        out / "groups.csv",
        ["group", "pre_mu", "pre_cv", "post_mu", "post_cv", "mean_t0", "mean_t1"],
        group_rows,
        comment=note,
    )
    improved = sum(1 for r in group_rows if r["post_cv"] < r["pre_cv"])
    median_cv = float(np.median([r["post_cv"] for r in group_rows])) if group_rows else float("nan")
    print(
        f"{len(image_rows)} images, {len(group_rows)} groups -> {out} "
        f"(CV improved on {improved}/{len(group_rows)}, median post CV {median_cv:.4f})"
    )
    return 0


def _cmd_grad_check(args) -> int:
    results = run_grad_suite(
        instances=args.instances, seed=args.seed if args.seed is not None else 0
    )
    width = max(len(r.name) for r in results)
    ok = True
    for r in results:
        status = "pass" if r.passed else "FAIL"
        ok &= r.passed
        print(
            f"{status}  {r.name:<{width}}  max_err={r.max_error:.3e}  "
            f"tol={r.tolerance:.0e}  ({r.instances} instances, {r.seconds:.1f}s)"
        )
    print("gradient suite:", "all checks passed" if ok else "FAILURES above")
    return 0 if ok else 1


def _cmd_ablate(args) -> int:
    groups = load_dataset(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _train_config(args, inherit=ckpt.provenance)
    direct_params, direct_cfg, heldout_err = ablation_bpn_direct(groups, ckpt.stats, cfg)
    _, val_idx = split_groups(len(groups), cfg.val_fraction, cfg.data_seed)
    held = [groups[i] for i in val_idx]

    rows = []

    def summarize(name, model_ckpt, time_err):
        report = group_cv_report(held, model_ckpt, group_ids=val_idx)
        post = [r["post_cv"] for r in report]
        improved = sum(1 for r in report if r["post_cv"] < r["pre_cv"])
        rows.append(
            {
                "method": name,
                "heldout_log_time_mae": time_err,
                "groups": len(report),
                "cv_improved": improved,
                "median_post_cv": float(np.median(post)) if post else float("nan"),
            }
        )

    direct_ckpt = Checkpoint(
        esn_config=ckpt.esn_config,
        esn_params=ckpt.esn_params,
        stats=ckpt.stats,
        bpn_config=direct_cfg,
        bpn_params=direct_params,
    )
    summarize("direct-regression", direct_ckpt, heldout_err)
    if ckpt.bpn_params is not None:
        summarize("midtone-loss", ckpt, float("nan"))

    _write_csv(
        Path(args.out),
        ["method", "heldout_log_time_mae", "groups", "cv_improved", "median_post_cv"],
        rows,
        comment="direct time regression vs the trained two-stage predictor",
    )
    for r in rows:
        print(
            f"{r['method']}: cv improved {r['cv_improved']}/{r['groups']}, "
            f"median post CV {r['median_post_cv']:.4f}"
        )
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _add_common(p, *, seed=True, config=True, out=None):
    if config:
        p.add_argument("--config", help="key=value config file (TrainConfig fields)")
    if seed:
        p.add_argument("--seed", type=int, help="master seed (derives data/init/train)")
    if out:
        p.add_argument("--out", required=True, help=out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="exposhift",
        description="Adaptive two-stage low-light raw enhancement",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize multi-exposure raw groups")
    p.add_argument("--groups", type=int, default=64, help="number of groups")
    p.add_argument("--extent", type=int, default=288, help="square frame extent (pixels)")
    _add_common(p, config=False, out="output dataset directory")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("fit-stats", help="fit normalization statistics")
    p.add_argument("--data", required=True, help="dataset directory")
    _add_common(p, out="output stats file")
    p.set_defaults(fn=_cmd_fit_stats)

    p = sub.add_parser("train-esn", help="train the exposure shifter (phase one)")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--stats", required=True, help="stats file from fit-stats")
    p.add_argument("--paper-scale", action="store_true", help="full-scale preset")
    _add_common(p, out="output checkpoint")
    p.set_defaults(fn=_cmd_train_esn)

    p = sub.add_parser("train-bpn", help="train the brightness predictor (phase two)")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--checkpoint", required=True, help="phase-one checkpoint")
    p.add_argument("--paper-scale", action="store_true", help="full-scale preset")
    _add_common(p, out="output checkpoint")
    p.set_defaults(fn=_cmd_train_bpn)

    p = sub.add_parser("enhance", help="enhance one raw frame")
    p.add_argument("file", help=".cidraw input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--t1", type=float, help="explicit guideline time (shifter-only)")
    _add_common(p, seed=False, config=False, out="output PPM image")
    p.set_defaults(fn=_cmd_enhance)

    p = sub.add_parser("enhance-seq", help="enhance a burst directory of frames")
    p.add_argument("dir", help="directory of .cidraw files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--filter", default="identity", choices=("identity", "ema"))
    p.add_argument("--beta", type=float, default=0.5, help="EMA smoothing factor")
    _add_common(p, seed=False, config=False, out="output directory")
    p.set_defaults(fn=_cmd_enhance_seq)

    p = sub.add_parser("eval-metrics", help="emit CSV metric tables for a dataset")
    p.add_argument("data", help="dataset directory")
    p.add_argument("--checkpoint", required=True)
    _add_common(p, seed=False, config=False, out="output directory")
    p.set_defaults(fn=_cmd_eval_metrics)

    p = sub.add_parser("grad-check", help="run the finite-difference suite")
    p.add_argument("--instances", type=int, default=DEFAULT_INSTANCES)
    _add_common(p, config=False)
    p.set_defaults(fn=_cmd_grad_check)

    p = sub.add_parser(
        "ablate-direct-bpn", help="compare direct time regression to the trained predictor"
    )
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    _add_common(p, out="output report CSV")
    p.set_defaults(fn=_cmd_ablate)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
