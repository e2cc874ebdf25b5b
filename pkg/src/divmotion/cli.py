"""Command-line pipeline: synth, train-prior, mine-angles, train, sample, eval, export.

Every command writes its artifacts plus a ``manifest.json`` into a
sub-directory of ``--out``; downstream commands find their inputs there
unless explicit paths are given.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import ConfigError, RunConfig, _merge, dump_config, load_config
from .export import FORMATS, VIEW_AXES, export_csv, export_json, export_svg
from .generator import controllable_sample, load_generator, sample_paths, sample_tree
from .kinematics import default_angle_specs, load_angle_table, mine_ranges, save_angle_table
from .metrics import evaluate, write_reports_csv, zero_velocity_baseline
from .prior import load_prior, save_prior, to_limb_directions, train_prior
from .skeleton import MotionSequence, load_motion_file, mine_pseudo_gt, save_motion_file, window
from .synth import default_skeleton, synth_generate

log = logging.getLogger("divmotion")

SPLITS = ("train", "val", "test")


class PipelineError(RuntimeError):
    """A command cannot run; the message says what to do about it."""


# ---------------------------------------------------------------- helpers

def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _require(path: Path, what: str, producer: str) -> Path:
    if not path.exists():
        raise PipelineError(f"missing {what} at {path}; produce it with `divmotion {producer}` first")
    return path


def write_manifest(out_dir: Path, command: str, args, cfg: RunConfig, inputs: list, outputs: list,
                   started: float, checkpoints: list = ()) -> Path:
    """Record everything needed to rerun ``command`` next to its outputs."""
    doc = {
        "command": command,
        "argv": sys.argv[1:],
        "config_path": str(args.config) if args.config else None,
        "config": json.loads(json.dumps(cfg.to_dict(), default=list)),
        "seed": args.seed,
        "inputs": {str(p): sha256(p) for p in inputs if Path(p).is_file()},
        "outputs": {str(p): sha256(p) for p in outputs if Path(p).is_file()},
        "checkpoints": [str(c) for c in checkpoints],
        "version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "wall_clock_s": round(time.time() - started, 3),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2))
    return path


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        if "." in key:
            section, name = key.split(".", 1)
            overrides.setdefault(section, {})[name] = yaml.safe_load(value)
        else:
            overrides[key] = yaml.safe_load(value)
    if overrides:
        cfg = _merge(cfg, overrides)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg, prior=dataclasses.replace(cfg.prior, seed=args.seed),
            train=dataclasses.replace(cfg.train, seed=args.seed))
    return cfg


def load_split(data_dir: Path, split: str):
    index = _require(data_dir / "split.json", "dataset split manifest", "synth")
    doc = json.loads(index.read_text())
    seqs, skel = [], None
    for name in doc[split]:
        sk, seq = load_motion_file(data_dir / split / name)
        if skel is not None and sk.fingerprint() != skel.fingerprint():
            raise PipelineError(f"{name}: skeleton differs from the rest of the split")
        skel = sk
        seqs.append(seq)
    if not seqs:
        raise PipelineError(f"split {split!r} in {data_dir} is empty")
    return skel, seqs


def split_windows(seqs, H, T, stride) -> list:
    return [w for s in seqs for w in window(s, H, T, stride)]


def spread(items: list, n: int | None) -> list:
    if n is None or n >= len(items):
        return list(items)
    return [items[i] for i in np.linspace(0, len(items) - 1, n).round().astype(int)]


def _stage_dir(args, stage: str) -> Path:
    name = stage if not getattr(args, "tag", None) else f"{stage}-{args.tag}"
    d = Path(args.out) / name
    d.mkdir(parents=True, exist_ok=True)
    args._out_dir = d
    return d


def _data_dir(args) -> Path:
    return Path(args.data) if getattr(args, "data", None) else Path(args.out) / "data"


# ---------------------------------------------------------------- commands

def cmd_synth(args, cfg: RunConfig) -> list:
    out = _data_dir(args)
    args._out_dir = out
    sc = cfg.synth
    seed = args.seed if args.seed is not None else 0
    counts = {"train": sc.n_train, "val": sc.n_val, "test": sc.n_test}
    seqs = synth_generate(seed, sum(counts.values()), sc.length, fps=sc.fps)
    skel = default_skeleton()
    doc, written, k = {"seed": seed}, [], 0
    for split in SPLITS:
        (out / split).mkdir(parents=True, exist_ok=True)
        doc[split] = []
        for seq in seqs[k:k + counts[split]]:
            name = f"{seq.name}.motion"
            save_motion_file(out / split / name, skel, seq)
            doc[split].append(name)
            written.append(out / split / name)
        k += counts[split]
    (out / "split.json").write_text(json.dumps(doc, indent=2))
    for p in written:  # fail loudly now rather than downstream
        load_motion_file(p)
    print(f"wrote {counts['train']} train / {counts['val']} val / {counts['test']} test sequences to {out}")
    return [out / "split.json"] + written


def cmd_train_prior(args, cfg: RunConfig) -> list:
    from .plotting import plot_prior_curve
    skel, seqs = load_split(_data_dir(args), "train")
    out = _stage_dir(args, "prior")
    poses = np.concatenate([s.frames for s in seqs])
    params, curve = train_prior(to_limb_directions(poses, skel), cfg.prior)
    save_prior(out / "prior.npz", params, skel)
    with open(out / "prior_curve.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_nll", "heldout_nll"])
        w.writeheader()
        for r in curve:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    plot_prior_curve(curve, out / "prior_curve.png")
    print(f"prior: held-out NLL {curve[0]['heldout_nll']:.3f} -> {curve[-1]['heldout_nll']:.3f}")
    return [out / "prior.npz", out / "prior_curve.csv", out / "prior_curve.png"]


def cmd_mine_angles(args, cfg: RunConfig) -> list:
    skel, seqs = load_split(_data_dir(args), "train")
    out = _stage_dir(args, "angles")
    poses = np.concatenate([s.frames for s in seqs])
    table = mine_ranges(poses, default_angle_specs(skel), skel, margin=cfg.angle_margin)
    save_angle_table(out / "angle_table.json", table)
    for s in table.specs:
        print(f"{s.name:<24} [{np.degrees(s.bounds[0]):7.2f}, {np.degrees(s.bounds[1]):7.2f}] deg")
    return [out / "angle_table.json"]


def cmd_train(args, cfg: RunConfig) -> list:
    from .plotting import plot_training_curves
    from .training import train
    data = _data_dir(args)
    prior_path = _require(Path(args.prior) if args.prior else Path(args.out) / "prior" / "prior.npz",
                          "prior checkpoint", "train-prior")
    table_path = _require(Path(args.angles) if args.angles else Path(args.out) / "angles" / "angle_table.json",
                          "angle table", "mine-angles")
    skel, train_seqs = load_split(data, "train")
    _, val_seqs = load_split(data, "val")
    prior = load_prior(prior_path, skel)
    table = load_angle_table(table_path, skel)
    tc = cfg.train
    out = _stage_dir(args, "train")
    dump_config(cfg, out / "config.yaml")
    res = train(tc, skel, split_windows(train_seqs, tc.H, tc.T, tc.window_stride), prior, table,
                split_windows(val_seqs, tc.H, tc.T, tc.window_stride), out_dir=out)
    final = out / "generator.npz"
    final.write_bytes(res.checkpoints[-1].read_bytes())
    plot_training_curves(res.history, out / "training_curves.png")
    last = res.history[-1]
    print(f"trained {tc.epochs} epochs: total {last['total']:.4f} val APD {last['APD']:.4f} ADE {last['ADE']:.4f}")
    args._inputs = [prior_path, table_path, data / "split.json"]
    args._checkpoints = res.checkpoints
    return [final, out / "metrics.csv", out / "training_curves.png", out / "config.yaml"]


def _test_windows(args, cfg: RunConfig, H: int, T: int):
    skel, seqs = load_split(_data_dir(args), "test")
    stride = cfg.eval.stride or max(1, T // 2)
    all_w = split_windows(seqs, H, T, stride)
    if not all_w:
        raise PipelineError(f"test sequences are shorter than H+T = {H + T}")
    return skel, all_w, spread(all_w, cfg.eval.max_windows)


def _window_key(w) -> str:
    return f"{w.source}@{w.start}"


def cmd_sample(args, cfg: RunConfig) -> list:
    out = _stage_dir(args, "samples")
    tc = cfg.train
    if args.model == "zero-velocity":
        gen = None
        H, T = tc.H, tc.T
    else:
        ckpt = _require(Path(args.checkpoint) if args.checkpoint else Path(args.out) / "train" / "generator.npz",
                        "generator checkpoint", "train")
        gen = load_generator(ckpt)
        H, T = gen.H, gen.T
    skel, _, windows = _test_windows(args, cfg, H, T)
    windows = windows[:args.windows] if args.windows else windows
    seed = args.seed if args.seed is not None else 0
    K = args.K if args.K is not None else (tc.K if args.mode == "tree" else cfg.eval.n_samples)
    frozen = None
    if args.freeze_parts:
        if gen is None:
            raise PipelineError("--freeze-parts needs a trained generator")
        if not args.latents:
            raise PipelineError("--freeze-parts needs --latents <file.npy> holding one latent row per frozen part")
        lat = np.load(_require(Path(args.latents), "latent file", "sample"))
        lat = np.atleast_2d(lat)
        if lat.shape[0] < args.freeze_parts or lat.shape[1] != gen.latent_dim:
            raise PipelineError(f"latent file must be ({args.freeze_parts}, {gen.latent_dim}), got {lat.shape}")
        frozen = list(lat[:args.freeze_parts])
    index = {"H": H, "T": T, "model": args.model, "mode": "controllable" if frozen else args.mode,
             "K": K, "joints": list(skel.joint_names), "windows": []}
    written = []
    for wi, w in enumerate(windows):
        if gen is None:
            futures = np.repeat(zero_velocity_baseline(w.past, T)[None], K, axis=0)
        elif frozen is not None:
            futures = controllable_sample(gen, w.past, frozen, K, seed).futures[0]
        elif args.mode == "tree":
            futures = sample_tree(gen, w.past, K, seed).futures[0]
        else:
            futures = sample_paths(gen, w.past, K, seed, batch_offset=wi).futures[0]
        files = []
        for k, f in enumerate(futures):
            name = f"w{wi:03d}_s{k:03d}.motion"
            save_motion_file(out / name, skel, MotionSequence(f, name=name))
            files.append(name)
            written.append(out / name)
        index["windows"].append({"key": _window_key(w), "source": w.source, "start": w.start, "files": files})
    (out / "index.json").write_text(json.dumps(index, indent=2))
    print(f"wrote {len(written)} motion files for {len(windows)} window(s) to {out}")
    return [out / "index.json"] + written


def load_prediction_dump(pred_dir: Path):
    index = json.loads(_require(pred_dir / "index.json", "prediction index", "sample").read_text())
    out = {}
    for entry in index["windows"]:
        out[entry["key"]] = np.stack([load_motion_file(pred_dir / f)[1].frames for f in entry["files"]])
    return index, out


def cmd_eval(args, cfg: RunConfig) -> list:
    from .plotting import plot_eval
    out = _stage_dir(args, "eval")
    seed = args.seed if args.seed is not None else 0
    reports, inputs = [], []
    if args.predictions:
        pred_dir = Path(args.predictions)
        index, preds = load_prediction_dump(pred_dir)
        H, T = index["H"], index["T"]
        skel, all_w, _ = _test_windows(args, cfg, H, T)
        by_key = {_window_key(w): w for w in all_w}
        missing = [k for k in preds if k not in by_key]
        if missing:
            raise PipelineError(f"prediction windows not found in the test split: {missing[:3]}")
        windows = [by_key[k] for k in preds]
        predictions = [preds[k] for k in preds]
        parts, gen = None, None
        label = index.get("model", "dump")
        inputs.append(pred_dir / "index.json")
    else:
        ckpt = _require(Path(args.checkpoint) if args.checkpoint else Path(args.out) / "train" / "generator.npz",
                        "generator checkpoint", "train")
        gen = load_generator(ckpt)
        H, T = gen.H, gen.T
        skel, all_w, windows = _test_windows(args, cfg, H, T)
        n = cfg.eval.n_samples
        predictions = []
        for lo in range(0, len(windows), 8):
            ws = windows[lo:lo + 8]
            ps = sample_paths(gen, np.stack([w.past for w in ws]), n, seed, batch_offset=lo)
            predictions.extend(ps.futures)
        parts = {name: gen.part_coords[i] for i, name in enumerate(gen.partition.names)}
        label = args.label or "model"
        inputs.append(ckpt)
    # pseudo ground truth comes from every test window, not only the evaluated subset
    pg = mine_pseudo_gt(all_w, cfg.train.pgt_threshold)
    pos = {_window_key(w): i for i, w in enumerate(all_w)}
    futures = np.stack([w.future for w in all_w])
    pgts = [futures[pg[pos[_window_key(w)]]] for w in windows]
    gts = [w.future for w in windows]
    reports.append(evaluate(predictions, gts, pgts, parts, model=label))
    if args.baseline:
        base = [zero_velocity_baseline(w.past, T)[None] for w in windows]
        reports.append(evaluate(base, gts, pgts, None, model="zero-velocity"))
    write_reports_csv(out / "report.csv", reports)
    (out / "report.json").write_text(json.dumps([r.to_dict() for r in reports], indent=2))
    plot_eval(reports, out / "report.png")
    for r in reports:
        print(r.table())
        print()
    args._inputs = inputs
    return [out / "report.csv", out / "report.json", out / "report.png"]


def cmd_export(args, cfg: RunConfig) -> list:
    if args.format not in FORMATS:
        raise PipelineError(f"unknown export format {args.format!r}; choose from {FORMATS}")
    pred_dir = Path(args.predictions) if args.predictions else Path(args.out) / "samples"
    index, preds = load_prediction_dump(pred_dir)
    out = _stage_dir(args, "export")
    skel = load_motion_file(pred_dir / index["windows"][0]["files"][0])[0]
    written = []
    for wi, (key, fut) in enumerate(preds.items()):
        stem = f"w{wi:03d}"
        if args.format == "csv":
            export_csv(out / f"{stem}.csv", fut, skel)
            written.append(out / f"{stem}.csv")
        elif args.format == "json":
            export_json(out / f"{stem}.json", fut, skel)
            written.append(out / f"{stem}.json")
        else:
            written.extend(export_svg(out / stem, fut, skel, args.view, args.every))
    print(f"exported {len(written)} file(s) to {out}")
    args._inputs = [pred_dir / "index.json"]
    return written


COMMANDS = {
    "synth": cmd_synth, "train-prior": cmd_train_prior, "mine-angles": cmd_mine_angles,
    "train": cmd_train, "sample": cmd_sample, "eval": cmd_eval, "export": cmd_export,
}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON run config or preset name (default: desk-synth)")
    common.add_argument("--seed", type=int, help="overrides every seed in the config")
    common.add_argument("--out", default="runs/default", help="run directory (default: %(default)s)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value, e.g. train.lambda_d=[0,0]")
    common.add_argument("--data", help="dataset directory (default: <out>/data)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="divmotion", description="Diverse part-based human motion prediction.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate the synthetic dataset")
    sub.add_parser("train-prior", parents=[common], help="fit the pose prior flow").add_argument("--tag")
    sub.add_parser("mine-angles", parents=[common], help="mine joint-angle ranges").add_argument("--tag")

    t = sub.add_parser("train", parents=[common], help="train the motion generator")
    t.add_argument("--prior", help="prior checkpoint (default: <out>/prior/prior.npz)")
    t.add_argument("--angles", help="angle table (default: <out>/angles/angle_table.json)")
    t.add_argument("--tag", help="suffix for the output directory, e.g. an ablation name")

    s = sub.add_parser("sample", parents=[common], help="sample futures for test windows")
    s.add_argument("--checkpoint", help="generator checkpoint (default: <out>/train/generator.npz)")
    s.add_argument("--model", choices=["generator", "zero-velocity"], default="generator")
    s.add_argument("--mode", choices=["tree", "paths"], default="tree",
                   help="tree: K**N futures; paths: K independent root-to-leaf paths")
    s.add_argument("-K", type=int, help="samples per part (tree) or paths per window")
    s.add_argument("--windows", type=int, default=1, help="number of test windows (0 = all evaluated)")
    s.add_argument("--freeze-parts", type=int, default=0, metavar="JC",
                   help="share the first JC parts across all K outputs")
    s.add_argument("--latents", help=".npy with one latent row per frozen part")
    s.add_argument("--tag")

    e = sub.add_parser("eval", parents=[common], help="score a checkpoint or a prediction dump")
    e.add_argument("--checkpoint")
    e.add_argument("--predictions", help="directory written by `sample`")
    e.add_argument("--label", help="model name in the report")
    e.add_argument("--no-baseline", dest="baseline", action="store_false",
                   help="skip the zero-velocity reference row")
    e.add_argument("--tag")

    x = sub.add_parser("export", parents=[common], help="export a prediction dump for plotting")
    x.add_argument("--predictions", help="directory written by `sample` (default: <out>/samples)")
    x.add_argument("--format", default="csv", help=f"one of {', '.join(FORMATS)}")
    x.add_argument("--view", choices=sorted(VIEW_AXES), default="z", help="axis looked along for svg")
    x.add_argument("--every", type=int, default=10, help="svg: keep every n-th frame")
    x.add_argument("--tag")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    started = time.time()
    try:
        cfg = resolve_config(args)
        outputs = COMMANDS[args.command](args, cfg)
        missing = [str(p) for p in outputs if not Path(p).exists()]
        if missing:
            raise PipelineError(f"declared outputs were not written: {missing[:5]}")
    except (PipelineError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    out_dir = getattr(args, "_out_dir", Path(args.out))
    write_manifest(out_dir, args.command, args, cfg, getattr(args, "_inputs", []), outputs, started,
                   getattr(args, "_checkpoints", []))
    return 0


if __name__ == "__main__":
    sys.exit(main())
