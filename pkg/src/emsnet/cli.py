"""Command-line driver: ``emsnet {synth,train,eval,baseline,replay}``.

Every command writes ``manifest.json`` into its output directory. The
manifest stores the exact argument vector, so ``emsnet replay`` can rerun
any command and regenerate its numeric outputs bit for bit.

Failures exit non-zero after printing one JSON line to stderr:
``{"error": "<kind>", "message": "..."}``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, formats, hsi
from .baselines import NO_CHANGE_NOTE, run_baseline
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CompatibilityError, EmsNetError
from .metrics import evaluate, render_error_map
from .model import config_from_params, params_from_arrays
from .train import TrainConfig, predict_scene, train, training_coords

OUTPUT_NAMES = {
    "metrics": "metrics.json",
    "change": "change.pgm",
    "errors": "errors.ppm",
    "prob": "prob.pfg",
    "log": "train.jsonl",
    "manifest": "manifest.json",
    "model": "model.ckpt",
}


class UsageError(Exception):
    kind = "usage"


def _write_manifest(out_dir: Path, args, argv, config, inputs, outputs, started):
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "code_version": __version__,
        "duration_s": round(time.perf_counter() - started, 3),
    }
    path = out_dir / OUTPUT_NAMES["manifest"]
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _train_config(args) -> TrainConfig:
    if args.distill == "identity" and args.c_prime_ratio != 1.0:
        raise UsageError("--distill identity requires --c-prime-ratio 1.0")
    return TrainConfig(
        epochs=args.epochs,
        lr0=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        n_unchanged=args.samples_unchanged,
        n_changed=args.samples_changed,
        tau=args.tau,
        patch_size=args.patch_size,
        c_prime_ratio=args.c_prime_ratio,
        distill=args.distill,
        normalize=not args.no_normalize,
    )


def _emit_maps(out_dir: Path, binary, reference, extra_json: dict, mask=None) -> list[Path]:
    report = evaluate(binary, reference, mask)
    paths = [out_dir / OUTPUT_NAMES[k] for k in ("metrics", "change", "errors")]
    paths[0].write_text(report.to_json(**extra_json) + "\n")
    formats.write_binary_map(paths[1], binary)
    formats.write_ppm(paths[2], render_error_map(binary, reference))
    return paths


def cmd_synth(args, argv):
    started = time.perf_counter()
    out = Path(args.out_dir)
    pair = hsi.generate_synthetic_pair(args.height, args.width, args.bands, args.regions, args.noise, args.seed)
    written = hsi.save_scene(pair, out, interleave=args.interleave)
    config = {k: getattr(args, k) for k in ("height", "width", "bands", "regions", "noise", "seed", "interleave")}
    _write_manifest(out, args, argv, config, [], written, started)


def cmd_train(args, argv):
    started = time.perf_counter()
    cfg = _train_config(args)
    pair = hsi.load_scene(args.scene_dir)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / OUTPUT_NAMES["log"]
    with open(log_path, "w") as fh:
        params, _ = train(pair, cfg, on_epoch=lambda e: fh.write(json.dumps(e) + "\n"))
    ckpt = out / OUTPUT_NAMES["model"]
    save_checkpoint(ckpt, params)
    config = {"train": cfg.to_dict(), "model": cfg.model_config(pair.bands).to_dict()}
    _write_manifest(out, args, argv, config, [args.scene_dir], [ckpt, log_path], started)


def cmd_eval(args, argv):
    started = time.perf_counter()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / OUTPUT_NAMES["model"]
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    params = params_from_arrays(load_checkpoint(ckpt), trainable=False)
    model_cfg = config_from_params(params)
    pair = hsi.load_scene(args.scene_dir)
    if pair.bands != model_cfg.backbone.in_bands:
        raise CompatibilityError(
            f"scene {args.scene_dir} has {pair.bands} bands but checkpoint {ckpt} expects {model_cfg.backbone.in_bands}"
        )
    cfg = _train_config(args)
    change = predict_scene(pair, params, cfg)
    mask = None
    if args.exclude_train_pixels:
        mask = np.ones(pair.shape, dtype=bool)
        for (r, c), _ in training_coords(pair, cfg):
            mask[r, c] = False
    outputs = _emit_maps(out, change.binary, pair.reference, {"method": "ems-net"}, mask)
    prob_path = out / OUTPUT_NAMES["prob"]
    formats.write_pfg(prob_path, change.prob)
    if not args.checkpoint:
        # pin the checkpoint so a replay into another directory finds it
        argv = list(argv) + ["--checkpoint", str(ckpt.resolve())]
    _write_manifest(out, args, argv, {"model": model_cfg.to_dict(), "train": cfg.to_dict()}, [args.scene_dir, ckpt], outputs + [prob_path], started)


def cmd_baseline(args, argv):
    started = time.perf_counter()
    if args.method not in ("cva", "isfa"):
        raise UsageError(f"unknown method {args.method!r}; valid methods: cva, isfa")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pair = hsi.load_scene(args.scene_dir)
    kw = {"max_iters": args.max_iters, "tol": args.tol} if args.method == "isfa" else {}
    result = run_baseline(pair, args.method, **kw)
    if NO_CHANGE_NOTE in result.flags:
        print(NO_CHANGE_NOTE, file=sys.stderr)
    summary = result.summary()
    if summary["threshold"] == float("inf"):
        summary["threshold"] = None
    outputs = _emit_maps(out, result.binary, pair.reference, summary)
    _write_manifest(out, args, argv, {"method": args.method, **kw}, [args.scene_dir], outputs, started)


def cmd_replay(args, argv):
    manifest = json.loads(Path(args.manifest).read_text())
    replay_argv = list(manifest["argv"])
    if args.out_dir:
        flag = "--out-dir"
        if flag in replay_argv:
            replay_argv[replay_argv.index(flag) + 1] = args.out_dir
        else:
            replay_argv += [flag, args.out_dir]
    return main(replay_argv)


def _add_train_flags(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.0005)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--patch-size", type=int, default=5)
    p.add_argument("--samples-unchanged", type=int, default=100)
    p.add_argument("--samples-changed", type=int, default=100)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--c-prime-ratio", type=float, default=1 / 8)
    p.add_argument("--distill", choices=("learned", "identity"), default="learned")
    p.add_argument("--no-normalize", action="store_true", help="skip per-band min-max scaling")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emsnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic bi-temporal scene")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--regions", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--interleave", choices=("bsq", "bil", "bip"), default="bsq")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train EMS-Net on a scene")
    p.add_argument("--scene-dir", required=True)
    p.add_argument("--out-dir", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="predict a change map and score it")
    p.add_argument("--scene-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--checkpoint", help="defaults to <out-dir>/model.ckpt")
    p.add_argument("--exclude-train-pixels", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="run CVA or ISFA")
    p.add_argument("--method", required=True)
    p.add_argument("--scene-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        result = args.func(args, argv)
        return int(result or 0)
    except (EmsNetError, UsageError, OSError, ValueError) as exc:
        kind = getattr(exc, "kind", None) or ("io" if isinstance(exc, OSError) else "value")
        print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
        return 2 if kind == "usage" else 1


if __name__ == "__main__":
    sys.exit(main())
