"""Train the baseline on a labeled manifest and write predicted label PNGs."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from gloveseg import imaging

from .net import NetSpec, build_network
from .train import TrainConfig, predict, train


def _labeled_frames(manifest_path):
    manifest = imaging.load_manifest(manifest_path)
    frames = []
    for entry in manifest.frames:
        if entry.label_path is None:
            continue
        frames.append(
            (
                imaging.load_depth(manifest.resolve(entry.depth_path)),
                imaging.load_label(manifest.resolve(entry.label_path)),
            )
        )
    return manifest, frames


def cmd_train(args) -> int:
    _, frames = _labeled_frames(args.manifest)
    if not frames:
        raise ValueError("no labeled frames in the manifest")
    h, w = frames[0][0].values.shape
    spec = NetSpec(input_size=(h, w), channels=tuple(args.channels))
    model = build_network(spec)
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed, augment=not args.no_augment)
    history = train(model, frames, config=cfg)
    torch.save({"spec": spec.__dict__ | {"channels": list(spec.channels), "input_size": list(spec.input_size)},
                "state": model.state_dict()}, args.out)
    print(f"trained {cfg.epochs} epoch budget, best val mIoU "
          f"{history['best_val_miou'] if history['best_val_miou'] is not None else 'n/a'} -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    saved = torch.load(args.model, weights_only=False)
    raw = saved["spec"]
    spec = NetSpec(
        input_size=tuple(raw["input_size"]),
        channels=tuple(raw["channels"]),
        stem_channels=raw["stem_channels"],
        in_channels=raw["in_channels"],
        num_classes=raw["num_classes"],
    )
    model = build_network(spec)
    model.load_state_dict(saved["state"])
    manifest = imaging.load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for entry in manifest.frames:
        depth = imaging.load_depth(manifest.resolve(entry.depth_path))
        imaging.save_label(predict(model, depth), out_dir / f"{entry.index:05d}_label.png")
    print(f"predicted {len(manifest.frames)} frame(s) -> {out_dir}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cnnbaseline", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, nargs="+", default=[32, 64, 128, 256])
    p.add_argument("--no-augment", action="store_true")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("predict")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_predict)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}"}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
