"""Command-line surface: annotate | review | filter | train-rf | predict | eval | augment | synth.

Every subcommand accepts --config/--seed/--jobs; fatal errors exit nonzero
with a one-line JSON error summary on stderr, and batch annotation exits 3
when some frames failed but the run carried on.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evalkit, imaging, pipeline, rfseg
from .review import serve_review

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 3


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, help="pipeline configuration JSON")
    sub.add_argument("--seed", type=int, default=None, help="seed override")
    sub.add_argument("--jobs", type=int, default=1, help="worker pool width for batch commands")


def _load_pipeline_config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.load_config(args.config) if args.config else pipeline.PipelineConfig()
    if args.seed is not None:
        cfg = pipeline.PipelineConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


def cmd_annotate(args) -> int:
    cfg = _load_pipeline_config(args)
    # per-frame problems (missing files included) are skip-and-log, not fatal
    manifest = imaging.load_manifest(args.manifest, check_files=False)
    _, diagnostics = pipeline.annotate_sequence(
        manifest, cfg, args.out_dir, stage_masks=args.stage_masks, force=args.force, jobs=args.jobs
    )
    counts = diagnostics["counts"]
    print(f"annotated {counts['ok']} frame(s), {counts['failed']} failed, {counts['skipped']} skipped")
    return EXIT_PARTIAL if counts["failed"] else EXIT_OK


def cmd_review(args) -> int:
    manifests = [imaging.load_manifest(p) for p in args.manifest]
    host, _, port = args.bind.rpartition(":")
    server = serve_review(manifests, args.decisions, host=host or "127.0.0.1", port=int(port), ui_dir=args.ui_dir)
    print(f"review service on http://{server.server_address[0]}:{server.server_address[1]}/ "
          f"({len(manifests)} sequence(s)); Ctrl-C to stop")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_filter(args) -> int:
    manifest = imaging.load_manifest(args.manifest, check_files=False)
    decisions = evalkit.load_decisions(args.decisions)
    filtered = evalkit.filter_dataset(manifest, decisions)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    def rebase(rel):
        if rel is None:
            return None
        resolved = filtered.resolve(rel).resolve()
        base = out.parent.resolve()
        return str(resolved.relative_to(base)) if resolved.is_relative_to(base) else str(resolved)

    rebased = imaging.SequenceManifest(
        sequence_id=filtered.sequence_id,
        frames=[
            imaging.FrameEntry(f.index, rebase(f.depth_path), rebase(f.color_path), rebase(f.label_path))
            for f in filtered.frames
        ],
        subject_id=filtered.subject_id,
        camera=filtered.camera,
        root=out.parent,
    )
    imaging.save_manifest(rebased, out)
    print(f"kept {len(filtered.frames)}/{len(manifest.frames)} frames -> {out}")
    return EXIT_OK


def _labeled_frames(manifest: imaging.SequenceManifest):
    frames = []
    for entry in manifest.frames:
        if entry.label_path is None:
            continue
        depth = imaging.load_depth(manifest.resolve(entry.depth_path))
        label = imaging.load_label(manifest.resolve(entry.label_path))
        frames.append((depth, label))
    return frames


def cmd_train_rf(args) -> int:
    frames = []
    for mp in args.manifest:
        frames.extend(_labeled_frames(imaging.load_manifest(mp)))
    if not frames:
        raise ValueError("no labeled frames in the given manifest(s)")
    cfg = rfseg.TrainConfig(
        trees=args.trees,
        max_depth=args.max_depth,
        pixels_per_class=args.pixels_per_class,
        candidates_per_node=args.candidates,
        thresholds_per_candidate=args.thresholds,
        min_samples=args.min_samples,
        seed=args.seed if args.seed is not None else 0,
        features=rfseg.FeatureConfig(offset_radius=args.offset_radius, bg_depth=args.bg_depth),
    )
    model = rfseg.train_forest(frames, cfg)
    rfseg.save_forest(model, args.out)
    nodes = sum(t.n_nodes for t in model.trees)
    print(f"trained {len(model.trees)} tree(s), {nodes} nodes, on {len(frames)} frames -> {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = rfseg.load_forest(args.model)
    manifest = imaging.load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for entry in manifest.frames:
        depth = imaging.load_depth(manifest.resolve(entry.depth_path))
        mask = rfseg.predict_mask(model, depth)
        name = f"{entry.index:05d}_label.png"
        imaging.save_label(mask, out_dir / name)
        entries.append(imaging.FrameEntry(entry.index, entry.depth_path, entry.color_path, name))
    print(f"predicted {len(entries)} frame(s) -> {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    gt_dir, pred_dir = Path(args.gt), Path(args.pred)
    gt_files = sorted(p for p in gt_dir.glob("*.png") if "label" in p.name or args.all_pngs)
    if not gt_files:
        raise ValueError(f"no label PNGs found under {gt_dir}")
    cm = evalkit.empty_confusion()
    for gt_path in gt_files:
        pred_path = pred_dir / gt_path.name
        if not pred_path.exists():
            raise FileNotFoundError(f"missing prediction for {gt_path.name}")
        cm = evalkit.accumulate(cm, imaging.load_label(gt_path), imaging.load_label(pred_path))
    report = evalkit.iou_report(cm)
    print(report.table())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    return EXIT_OK


def _transform_color(pixels: np.ndarray, spec: evalkit.AugmentSpec) -> np.ndarray:
    out = pixels[:, ::-1].copy() if spec.flip else pixels.copy()
    channels = []
    for c in range(3):
        ch = out[..., c]
        if spec.scale != 1.0:
            ch = evalkit._nn_scale(ch, spec.scale)
        dx = round(spec.tx * ch.shape[1])
        dy = round(spec.ty * ch.shape[0])
        if dx or dy:
            ch = evalkit._shift(ch, dx, dy)
        channels.append(ch)
    return np.stack(channels, axis=-1)


def cmd_augment(args) -> int:
    manifest = imaging.load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    entries = []
    specs = {}
    for entry in manifest.frames:
        if entry.label_path is None:
            continue
        depth = imaging.load_depth(manifest.resolve(entry.depth_path))
        color = imaging.load_color(manifest.resolve(entry.color_path))
        label = imaging.load_label(manifest.resolve(entry.label_path))
        rng = np.random.default_rng(np.random.SeedSequence([seed, entry.index]))
        spec = evalkit.sample_augment_spec(rng, seed=seed)
        aug_depth, aug_label = evalkit.augment(depth.values, label, spec)
        aug_color = _transform_color(color.pixels, spec)
        names = (f"{entry.index:05d}_depth.png", f"{entry.index:05d}_color.png", f"{entry.index:05d}_label.png")
        imaging.save_depth(imaging.DepthFrame(aug_depth), out_dir / names[0])
        imaging.save_color(imaging.ColorFrame(aug_color), out_dir / names[1])
        imaging.save_label(aug_label, out_dir / names[2])
        entries.append(imaging.FrameEntry(entry.index, names[0], names[1], names[2]))
        specs[entry.index] = {"flip": spec.flip, "tx": spec.tx, "ty": spec.ty, "scale": spec.scale}
    augmented = imaging.SequenceManifest(
        sequence_id=f"{manifest.sequence_id}-aug", frames=entries,
        subject_id=manifest.subject_id, camera=manifest.camera, root=out_dir,
    )
    imaging.save_manifest(augmented, out_dir / "manifest.json")
    (out_dir / "augment_specs.json").write_text(json.dumps(specs, indent=2, sort_keys=True) + "\n")
    print(f"augmented {len(entries)} frame(s) -> {out_dir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    params = evalkit.SynthParams(
        width=args.width, height=args.height,
        color_noise=args.color_noise, depth_noise=args.depth_noise, invalid_prob=args.invalid_prob,
    )
    seed = args.seed if args.seed is not None else 0
    manifest = evalkit.synth_corpus(args.out_dir, args.count, seed, params)
    print(f"wrote {len(manifest.frames)} synthetic frame(s) -> {args.out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gloveseg", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("annotate", help="run the three-stage pipeline over a sequence")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--stage-masks", action="store_true", help="also write stage-1/2 masks for audit")
    p.add_argument("--force", action="store_true", help="overwrite existing labels")
    _add_common(p)
    p.set_defaults(func=cmd_annotate)

    p = subs.add_parser("review", help="serve the frame-review UI and decisions API")
    p.add_argument("--manifest", type=Path, required=True, action="append")
    p.add_argument("--decisions", type=Path, required=True)
    p.add_argument("--bind", default="127.0.0.1:8731")
    p.add_argument("--ui-dir", type=Path, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_review)

    p = subs.add_parser("filter", help="drop rejected frame ranges from a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--decisions", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_filter)

    p = subs.add_parser("train-rf", help="train the depth random forest")
    p.add_argument("--manifest", type=Path, required=True, action="append")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--trees", type=int, default=3)
    p.add_argument("--max-depth", type=int, default=22)
    p.add_argument("--pixels-per-class", type=int, default=200)
    p.add_argument("--candidates", type=int, default=24)
    p.add_argument("--thresholds", type=int, default=20)
    p.add_argument("--min-samples", type=int, default=16)
    p.add_argument("--offset-radius", type=float, default=200.0)
    p.add_argument("--bg-depth", type=float, default=10_000.0)
    _add_common(p)
    p.set_defaults(func=cmd_train_rf)

    p = subs.add_parser("predict", help="predict label masks from depth with a trained forest")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = subs.add_parser("eval", help="mIoU of predicted label PNGs against ground truth")
    p.add_argument("--gt", type=Path, required=True, help="directory of ground-truth label PNGs")
    p.add_argument("--pred", type=Path, required=True, help="directory of predicted label PNGs")
    p.add_argument("--out", type=Path, default=None, help="also write the report as JSON")
    p.add_argument("--all-pngs", action="store_true", help="compare every PNG, not just *label*.png")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("augment", help="write a randomly augmented copy of a labeled sequence")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_augment)

    p = subs.add_parser("synth", help="generate a synthetic RGBD corpus with exact labels")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--color-noise", type=float, default=5.0)
    p.add_argument("--depth-noise", type=float, default=4.0)
    p.add_argument("--invalid-prob", type=float, default=0.0)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_FATAL
    except Exception as exc:
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}"}), file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
