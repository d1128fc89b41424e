"""Command-line entry point: ``asamdet <command> ...``.

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 numeric failure.
Set ``ASAMDET_LOG`` (DEBUG, INFO, WARNING, ...) to control log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import Config, load_config
from .errors import ConfigError, DimensionError, GenerationError, NumericError
from .longterm import build_bank_for_videos, window_stack
from .synthdata import CLASSES, ClipSample, generate_clip, generate_long_video, manifest_records
from .tensor import no_grad
from .decoder import Detector
from .trainer import evaluate, long_dataset, short_dataset, train, warm_start

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("asamdet")


class UsageError(Exception):
    pass


# -- helpers ------------------------------------------------------------------------


def _config(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if overrides:
        from .config import parse_config

        cfg = parse_config("\n".join(f"{k} = {v}" for k, v in overrides.items()), cfg)
    return cfg


def _echo(cfg: Config) -> None:
    sys.stderr.write("# effective config\n" + cfg.dumps())


def _write_text(path: str, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from None


def _dump_json(path: str, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest_lines(records: list[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def _read_manifest(path: str) -> list[dict]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read manifest {path}: {exc}") from None
    return [json.loads(line) for line in lines if line.strip()]


def _check_manifest(records: list[dict], cfg: Config) -> None:
    want = cfg.generator()
    for r in records:
        if r["cfg_hash"] != want.digest():
            have = r.get("dims", {})
            fields = [k for k in ("frames", "height", "width") if have.get(k) != getattr(want, k)]
            raise ConfigError(
                f"data generated with a different configuration (mismatched fields: {', '.join(fields) or 'generator'})"
            )


def _clips_from_manifest(records: list[dict], cfg: Config) -> list[ClipSample]:
    """Regenerate clips; long-video records are grouped by (seed, video)."""
    _check_manifest(records, cfg)
    gen = cfg.generator()
    videos: dict[tuple[int, int], int] = {}
    for r in records:
        if "clip" in r:
            key = (r["seed"], r["video"])
            videos[key] = max(videos.get(key, 0), r["clip"] + 1)
    cache = {}
    clips = []
    for r in records:
        if "clip" not in r:
            clips.append(generate_clip(r["seed"], gen))
            continue
        key = (r["seed"], r["video"])
        if key not in cache:
            cache[key] = generate_long_video(r["seed"], videos[key], gen, cfg.n_identities)
            for c in cache[key]:
                c.video_index = r["video"]
        clips.append(cache[key][r["clip"]])
    return clips


def _load_model(path: str):
    try:
        return ckpt.load_model(path)
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc}") from None


def _load_bank(path: str | None):
    if path is None:
        return None
    try:
        return ckpt.load_bank(path)[0]
    except OSError as exc:
        raise UsageError(f"cannot read bank {path}: {exc}") from None


def _window(cfg: Config, bank, clip: ClipSample):
    if bank is None or cfg.phase != "long":
        return None
    if clip.video_index not in bank.videos:
        raise ConfigError(f"bank has no entry for video {clip.video_index}")
    return window_stack(bank.clips(clip.video_index), clip.clip_index, cfg.window)


def _detections_json(dets) -> list[dict]:
    return [
        {
            "query": d.query_index,
            "box": [d.box.x1, d.box.y1, d.box.x2, d.box.y2],
            "human_prob": d.human_prob,
            "action_scores": {CLASSES[c]: float(s) for c, s in enumerate(d.action_scores)},
        }
        for d in dets
    ]


# -- commands -----------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    gen = cfg.generator()
    if args.count < 0:
        raise UsageError("--count must be non-negative")
    if args.long:
        clips = []
        for v in range(args.count):
            video = generate_long_video(args.seed * 1_000_003 + v, cfg.clips_per_video, gen, cfg.n_identities)
            for c in video:
                c.video_index = v
            clips.extend(video)
    else:
        clips = [generate_clip(args.seed * 1_000_003 + i, gen) for i in range(args.count)]
    records = manifest_records(clips, gen)
    dims = {"frames": gen.frames, "height": gen.height, "width": gen.width}
    for r in records:
        r["dims"] = dims
    _write_text(args.out, _manifest_lines(records))
    log.info("wrote %d records to %s", len(records), args.out)
    return EXIT_OK


def _train_common(args, cfg: Config, bank=None) -> int:
    _echo(cfg)
    model = None
    if args.resume:
        model, _ = _load_model(args.resume)
        if model.cfg.phase != cfg.phase:
            raise ConfigError(f"resume checkpoint phase {model.cfg.phase!r} differs from config phase {cfg.phase!r}")
        model.cfg = cfg
    elif getattr(args, "init", None):
        source, _ = _load_model(args.init)
        if source.cfg.phase != "short":
            raise ConfigError("--init expects a short-term checkpoint")
        model = warm_start(Detector(cfg), source)
    if args.data:
        clips = _clips_from_manifest(_read_manifest(args.data), cfg)
    elif cfg.phase == "long":
        clips = [c for video in long_dataset(cfg) for c in video]
    else:
        clips = short_dataset(cfg)
    metrics_path = args.metrics or str(Path(args.out).with_suffix(".metrics.jsonl"))
    try:
        metrics = open(metrics_path, "w")
    except OSError as exc:
        raise UsageError(f"cannot write {metrics_path}: {exc}") from None
    with metrics:
        def on_record(rec):
            metrics.write(json.dumps(rec, sort_keys=True) + "\n")
            metrics.flush()

        try:
            result = train(cfg, clips, bank=bank, model=model, on_record=on_record)
        except NumericError as exc:
            metrics.write(json.dumps({"error": "numeric", "message": str(exc)}) + "\n")
            raise
    digest = ckpt.save_model(args.out, result.model)
    log.info("saved %s (payload sha256 %s)", args.out, digest)
    print(json.dumps({"checkpoint": args.out, "payload_sha256": digest, "steps": len(result.losses)}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    if cfg.phase != "short":
        raise ConfigError("train runs the short-term phase; use train-long for phase = long")
    return _train_common(args, cfg)


def cmd_train_long(args) -> int:
    if not args.bank:
        raise UsageError("train-long requires --bank")
    cfg = _config(args).replace(phase="long")
    bank = _load_bank(args.bank)
    if bank.d != 2 * cfg.d:
        raise ConfigError(f"bank width d={bank.d} does not match 2*d={2 * cfg.d}")
    return _train_common(args, cfg, bank)


def cmd_build_bank(args) -> int:
    model, _ = _load_model(args.checkpoint)
    cfg = model.cfg
    if args.data:
        clips = _clips_from_manifest(_read_manifest(args.data), cfg)
        grouped: dict[int, list[ClipSample]] = {}
        for c in clips:
            if c.clip_index is None:
                raise ConfigError("build-bank needs a long-video manifest (gen-data --long)")
            grouped.setdefault(c.video_index, []).append(c)
        videos = [sorted(grouped[v], key=lambda c: c.clip_index) for v in sorted(grouped)]
    else:
        videos = long_dataset(cfg)
    bank = build_bank_for_videos(model, videos, args.k or cfg.bank_k)
    digest = ckpt.save_bank(args.out, bank)
    print(json.dumps({"bank": args.out, "payload_sha256": digest, "videos": len(videos)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = _load_model(args.checkpoint)
    cfg = model.cfg
    clips = _clips_from_manifest(_read_manifest(args.data), cfg)
    bank = _load_bank(args.bank)
    if cfg.phase == "long" and bank is None:
        raise UsageError("evaluating a long-term checkpoint requires --bank")
    report = evaluate(model, clips, bank, args.threshold, args.iou)
    out = report.to_dict()
    out["iou_threshold"] = args.iou
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write_text(args.out, text)
    print(text, end="")
    return EXIT_OK


def cmd_infer(args) -> int:
    model, _ = _load_model(args.checkpoint)
    cfg = model.cfg
    clips = _clips_from_manifest(_read_manifest(args.data), cfg)
    bank = _load_bank(args.bank)
    out = []
    for i, clip in enumerate(clips):
        dets = model.infer(clip.video, args.threshold, _window(cfg, bank, clip))
        out.append({"clip": i, "detections": _detections_json(dets)})
    _dump_json(args.out, out)
    return EXIT_OK


def visualization(model, clip: ClipSample, window=None, top: int = 3) -> dict:
    """Per-stage sampling points, boxes, human probabilities and top action scores."""
    with no_grad():
        trace = model.forward(clip.video, window)
    stages = []
    for m, st in enumerate(trace.stages, 1):
        scores = st.action_scores()
        best = np.argsort(-scores, axis=1, kind="stable")[:, :top]
        stages.append(
            {
                "stage": m,
                "points": st.points.data.tolist(),  # [N, G, T, P, 3] as (x, y, z)
                "boxes": st.boxes.data.tolist(),
                "human_prob": st.human_prob().tolist(),
                "top_actions": [
                    [{"class": CLASSES[c], "score": float(scores[n, c])} for c in best[n]] for n in range(len(best))
                ],
            }
        )
    return {"keyframe": clip.keyframe_index, "frame_size": [model.cfg.height, model.cfg.width], "stages": stages}


def cmd_visualize(args) -> int:
    model, _ = _load_model(args.checkpoint)
    cfg = model.cfg
    records = _read_manifest(args.data)
    if not 0 <= args.clip < len(records):
        raise UsageError(f"clip index {args.clip} out of range for {len(records)} records")
    clip = _clips_from_manifest([records[args.clip]], cfg)[0]
    bank = _load_bank(args.bank)
    _dump_json(args.out, visualization(model, clip, _window(cfg, bank, clip)))
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asamdet", description="Sparse spatiotemporal action detector on synthetic video.")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    g = sub.add_parser("gen-data", help="write a JSONL dataset manifest")
    with_config(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, required=True, help="clips (or videos with --long)")
    g.add_argument("--long", action="store_true", help="long videos of clips_per_video clips each")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    for name, fn, help_ in (
        ("train", cmd_train, "short-term training"),
        ("train-long", cmd_train_long, "long-term training against a frozen bank"),
    ):
        t = sub.add_parser(name, help=help_)
        with_config(t)
        t.add_argument("--data", help="manifest; defaults to the config's synthetic set")
        t.add_argument("--out", required=True, help="checkpoint path")
        t.add_argument("--metrics", help="JSONL metrics path (default: <out>.metrics.jsonl)")
        t.add_argument("--resume", help="start from this checkpoint")
        if name == "train-long":
            t.add_argument("--bank")
            t.add_argument("--init", help="copy shared weights from this short-term checkpoint")
        t.set_defaults(fn=fn)

    b = sub.add_parser("build-bank", help="store top-k queries per clip of long videos")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--data", help="long-video manifest; defaults to the config's long set")
    b.add_argument("--k", type=int)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_build_bank)

    e = sub.add_parser("eval", help="frame-mAP report")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--bank")
    e.add_argument("--iou", type=float, default=0.5)
    e.add_argument("--threshold", type=float)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="detections as JSON")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--bank")
    i.add_argument("--threshold", type=float)
    i.add_argument("--out", required=True)
    i.set_defaults(fn=cmd_infer)

    v = sub.add_parser("visualize", help="per-stage sampling points and detections as JSON")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--clip", type=int, default=0)
    v.add_argument("--bank")
    v.add_argument("--out", required=True)
    v.set_defaults(fn=cmd_visualize)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("ASAMDET_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DimensionError, GenerationError, ckpt.CheckpointError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
