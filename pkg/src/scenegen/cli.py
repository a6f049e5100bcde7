"""Command-line entry points.

Exit codes: 0 on success, 2 for invalid input or configuration, 1 for
unexpected failures.  Errors print one JSON object per line to stderr so
wrappers can parse them.  File outputs are written temp-then-rename, so an
interrupted command never leaves a half-written artifact and reruns are
idempotent.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import SceneGenError, ValidationError


def _fail(exc: BaseException, code: int) -> int:
    payload = {"error": str(exc), "type": type(exc).__name__}
    print(json.dumps(payload), file=sys.stderr)
    return code


def _write_text_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _parse_clicks(raw: str):
    clicks = []
    for token in raw.replace(";", " ").split():
        u, v = token.split(",")
        clicks.append((float(u), float(v)))
    return tuple(clicks)


def _parse_overrides(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValidationError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def make_provider(spec: str, cfg):
    """'http(s)://...' -> wire client; 'oracle:IMAGE.png' -> stub provider."""
    from .guidance import HttpProvider, TargetOracleProvider

    if spec.startswith(("http://", "https://")):
        return HttpProvider(spec)
    if spec.startswith("oracle:"):
        from PIL import Image
        img = Image.open(spec[len("oracle:"):]).convert("RGB")
        size = cfg.provider_size
        img = img.resize((size, size), Image.BILINEAR)
        target = np.asarray(img, dtype=np.float32) / 255.0
        return TargetOracleProvider(target, cfg.schedule)
    raise ValidationError(
        f"provider {spec!r} must be an http(s) URL or 'oracle:IMAGE'")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_make_scene(args) -> int:
    from .scene_cache import (desk_cameras, desk_primitives,
                              make_synthetic_scene, save_cache)
    prims = desk_primitives(with_occluder=args.preset == "desk-occluder")
    cams = desk_cameras(args.views, args.size)
    cache = make_synthetic_scene(prims, cams)
    save_cache(cache, args.out, color_format=args.color_format)
    print(json.dumps({"out": str(args.out), "views": len(cache.views),
                      "size": args.size}))
    return 0


def cmd_place_box(args) -> int:
    from .geometry import ClickSelection, box_to_text, build_box
    from .scene_cache import load_cache
    cache = load_cache(args.scene)
    view = cache.view(args.view)
    sel = ClickSelection(args.view, _parse_clicks(args.clicks),
                         tuple(float(x) for x in args.ratios.split(",")))
    box = build_box(sel, view.camera, view.depth_lookup)
    _write_text_atomic(Path(args.out), box_to_text(box))
    print(json.dumps({"out": str(args.out),
                      "center": [float(c) for c in box.center],
                      "half_extents": [float(h) for h in box.half_extents]}))
    return 0


def cmd_train(args) -> int:
    from .geometry import box_from_text
    from .scene_cache import load_cache
    from .trainer import TrainConfig, train

    cache = load_cache(args.scene)
    overrides = _parse_overrides(args.set)
    if args.config:
        cfg = TrainConfig.load(args.config, overrides)
    else:
        cfg = TrainConfig.from_dict(overrides)

    resume_from = None
    box = None
    if args.resume:
        resume_from = Path(args.out) / "field.ckpt"
    elif args.box:
        box = box_from_text(Path(args.box).read_text())
    else:
        raise ValidationError("--box is required unless --resume is given")

    provider = make_provider(args.provider, cfg)
    result = train(cache, box, provider, cfg, args.out,
                   resume_from=resume_from)
    print(json.dumps({"status": result.status,
                      "steps_done": result.steps_done,
                      "checkpoint": str(result.checkpoint)}))
    return 0


def cmd_render(args) -> int:
    from .compositor import export_render, render_view
    from .field import load_checkpoint
    from .scene_cache import load_cache
    import torch

    cache = load_cache(args.scene)
    field, extra = load_checkpoint(args.checkpoint)
    views = [cache.view(args.view)] if args.view is not None else cache.views
    with torch.no_grad():
        for view in views:
            out = render_view(field, view, n_samples=args.samples)
            export_render(out, field.box,
                          Path(args.out) / f"view{view.view_id}",
                          step=extra.get("step"))
    print(json.dumps({"out": str(args.out),
                      "views": [v.view_id for v in views]}))
    return 0


def cmd_eval(args) -> int:
    from .field import load_checkpoint
    from .harness import (eval_prompt_fidelity, mean_rgb_scorer,
                          scene_preservation)
    from .scene_cache import load_cache

    cache = load_cache(args.scene)
    field, extra = load_checkpoint(args.checkpoint)
    if args.kind == "fidelity":
        report = eval_prompt_fidelity(field, cache, field.box, args.prompt,
                                      mean_rgb_scorer, n_views=args.views,
                                      seed=args.seed)
    else:
        report = scene_preservation(field, cache, field.box)
    _write_text_atomic(Path(args.out), json.dumps(report.to_dict(), indent=2))
    print(json.dumps({"out": str(args.out), "summary": report.summary}))
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from .service import create_app
    app = create_app(args.scene, provider_spec=args.provider,
                     jobs_root=args.jobs_root)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="scenegen",
        description="Generate a text-prompted object inside a box of a "
                    "cached RGB-D scene.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("make-scene", help="write a synthetic scene cache")
    sp.add_argument("--out", required=True)
    sp.add_argument("--preset", choices=["desk", "desk-occluder"],
                    default="desk")
    sp.add_argument("--views", type=int, default=4)
    sp.add_argument("--size", type=int, default=128)
    sp.add_argument("--color-format", choices=["png", "f32"], default="png")
    sp.set_defaults(func=cmd_make_scene)

    sp = sub.add_parser("place-box", help="build a box from three clicks")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--view", type=int, required=True)
    sp.add_argument("--clicks", required=True,
                    help="'u1,v1 u2,v2 u3,v3' in pixels")
    sp.add_argument("--ratios", default="1.0,1.0,1.0")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_place_box)

    sp = sub.add_parser("train", help="optimize the object field")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--box")
    sp.add_argument("--config")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--provider", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("render", help="render a checkpoint over the scene")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--view", type=int)
    sp.add_argument("--samples", type=int, default=64)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("eval", help="run an evaluation protocol")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--kind", choices=["fidelity", "preservation"],
                    required=True)
    sp.add_argument("--prompt", default="")
    sp.add_argument("--views", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("serve", help="HTTP service for the placement UI")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--provider", default=None)
    sp.add_argument("--jobs-root", default="jobs")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (SceneGenError, FileNotFoundError) as exc:
        return _fail(exc, 2)
    except Exception as exc:   # noqa: BLE001 - last-resort reporting
        return _fail(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
