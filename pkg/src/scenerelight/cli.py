"""Command line entry point: ``scenerelight <subcommand> ...``.

Exit codes: 0 success, 1 usage, 2 data error, 3 runtime or training error.
"""

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _seed(args):
    torch.manual_seed(args.seed)
    np.random.seed(args.seed % 2**32)


def cmd_gen_toy(args):
    from .data import generate_toy_dataset

    if args.scenes < 2:
        raise CliError("restricted pairing needs ≥ 2 scenes", EXIT_USAGE)
    try:
        manifest = generate_toy_dataset(args.out, args.scenes, args.size, args.seed)
    except OSError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    print(manifest)


def cmd_train(args):
    from .trainer import TrainingConfig, train

    config = TrainingConfig.from_json(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.output_dir = args.out
    if config.manifest is not None and not Path(config.manifest).is_absolute():
        config.manifest = str((Path(args.config).parent / config.manifest).resolve())
    result = train(config)
    print(result.checkpoint)
    print(result.run_dir)


def _manifest_path(data):
    p = Path(data)
    return p / "manifest.csv" if p.is_dir() else p


def cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .data import parse_manifest
    from .relightnet import IdentityBaseline
    from .trainer import evaluate_model, split_scenes

    model, _, _ = load_checkpoint(args.ckpt, args.variant)
    if args.identity_baseline and not isinstance(model, IdentityBaseline):
        model = IdentityBaseline(model)
    index = parse_manifest(_manifest_path(args.data))
    eval_scenes = args.eval_scenes.split(",") if args.eval_scenes else None
    _, scenes = split_scenes(index, eval_scenes)
    report = evaluate_model(model, index, scenes, args.limit, args.seed, model.config.image_size)
    if args.out:
        Path(args.out).write_text(report.to_json())
    print(report.table())


def _load_image(path, size):
    from .data import load_image

    return torch.from_numpy(np.array(load_image(Path(path).resolve(), size))).permute(2, 0, 1)[None]


def _to_pil(t):
    arr = t[0].detach().clamp(0, 1).permute(1, 2, 0).numpy()
    return Image.fromarray(np.round(arr * 255).astype(np.uint8))


def _direction_glyph(panel, degrees):
    """Compass in the top-right corner with a line pointing toward the light."""
    draw = ImageDraw.Draw(panel)
    r = max(8, panel.width // 14)
    cx, cy = panel.width - r - 4, r + 4
    draw.ellipse([cx - r, cy - r, cx + r, cy + r], outline=(255, 255, 255), width=2)
    # north is up (away from the camera), east to the right
    a = math.radians(degrees)
    draw.line([cx, cy, cx + r * math.sin(a), cy - r * math.cos(a)], fill=(255, 220, 0), width=3)
    return panel


def _predicted_direction(model, out):
    if out.illum_target is not None:
        return float(out.illum_target.direction_degrees[0])
    est = out.envmap_target
    if est.ndim == 4:
        profile = est[0].sum(dim=(0, 1))
    else:
        from .envmap import ENVMAP_HEIGHT, ENVMAP_WIDTH

        profile = est[0, 2:].reshape(ENVMAP_HEIGHT, ENVMAP_WIDTH).sum(0)
    return float(torch.argmax(profile)) / profile.numel() * 360.0


def cmd_relight(args):
    from .checkpoint import load_checkpoint

    model, _, _ = load_checkpoint(args.ckpt, args.variant)
    model.eval()
    size = model.config.image_size
    x_i = _load_image(args.input, size)
    x_t = _load_image(args.target, size)
    with torch.no_grad():
        out = model(x_i, x_t)
    relit = _to_pil(out.relit)
    relit.save(args.out)
    print(args.out)
    if args.ground_truth:
        x_g = _load_image(args.ground_truth, size)
        degrees = _predicted_direction(model, out)
        panels = [_to_pil(x_i), _direction_glyph(_to_pil(x_t), degrees), _to_pil(x_g),
                  _direction_glyph(relit.copy(), degrees)]
        strip = Image.new("RGB", (size * 4, size))
        for k, p in enumerate(panels):
            strip.paste(p, (k * size, 0))
        strip_path = args.strip or str(Path(args.out).with_name(Path(args.out).stem + "_strip.png"))
        strip.save(strip_path)
        print(strip_path)


def cmd_envmap_preview(args):
    from .data import Illumination
    from .envmap import generate_envmap_rgb, upscale_nearest

    illum = Illumination(args.kelvin, args.direction)
    image = upscale_nearest(generate_envmap_rgb(illum), args.scale)
    Image.fromarray(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)).save(args.out)
    print(args.out)


def build_parser():
    parser = _Parser(prog="scenerelight", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-toy", help="render the procedural stand-in dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=4)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("train", help="train a model from a JSON TrainingConfig")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override the run directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on Eval / Eval_c / Eval_d")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="dataset directory or manifest.csv")
    p.add_argument("--limit", type=int, default=64)
    p.add_argument("--eval-scenes", help="comma separated held-out scene ids (default: all)")
    p.add_argument("--variant", help="fail unless the checkpoint has this variant")
    p.add_argument("--identity-baseline", action="store_true", help="force the relit image to be the input")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("relight", help="relight one image with the light of another")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ground-truth", help="also write a 4-panel I/T/G/relit strip")
    p.add_argument("--strip", help="path of the comparison strip")
    p.add_argument("--variant")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_relight)

    p = sub.add_parser("envmap-preview", help="write a generated environment map, enlarged")
    p.add_argument("--kelvin", type=int, required=True)
    p.add_argument("--direction", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_envmap_preview)
    return parser


def main(argv=None):
    from .errors import ConfigError, DataError, TrainingError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "seed", None) is not None:
        _seed(args)
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
