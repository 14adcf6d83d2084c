"""Command-line entry point: ``panomod <subcommand> [options]``.

Exit codes: 0 success, 1 validation error (bad flags, config, input files),
2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ModelConfig, read_config
from .errors import PanomodError, ValidationError
from .geometry import FACE_NAMES, cube_to_erp, erp_to_cube
from .io import colormap, read_image, write_pfm, write_png
from .metrics import drift_report
from .scenes import SceneSpec, dataset, render
from .train import evaluate, load_model, render_all, train

log = logging.getLogger("panomod")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
MANIFEST = "manifest.json"


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    # Subparsers use SUPPRESS so a flag given before the subcommand is not reset.
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p.add_argument("--config", type=Path, default=d(None), help="JSON model config")
    p.add_argument("--seed", type=int, default=d(None), help="override the config seed")
    p.add_argument("--out", type=Path, default=d(Path("out")), help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="panomod", description="Toy panoramic depth model tools.",
                     parents=[_global_flags(True)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = [_global_flags(False)]

    g = sub.add_parser("gen", parents=common, help="render synthetic scenes")
    g.add_argument("--n", type=int, default=4, help="number of scenes")
    g.add_argument("--split-ratio", type=float, default=0.8)

    t = sub.add_parser("train", parents=common, help="train from scratch")
    t.add_argument("--data", type=Path, help="directory written by `gen` (default: generate --n scenes)")
    t.add_argument("--n", type=int, default=64)

    e = sub.add_parser("eval", parents=common, help="evaluate a checkpoint on the val split")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--data", type=Path)
    e.add_argument("--n", type=int, default=64)
    e.add_argument("--split", choices=("train", "val", "all"), default="val")
    e.add_argument("--no-modulation", action="store_true", help="force all modulation groups to zero")
    e.add_argument("--gt-as-pred", action="store_true", help="debug: score ground truth against itself")
    e.add_argument("--no-median-scale", action="store_true")

    pj = sub.add_parser("project", parents=common, help="resample between ERP and cube faces")
    pj.add_argument("--direction", choices=("e2c", "c2e"), required=True)
    pj.add_argument("--input", type=Path,
                    help="e2c: ERP image (.png/.pfm); c2e: directory of face_<name>.png|pfm "
                         "(default e2c input: a scene rendered from --seed)")
    pj.add_argument("--face-size", type=int)

    dg = sub.add_parser("diagnose", parents=common, help="feature drift and gate maps")
    dg.add_argument("--checkpoint", type=Path, required=True)
    dg.add_argument("--input", type=Path, help="ERP rgb PNG (default: a scene rendered from --seed)")

    sub.add_parser("selftest", parents=common, help="run the built-in invariant checks")
    return parser


def _config(args) -> ModelConfig:
    cfg = read_config(args.config) if args.config else ModelConfig()
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def _scene_seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _specs(args, default_seed: int) -> tuple[list[SceneSpec], list[SceneSpec]]:
    if args.data is not None:
        path = Path(args.data) / MANIFEST
        if not path.is_file():
            raise ValidationError(f"{path} not found; run `gen` first")
        try:
            man = json.loads(path.read_text())
            specs = {s["name"]: SceneSpec.from_dict(s["spec"]) for s in man["scenes"]}
            return [specs[n] for n in man["train"]], [specs[n] for n in man["val"]]
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ValidationError(f"malformed manifest {path}: {exc}") from None
    return dataset(default_seed, args.n)


def cmd_gen(args) -> int:
    if args.n < 1:
        raise ValidationError(f"--n must be >= 1, got {args.n}")
    cfg = _config(args)
    h, w = cfg.erp
    seed = _scene_seed(args)
    if args.n == 1:
        tr, va = dataset(seed, 2, args.split_ratio)
        tr, va = (tr + va)[:1], []
    else:
        tr, va = dataset(seed, args.n, args.split_ratio)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    scenes = []
    for k, spec in enumerate(tr + va):
        name = f"scene_{k:04d}"
        rgb, depth = render(spec, h, w)
        write_png(out / f"{name}_rgb.png", rgb)
        write_pfm(out / f"{name}_depth.pfm", depth)
        scenes.append({"name": name, "rgb": f"{name}_rgb.png", "depth": f"{name}_depth.pfm",
                       "spec": spec.to_dict()})
    names = [s["name"] for s in scenes]
    manifest = {"seed": seed, "erp": [h, w], "scenes": scenes,
                "train": names[: len(tr)], "val": names[len(tr):]}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(scenes)} scenes to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    tr, va = _specs(args, cfg.seed)
    res = train(cfg, tr, va, args.out)
    totals = [r["total"] for r in res.history] or [float("nan")]
    print(json.dumps({"checkpoint": str(args.out / "model.ckpt"), "steps": cfg.steps,
                      "first_total": totals[0], "last_total": totals[-1]}))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    tr, va = _specs(args, model.cfg.seed)
    specs = {"train": tr, "val": va, "all": tr + va}[args.split]
    ev = evaluate(model, render_all(specs, model.cfg), modulation=not args.no_modulation,
                  median_scale=not args.no_median_scale, gt_as_prediction=args.gt_as_pred)
    args.out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(ev.to_dict(), indent=1)
    (args.out / "metrics.json").write_text(text + "\n")
    print(json.dumps(ev.mean.to_dict()))
    return EXIT_OK


def _default_rgb(args, cfg: ModelConfig) -> np.ndarray:
    tr, _ = dataset(_scene_seed(args), 2)
    return render(tr[0], *cfg.erp)[0]


def cmd_project(args) -> int:
    cfg = _config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.direction == "e2c":
        img = read_image(args.input) if args.input else _default_rgb(args, cfg)
        faces = erp_to_cube(img, args.face_size).data
        for name, face in zip(FACE_NAMES, faces):
            write_png(args.out / f"face_{name}.png", face if face.shape[0] == 3 else colormap(face[0]))
        print(f"wrote 6 faces to {args.out}")
    else:
        if args.input is None or not args.input.is_dir():
            raise ValidationError("c2e needs --input pointing at a directory of face_<name> images")
        faces = []
        for name in FACE_NAMES:
            hits = sorted(args.input.glob(f"face_{name}.*"))
            if not hits:
                raise ValidationError(f"missing face_{name}.png|pfm in {args.input}")
            faces.append(read_image(hits[0])[0])
        cube = np.stack(faces)
        s = cube.shape[-1]
        size = args.face_size or s
        if size != s:
            raise ValidationError(f"--face-size {size} does not match face images of size {s}")
        erp = cube_to_erp(cube).data
        write_png(args.out / "erp.png", erp if erp.shape[1] == 3 else colormap(erp[0, 0]))
        print(f"wrote {args.out / 'erp.png'}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    """Drift of the trained model's block features against the same model
    with modulation disabled, plus the guidance gate as a heatmap."""
    model = load_model(args.checkpoint)
    cfg = model.cfg
    rgb = read_image(args.input) if args.input else _default_rgb(args, cfg)
    if rgb.shape != (1, 3, *cfg.erp):
        raise ValidationError(f"input shape {rgb.shape} does not match model resolution {cfg.erp}")
    on = model.forward(rgb, capture_features=True)
    off = model.forward(rgb, capture_features=True, modulation=False)
    report = drift_report(on.features, off.features)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "drift.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    hp, wp = cfg.token_grid
    for layer, (a, b) in enumerate(zip(on.features, off.features)):
        diff = np.linalg.norm(a - b, axis=1).reshape(hp, wp)
        write_png(args.out / f"layer{layer}_drift.png", colormap(diff))
    if on.bundle is not None:
        write_png(args.out / "gate.png", colormap(on.bundle.gate.data[0].mean(axis=0)))
    print(json.dumps(report.to_dict()))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_all

    failures = 0
    for name, ok, detail in run_all():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failures += not ok
    return EXIT_OK if failures == 0 else EXIT_RUNTIME


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "project": cmd_project,
    "diagnose": cmd_diagnose,
    "selftest": cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_VALIDATION
    except (PanomodError, OSError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
