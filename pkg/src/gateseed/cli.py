"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("gateseed")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config (overridden by flags)")
    p.add_argument("--seed", type=int, help="seed for every random choice (default 0)")


def _add_filter(p: argparse.ArgumentParser) -> None:
    p.add_argument("--filter", dest="filter", choices=["pencil", "sobel", "canny", "none"], help="input filter (default pencil)")
    p.add_argument("--ellipse-size", type=int, help="pencil dilation ellipse size, odd (default 5)")
    p.add_argument("--canny-low", type=float, help="Canny low threshold (default 50)")
    p.add_argument("--canny-high", type=float, help="Canny high threshold (default 150)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gateseed", description="Gate perception pipeline: data, filters, training, evaluation, mapping.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--n", type=int, help="number of scenes (default 2000)")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--camera", help="INI camera config (default: built-in fish-eye)")
    p.add_argument("--d-max", type=float, help="maximum labelled distance in metres (default 12)")
    p.add_argument("--light-min", type=float, help="lowest global light scale (default 0.3)")
    p.add_argument("--light-max", type=float, help="highest global light scale (default 1.0)")
    p.add_argument("--supersample", type=int, help="anti-aliasing factor per axis (default 2)")

    p = sub.add_parser("filter", help="apply an edge filter to an image or a directory of images")
    _add_common(p)
    p.add_argument("--kind", dest="filter", choices=["pencil", "sobel", "canny", "none"], help="filter (default pencil)")
    p.add_argument("--ellipse-size", type=int, help="pencil dilation ellipse size, odd (default 5)")
    p.add_argument("--canny-low", type=float, help="Canny low threshold (default 50)")
    p.add_argument("--canny-high", type=float, help="Canny high threshold (default 150)")
    p.add_argument("--in", dest="input", required=True, help="input image (png/pgm/ppm) or directory")
    p.add_argument("--out", required=True, help="output image or directory")

    p = sub.add_parser("train", help="train the detector on a dataset")
    _add_common(p)
    _add_filter(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", default="run", help="output directory (default ./run)")
    p.add_argument("--epochs", type=int, help="epochs (default 10)")
    p.add_argument("--batch-size", type=int, help="batch size (default 32)")
    p.add_argument("--base-lr", type=float, help="initial learning rate (default 0.01)")
    p.add_argument("--d-max", type=float, help="distance normalisation in metres (default 12)")
    p.add_argument("--lambda-xy", type=float, help="centre loss weight (default 1)")
    p.add_argument("--lambda-d", type=float, help="distance loss weight (default 1)")
    p.add_argument("--lambda-theta", type=float, help="orientation loss weight (default 1)")
    p.add_argument("--lambda-c", type=float, help="confidence loss weight (default 1)")
    p.add_argument("--alpha", type=float, help="confidence weight on empty cells (default 0.5)")

    p = sub.add_parser("eval", help="benchmark models over light/blur conditions")
    _add_common(p)
    p.add_argument("--data", required=True, help="test dataset directory")
    p.add_argument("--model", action="append", required=True,
                   help="train output directory or .pcln checkpoint; repeatable")
    p.add_argument("--out", default="eval", help="output directory (default ./eval)")
    p.add_argument("--conf-thresh", type=float, help="detection threshold in [0, 1] (default 0.5)")
    p.add_argument("--conditions", help="'paper' or 'light:blur,...' e.g. '1:0,0.2:7' (default paper preset)")
    p.add_argument("--fps-frames", type=int, help="frames timed per cell, 0 disables timing (default 30)")
    p.add_argument("--blur-angle", type=float, help="motion blur direction in radians (default 0)")
    _add_filter(p)

    p = sub.add_parser("infer", help="detect gates in one image; JSON on stdout")
    _add_common(p)
    p.add_argument("--model", required=True, help="train output directory or .pcln checkpoint")
    p.add_argument("--image", required=True, help="input image")
    p.add_argument("--conf-thresh", type=float, help="detection threshold in [0, 1] (default 0.5)")
    _add_filter(p)

    p = sub.add_parser("map-sim", help="replay a synthetic flight through the gate mapper")
    _add_common(p)
    p.add_argument("--out", default="mapsim", help="output directory (default ./mapsim)")
    p.add_argument("--camera", help="INI camera config (default: built-in fish-eye)")
    p.add_argument("--flight-gates", type=int, help="gates on the track (default 4)")
    p.add_argument("--flight-frames-per-gate", type=int, help="frames per gate approach (default 25)")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    skip = {"command", "config", "out", "data", "model", "image", "input", "camera", "verbose", "conditions"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _parse_conditions(text: str | None):
    if text is None:
        return None
    if text == "paper":
        from .evalharness import PAPER_CONDITIONS

        return [list(c) for c in PAPER_CONDITIONS]
    out = []
    for part in text.split(","):
        try:
            light, blur = part.split(":")
            out.append([float(light), int(blur)])
        except ValueError:
            raise UsageError(f"bad condition {part!r}; expected light:blur") from None
    return out


def _config(args):
    from .config import ConfigError, load_config

    overrides = _overrides(args)
    if getattr(args, "conditions", None) is not None:
        overrides["conditions"] = _parse_conditions(args.conditions)
    try:
        return load_config(args.config, overrides)
    except (ConfigError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _camera(args, cfg):
    """The camera from ``--camera`` (recorded into ``cfg``) or from ``cfg``."""
    from .camera import load_camera_config

    if getattr(args, "camera", None):
        cam, _ = load_camera_config(args.camera)
        cfg.camera = cam.to_dict()
    return cfg.camera_model()


def cmd_gen(args) -> int:
    from .datagen import RenderConfig, generate_dataset

    cfg = _config(args)
    cam = _camera(args, cfg)
    rcfg = RenderConfig(camera=cam, d_max=cfg.d_max, light_range=(cfg.light_min, cfg.light_max), supersample=cfg.supersample)
    out = generate_dataset(cfg.n, cfg.seed, args.out, rcfg)
    cfg.write(out)
    print(f"wrote {cfg.n} scenes to {out}")
    return EXIT_OK


def cmd_filter(args) -> int:
    from .imagecore import read_image, write_image

    cfg = _config(args)
    spec = cfg.filter_spec
    src, dst = Path(args.input), Path(args.out)
    if src.is_dir():
        dst.mkdir(parents=True, exist_ok=True)
        files = sorted(p for p in src.iterdir() if p.suffix.lower() in (".png", ".pgm", ".ppm"))
        for f in files:
            write_image(dst / (f.stem + ".png"), spec.apply(read_image(f)))
        cfg.write(dst)
        print(f"filtered {len(files)} images into {dst}")
    else:
        if not src.is_file():
            raise FileNotFoundError(f"input image not found: {src}")
        dst.parent.mkdir(parents=True, exist_ok=True)
        write_image(dst, spec.apply(read_image(src)))
        cfg.write(dst.parent)
    return EXIT_OK


def cmd_train(args) -> int:
    from .datagen import load_dataset
    from .nn import init_params, save_checkpoint, train
    from .pipeline import build_arrays

    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    data = build_arrays(load_dataset(args.data), cfg.filter_spec, cfg.d_max)
    params = init_params(seed=cfg.seed)
    params, history = train(data, params, cfg.loss_weights, cfg.epochs, cfg.batch_size, cfg.seed, cfg.lr_fn())
    save_checkpoint(out / "model.pcln", params)
    with open(out / "loss.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["epoch", "lr", "loss", "xy", "d", "theta", "c"])
        for e in history:
            wr.writerow([e.epoch, f"{e.lr:.6g}", f"{e.loss:.8f}", f"{e.xy:.8f}", f"{e.d:.8f}", f"{e.theta:.8f}", f"{e.c:.8f}"])
    print(f"trained {cfg.epochs} epochs on {len(data[0])} samples; checkpoint {out / 'model.pcln'}")
    return EXIT_OK


def load_detector(model: str, cfg):
    """A detector from a train output dir or a checkpoint file.

    The filter and d_max come from the ``effective_config.json`` saved next to
    the checkpoint when present, else from ``cfg``.
    """
    from .config import load_config
    from .nn import load_checkpoint
    from .pipeline import Detector

    path = Path(model)
    ckpt = path / "model.pcln" if path.is_dir() else path
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    saved = ckpt.parent / "effective_config.json"
    mcfg = load_config(saved) if saved.is_file() else cfg
    name = path.name if path.is_dir() else path.stem
    return Detector(name, load_checkpoint(ckpt), mcfg.filter_spec, mcfg.d_max)


def cmd_eval(args) -> int:
    from .datagen import load_dataset
    from .evalharness import run_benchmark

    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    detectors = [load_detector(m, cfg) for m in args.model]
    samples = list(load_dataset(args.data))
    conditions = [(float(a), int(b)) for a, b in cfg.conditions]
    reports = run_benchmark(detectors, samples, conditions, cfg.conf_thresh, out, cfg.fps_frames, cfg.blur_angle)
    for r in reports:
        status = r.error or f"E_c={r.E_c:.4f} E_d={r.E_d:.3f} E_theta={r.E_theta:.3f} FN={r.fn_rate:.1f}%"
        print(f"{r.model:>12s} light={r.light_scale:<4g} blur={r.blur_len:<2d} {status}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .imagecore import read_image

    cfg = _config(args)
    det = load_detector(args.model, cfg)
    img = read_image(args.image)
    found = det.detect(img, cfg.conf_thresh)
    json.dump([o.to_dict() for o in found], sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_map_sim(args) -> int:
    from .mapping import FlightConfig, dump_map, simulate_flight

    cfg = _config(args)
    cam = _camera(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    fcfg = FlightConfig(gates=cfg.flight_gates, frames_per_gate=cfg.flight_frames_per_gate, d_max=cfg.d_max)
    gate_map, gates, events = simulate_flight(cam, fcfg, cfg.seed)
    dump_map(out / "map.json", gate_map)
    with open(out / "events.jsonl", "w") as fh:
        for e in events:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    truth = [{"id": k, "x": g.center[0], "y": g.center[1], "z": g.center[2], "yaw": g.yaw} for k, g in enumerate(gates)]
    (out / "ground_truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    for k, g in enumerate(gates):
        err = float(np.linalg.norm(gate_map.filters[k].state[:3] - np.array(g.center)))
        print(f"gate {k}: position error {err:.3f} m after {gate_map.filters[k].update_count} updates")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "filter": cmd_filter,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "map-sim": cmd_map_sim,
}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gateseed {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"gateseed {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
