"""Command-line entry point: generate / train / eval / predict / bench.

Exit codes: 0 ok, 2 configuration, 3 I/O, 4 empty data, 5 model version mismatch.
"""
from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from .dataio import Frame, load_dataset, save_dataset, split_dataset
from .detector import STAGES, DetectorModel, PipelineParams, StageTimer, predict_frame, train_detector
from .errors import (
    EmptyEvaluation,
    HLFusionError,
    InvalidFraction,
    InvalidInput,
    NoTrainingData,
    ParseError,
    PlacementFailure,
    VersionMismatch,
)
from .metrics import build_report
from .regression import SvrParams
from .segmentation import DbscanParams
from .synth import GenParams, generate_scene

log = logging.getLogger("hlfusion")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_EMPTY, EXIT_VERSION = 0, 2, 3, 4, 5
WARMUP_FRAMES = 10

DEFAULTS = {
    "data": None,
    "model": None,
    "seed": None,
    "frames": 1000,
    "eps": 0.5,
    "min_pts": 10,
    "c": 10.0,
    "epsilon": 0.05,
    "gamma": "auto",
    "near": 0.5,
    "far": 80.0,
    "z_threshold": 0.2,
    "train_fraction": 0.8,
    "threads": 1,
    "report": None,
    "hist": None,
    "no_box2d_features": False,
}


class ConfigError(Exception):
    pass


class EmptyData(Exception):
    pass


@dataclass
class RunConfig:
    values: dict

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def pipeline(self) -> PipelineParams:
        gamma = self.gamma if self.gamma == "auto" else float(self.gamma)
        try:
            return PipelineParams(
                dbscan=DbscanParams(float(self.eps), int(self.min_pts)),
                svr=SvrParams(C=float(self.c), epsilon=float(self.epsilon), gamma=gamma),
                near=float(self.near),
                far=float(self.far),
                z_threshold=float(self.z_threshold),
                use_box2d_features=not self.no_box2d_features,
            )
        except (InvalidInput, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def echo(self) -> dict:
        return {k: v for k, v in sorted(self.values.items()) if k != "command"}


def _gamma(text: str):
    if text == "auto":
        return text
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("gamma must be positive or 'auto'")
    return value


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    s = shared.add_argument
    s("--data", help="dataset directory (contains dataset.json)")
    s("--model", help="model JSON path")
    s("--config", help="JSON file with default values for any flag")
    s("--seed", type=int)
    s("--eps", type=float, help="DBSCAN radius, m")
    s("--min-pts", type=int, dest="min_pts")
    s("--c", type=float, help="SVR regularization C")
    s("--epsilon", type=float, help="SVR tube half-width (normalized units)")
    s("--gamma", type=_gamma, help="RBF width or 'auto'")
    s("--near", type=float)
    s("--far", type=float)
    s("--z-threshold", type=float, dest="z_threshold")
    s("--train-fraction", type=float, dest="train_fraction")
    s("--threads", type=int)
    s("--report", help="output JSON path")
    s("--hist", help="IoU histogram CSV path")
    s("--no-box2d-features", action="store_const", const=True, dest="no_box2d_features",
      help="zero the 2D-box entries of the feature vector")
    s("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hlfusion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", parents=[shared], help="write a seeded synthetic dataset")
    g.add_argument("--frames", type=int)
    sub.add_parser("train", parents=[shared], help="train a detector on the training split")
    e = sub.add_parser("eval", parents=[shared], help="evaluate on the test split")
    e.add_argument("--oracle", action="store_true", help="score ground truth against itself")
    pr = sub.add_parser("predict", parents=[shared], help="predict boxes for one frame")
    pr.add_argument("--frame", required=True, help="frame id")
    sub.add_parser("bench", parents=[shared], help="time inference on the test split")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_values, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, v in file_values.items():
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = v
    for key, v in vars(args).items():
        if key in ("config", "verbose"):
            continue
        if v is not None:
            values[key] = v
    values.setdefault("oracle", False)
    if values["threads"] is None or int(values["threads"]) < 1:
        raise ConfigError("--threads must be >= 1")
    return RunConfig(values)


def _require(cfg: RunConfig, *names):
    for n in names:
        if cfg.values.get(n) is None:
            raise ConfigError(f"--{n.replace('_', '-')} is required for {cfg.command}")


def _write_json(path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_split(cfg: RunConfig):
    _require(cfg, "data", "seed")
    frames = load_dataset(cfg.data)
    try:
        return split_dataset(frames, float(cfg.train_fraction), int(cfg.seed))
    except InvalidFraction as exc:
        raise ConfigError(str(exc)) from None


def _map_frames(fn, frames, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, frames))
    return [fn(f) for f in frames]


def box_to_json(box):
    if box is None:
        return None
    return {"center": list(box.center), "size": list(box.size), "yaw": box.yaw}


def run_predictions(model: DetectorModel, frames: List[Frame], threads: int = 1):
    return _map_frames(lambda f: predict_frame(model, f), frames, threads)


def _mean_std(xs):
    if not xs:
        return {"mean": 0.0, "std": 0.0, "n": 0}
    return {"mean": statistics.fmean(xs), "std": statistics.pstdev(xs), "n": len(xs)}


# commands -------------------------------------------------------------------

def cmd_generate(cfg: RunConfig) -> int:
    _require(cfg, "data", "seed")
    try:
        params = GenParams(frames=int(cfg.frames), seed=int(cfg.seed))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    frames = _map_frames(lambda i: generate_scene(params, i), range(params.frames), int(cfg.threads))
    save_dataset(frames, cfg.data)
    n_obj = sum(len(f.annotations) for f in frames)
    n_pts = sum(len(f.cloud) for f in frames)
    print(f"frames={len(frames)} objects={n_obj} points={n_pts} -> {cfg.data}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "data", "model", "seed")
    params = cfg.pipeline()
    train, _ = _load_split(cfg)
    res = train_detector(train, params, threads=int(cfg.threads))
    Path(cfg.model).parent.mkdir(parents=True, exist_ok=True)
    res.model.save(cfg.model)
    report_path = cfg.report or str(Path(cfg.model).with_suffix(".timing.json"))
    timing = {
        "training": {
            "stages_s": res.stage_seconds,
            "per_object_ms": {k: _mean_std(v) for k, v in res.per_object_ms.items()},
            "frames": len(train),
            "objects": res.n_objects,
            "skipped": res.n_skipped,
        },
        "config": cfg.echo(),
    }
    _write_json(report_path, timing)
    s = res.stage_seconds
    print(f"trained on {res.n_objects - res.n_skipped}/{res.n_objects} objects "
          f"({len(train)} frames): " + ", ".join(f"{k}={s[k]:.2f}s" for k in (*STAGES, "total")))
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    _, test = _load_split(cfg)
    gts = [a.box3d for f in test for a in f.annotations]
    if cfg.oracle:
        preds = list(gts)
    else:
        _require(cfg, "model")
        model = DetectorModel.load(cfg.model)
        preds = [b for boxes in run_predictions(model, test, int(cfg.threads)) for b in boxes]
    report = build_report(preds, gts)
    report.config = cfg.echo()
    if cfg.report:
        _write_json(cfg.report, report.to_dict())
    if cfg.hist:
        Path(cfg.hist).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.hist).write_text(report.histogram_csv(), encoding="utf-8")
    print(report.table_row())
    print(f"IoU3D>0.5: {report.frac_iou_over_50 * 100:.1f}%  ASE: {report.ase:.3f}  "
          f"AOE: {report.aoe:.3f} rad  matched={report.matched} skipped={report.skipped}")
    return EXIT_OK


def cmd_predict(cfg: RunConfig) -> int:
    _require(cfg, "data", "model")
    frames = load_dataset(cfg.data)
    match = [f for f in frames if f.id == cfg.frame]
    if not match:
        raise EmptyData(f"unknown frame id {cfg.frame!r}")
    model = DetectorModel.load(cfg.model)
    boxes = predict_frame(model, match[0])
    doc = {"frame": cfg.frame, "predictions": [box_to_json(b) for b in boxes], "config": cfg.echo()}
    if cfg.report:
        _write_json(cfg.report, doc)
    else:
        json.dump(doc, sys.stdout, indent=1, sort_keys=True)
        sys.stdout.write("\n")
    return EXIT_OK


def _timed_frame(model: DetectorModel, frame: Frame):
    timer = StageTimer()
    t0 = time.perf_counter()
    boxes = predict_frame(model, frame, timer=timer)
    wall = time.perf_counter() - t0
    return timer.totals, wall, len(boxes)


def cmd_bench(cfg: RunConfig) -> int:
    _require(cfg, "model")
    _, test = _load_split(cfg)
    if not test:
        raise EmptyData("test split is empty")
    model = DetectorModel.load(cfg.model)
    threads = int(cfg.threads)
    results = _map_frames(lambda f: _timed_frame(model, f), test, threads)
    warm = min(WARMUP_FRAMES, len(results) - 1)
    measured = results[warm:]
    inference = {}
    for stage in STAGES:
        inference[stage] = _mean_std([r[0][stage] * 1e3 for r in measured])
    inference["total"] = _mean_std([r[1] * 1e3 for r in measured])
    doc = {
        "inference_ms": inference,
        "frames": len(measured),
        "warmup_frames": warm,
        "objects": sum(r[2] for r in measured),
        "threads": threads,
        "config": cfg.echo(),
    }
    if cfg.report:
        _write_json(cfg.report, doc)
    for k, v in inference.items():
        print(f"{k:<22} {v['mean']:8.2f} ms +- {v['std']:.2f}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "bench": cmd_bench,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg.command](cfg)
    except (ConfigError, PlacementFailure) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NoTrainingData, EmptyEvaluation, EmptyData) as exc:
        print(f"no data: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except VersionMismatch as exc:
        print(f"model mismatch: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except (OSError, ParseError, HLFusionError, json.JSONDecodeError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
