"""Command-line surface: track, interpolate, evaluate, simulate, assign.

All tunables live in one RunConfig loaded from an optional key=value file
and overridable per key on the command line; --help lists every key with
its default. Exit codes: 0 success, 1 usage error, 2 data/config error,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataio, label_assign, lifting, metrics
from .association import AssociationConfig
from .geometry import BBox, HeadKeypoint
from .kalman import IteratedUpdateConfig, KalmanConfig
from .tracker import Tracker, TrackerConfig

USAGE_ERROR = 1
DATA_ERROR = 2
INTERNAL_ERROR = 3


class ConfigError(ValueError):
    """Bad configuration file or key."""


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the pipeline, with module defaults."""

    # association
    w_app: float = 0.5
    w_mot: float = 0.5
    lambda_cls: float = 0.5
    lambda_reg: float = 0.5
    lambda_head: float = 0.0
    gate_g: float = 0.5
    motion_scale: float = 0.0  # 0 = use the image diagonal
    # tracker lifecycle
    patience_w: int = 30
    min_hits: int = 3
    init_score_min: float = 0.25
    descriptor_momentum: float = 0.9
    emit_predictions: bool = False
    # kalman
    epsilon_conv: float = 0.01
    max_iters: int = 10
    h_min: float = 1.0
    # lifting
    d_min: float = 1.0
    depth_eta: float = 0.05
    y_normalized: bool = True
    rotation_mode: str = "identity"
    se3_process_std: float = 0.1
    se3_meas_std: float = 0.01
    # head weighting
    sigma: float = 10.0
    # label assignment
    alpha: float = 3.0
    beta: float = 1e5
    eps_iou: float = 1e-8
    q_topk: int = 10
    # evaluation
    iou_threshold: float = 0.5
    # scene geometry / determinism
    image_width: float = 1920.0
    image_height: float = 1080.0
    seed: int = 0


CONFIG_HELP = {
    "w_app": "appearance weight in the association cost",
    "w_mot": "motion weight in the association cost",
    "lambda_cls": "weight of the classification-branch feature",
    "lambda_reg": "weight of the regression-branch feature",
    "lambda_head": "weight of the head-branch feature",
    "gate_g": "gating threshold on the combined association cost",
    "motion_scale": "pixel normalizer for motion cost; 0 uses the image diagonal",
    "patience_w": "frames a track survives without a match",
    "min_hits": "matches required before a track is emitted",
    "init_score_min": "confidence threshold for spawning new tracks",
    "descriptor_momentum": "EMA momentum for track descriptors",
    "emit_predictions": "also emit predicted boxes while a track coasts",
    "epsilon_conv": "relative convergence threshold of the iterated update",
    "max_iters": "iteration cap of the iterated update",
    "h_min": "lower clamp on the filtered target height",
    "d_min": "minimum depth of the pseudo-depth heuristic",
    "depth_eta": "divisor offset of the pseudo-depth heuristic",
    "y_normalized": "normalize the box bottom edge by image height before lifting",
    "rotation_mode": "lifted pose rotations: identity or heading",
    "se3_process_std": "process noise std of the twist smoother",
    "se3_meas_std": "measurement noise std of the twist smoother",
    "sigma": "Gaussian falloff (pixels) for head-weighted features",
    "alpha": "IoU-cost weight in the assignment cost",
    "beta": "positional penalty outside the center region",
    "eps_iou": "epsilon inside the -log(IoU + eps) cost",
    "q_topk": "candidates summed for the dynamic-k rule",
    "iou_threshold": "IoU threshold for evaluation matching",
    "image_width": "image width in pixels",
    "image_height": "image height in pixels",
    "seed": "PRNG seed for the scene generator",
}


def _coerce(name: str, raw: str, target_type):
    raw = raw.strip()
    if target_type is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"key {name}: expected a boolean, got {raw!r}")
    try:
        return target_type(raw)
    except ValueError:
        raise ConfigError(f"key {name}: cannot parse {raw!r} as {target_type.__name__}") from None


def load_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read a key=value file (optional) and apply command-line overrides."""
    defaults = RunConfig()
    types = {f.name: type(getattr(defaults, f.name)) for f in dataclasses.fields(RunConfig)}
    values: dict[str, object] = {}
    if path is not None:
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, val, types[key])
    for key, val in (overrides or {}).items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, val, types[key]) if isinstance(val, str) else val
    return RunConfig(**values)


def tracker_config(cfg: RunConfig) -> TrackerConfig:
    scale = cfg.motion_scale
    if scale <= 0.0:
        scale = float(np.hypot(cfg.image_width, cfg.image_height))
    return TrackerConfig(
        patience_w=cfg.patience_w,
        gate_g=cfg.gate_g,
        init_score_min=cfg.init_score_min,
        min_hits=cfg.min_hits,
        emit_predictions=cfg.emit_predictions,
        descriptor_momentum=cfg.descriptor_momentum,
        assoc=AssociationConfig(
            w_app=cfg.w_app,
            w_mot=cfg.w_mot,
            feature_weights=(cfg.lambda_cls, cfg.lambda_reg, cfg.lambda_head),
            gate_g=cfg.gate_g,
            motion_scale=scale,
        ),
        noise=KalmanConfig(h_min=cfg.h_min),
        iterated=IteratedUpdateConfig(epsilon_conv=cfg.epsilon_conv, max_iters=cfg.max_iters),
    )


def lifting_config(cfg: RunConfig) -> lifting.LiftingConfig:
    return lifting.LiftingConfig(
        depth=lifting.PseudoDepthConfig(
            d_min=cfg.d_min,
            depth_eta=cfg.depth_eta,
            y_normalized=cfg.y_normalized,
            image_height=cfg.image_height,
        ),
        rotation_mode=cfg.rotation_mode,
        process_std=cfg.se3_process_std,
        meas_std=cfg.se3_meas_std,
    )


# -- verbs ---------------------------------------------------------------------


def run_track_file(dets_path, features_path, out_path, cfg: RunConfig, head_format=False) -> None:
    lines = dataio.parse_mot(dets_path)
    descriptors = dataio.read_descriptors(features_path) if features_path else None
    frames = dataio.mot_to_detections(lines, descriptors, head_format=head_format)
    tracker = Tracker(tracker_config(cfg))
    out: list[dataio.MotLine] = []
    last = max(frames) if frames else 0
    for f in range(1, last + 1):
        for tid, box in tracker.step(f, frames.get(f, [])):
            out.append(
                dataio.MotLine(frame=f, id=tid, x=box.x, y=box.y, w=box.w, h=box.h, conf=1.0)
            )
    dataio.write_mot(out_path, out)


def cmd_track(args, cfg: RunConfig) -> int:
    dets = Path(args.dets)
    if dets.is_dir():
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        seq_files = sorted(dets.glob("*.txt"))
        with concurrent.futures.ThreadPoolExecutor(max_workers=max(args.jobs, 1)) as pool:
            futures = [
                pool.submit(
                    run_track_file, seq, args.features, out_dir / seq.name, cfg,
                    args.head_format,
                )
                for seq in seq_files
            ]
            for fut in concurrent.futures.as_completed(futures):
                fut.result()
        return 0
    run_track_file(dets, args.features, args.out, cfg, args.head_format)
    return 0


def cmd_interpolate(args, cfg: RunConfig) -> int:
    lines = dataio.parse_mot(args.input)
    lcfg = lifting_config(cfg)
    by_id: dict[int, list[tuple[int, BBox]]] = {}
    extras: dict[tuple[int, int], tuple[float, tuple]] = {}
    for l in lines:
        by_id.setdefault(l.id, []).append((l.frame, l.bbox()))
        extras[(l.frame, l.id)] = (l.conf, l.extra)
    out: list[dataio.MotLine] = []
    for tid in sorted(by_id):
        filled, skipped = lifting.complete(by_id[tid], args.method, lcfg)
        for frame, box in filled:
            conf, extra = extras.get((frame, tid), (1.0, (-1.0, -1.0, -1.0)))
            out.append(
                dataio.MotLine(
                    frame=frame, id=tid, x=box.x, y=box.y, w=box.w, h=box.h,
                    conf=conf, extra=extra,
                )
            )
        for gap in skipped:
            span = f"{gap.missing_frames[0]}-{gap.missing_frames[-1]}"
            print(f"track {tid}: gap {span} exceeds max_gap, left unfilled", file=sys.stderr)
    dataio.write_mot(args.out, out)
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    gt_lines = dataio.parse_mot(args.gt)
    res_lines = dataio.parse_mot(args.result)
    frames = sorted({l.frame for l in gt_lines} | {l.frame for l in res_lines})
    gt_by_frame: dict[int, list] = {}
    for l in gt_lines:
        gt_by_frame.setdefault(l.frame, []).append((l.id, l.bbox()))
    res_by_frame: dict[int, list] = {}
    for l in res_lines:
        res_by_frame.setdefault(l.frame, []).append((l.id, l.bbox()))
    eval_frames = [
        metrics.EvalFrame(gt=gt_by_frame.get(f, []), hyp=res_by_frame.get(f, []))
        for f in frames
    ]
    report = metrics.evaluate(eval_frames, iou_threshold=cfg.iou_threshold)
    print(f"MOTA={report.mota:.6f}")
    print(f"IDF1={report.idf1:.6f}")
    print(f"FP={report.fp}")
    print(f"FN={report.fn}")
    print(f"IDS={report.ids}")
    print(f"GT={report.gt_total}")
    return 0


def parse_scene_spec(path, cfg: RunConfig) -> dataio.SceneSpec:
    """Scene description: key=value lines; occlusion as tid:start-end;..."""
    kwargs: dict = {
        "image_width": cfg.image_width,
        "image_height": cfg.image_height,
        "seed": cfg.seed,
    }
    int_keys = {"targets", "frames", "seed", "descriptor_dim"}
    float_keys = {"image_width", "image_height", "box_height", "noise_std", "feat_noise_std"}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "occlusion":
            windows = []
            for chunk in val.split(";"):
                chunk = chunk.strip()
                if not chunk:
                    continue
                try:
                    tid, span = chunk.split(":")
                    start, end = span.split("-")
                    windows.append((int(tid), int(start), int(end)))
                except ValueError:
                    raise ConfigError(
                        f"{path}:{lineno}: occlusion windows look like tid:start-end"
                    ) from None
            kwargs["occlusions"] = tuple(windows)
        elif key == "motion":
            kwargs["motion"] = val
        elif key in int_keys:
            kwargs[key] = _coerce(key, val, int)
        elif key in float_keys:
            kwargs[key] = _coerce(key, val, float)
        else:
            raise ConfigError(f"{path}:{lineno}: unknown scene key {key!r}")
    try:
        return dataio.SceneSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_simulate(args, cfg: RunConfig) -> int:
    spec = parse_scene_spec(args.spec, cfg)
    scene = dataio.generate_scene(spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataio.write_mot(out_dir / "gt.txt", scene.gt)
    dataio.write_mot(out_dir / "det.txt", scene.detections)
    if scene.descriptor_dim > 0:
        dataio.write_descriptors(
            out_dir / "features.ftfv",
            scene.descriptors,
            dim_cls=scene.descriptor_dim,
            dim_reg=0,
            dim_head=0,
        )
    print(f"wrote {len(scene.gt)} gt lines, {len(scene.detections)} detections to {out_dir}")
    return 0


def cmd_assign(args, cfg: RunConfig) -> int:
    try:
        doc = json.loads(Path(args.scene).read_text())
        anchors = [
            label_assign.Anchor(
                cx=a["cx"],
                cy=a["cy"],
                stride=a.get("stride", 8),
                pred_box=BBox(*a["box"]),
                pred_cls=a.get("cls", 0.5),
                pred_obj=a.get("obj", 0.5),
                pred_head=HeadKeypoint(*a.get("head", (a["cx"], a["cy"], 1.0))),
            )
            for a in doc["anchors"]
        ]
        gts = [
            label_assign.GtInstance(
                box=BBox(*g["box"]),
                head=HeadKeypoint(*g.get("head", (0.0, 0.0, 1.0))),
                center_radius=g.get("center_radius"),
            )
            for g in doc["gts"]
        ]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad scene file: {exc}") from None
    acfg = label_assign.AssignConfig(
        alpha=cfg.alpha, beta=cfg.beta, eps_iou=cfg.eps_iou, q_topk=cfg.q_topk
    )
    cost = label_assign.assign_cost_matrix(anchors, gts, acfg)
    ious = label_assign.iou_matrix(anchors, gts)
    fg = label_assign.foreground_mask(anchors, gts)
    positives = label_assign.dynamic_k_match(cost, ious, fg, acfg)
    print("gt anchor cost iou")
    for g, selected in enumerate(positives):
        if not selected:
            print(f"{g} - (no foreground anchors)")
            continue
        for a in selected:
            print(f"{g} {a} {cost[a, g]:.6f} {ious[a, g]:.6f}")
    return 0


# -- entry point ----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(USAGE_ERROR)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="key=value config file")
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(RunConfig):
        default = getattr(RunConfig(), f.name)
        group.add_argument(
            f"--{f.name.replace('_', '-')}",
            dest=f"cfg_{f.name}",
            default=None,
            metavar="V",
            help=f"{CONFIG_HELP[f.name]} (default {default})",
        )


def _collect_overrides(args) -> dict[str, str]:
    out = {}
    for key in CONFIG_HELP:
        val = getattr(args, f"cfg_{key}", None)
        if val is not None:
            out[key] = val
    return out


def build_parser() -> _Parser:
    parser = _Parser(prog="headtrack", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p_track = sub.add_parser("track", help="run the tracker over a detection file")
    p_track.add_argument("--dets", required=True, help="detection file or directory of them")
    p_track.add_argument("--features", default=None, help="descriptor sidecar (.ftfv)")
    p_track.add_argument("--out", required=True, help="result file (or directory for batches)")
    p_track.add_argument("--head-format", action="store_true", help="trailing fields carry head keypoints")
    p_track.add_argument("--jobs", type=int, default=1, help="parallel sequences in directory mode")
    _add_config_flags(p_track)

    p_interp = sub.add_parser("interpolate", help="fill trajectory gaps in a result file")
    p_interp.add_argument("--input", required=True)
    p_interp.add_argument("--method", choices=lifting.METHODS, default="linear2d")
    p_interp.add_argument("--out", required=True)
    _add_config_flags(p_interp)

    p_eval = sub.add_parser("evaluate", help="CLEAR-MOT / IDF1 report")
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--result", required=True)
    _add_config_flags(p_eval)

    p_sim = sub.add_parser("simulate", help="generate a synthetic scene")
    p_sim.add_argument("--spec", required=True, help="scene description file")
    p_sim.add_argument("--out-dir", required=True)
    _add_config_flags(p_sim)

    p_assign = sub.add_parser("assign", help="print the dynamic-k assignment table for a scene")
    p_assign.add_argument("--scene", required=True, help="JSON scene description")
    _add_config_flags(p_assign)

    return parser


_VERBS = {
    "track": cmd_track,
    "interpolate": cmd_interpolate,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "assign": cmd_assign,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, _collect_overrides(args))
        return _VERBS[args.verb](args, cfg)
    except (ConfigError, dataio.MotParseError, FileNotFoundError, ValueError) as exc:
        print(f"headtrack: {exc}", file=sys.stderr)
        return DATA_ERROR
    except Exception as exc:  # pragma: no cover - defensive
        print(f"headtrack: internal error: {exc}", file=sys.stderr)
        return INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
