"""``lts`` command line: project, filter, eval, simulate, netspec.

Exit codes: 0 success, 1 internal failure, 2 bad user input.
Verbosity follows the ``LTS_LOG`` environment variable (a logging level name).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import DEFAULT_CLASS_NAMES, __version__
from .association import DEFAULT_MAX_DIST, IdentityMotion, PoseMotion
from .bayes_filter import DEFAULT_LOGODDS_CLAMP, DEFAULT_SCORE_EPS, FilterConfig, prob_to_logodds
from .metrics import ConfusionMatrix, accumulate, compare_reports, format_deltas, iou_report, write_report
from .netspec import NetSpecError, count_params, derive_shapes, format_report, load_spec, \
    parse_input_shape, shipped_spec_path
from .pipeline import filter_sequence
from .projection import ProjectionConfig, project, write_range_image
from .scan_io import FormatError, read_labels, read_pose_file, read_scores, read_velodyne_bin, \
    write_labels, write_pose_file, write_scores, write_velodyne_bin
from .simulate import SimConfigError, generate, load_config

log = logging.getLogger("lts")

SCAN_EXT, SCORE_EXT, LABEL_EXT, IMAGE_EXT = ".bin", ".pscr", ".plbl", ".rimg"


class UserError(Exception):
    """Bad input from the user; reported with exit code 2."""


def _listing(directory, ext: str, what: str) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise UserError(f"{what} directory not found: {d}")
    # zero-padded names sort into scan order
    return sorted(d.glob("*" + ext))


def _check_counts(**groups: list[Path]) -> None:
    sizes = {k: len(v) for k, v in groups.items()}
    if len(set(sizes.values())) > 1:
        desc = ", ".join(f"{n} {k}" for k, n in sizes.items())
        raise UserError(f"file counts disagree: {desc}")
    stems = [[p.stem for p in v] for v in groups.values()]
    for other in stems[1:]:
        if other != stems[0]:
            raise UserError("file names do not line up across directories")


def _parse_prior(text: str | None, num_classes: int) -> tuple[float, ...]:
    if text is None:
        return (0.0,) * num_classes
    try:
        probs = [float(v) for v in text.split(",")]
        if len(probs) == 1:
            probs = probs * num_classes
        if len(probs) != num_classes:
            raise ValueError(f"--prior needs 1 or {num_classes} values")
        return tuple(prob_to_logodds(p) for p in probs)
    except ValueError as exc:
        raise UserError(str(exc)) from None


# --------------------------------------------------------------------------


def cmd_project(args) -> int:
    scans = _listing(args.scans, SCAN_EXT, "scan")
    try:
        cfg = ProjectionConfig(height=args.height, width=args.width)
    except ValueError as exc:
        raise UserError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t, path in enumerate(scans):
        img = project(read_velodyne_bin(path, scan_id=t), cfg)
        write_range_image(img, out / (path.stem + IMAGE_EXT))
        log.info("%s: %s", path.name, img.counts())
    print(f"wrote {len(scans)} range images ({cfg.height}x{cfg.width}) to {out}")
    return 0


def cmd_filter(args) -> int:
    scans = _listing(args.scans, SCAN_EXT, "scan")
    score_files = _listing(args.scores, SCORE_EXT, "score")
    groups = {"scans": scans, "score files": score_files}
    if args.labels:
        groups["label files"] = _listing(args.labels, LABEL_EXT, "label")
    _check_counts(**groups)

    motion = IdentityMotion()
    if args.poses:
        if not Path(args.poses).is_file():
            raise UserError(f"pose file not found: {args.poses}")
        poses = read_pose_file(args.poses)
        if len(poses) < len(scans):
            raise UserError(f"{len(poses)} poses for {len(scans)} scans")
        motion = PoseMotion(poses)

    first_scores = read_scores(score_files[0]) if score_files else None
    c = first_scores.num_classes if first_scores is not None else len(DEFAULT_CLASS_NAMES)
    try:
        cfg = FilterConfig(num_classes=c, prior_logodds=_parse_prior(args.prior, c),
                           score_eps=args.score_eps, logodds_clamp=args.logodds_clamp)
    except ValueError as exc:
        raise UserError(str(exc)) from None

    def frames():
        for t, (scan, score) in enumerate(zip(scans, score_files)):
            cloud = read_velodyne_bin(scan, scan_id=t)
            scores = read_scores(score)
            if len(scores) != len(cloud):
                raise UserError(f"{scan.name} has {len(cloud)} points but {score.name} "
                                f"has {len(scores)} rows")
            yield cloud, scores

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path, labels in zip(scans, filter_sequence(frames(), cfg, motion, args.assoc_max_dist)):
        write_labels(labels, out / (path.stem + LABEL_EXT))
    print(f"wrote {len(scans)} fused label files to {out}")
    return 0


def _confusion(gt_files, pred_iter, c: int) -> ConfusionMatrix:
    cm = ConfusionMatrix.zeros(c)
    for gt_path, pred in zip(gt_files, pred_iter):
        gt = read_labels(gt_path)
        if len(gt) != len(pred):
            raise UserError(f"{gt_path.name}: {len(gt)} labels vs {len(pred)} predictions")
        try:
            cm = accumulate(cm, gt, pred)
        except ValueError as exc:
            raise UserError(f"{gt_path.name}: {exc}") from None
    return cm


def cmd_eval(args) -> int:
    gt_files = _listing(args.labels, LABEL_EXT, "label")
    score_files = _listing(args.scores, SCORE_EXT, "score")
    groups = {"label files": gt_files, "score files": score_files}
    pred_files = None
    if args.pred:
        pred_files = _listing(args.pred, LABEL_EXT, "prediction")
        groups["prediction files"] = pred_files
    _check_counts(**groups)
    if not gt_files:
        raise UserError("no label files to evaluate")

    names = read_scores(score_files[0]).class_names
    c = len(names)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    raw_cm = _confusion(gt_files, (read_scores(p).argmax() for p in score_files), c)
    raw = iou_report(raw_cm, names, args.include_background)
    write_report(raw, out / "raw.csv")
    print("raw (argmax of scores)")
    print(raw.to_table())
    if pred_files is not None:
        fused_cm = _confusion(gt_files, (read_labels(p) for p in pred_files), c)
        fused = iou_report(fused_cm, names, args.include_background)
        write_report(fused, out / "filtered.csv")
        print("\nfiltered")
        print(fused.to_table())
        delta = compare_reports(raw, fused)
        print("\nfiltered - raw")
        print(format_deltas(delta))
        (out / "delta.csv").write_text(
            "class,delta_iou\n" + "".join(f"{k},{v:.6f}\n" for k, v in delta.deltas.items()))
    return 0


def cmd_simulate(args) -> int:
    if not Path(args.config).is_file():
        raise UserError(f"config file not found: {args.config}")
    try:
        scene, noise = load_config(args.config)
        if args.seed is not None:
            noise = dataclasses.replace(noise, seed=args.seed)
            noise.validate()
    except (SimConfigError, ValueError) as exc:
        raise UserError(f"{args.config}: {exc}") from None

    out = Path(args.out)
    dirs = {k: out / k for k in ("velodyne", "scores", "labels")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    frames = generate(scene, noise)
    for t, fr in enumerate(frames):
        stem = f"{t:06d}"
        write_velodyne_bin(fr.cloud, dirs["velodyne"] / (stem + SCAN_EXT))
        write_scores(fr.scores, dirs["scores"] / (stem + SCORE_EXT))
        write_labels(fr.labels, dirs["labels"] / (stem + LABEL_EXT))
    write_pose_file([fr.pose for fr in frames], out / "poses.txt")
    print(f"wrote {len(frames)} scans to {out}")
    return 0


def cmd_netspec(args) -> int:
    path = Path(args.spec) if args.spec else shipped_spec_path()
    if not path.is_file():
        raise UserError(f"layer file not found: {path}")
    try:
        shape = parse_input_shape(args.input)
        specs = load_spec(path)
        shapes = derive_shapes(specs, shape)
        params = count_params(specs, shape)
    except (NetSpecError, ValueError) as exc:
        raise UserError(f"{path}: {exc}") from None
    print(format_report(specs, shapes, params))
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lts", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="write a range image per scan")
    p.add_argument("--scans", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=64)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("filter", help="fuse per-scan scores over time")
    p.add_argument("--scans", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--poses", help="KITTI pose file; identity motion when omitted")
    p.add_argument("--labels", help="ground-truth directory, only checked for matching counts")
    p.add_argument("--out", required=True)
    p.add_argument("--assoc-max-dist", type=float, default=DEFAULT_MAX_DIST,
                   help="association radius in meters; 0 disables temporal fusion")
    p.add_argument("--prior", help="prior probability, one value or one per class")
    p.add_argument("--score-eps", type=float, default=DEFAULT_SCORE_EPS)
    p.add_argument("--logodds-clamp", type=float, default=DEFAULT_LOGODDS_CLAMP)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("eval", help="class-wise IoU of raw and filtered labels")
    p.add_argument("--labels", required=True, help="ground-truth label directory")
    p.add_argument("--scores", required=True, help="score directory (raw argmax baseline)")
    p.add_argument("--pred", help="filtered label directory")
    p.add_argument("--out", required=True)
    p.add_argument("--include-background", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="generate a synthetic sequence")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("netspec", help="layer shapes and parameter counts")
    p.add_argument("--spec", help="layer file (default: bundled DBLiDARNet)")
    p.add_argument("--input", default="64x512x5", help="HxWxC")
    p.set_defaults(func=cmd_netspec)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("LTS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse: usage errors exit 2, --help exits 0
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UserError, FormatError, FileNotFoundError) as exc:
        print(f"lts {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"lts {args.command}: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
