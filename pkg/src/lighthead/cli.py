"""Command line entry point: ``lighthead <subcommand> [--config FILE] ...``.

Exit status is 0 when every check a subcommand runs passes, 1 when a check
fails and 2 for usage or input errors. Reports go to stdout, with
machine-readable ``#= key=value`` lines.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import lht
from .config import ConfigError, DetectorConfig, load_config, full_config, parse_config, dump_config, seed_override, toy_config

log = logging.getLogger("lighthead")

BACKBONE_REFERENCE_MACS = 145e6
BACKBONE_BAND = 0.10


class UsageError(Exception):
    pass


def _kv(**pairs):
    for k, v in pairs.items():
        print(f"#= {k}={v}")


def _verdict(name: str, ok: bool, detail: str = "") -> bool:
    print(f"{'PASS' if ok else 'FAIL'} {name}" + (f"  {detail}" if detail else ""))
    return ok


def _config(args, base: DetectorConfig) -> DetectorConfig:
    cfg = load_config(args.config, base)
    cfg.train.seed = seed_override(cfg.train.seed)
    return cfg


def cmd_gradcheck(args) -> int:
    from .checks import SUITES, run_suite
    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise UsageError(f"unknown suite(s): {', '.join(unknown)}; choose from {', '.join(SUITES)}")
    seed = seed_override(args.seed)
    ok = True
    t0 = time.perf_counter()
    for name in names:
        res = run_suite(name, seed, args.cases)
        ok &= _verdict(f"gradcheck.{name}", res.passed,
                       f"cases={len(res.reports)} max_rel_error={res.max_rel_error:.3e} tol={res.reports[0].tolerance:g}")
        _kv(**{f"gradcheck.{name}.max_rel_error": f"{res.max_rel_error:.6e}"})
    _kv(gradcheck_seconds=f"{time.perf_counter() - t0:.2f}", gradcheck_passed=int(ok))
    return 0 if ok else 1


def cmd_oracle(args) -> int:
    from .checks import run_oracles
    ok = True
    for res in run_oracles(seed_override(args.seed)):
        ok &= _verdict(f"oracle.{res.name}", res.passed, f"fixtures={res.fixtures} mismatches={res.mismatches}")
        _kv(**{f"oracle.{res.name}.mismatches": res.mismatches})
    _kv(oracle_passed=int(ok))
    return 0 if ok else 1


def cmd_flops(args) -> int:
    from .backbone import backbone_flops
    from .config import BackboneSpec
    from .cost import VARIANTS, coco_design, compare_designs, head_cost
    cfg = _config(args, full_config())
    spec = BackboneSpec.preset(args.backbone) if args.backbone else cfg.backbone
    rep = backbone_flops(args.input, args.input, spec, classifier=spec.use_c5)
    print(rep.format(f"backbone {spec.name} at {args.input}x{args.input} (1 MAC = 1 FLOP; bias, activation, pooling excluded)"))
    for line in rep.key_values("backbone."):
        print(line)
    ok = True
    if spec.name == "xception" and args.input == 224:
        dev = rep.macs / BACKBONE_REFERENCE_MACS - 1
        ok &= _verdict("backbone_flops", abs(dev) <= BACKBONE_BAND,
                       f"{rep.macs:,} vs reference 145M, deviation {dev:+.2%}, band +/-{BACKBONE_BAND:.0%} "
                       "(the band absorbs the undisclosed counting convention and bottleneck widths)")
        _kv(backbone_deviation=f"{dev:.6f}")

    designs = [coco_design(v, num_classes=args.num_classes, rois=args.rois) for v in VARIANTS]
    print()
    for d in designs:
        hc = head_cost(d)
        print(hc.format(f"head {d.variant}: R={d.rois}, {d.num_classes} classes, map {d.h}x{d.w}x{d.c_in}"))
        for line in hc.key_values(f"head.{d.variant}."):
            print(line)
        print()
    comp = compare_designs(designs, sorted({0, 1, 10, 100, 300, 1000, 2000, args.rois}))
    print(comp.format())
    totals = {d.variant: head_cost(d).macs for d in designs}
    ok &= _verdict("light_head_cheaper_than_rfcn", totals["light_head"] < totals["rfcn_scoremap"],
                   f"R={args.rois}: light_head={totals['light_head']:,} rfcn_scoremap={totals['rfcn_scoremap']:,}")
    _kv(flops_passed=int(ok))
    return 0 if ok else 1


def _write_trace(path: Path, losses):
    path.write_text("".join(f"{v!r}\n" for v in losses))


def cmd_demo_train(args) -> int:
    from .pipeline import TrainingDiverged, train_toy
    cfg = _config(args, toy_config())
    iters = args.iters if args.iters is not None else cfg.train.iters
    if iters < 1:
        raise UsageError("--iters must be >= 1")
    t0 = time.perf_counter()

    def progress(it, value, parts):
        if (it + 1) % args.log_every == 0 or it == 0:
            log.info("iter %d loss %.4f (rpn %.4f, rcnn %.4f)", it + 1, value, parts["rpn"], parts["rcnn"])

    try:
        res = train_toy(cfg, iters, progress=progress)
    except TrainingDiverged as exc:
        print(f"FAIL training diverged at iteration {exc.iteration}")
        _kv(diverged_at=exc.iteration)
        return 1
    seconds = time.perf_counter() - t0
    losses = np.array(res.losses)
    out = Path(args.out)
    lht.save_weights(out, res.detector.state_dict())
    (out / "config.txt").write_text(dump_config(cfg))
    _write_trace(out / "losses.txt", res.losses)
    win = min(50, len(losses))
    first, last = losses[:win].mean(), losses[-win:].mean()
    reduction = 1 - last / first
    print(f"trained {iters} iterations in {seconds:.1f}s; weights in {out}")
    _kv(iters=iters, seconds=f"{seconds:.2f}", first_window_loss=f"{first:.6f}", last_window_loss=f"{last:.6f}",
        loss_reduction=f"{reduction:.6f}", final_loss=repr(float(losses[-1])), weights=str(out))
    ok = True
    if iters >= 2 * win and win == 50:
        ok &= _verdict("loss_reduction", reduction >= 0.6, f"{reduction:.1%} (first-50 {first:.4f} -> last-50 {last:.4f}), need >= 60%")
    return 0 if ok else 1


def _load_detector(weights: Path, args):
    from .pipeline import Detector
    cfg_file = weights / "config.txt"
    if args.config:
        cfg = _config(args, toy_config())
    elif cfg_file.exists():
        cfg = parse_config(cfg_file.read_text())
        cfg.train.seed = seed_override(cfg.train.seed)
    else:
        cfg = toy_config()
    det = Detector(cfg, cfg.train.seed)
    det.load_state_dict(lht.load_weights(weights))
    return det


def cmd_demo_infer(args) -> int:
    from .pipeline import evaluate, scene_stream
    weights = Path(args.weights)
    if not (weights / lht.MANIFEST).exists():
        raise UsageError(f"no weight manifest in {weights}")
    det = _load_detector(weights, args)
    thr = det.cfg.detect.score_thresh if args.score_thresh is None else args.score_thresh
    ok = True
    if args.image:
        img = lht.load(args.image)
        if img.ndim == 4:
            if img.shape[0] != 1:
                raise UsageError("image tensor must hold a single image")
            img = img[0]
        if img.ndim != 3 or img.shape[0] != 3:
            raise UsageError(f"expected a (3, H, W) or (1, 3, H, W) image, got {img.shape}")
        dets = [d for d in det.detect(img) if d.score >= thr]
        print("class score x1 y1 x2 y2")
        for d in dets:
            print(f"{d.class_id} {d.score:.6f} " + " ".join(f"{v:.2f}" for v in d.box))
        _kv(detections=len(dets), max_channels_after_thin=max(a.channels or 0 for a in det.trace))
    if args.heldout:
        held = scene_stream(det.cfg, det.cfg.train.seed, 1)
        ev = evaluate(det, [next(held) for _ in range(args.heldout)], 0.5, thr)
        _kv(recall=f"{ev.recall:.6f}", false_positives_per_image=f"{ev.false_positives_per_image:.6f}",
            num_gt=ev.num_gt, num_images=ev.num_images)
        ok &= _verdict("heldout_recall", ev.recall >= 0.9, f"{ev.recall:.3f} at IoU 0.5, need >= 0.9")
        ok &= _verdict("heldout_false_positives", ev.false_positives_per_image <= 1.0,
                       f"{ev.false_positives_per_image:.2f} per image at score >= {thr}, need <= 1")
    if not args.image and not args.heldout:
        raise UsageError("demo-infer needs --image and/or --heldout")
    return 0 if ok else 1


def parse_box_lines(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 5:
            raise UsageError(f"line {lineno}: expected 'score x1 y1 x2 y2'")
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise UsageError(f"line {lineno}: non-numeric value") from None
    arr = np.array(rows, dtype=np.float64).reshape(-1, 5)
    if np.any(arr[:, 3] < arr[:, 1]) or np.any(arr[:, 4] < arr[:, 2]):
        raise UsageError("boxes need x2 >= x1 and y2 >= y1")
    return arr[:, 1:], arr[:, 0]


def cmd_nms(args) -> int:
    from .rpn import nms
    if not 0.0 <= args.iou_thresh <= 1.0:
        raise UsageError("--iou-thresh must lie in [0, 1]")
    text = Path(args.input).read_text() if args.input not in (None, "-") else sys.stdin.read()
    boxes, scores = parse_box_lines(text)
    for i in nms(boxes, scores, args.iou_thresh):
        print(f"{scores[i]:g} " + " ".join(f"{v:g}" for v in boxes[i]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lighthead", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value config file")
        p.set_defaults(fn=fn)
        return p

    p = add("gradcheck", cmd_gradcheck, "finite-difference checks of every differentiable op")
    p.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    p.add_argument("--cases", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p = add("oracle", cmd_oracle, "pooling, NMS and label-assignment oracle equivalence")
    p.add_argument("--seed", type=int, default=0)
    p = add("flops", cmd_flops, "backbone and head cost reports")
    p.add_argument("--backbone", choices=["xception", "xception_toy"])
    p.add_argument("--input", type=int, default=224)
    p.add_argument("--rois", type=int, default=1000)
    p.add_argument("--num-classes", type=int, default=80)
    p = add("demo-train", cmd_demo_train, "train the toy detector on synthetic scenes")
    p.add_argument("--iters", type=int)
    p.add_argument("--out", default="toy_weights")
    p.add_argument("--log-every", type=int, default=50)
    p = add("demo-infer", cmd_demo_infer, "run a trained toy detector")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", help="LHT1 image tensor (3, H, W) or (1, 3, H, W)")
    p.add_argument("--heldout", type=int, default=0, help="evaluate on this many held-out scenes")
    p.add_argument("--score-thresh", type=float)
    p = add("nms", cmd_nms, "greedy NMS over 'score x1 y1 x2 y2' lines")
    p.add_argument("--iou-thresh", type=float, default=0.5)
    p.add_argument("--input", help="file to read (default stdin)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigError, lht.FormatError, FileNotFoundError) as exc:
        print(f"lighthead {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
