"""Batch command-line entry point.

Subcommands: phantom, simulate, propagate, evaluate, froc, serve. Exit codes:
0 success, 1 usage error, 2 data error. All randomness flows from --seed; a
run manifest is written next to every output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .annotation import (
    AnnotationError,
    dragdrop_annotations,
    dragdrop_set,
    load_annotations,
    save_annotations,
    simulate_bbox,
    simulate_dragdrop,
    simulate_ellipse,
    simulate_points,
    simulate_scribbles,
)
from .metrics import (
    Case,
    MatchCriterion,
    froc,
    lesion_level_metrics,
    patient_level_metrics,
    pixel_metrics,
    reports_to_csv,
    reports_to_json,
)
from .phantom import PhantomSpec, generate_phantom, write_suite
from .propagation import PropagationConfig, PropagationError, propagate
from .volume import (
    LabelVolume,
    VolumeIOError,
    load_label,
    load_volume,
    save_label,
    save_volume,
)

log = logging.getLogger("dragdrop")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _manifest(out_dir: Path, command: str, args: dict, seed, t0: float) -> None:
    doc = {
        "command": command,
        "args": {k: str(v) if isinstance(v, Path) else v for k, v in args.items()},
        "seed": seed,
        "tool_version": __version__,
        "wall_time_s": round(time.time() - t0, 3),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n"
    )


# ---------------------------------------------------------------------------

def cmd_phantom(args) -> int:
    t0 = time.time()
    out = Path(args.out_dir)
    if args.spec:
        spec = PhantomSpec.from_json(Path(args.spec).read_text())
        vol, gt = generate_phantom(spec, seed=args.seed)
        out.mkdir(parents=True, exist_ok=True)
        save_volume(vol, out / "volume.f32", format="raw_json")
        save_label(gt, out / "gt.f32", format="raw_json")
        (out / "spec.json").write_text(spec.to_json() + "\n")
    else:
        write_suite(out, seed=args.seed)
    _manifest(out, "phantom", {"suite": args.suite, "spec": args.spec,
                               "out_dir": out}, args.seed, t0)
    return 0


def cmd_simulate(args) -> int:
    t0 = time.time()
    gt = load_label(args.gt)
    seed = args.seed
    if args.kind == "dragdrop":
        anns = simulate_dragdrop(gt, sigma_frac=args.sigma_frac, seed=seed)
        aset = dragdrop_set(
            anns,
            volume=str(args.gt),
            provenance={"mode": "simulated", "seed": seed,
                        "sigma_frac": args.sigma_frac},
        )
    elif args.kind == "bbox":
        aset = simulate_bbox(gt)
    elif args.kind == "points":
        aset = simulate_points(gt, seed=seed)
    elif args.kind == "ellipse":
        aset = simulate_ellipse(gt)
    else:
        aset = simulate_scribbles(gt, seed=seed)
    aset.volume = str(args.gt)
    save_annotations(aset, args.out)
    _manifest(Path(args.out).parent, "simulate",
              {"gt": args.gt, "kind": args.kind, "sigma_frac": args.sigma_frac,
               "out": args.out}, seed, t0)
    return 0


def cmd_propagate(args) -> int:
    t0 = time.time()
    vol = load_volume(args.volume)
    aset = load_annotations(args.annotations)
    anns = dragdrop_annotations(aset)
    cfg = PropagationConfig()
    if args.config:
        cfg = PropagationConfig.from_json(Path(args.config).read_text())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pl = propagate(vol, anns, cfg)
    save_label(LabelVolume(pl.class_labels, vol.spacing),
               out / "foreground.f32", format="raw_json")
    save_label(LabelVolume(pl.uncertain.astype(np.int32), vol.spacing),
               out / "uncertain.f32", format="raw_json")
    (out / "config.json").write_text(cfg.to_json() + "\n")
    _manifest(out, "propagate",
              {"volume": args.volume, "annotations": args.annotations,
               "config": args.config, "out_dir": out}, cfg.seed, t0)
    return 0


def _load_cases(pred_path: Path, gt_path: Path, level_needed: bool):
    """Pair pred/gt files: both may be single volumes or directories of
    same-named case files."""
    if pred_path.is_dir() != gt_path.is_dir():
        raise VolumeIOError("pred and gt must both be files or both directories")
    if not pred_path.is_dir():
        return [("case", pred_path, gt_path)]
    preds = {p.stem: p for p in sorted(pred_path.glob("*.f32"))}
    gts = {p.stem: p for p in sorted(gt_path.glob("*.f32"))}
    names = sorted(preds.keys() & gts.keys())
    if not names:
        raise VolumeIOError(f"no matching case files under {pred_path} and {gt_path}")
    return [(n, preds[n], gts[n]) for n in names]


def cmd_evaluate(args) -> int:
    t0 = time.time()
    crit = MatchCriterion.parse(args.criterion)
    pairs = _load_cases(Path(args.pred), Path(args.gt), True)
    ignore = load_label(args.ignore).labels > 0 if args.ignore else None
    meta = json.loads(Path(args.meta).read_text()) if args.meta else {}

    def group_of(name: str) -> str:
        if not args.group_by:
            return "all"
        return str(meta.get(name, {}).get(args.group_by, "unknown"))

    groups: dict[str, list[Case]] = {}
    for name, pp, gp in pairs:
        pred = load_label(pp)
        gt = load_label(gp)
        if pred.dims != gt.dims:
            raise VolumeIOError(
                f"{pp}: dims {pred.dims} do not match gt {gt.dims}"
            )
        groups.setdefault(group_of(name), []).append(
            Case(pred.labels, gt.labels)
        )
    reports = []
    extra = {"criterion": args.criterion, "group_by": args.group_by or ""}
    rows = []
    for gname in sorted(groups):
        cases = groups[gname]
        if args.level in ("pixel", "all"):
            pred_all = np.concatenate([c.pred_labels.ravel() > 0 for c in cases])
            gt_all = np.concatenate([c.gt_labels.ravel() > 0 for c in cases])
            ig = None
            if ignore is not None:
                if len(cases) != 1:
                    raise VolumeIOError("--ignore applies to single-case evaluation")
                ig = ignore.ravel()
            rows.append((gname, pixel_metrics(pred_all, gt_all, ig)))
        if args.level in ("lesion", "all"):
            rows.append((gname, lesion_level_metrics(cases, crit)))
        if args.level in ("patient", "all"):
            rows.append((gname, patient_level_metrics(cases)))
    reports = [r for _, r in rows]
    out = Path(args.out) if args.out else None
    json_text = reports_to_json(reports, extra)
    csv_text = reports_to_csv(reports)
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.with_suffix(".json").write_text(json_text)
        out.with_suffix(".csv").write_text(csv_text)
        _manifest(out.parent, "evaluate",
                  {"pred": args.pred, "gt": args.gt, "ignore": args.ignore,
                   "level": args.level, "criterion": args.criterion,
                   "group_by": args.group_by}, None, t0)
    else:
        sys.stdout.write(json_text)
    return 0


def _froc_svg(curve, width=640, height=480, margin=56) -> str:
    xs = curve.fp_per_case
    ys = curve.sensitivity
    xmax = max(max(xs), 1e-9)
    pts = []
    for x, y in zip(xs, ys):
        px = margin + (x / xmax) * (width - 2 * margin)
        py = height - margin - y * (height - 2 * margin)
        pts.append(f"{px:.2f},{py:.2f}")
    poly = " ".join(pts)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<rect width="{width}" height="{height}" fill="white"/>'
        f'<line x1="{margin}" y1="{height-margin}" x2="{width-margin}" '
        f'y2="{height-margin}" stroke="black"/>'
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height-margin}" stroke="black"/>'
        f'<polyline points="{poly}" fill="none" stroke="steelblue" stroke-width="2"/>'
        f'<text x="{width/2:.0f}" y="{height-12}" text-anchor="middle" '
        f'font-size="14">false positives per case</text>'
        f'<text x="16" y="{height/2:.0f}" font-size="14" '
        f'transform="rotate(-90 16 {height/2:.0f})" '
        f'text-anchor="middle">sensitivity</text>'
        "</svg>\n"
    )


def cmd_froc(args) -> int:
    t0 = time.time()
    crit = MatchCriterion.parse(args.criterion)
    pairs = json.loads(Path(args.cases).read_text())
    cases = []
    for i, pair in enumerate(pairs):
        try:
            conf = load_volume(pair["confidence"]).data
            gt = load_label(pair["gt"]).labels
        except (KeyError, TypeError) as e:
            raise VolumeIOError(f"{args.cases}: case {i} malformed: {e}") from e
        cases.append((conf, gt))
    levels = [float(x) for x in args.levels.split(",")] if args.levels else None
    curve = froc(cases, crit, levels)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(curve.as_csv())
    if args.plot:
        Path(args.plot).write_text(_froc_svg(curve))
    _manifest(out.parent, "froc",
              {"cases": args.cases, "criterion": args.criterion,
               "levels": args.levels, "out": args.out}, None, t0)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    app = create_app(Path(args.data_dir))
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="dragdrop",
                description="Weak-annotation propagation and evaluation toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("phantom", help="generate synthetic volumes")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--suite", action="store_true")
    g.add_argument("--spec")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(fn=cmd_phantom)

    sp = sub.add_parser("simulate", help="simulate weak annotations from a mask")
    sp.add_argument("--gt", required=True)
    sp.add_argument("--kind", required=True,
                    choices=["dragdrop", "bbox", "points", "ellipse", "scribble"])
    sp.add_argument("--sigma-frac", type=float, default=0.05)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("propagate", help="propagate annotations to pseudo labels")
    sp.add_argument("--volume", required=True)
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--config")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(fn=cmd_propagate)

    sp = sub.add_parser("evaluate", help="pixel/lesion/patient metrics")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--ignore")
    sp.add_argument("--level", default="all",
                    choices=["pixel", "lesion", "patient", "all"])
    sp.add_argument("--criterion", default="any_overlap")
    sp.add_argument("--group-by")
    sp.add_argument("--meta")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("froc", help="free-response ROC over a case manifest")
    sp.add_argument("--cases", required=True)
    sp.add_argument("--criterion", default="any_overlap")
    sp.add_argument("--levels")
    sp.add_argument("--out", required=True)
    sp.add_argument("--plot")
    sp.set_defaults(fn=cmd_froc)

    sp = sub.add_parser("serve", help="run the annotation HTTP service")
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.set_defaults(fn=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("DRAGDROP_LOG", "WARNING").upper())
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except (VolumeIOError, AnnotationError, PropagationError, ValueError,
            OSError, json.JSONDecodeError) as e:
        log.debug("data error", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
