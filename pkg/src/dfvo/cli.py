"""Command-line entry point: ``dfvo {synth,run,eval,plot}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import apply_overrides, dataclass_defaults, read_config
from .evaluation import ALIGN_MODES, evaluate, write_report
from .exceptions import VOError
from .io import read_trajectory
from .synth import SceneConfig, generate_sequence
from .tracker import TrackerConfig, run_sequence

log = logging.getLogger("dfvo")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def scene_config(path) -> SceneConfig:
    raw = read_config(path) if path else {}
    return SceneConfig(**apply_overrides(dataclass_defaults(SceneConfig), raw, "scene"))


def tracker_config(path) -> TrackerConfig:
    raw = read_config(path) if path else {}
    return TrackerConfig.from_flat(apply_overrides(TrackerConfig.flat_defaults(), raw, "tracker"))


def cmd_synth(args) -> int:
    cfg = scene_config(args.config)
    gt = generate_sequence(cfg, args.out)
    print(f"wrote {len(gt)} frames ({cfg.profile}) to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = tracker_config(args.config)
    traj, results = run_sequence(args.seq, cfg, args.out)
    counts: dict[str, int] = {}
    for r in results:
        counts[r.branch.value] = counts.get(r.branch.value, 0) + 1
    summary = " ".join(f"{k}={v}" for k, v in sorted(counts.items()))
    print(f"tracked {len(traj)} frames: {summary}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = read_trajectory(args.pred)
    gt = read_trajectory(args.gt)
    report = evaluate(pred, gt, args.align, args.stride)
    write_report(report, args.out)
    for key in ("t_err", "r_err", "ate", "rpe_m", "rpe_deg"):
        print(f"{key} = {report[key]:.9g}")
    return EXIT_OK


def svg_plot(named_positions, width: int = 640, height: int = 640, margin: int = 40) -> str:
    """Top-down (x, z) polylines with a legend, x to the right and z up."""
    allp = np.vstack([p for _, p in named_positions])
    lo = allp[:, [0, 2]].min(axis=0)
    hi = allp[:, [0, 2]].max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    k = (min(width, height) - 2 * margin) / span

    def xy(p):
        return margin + (p[0] - lo[0]) * k, height - margin - (p[2] - lo[1]) * k

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    for idx, (name, P) in enumerate(named_positions):
        color = PALETTE[idx % len(PALETTE)]
        pts = " ".join("%.3f,%.3f" % xy(p) for p in P)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        y = 20 + 18 * idx
        out.append(f'<line x1="{width - 180}" y1="{y}" x2="{width - 160}" y2="{y}" '
                   f'stroke="{color}" stroke-width="3"/>')
        out.append(f'<text x="{width - 152}" y="{y + 4}" font-family="sans-serif" '
                   f'font-size="12">{_escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def cmd_plot(args) -> int:
    named = [(Path(p).name, read_trajectory(p).positions) for p in args.traj]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg_plot(named))
    with open(out.with_suffix(".csv"), "w", newline="\n") as fh:
        fh.write("trajectory,frame,x,y,z\n")
        for name, P in named:
            for i, p in enumerate(P):
                fh.write(f"{name},{i},{p[0]:.9g},{p[1]:.9g},{p[2]:.9g}\n")
    print(f"wrote {out} and {out.with_suffix('.csv')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dfvo", description="Depth-and-flow monocular visual odometry.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic sequence")
    p.add_argument("--config", help="scene config file (key = value)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="track a sequence directory")
    p.add_argument("--seq", required=True)
    p.add_argument("--config", help="tracker config file (key = value)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="compare a predicted trajectory with ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--align", choices=ALIGN_MODES, default="7dof")
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--out", default="eval_report.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="top-down SVG of one or more trajectories")
    p.add_argument("--traj", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VOError as exc:
        print(f"ERROR: {exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        detail = f"{exc.strerror}: {exc.filename}" if exc.filename else str(exc)
        print(f"ERROR: {type(exc).__name__}: {detail}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"ERROR: ValueError: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
