"""Command-line interface: ``dualrs {synth,extract,eval,ambiguity,profile-rows}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import metrics, scenes
from .geometry import Direction, GsSequence, Parameterization, RsConfig, VelocityCube, build_time_cube
from .io import (
    SCHEMA_VERSION,
    ConfigError,
    DataError,
    atomic_write,
    dumps_json,
    load_manifest,
    load_stack_dir,
    read_cube,
    read_frames,
    read_image,
    write_cube,
    write_png,
)
from .simulator import CoverageError, DualPair, ambiguity_scene, synthesize_dual, synthesize_gt, synthesize_rs
from .solver import SolverParams, run_extraction
from .tensor import ImageBuf

log = logging.getLogger("dualrs")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _csv(rows, header) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.3f}"


# ------------------------------------------------------------------ synth


def _manifest_stack(m, seed):
    if m.stack_dir is not None:
        stack = load_stack_dir(m.stack_dir, m.t0, m.dt)
        return stack, RsConfig(rows=stack.height, row_readout=m.row_readout, midpoint=m.midpoint)
    sc = m.scene
    h, w = (int(v) for v in sc.get("size", (256, 256)))
    channels = int(sc.get("channels", 1))
    fpr = int(sc.get("frames_per_readout", 8))
    margin = abs(m.misalign_rows) + 2
    if sc["kind"] == "rotating_texture":
        return scenes.rotating_scene((h, w), turn=float(sc.get("turn", 0.1)), row_readout=m.row_readout,
                                     midpoint=m.midpoint, seed=seed, channels=channels,
                                     frames_per_readout=fpr, margin_rows=margin)
    velocity = (0.0, 0.0) if sc["kind"] == "static_texture" else tuple(float(v) for v in sc.get("velocity", (2.0, 0.0)))
    return scenes.constant_velocity_scene((h, w), velocity, row_readout=m.row_readout, midpoint=m.midpoint,
                                          seed=seed, channels=channels, frames_per_readout=fpr,
                                          margin_rows=margin)


def cmd_synth(args):
    m = load_manifest(args.manifest)
    seed = args.seed if args.seed is not None else m.seed
    out = Path(args.out_dir) if args.out_dir else m.out_dir
    stack, cfg = _manifest_stack(m, seed)
    pair = synthesize_dual(stack, cfg, m.misalign_rows)
    gt = synthesize_gt(stack, cfg, m.n_frames)
    write_png(out / "t2b.png", pair.t2b)
    write_png(out / "b2t.png", pair.b2t)
    write_cube(out / "t2b.cube", pair.t2b.pixels[None])
    write_cube(out / "b2t.cube", pair.b2t.pixels[None])
    for k, frame in enumerate(gt.frames):
        write_png(out / "gt" / f"frame_{k:03d}.png", frame)
    write_cube(out / "gt.cube", gt.stack())
    meta = dict(schema_version=SCHEMA_VERSION, scene_id=m.scene_id, seed=seed,
                rows=cfg.rows, width=pair.t2b.width, channels=pair.t2b.channels,
                row_readout=cfg.row_readout, midpoint=cfg.midpoint, t_start=cfg.t_start, t_end=cfg.t_end,
                misalign_rows=m.misalign_rows, n_frames=m.n_frames, instants=list(gt.instants))
    atomic_write(out / "meta.json", dumps_json(meta))
    print(f"wrote dual pair and {m.n_frames} ground-truth frames to {out}")
    return 0


# ------------------------------------------------------------------ extract


def _params_from_args(args, n_frames):
    try:
        scales = tuple(float(s) for s in args.scales.split(",")) if args.scales else None
        kw = dict(parameterization=Parameterization(args.param), n_frames=n_frames)
        if scales is not None:
            kw["scales"] = scales
        for name in ("iters", "lambda_v", "step"):
            val = getattr(args, name)
            if val is not None:
                kw["iters_per_scale" if name == "iters" else name] = val
        return SolverParams(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _oracle_velocity(path, n, h, w):
    arr = read_cube(path).astype(np.float64)
    if arr.shape[-1] != 2:
        raise DataError(f"oracle velocity must have 2 channels, got shape {arr.shape}")
    if arr.shape[:3] == (1, 1, 1):
        return VelocityCube.const(*arr[0, 0, 0])
    if arr.shape[:3] != (n, h, w):
        raise DataError(f"oracle velocity shape {arr.shape} does not match (N, H, W, 2) = {(n, h, w, 2)}")
    return VelocityCube(Parameterization.DENSE, arr)


def cmd_extract(args):
    meta = {}
    if args.meta:
        try:
            meta = json.loads(Path(args.meta).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read metadata {args.meta}: {exc}") from None
    t2b = read_image(args.t2b)
    b2t = read_image(args.b2t)
    if t2b.shape != b2t.shape:
        raise DataError(f"t2b shape {t2b.shape} does not match b2t shape {b2t.shape}")
    rows = t2b.height
    n = args.n_frames or int(meta.get("n_frames", 9))
    misalign = args.misalign_rows if args.misalign_rows is not None else int(meta.get("misalign_rows", 0))
    readout = args.row_readout or float(meta.get("row_readout", 1.0 / rows))
    midpoint = args.midpoint if args.midpoint is not None else float(meta.get("midpoint", 0.0))
    cfg = RsConfig(rows=rows, row_readout=readout, midpoint=midpoint)
    pair = DualPair(t2b, b2t, cfg, misalign)
    params = _params_from_args(args, n)
    velocity = _oracle_velocity(args.oracle_velocity, n, rows, t2b.width) if args.oracle_velocity else None
    result = run_extraction(pair, params, velocity)

    out = Path(args.out_dir)
    frames = result.sequence
    for k, frame in enumerate(frames.frames):
        write_png(out / "frames" / f"frame_{k:03d}.png", frame)
    write_cube(out / "frames.cube", frames.stack())
    write_cube(out / "velocity.cube", result.velocity.expand(n, rows, t2b.width))
    write_cube(out / "flow_t2b.cube", result.flow_t2b.data)
    write_cube(out / "flow_b2t.cube", result.flow_b2t.data)
    atomic_write(out / "objective_log.csv", _csv(
        ([r["scale"], r["iter"], repr(r["data_term"]), repr(r["tv_term"]), repr(r["total"])] for r in result.trace),
        ["scale", "iter", "data_term", "tv_term", "total"]))
    v = result.velocity
    record = dict(schema_version=SCHEMA_VERSION, n_frames=n, instants=list(frames.instants),
                  parameterization=v.parameterization.value, misalign_rows=misalign,
                  scales=list(params.scales), iters_per_scale=params.iters_per_scale,
                  lambda_v=params.lambda_v, step=params.step, oracle=bool(args.oracle_velocity),
                  velocity=None if v.parameterization is Parameterization.DENSE else v.params.tolist())
    atomic_write(out / "extract.json", dumps_json(record))
    print(f"extracted {n} frames to {out}" + (f" (velocity {v.params.round(4).tolist()})" if record["velocity"] else ""))
    return 0


# ------------------------------------------------------------------ eval / profile


def _load_pair_of_sequences(outputs, gt):
    a = read_frames(outputs)
    b = read_frames(gt)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: outputs {a.shape} vs gt {b.shape}")
    quantized = Path(outputs).is_dir() or Path(gt).is_dir()
    return a, b, quantized


def _as_seq(frames):
    return GsSequence([ImageBuf(np.clip(f, 0.0, 1.0)) for f in frames], list(range(len(frames))))


def _profile_rows(a, b):
    n, rows = a.shape[0], a.shape[1]
    profiles = metrics.row_profile(_as_seq(a), _as_seq(b))
    p1 = build_time_cube(rows, n, Direction.T2B).values
    p2 = build_time_cube(rows, n, Direction.B2T).values
    closeness = np.minimum(np.abs(p1), np.abs(p2))
    return profiles, closeness


def cmd_eval(args):
    a, b, quantized = _load_pair_of_sequences(args.outputs, args.gt)
    region = metrics.center_crop(a.shape[1], a.shape[2], args.crop) if args.crop < 1.0 else None
    rows = []
    for k in range(a.shape[0]):
        p = metrics.psnr(a[k], b[k], region)
        s = metrics.ssim(a[k], b[k]) if min(a.shape[1:3]) >= metrics.SSIM_WINDOW else float("nan")
        rows.append((k, p, s))
    finite = [p for _, p, _ in rows]
    mean_psnr = float(np.mean(finite)) if all(math.isfinite(p) for p in finite) else math.inf
    mean_ssim = float(np.mean([s for _, _, s in rows]))
    profiles, closeness = _profile_rows(a, b)

    lines = [f"{'frame':>5}  {'psnr_db':>10}  {'ssim':>8}"]
    lines += [f"{k:>5}  {_fmt(p):>10}  {s:>8.4f}" for k, p, s in rows]
    lines.append(f"{'mean':>5}  {_fmt(mean_psnr):>10}  {mean_ssim:>8.4f}")
    if quantized:
        lines.append("note: at least one input was read from 8-bit PNG; metrics include quantisation error")
    table = "\n".join(lines) + "\n"
    report = dict(schema_version=SCHEMA_VERSION, crop=args.crop, quantized=quantized,
                  frames=[dict(index=k, psnr=_fmt(p) if math.isinf(p) else p, ssim=s) for k, p, s in rows],
                  mean_psnr=_fmt(mean_psnr) if math.isinf(mean_psnr) else mean_psnr, mean_ssim=mean_ssim,
                  row_mse=[pr.mse.tolist() for pr in profiles])
    out = Path(args.out_dir)
    atomic_write(out / "eval.txt", table)
    atomic_write(out / "eval.json", dumps_json(report))
    atomic_write(out / "row_profile.csv", _row_csv(profiles, closeness))
    sys.stdout.write(table)
    return 0


def _row_csv(profiles, closeness):
    rows = ((pr.n, m, repr(float(pr.mse[m])), repr(float(closeness[pr.n, m])))
            for pr in profiles for m in range(len(pr.mse)))
    return _csv(rows, ["n", "row", "mse", "min_time_offset"])


def cmd_profile_rows(args):
    a, b, _ = _load_pair_of_sequences(args.outputs, args.gt)
    profiles, closeness = _profile_rows(a, b)
    text = _row_csv(profiles, closeness)
    if args.out_dir:
        atomic_write(Path(args.out_dir) / "row_profile.csv", text)
    else:
        sys.stdout.write(text)
    for pr in profiles:
        rho = metrics.rank_correlation(pr.mse, closeness[pr.n]) if np.ptp(pr.mse) > 0 else float("nan")
        log.info("n=%d spearman(row mse, min time offset)=%.3f", pr.n, rho)
    return 0


# ------------------------------------------------------------------ ambiguity


def ambiguity_report():
    """Render both ambiguity scenes and measure single- and dual-view differences."""
    a, b = ambiguity_scene()
    renders = {}
    for name, sc in (("A", a), ("B", b)):
        renders[name] = synthesize_dual(sc.stack, sc.config)
    t2b_a, t2b_b = renders["A"].t2b.pixels, renders["B"].t2b.pixels
    b2t_a, b2t_b = renders["A"].b2t.pixels, renders["B"].b2t.pixels
    bg = float(np.median(t2b_a))
    region = (np.abs(b2t_a - bg) > 1e-6) | (np.abs(b2t_b - bg) > 1e-6)
    report = dict(
        schema_version=SCHEMA_VERSION,
        readout_a=a.config.row_readout, readout_b=b.config.row_readout, tilt_b=b.tilt,
        single_view_mse=float(np.mean((t2b_a.astype(np.float64) - t2b_b) ** 2)),
        dual_view_mse=float(np.mean((b2t_a.astype(np.float64) - b2t_b)[region] ** 2)),
        dual_view_mse_full=float(np.mean((b2t_a.astype(np.float64) - b2t_b) ** 2)),
    )
    return renders, report


def cmd_ambiguity(args):
    renders, report = ambiguity_report()
    out = Path(args.out_dir)
    for name, pair in renders.items():
        write_png(out / f"scene{name}_t2b.png", pair.t2b)
        write_png(out / f"scene{name}_b2t.png", pair.b2t)
    atomic_write(out / "ambiguity.json", dumps_json(report))
    print(f"single view (t2b) MSE between scenes: {report['single_view_mse']:.3g}")
    print(f"dual view (b2t) MSE on object region: {report['dual_view_mse']:.3g}")
    return 0


# ------------------------------------------------------------------ entry point


def build_parser():
    p = _Parser(prog="dualrs", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a dual RS pair and ground-truth frames from a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--seed", type=int, help="procedural scene seed (overrides the manifest)")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("extract", help="extract global-shutter frames from a dual RS pair")
    e.add_argument("--t2b", required=True)
    e.add_argument("--b2t", required=True)
    e.add_argument("--meta", help="meta.json written by synth (readout, midpoint, N, misalignment)")
    e.add_argument("--n-frames", type=int)
    e.add_argument("--param", choices=[k.value for k in Parameterization], default="const")
    e.add_argument("--scales", help="comma-separated pyramid fractions, e.g. 0.125,0.25,0.5,1")
    e.add_argument("--iters", type=int)
    e.add_argument("--step", type=float)
    e.add_argument("--lambda-v", dest="lambda_v", type=float)
    e.add_argument("--oracle-velocity", help="velocity cube file (1x1x1x2 constant or NxHxWx2)")
    e.add_argument("--misalign-rows", type=int)
    e.add_argument("--row-readout", type=float)
    e.add_argument("--midpoint", type=float)
    e.add_argument("--out-dir", required=True)
    e.set_defaults(func=cmd_extract)

    v = sub.add_parser("eval", help="PSNR/SSIM and row profiles of outputs against ground truth")
    v.add_argument("--outputs", required=True)
    v.add_argument("--gt", required=True)
    v.add_argument("--crop", type=float, default=1.0, help="centred crop fraction for PSNR")
    v.add_argument("--out-dir", required=True)
    v.set_defaults(func=cmd_eval)

    a = sub.add_parser("ambiguity", help="reproduce the single-view readout ambiguity")
    a.add_argument("--out-dir", required=True)
    a.set_defaults(func=cmd_ambiguity)

    r = sub.add_parser("profile-rows", help="row-wise MSE curve as CSV")
    r.add_argument("--outputs", required=True)
    r.add_argument("--gt", required=True)
    r.add_argument("--out-dir")
    r.set_defaults(func=cmd_profile_rows)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"dualrs: config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CoverageError) as exc:
        print(f"dualrs: data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"dualrs: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
