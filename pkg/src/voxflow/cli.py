"""Command-line entry point: synth, estimate, eval, render-bev, inspect.

Exit codes: 0 success, 1 validation/usage, 2 I/O, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import dbscan
from .config import CONFIG_SCHEMA_VERSION, RunConfig, load_config
from .distance_transform import build_dt, write_slice_pgm
from .errors import IoError, LengthMismatch, UsageError, VoxflowError
from .flow_grid import load_checkpoint, save_checkpoint
from .geometry import PointCloud, load_cloud, load_manifest
from .pipeline import estimate, evaluate, load_frame, preprocess
from .render import render_bev, write_ppm
from .synth import generate, scenario_library, spec_from_json, write_sequence

log = logging.getLogger("voxflow")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except ValueError:
        return raw


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = _parse_value(value)
    for flag, key in (("m", "m"), ("workers", "workers"), ("seed", "seed"),
                      ("cell_size", "grid.cell_size"), ("max_epochs", "optim.max_epochs")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    return out


def _write_json(path: Path, doc) -> None:
    try:
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_flow(path) -> np.ndarray:
    return load_cloud(path, "xyz_f32").points


# --- synth -------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.spec:
        try:
            doc = json.loads(Path(args.spec).read_text())
        except OSError as exc:
            raise IoError(f"cannot read {args.spec}: {exc}") from exc
        except ValueError as exc:
            raise UsageError(f"{args.spec}: invalid JSON: {exc}") from exc
        spec = spec_from_json(doc)
    else:
        lib = scenario_library()
        if args.scenario not in lib:
            raise UsageError(f"unknown scenario {args.scenario!r}; choose from {', '.join(sorted(lib))}")
        spec = lib[args.scenario]
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.frames is not None:
        changes["frames"] = args.frames
    if args.no_occlusion:
        changes["occlusion"] = False
    if args.noise is not None:
        changes["noise_sigma"] = args.noise
    spec = spec.replace(**changes)
    frames = generate(spec)
    path = write_sequence(frames, args.out, spec.reference_index)
    print(path)
    return 0


# --- estimate ------------------------------------------------------------------


def _estimate_one(manifest_path: str, cfg: RunConfig, ref: int | None):
    manifest = load_manifest(manifest_path)
    return estimate(manifest, cfg, ref)


def _write_estimate(est, cfg: RunConfig, out: Path, suffix: str) -> None:
    flow_path = out / f"flow{suffix}.bin"
    try:
        flow_path.write_bytes(est.flow.astype("<f4").tobytes())
        with open(out / f"train_log{suffix}.jsonl", "w") as fh:
            for entry in est.fit.log:
                fh.write(json.dumps(entry) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write outputs in {out}: {exc}") from exc
    save_checkpoint(est.grid, out / f"grid{suffix}.ckpt")
    _write_json(out / f"meta{suffix}.json", {
        "version": __version__,
        "config_schema": CONFIG_SCHEMA_VERSION,
        "config_hash": cfg.digest(),
        "config": cfg.flat(),
        "reference_index": est.reference_index,
        "support_offsets": est.support_offsets,
        "num_points": int(len(est.reference)),
        "num_points_optimized": int(est.kept.sum()),
        "num_clusters": int(est.clusters.num_clusters),
        "epochs_run": est.fit.epochs_run,
        "returned_epoch": est.fit.returned_epoch,
        "lowest_total_epoch": est.fit.lowest_epoch,
        "stop_reason": est.fit.stop_reason,
    })


def cmd_estimate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(args.manifest)
    if args.all_frames:
        refs = list(range(len(manifest.frames)))
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(_estimate_one, [args.manifest] * len(refs),
                                        [cfg] * len(refs), refs))
        else:
            results = [estimate(manifest, cfg, r) for r in refs]
        for r, est in zip(refs, results):
            _write_estimate(est, cfg, out, f"_{r:04d}")
    else:
        est = estimate(manifest, cfg, args.reference)
        _write_estimate(est, cfg, out, "")
        log.info("reference %d: %d epochs (%s)", est.reference_index,
                 est.fit.epochs_run, est.fit.stop_reason)
    return 0


# --- eval / render ---------------------------------------------------------------


def _reference_cloud(args) -> tuple[PointCloud, int]:
    manifest = load_manifest(args.manifest)
    ref = manifest.reference_index if args.reference is None else args.reference
    return load_frame(manifest, ref), ref


def cmd_eval(args) -> int:
    reference, ref = _reference_cloud(args)
    pred = _read_flow(args.flow)
    if len(pred) != len(reference):
        raise LengthMismatch(f"{len(pred)} flow vectors for {len(reference)} reference points")
    report = evaluate(pred, reference, args.dynamic_threshold)
    report["reference_index"] = ref
    meta_path = Path(args.flow).with_name(Path(args.flow).name.replace("flow", "meta", 1)).with_suffix(".json")
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        report["config"] = {"config_hash": meta.get("config_hash"), **meta.get("config", {})}
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_render_bev(args) -> int:
    reference, _ = _reference_cloud(args)
    flow = _read_flow(args.flow)
    if len(flow) != len(reference):
        raise LengthMismatch(f"{len(flow)} flow vectors for {len(reference)} reference points")
    img = render_bev(reference.points, flow, args.resolution, args.max_magnitude)
    write_ppm(img, args.out)
    return 0


# --- inspect -----------------------------------------------------------------------


def cmd_inspect(args) -> int:
    if args.what == "checkpoint":
        g = load_checkpoint(args.path)
        mag = np.linalg.norm(g.params, axis=1)
        print(json.dumps({
            "origin": g.origin.tolist(), "cell_size": g.cell_size, "dims": list(g.dims),
            "nonzero_corners": int((mag > 0).sum()), "max_flow": float(mag.max(initial=0.0)),
        }, indent=2))
        return 0
    cfg = load_config(args.config, _overrides(args))
    manifest = load_manifest(args.path)
    frame = manifest.reference_index if args.frame is None else args.frame
    cloud = preprocess(load_frame(manifest, frame), cfg)
    if args.what == "dt":
        dt = build_dt(cloud, cell=cfg.dt.cell, truncation=cfg.dt.truncation)
        z = dt.dims[2] // 2 if args.z_index is None else args.z_index
        write_slice_pgm(dt, z, args.out)
    else:
        ids = dbscan(cloud, cfg.dbscan).cluster_id.astype("<i4")
        try:
            Path(args.out).write_bytes(ids.tobytes())
        except OSError as exc:
            raise IoError(f"cannot write {args.out}: {exc}") from exc
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="voxflow", description="Voxel-grid scene flow by test-time optimization.")
    p.add_argument("--version", action="version",
                   version=f"voxflow {__version__} (config schema {CONFIG_SCHEMA_VERSION})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic sequence")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario")
    src.add_argument("--spec", help="scene spec JSON file")
    s.add_argument("--seed", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--noise", type=float)
    s.add_argument("--no-occlusion", action="store_true")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_synth)

    def config_flags(q):
        q.add_argument("--config", help="JSON file of dotted keys")
        q.add_argument("--set", action="append", metavar="KEY=VALUE")
        q.add_argument("--m", type=int, help="half window: 2m+1 scans")
        q.add_argument("--cell-size", type=float)
        q.add_argument("--max-epochs", type=int)
        q.add_argument("--workers", type=int)
        q.add_argument("--seed", type=int)

    e = sub.add_parser("estimate", help="fit scene flow for a reference frame")
    e.add_argument("manifest")
    config_flags(e)
    e.add_argument("--reference", type=int)
    e.add_argument("--all-frames", action="store_true")
    e.add_argument("-o", "--out", required=True, help="output directory")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("eval", help="score a flow file against ground truth")
    v.add_argument("flow")
    v.add_argument("manifest")
    v.add_argument("--reference", type=int)
    v.add_argument("--dynamic-threshold", type=float, default=0.05)
    v.add_argument("-o", "--out")
    v.set_defaults(func=cmd_eval)

    r = sub.add_parser("render-bev", help="birds-eye PPM of a flow file")
    r.add_argument("flow")
    r.add_argument("manifest")
    r.add_argument("--reference", type=int)
    r.add_argument("--resolution", type=float, default=0.2)
    r.add_argument("--max-magnitude", type=float, default=1.0)
    r.add_argument("-o", "--out", required=True)
    r.set_defaults(func=cmd_render_bev)

    i = sub.add_parser("inspect", help="dump a checkpoint, DT slice or cluster ids")
    i.add_argument("what", choices=["checkpoint", "dt", "clusters"])
    i.add_argument("path", help="checkpoint file or manifest")
    config_flags(i)
    i.add_argument("--frame", type=int)
    i.add_argument("--z-index", type=int)
    i.add_argument("-o", "--out")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if not getattr(args, "func", None):
            raise UsageError("a command is required: " + ", ".join(
                ["synth", "estimate", "eval", "render-bev", "inspect"]))
        if args.func is cmd_inspect and args.what != "checkpoint" and not args.out:
            raise UsageError("inspect dt/clusters needs -o/--out")
        return args.func(args)
    except VoxflowError as exc:
        print(f"voxflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
