"""Command line entry points: pretrain, reconstruct, grad-check,
bench-decoder, gen-data."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from .config import load_config
from .decoders import bench_decoders, bench_report_csv
from .pointio import write_csv
from .scenes import SceneSpec, generate_scene
from .training import export_reconstruction, train
from .verification import check_all_ops, check_encoder, check_end_to_end


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pillarmae", description="Masked pillar autoencoder pre-training at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="run pre-training from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="run", help="output directory for metrics and checkpoints")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--max-steps", type=int, default=None)

    p = sub.add_parser("reconstruct", help="export visible/predicted/ground-truth point files")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True, help="scene seed")
    p.add_argument("--out", required=True)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--module", default="all", choices=["ops", "encoder", "e2e", "all"])
    p.add_argument("--seeds", type=int, default=20, help="random seeds per op")

    p = sub.add_parser("bench-decoder", help="generative vs baseline decoder latency")
    p.add_argument("--tokens", type=int, default=5000)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--out", default=None, help="write the CSV report here")

    p = sub.add_parser("gen-data", help="write synthetic scenes as CSV point clouds")
    p.add_argument("--spec", required=True, help="JSON SceneSpec")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    return parser


def _load_scene_spec(path: str) -> SceneSpec:
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    known = {f.name for f in fields(SceneSpec)}
    unknown = set(obj) - known
    if unknown:
        raise ValueError(f"scene spec: unknown key {sorted(unknown)[0]!r}")
    return SceneSpec(**obj)


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    path = train(cfg, args.out, resume_from=args.resume, max_steps=args.max_steps, log=print)
    print(f"final checkpoint: {path}")
    return 0


def cmd_reconstruct(args) -> int:
    cfg = load_config(args.config)
    paths = export_reconstruction(args.ckpt, cfg, args.seed, args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_grad_check(args) -> int:
    failed = False
    if args.module in ("ops", "all"):
        for name, report in sorted(check_all_ops(seeds=range(args.seeds)).items()):
            status = "PASS" if report.passed else "FAIL"
            print(f"[{status}] op {name}: max_rel_err={report.max_rel_err:.3e}")
            failed |= not report.passed
    if args.module in ("encoder", "all"):
        report = check_encoder()
        print(f"[{'PASS' if report.passed else 'FAIL'}] encoder: max_rel_err={report.max_rel_err:.3e}")
        failed |= not report.passed
    if args.module in ("e2e", "all"):
        for strategy in ("block", "patch", "point"):
            report = check_end_to_end(strategy=strategy)
            print(f"[{'PASS' if report.passed else 'FAIL'}] e2e {strategy}: max_rel_err={report.max_rel_err:.3e}")
            failed |= not report.passed
    return 1 if failed else 0


def cmd_bench_decoder(args) -> int:
    rows = bench_decoders([args.tokens], repetitions=args.reps)
    report = bench_report_csv(rows)
    print(report, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(report)
    return 0


def cmd_gen_data(args) -> int:
    spec = _load_scene_spec(args.spec)
    os.makedirs(args.out, exist_ok=True)
    base = asdict(spec)
    for i in range(args.count):
        scene = generate_scene(SceneSpec(**{**base, "seed": spec.seed + i}))
        path = os.path.join(args.out, f"scene_{spec.seed + i:06d}.csv")
        write_csv(path, scene)
        print(f"{path}: {len(scene)} points")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "pretrain": cmd_pretrain,
        "reconstruct": cmd_reconstruct,
        "grad-check": cmd_grad_check,
        "bench-decoder": cmd_bench_decoder,
        "gen-data": cmd_gen_data,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
