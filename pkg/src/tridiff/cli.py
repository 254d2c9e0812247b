"""Command-line surface: train, sample, pack, inspect, pilot, bench.

Exit codes: 0 on success, 2 for usage or configuration problems, 3 when
training diverges numerically. Every command draws all of its randomness
from one generator seeded by ``--seed``, so runs are reproducible.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import deploy, diagnostics
from .bitpack import PackedTernary, packed_linear, unpack_matrix
from .checkpoint import CheckpointError
from .diffusion import NoiseSchedule, ddpm_sample
from .imageio import write_ppm
from .model import DiT, ModelConfig
from .train import TrainConfig, TrainingDiverged, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


class CliError(Exception):
    """Usage/config-level failure: message printed, exit code 2."""


def _onoff(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected 'on' or 'off', got {value!r}")
    return value == "on"


def _load_config(path: str) -> ModelConfig:
    if not os.path.isfile(path):
        raise CliError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        return ModelConfig.from_text(text)
    except ValueError as exc:
        raise CliError(f"invalid config {path}: {exc}") from exc


def _load_ckpt(path: str):
    if not os.path.isfile(path):
        raise CliError(f"checkpoint not found: {path}")
    try:
        return deploy.load_checkpoint(path)
    except (CheckpointError, ValueError) as exc:
        raise CliError(f"cannot read checkpoint {path}: {exc}") from exc


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    overrides = {}
    if args.adaln_rms is not None:
        overrides["adaln_rms"] = args.adaln_rms
    if args.quantize is not None:
        overrides["quantize_blocks"] = args.quantize
    if overrides:
        cfg = ModelConfig(**{**cfg.__dict__, **overrides})
    tcfg = TrainConfig(
        total_steps=args.steps,
        batch_size=args.batch,
        lr_initial=args.lr,
        lr_after_drop=args.lr_after,
        lr_drop_step=args.lr_drop_step,
        seed=args.seed,
        clip_grad=args.clip_grad if args.clip_grad is not None else True,
    )
    model = DiT(cfg, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    try:
        state = train(model, tcfg, out_dir=args.out, ckpt_every=args.ckpt_every)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"trained {state.step} steps; final smoothed loss {state.smoothed:.6f}")
    print(f"checkpoints and loss log written to {args.out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    ckpt = _load_ckpt(args.ckpt)
    model = deploy.load_model(ckpt)
    labels = np.asarray(args.classes, dtype=np.int64)
    if labels.size == 0:
        raise CliError("at least one --class is required")
    if labels.min() < 0 or labels.max() >= model.cfg.num_classes:
        raise CliError(f"class labels must be in [0, {model.cfg.num_classes})")
    rng = np.random.default_rng(args.seed)
    schedule = NoiseSchedule.linear(model.num_timesteps)
    images = ddpm_sample(model, labels, steps=args.steps, cfg_scale=args.cfg_scale,
                         rng=rng, schedule=schedule)
    os.makedirs(args.out, exist_ok=True)
    for label, img in zip(labels, images):
        path = os.path.join(args.out, f"class_{int(label)}_seed{args.seed}.ppm")
        write_ppm(path, img)
        print(path)
    return EXIT_OK


def cmd_pack(args) -> int:
    ckpt = _load_ckpt(args.input)
    try:
        packed = deploy.pack_checkpoint(ckpt)
    except CheckpointError as exc:
        raise CliError(str(exc)) from exc
    deploy.save_checkpoint(packed, args.output)
    report = diagnostics.size_report_from_checkpoint(packed)
    print(f"packed {sum(1 for _, v in packed.tensors if isinstance(v, PackedTernary))} "
          f"ternary tensors -> {args.output}")
    print(f"payload {report.packed_payload_bytes} B vs dense {report.fp_bytes} B "
          f"({report.ratio:.2f}x)")
    return EXIT_OK


def cmd_inspect(args) -> int:
    ckpt = _load_ckpt(args.ckpt)
    report = diagnostics.size_report_from_checkpoint(ckpt)
    form = "packed" if ckpt.has_packed else "dense master"
    print(f"checkpoint: {args.ckpt} ({form}, {len(ckpt.tensors)} tensors)")
    print(report.table())
    return EXIT_OK


def cmd_pilot(args) -> int:
    report = diagnostics.activation_pilot(args.seed)
    print(report.table())
    if args.csv:
        print()
        print(report.csv())
    return EXIT_OK


def cmd_bench(args) -> int:
    ckpt = _load_ckpt(args.ckpt)
    cfg = ModelConfig.from_text(ckpt.config_text)
    if ckpt.has_packed:
        packed_ckpt = ckpt
    else:
        try:
            packed_ckpt = deploy.pack_checkpoint(ckpt)
        except CheckpointError as exc:
            raise CliError(str(exc)) from exc
    pairs = []  # (name, packed tensor, dense effective weights)
    for name, value in packed_ckpt.tensors:
        if isinstance(value, PackedTernary):
            wt = np.asarray(value.alpha, dtype=np.float32) * unpack_matrix(value).astype(np.float32)
            pairs.append((name, value, wt))
    if not pairs:
        raise CliError("checkpoint has no ternary tensors to benchmark")

    rng = np.random.default_rng(args.seed)
    inputs = {name: rng.standard_normal((args.batch, p.shape[1])).astype(np.float32)
              for name, p, _ in pairs}

    def run_dense():
        for name, _, wt in pairs:
            inputs[name] @ wt.T

    def run_packed():
        for name, p, _ in pairs:
            packed_linear(inputs[name], p, row_tile=args.row_tile)

    def clock(fn, repeats: int) -> float:
        fn()  # warmup
        best = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        return best

    dense_t = clock(run_dense, args.repeats)
    packed_t = clock(run_packed, args.repeats)

    dense_resident = sum(wt.nbytes for _, _, wt in pairs)
    packed_resident = sum(p.nbytes + diagnostics.PACKED_META_BYTES for _, p, _ in pairs)
    tile_rows = args.row_tile if args.row_tile else max(p.shape[0] for _, p, _ in pairs)
    unpack_buffer = max(4 * min(tile_rows, p.shape[0]) * p.shape[1] for _, p, _ in pairs)

    print(f"benchmarked {len(pairs)} ternary layers, batch {args.batch}, "
          f"row tile {args.row_tile or 'full'}")
    print(f"dense forward:  {dense_t * 1e3:9.3f} ms")
    print(f"packed forward: {packed_t * 1e3:9.3f} ms ({packed_t / dense_t:.2f}x dense)")
    print(f"resident weights: dense {dense_resident} B, packed {packed_resident} B")
    print(f"peak working set (packed): {packed_resident + unpack_buffer} B "
          f"(payloads + one {unpack_buffer} B unpack buffer)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tridiff",
        description="Ternary-weight diffusion transformer toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="quantization-aware training on the synthetic dataset")
    p.add_argument("--config", required=True, help="model config file (key=value lines)")
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--lr-drop-step", type=int, default=None)
    p.add_argument("--lr-after", type=float, default=1e-4)
    p.add_argument("--adaln-rms", type=_onoff, default=None, metavar="{on,off}")
    p.add_argument("--quantize", type=_onoff, default=None, metavar="{on,off}")
    p.add_argument("--clip-grad", type=_onoff, default=None, metavar="{on,off}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt-every", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="draw class-conditional samples from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--class", dest="classes", type=int, action="append", default=[],
                   metavar="L", help="class label (repeatable)")
    p.add_argument("--cfg-scale", type=float, default=4.0)
    p.add_argument("--steps", type=int, default=250)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("pack", help="convert a master checkpoint to 2-bit packed form")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(fn=cmd_pack)

    p = sub.add_parser("inspect", help="print the size report of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("pilot", help="activation-distribution pilot study")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(fn=cmd_pilot)

    p = sub.add_parser("bench", help="time packed vs dense forward passes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--row-tile", type=int, default=None)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
