"""Command-line entry point.

Subcommands:
    demo         run image -> patches -> stub encoders -> connector -> greedy
                 decode, printing the response and its tokens/s
    verify       run the invariant suites (fast | full)
    bench        sweep forward latency over sequence lengths, write CSV,
                 optionally assert the scaling slopes
    dump-tensor  summarize a serialized tensor file

Exit codes: 0 ok, 1 usage, 2 I/O or format, 3 configuration, 4 numeric.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import bench as bench_mod
from .config import RunConfig, load_config
from .connector import ConnectorVariant, connector_forward, init_connector_weights
from .errors import ConfigError, DomainError, FormatError, SsmscanError
from .lm import MambaLm, ToyLmConfig
from .rng import split_seed
from .tensorio import load_tensor
from .verify import run_suites
from .vision import fuse_encoders, load_pnm_file, patchify, promote_rgb, stub_encode

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the CLI contract says 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _config_overrides(args) -> dict:
    keys = ("seed", "variant", "scan", "encoders", "enc_dim", "d_llm", "patch_size",
            "lm_layers", "max_gen", "timing_path")
    return {k: getattr(args, k, None) for k in keys}


def run_demo(cfg: RunConfig, image_path: str, prompt: str) -> dict:
    """The full inference path; returns a summary dict (also used by tests)."""
    img = promote_rgb(load_pnm_file(image_path))
    grid = patchify(img, cfg.patch_size)
    enc_a = stub_encode(grid, split_seed(cfg.seed, "encoder-a"), cfg.enc_dim)
    fused = enc_a
    if cfg.encoders == 2:
        enc_b = stub_encode(grid, split_seed(cfg.seed, "encoder-b"), cfg.enc_dim)
        fused = fuse_encoders(enc_a, enc_b)
    weights = init_connector_weights(
        cfg.fused_dim, cfg.d_llm, cfg.seed,
        d_hidden=cfg.mlp_hidden, d_ff=cfg.swiglu_dim,
        n_heads=cfg.n_heads, state_size=cfg.state_size,
    )
    variant = ConnectorVariant(cfg.variant, cfg.scan)
    projected = connector_forward(fused.tokens, fused.rows, fused.cols, variant, weights)
    lm = MambaLm(
        ToyLmConfig(d_llm=cfg.d_llm, n_layers=cfg.lm_layers, max_gen=cfg.max_gen,
                    n_heads=cfg.n_heads, state_size=cfg.state_size),
        seed=cfg.seed,
    )
    result = lm.generate(projected, prompt)
    tokens_per_sec = (
        bench_mod.eval_avg(len(result.tokens), result.total_seconds)
        if result.tokens and result.total_seconds > 0 else 0.0
    )
    return {
        "text": result.text.decode("utf-8", errors="replace"),
        "n_tokens": len(result.tokens),
        "total_seconds": result.total_seconds,
        "tokens_per_sec": tokens_per_sec,
        "timing": result.timing,
        "n_vision_tokens": fused.n_tokens,
    }


def _cmd_demo(args) -> int:
    cfg = load_config(args.config, _config_overrides(args))
    if cfg.variant == "mlp" and (args.scan is not None):
        print("warning: --scan is ignored by the mlp variant", file=sys.stderr)
    if args.print_config:
        print(cfg.to_text(), end="")
    prompt = args.prompt
    if prompt is None:
        prompt = sys.stdin.read() if not sys.stdin.isatty() else "describe"
    summary = run_demo(cfg, args.image, prompt)
    if cfg.timing_path:
        with open(cfg.timing_path, "w") as fh:
            for i, dt in enumerate(summary["timing"]):
                fh.write(json.dumps({"step": i, "seconds": dt}) + "\n")
    print(f"vision tokens: {summary['n_vision_tokens']}")
    print(f"response ({summary['n_tokens']} tokens, "
          f"{summary['total_seconds']:.3f}s, {summary['tokens_per_sec']:.1f} tokens/s):")
    print(summary["text"])
    return EXIT_OK


def _cmd_verify(args) -> int:
    results = run_suites(level=args.level, kernel_fault=args.inject_kernel_fault)
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{r.name:<{width}}  {status}  {r.detail}")
        failures += 0 if r.ok else 1
    print(f"{len(results) - failures}/{len(results)} suites passed")
    return EXIT_OK if failures == 0 else EXIT_NUMERIC


def _cmd_bench(args) -> int:
    records = bench_mod.run_sweep(
        min_len=args.min_len, max_len=args.max_len, dim=args.dim,
        repeats=args.repeats, seed=args.seed,
        progress=lambda r: print(
            f"{r.model_kind:9s} L={r.seq_len:<6d} median {r.t_median * 1e3:9.2f} ms "
            f"({r.tokens_per_sec:.0f} tokens/s)", file=sys.stderr),
    )
    csv_text = bench_mod.records_to_csv(records)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(csv_text)
    else:
        print(csv_text, end="")
    if args.assert_slopes:
        ssm_slope = bench_mod.scaling_slope([r for r in records if r.model_kind == "ssm"])
        attn_slope = bench_mod.scaling_slope(
            [r for r in records if r.model_kind == "attention"]
        )
        lo, hi = bench_mod.SSM_SLOPE_WINDOW
        print(f"ssm slope {ssm_slope:.3f} (want {lo}..{hi}), attention slope "
              f"{attn_slope:.3f} (want >= {bench_mod.ATTENTION_SLOPE_MIN})", file=sys.stderr)
        if not bench_mod.slopes_ok(records):
            return EXIT_NUMERIC
    return EXIT_OK


def _cmd_dump_tensor(args) -> int:
    arr = load_tensor(args.path)
    print(f"shape: {tuple(arr.shape)}")
    print(f"dtype: {arr.dtype}")
    if arr.size:
        print(f"min: {arr.min():.6g}  max: {arr.max():.6g}  mean: {arr.mean():.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssmscan", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    demo = sub.add_parser("demo", help="run the toy multimodal inference path")
    demo.add_argument("--image", required=True, help="binary PGM/PPM input")
    demo.add_argument("--prompt", help="text prompt (reads stdin when omitted)")
    demo.add_argument("--variant", choices=["mlp", "basic", "advanced"])
    demo.add_argument("--scan", choices=["bsm", "csm"])
    demo.add_argument("--seed", type=int)
    demo.add_argument("--encoders", type=int, choices=[1, 2])
    demo.add_argument("--enc-dim", dest="enc_dim", type=int)
    demo.add_argument("--d-llm", dest="d_llm", type=int)
    demo.add_argument("--patch-size", dest="patch_size", type=int)
    demo.add_argument("--lm-layers", dest="lm_layers", type=int)
    demo.add_argument("--max-gen", dest="max_gen", type=int)
    demo.add_argument("--timing-path", dest="timing_path")
    demo.add_argument("--config", help="key = value config file")
    demo.add_argument("--print-config", action="store_true")
    demo.set_defaults(func=_cmd_demo)

    verify = sub.add_parser("verify", help="run the invariant suites")
    verify.add_argument("--level", choices=["fast", "full"], default="fast")
    verify.add_argument("--inject-kernel-fault", type=float, default=0.0,
                        help="debug hook: perturb one kernel element")
    verify.set_defaults(func=_cmd_verify)

    bench = sub.add_parser("bench", help="latency sweep and scaling check")
    bench.add_argument("--min-len", type=int, default=256)
    bench.add_argument("--max-len", type=int, default=8192)
    bench.add_argument("--dim", type=int, default=64)
    bench.add_argument("--repeats", type=int, default=5)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--csv", help="write records here instead of stdout")
    bench.add_argument("--assert", dest="assert_slopes", action="store_true",
                       help="exit nonzero unless scaling slopes hold")
    bench.set_defaults(func=_cmd_bench)

    dump = sub.add_parser("dump-tensor", help="summarize a tensor file")
    dump.add_argument("path")
    dump.set_defaults(func=_cmd_dump_tensor)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, SsmscanError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
