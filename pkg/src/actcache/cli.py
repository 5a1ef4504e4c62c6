"""Command line entry point.

Subcommands: build (tensor dump -> cache file), inspect (header/index,
checksum verification), bench (codec ratios and timings), profile
(ratio/time per chunk size), e2e (synthetic end-to-end accuracy report),
cost-report (stage cost CSV -> totals). Reports are CSV; when an --out
path is given a PNG figure of the same rows is rendered next to it unless
--no-figures is passed.

Exit codes: 0 success, 2 missing input file, 3 corruption or decode
failure, 64 invalid usage, 1 other errors.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import reporting
from .cache import build_cache, open_cache
from .channel_aug import plan_channel_augmentation
from .codec import CodecParams, compression_ratio, decode, encode
from .dumps import read_labels, read_tensor_dump
from .e2e import E2EConfig, report_rows, run_e2e
from .errors import (
    ActCacheError,
    CorruptionError,
    DecodeError,
    FormatError,
    InvalidConfigError,
)
from .policy import StageCost, cost_totals, profile_compressibility
from .refnet import forward, gen_synthetic_dataset, make_refnet
from .token_aug import plan_token_augmentation_batch

EXIT_OK = 0
EXIT_MISSING = 2
EXIT_CORRUPT = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}") from exc


def _build_parser() -> _Parser:
    parser = _Parser(prog="actcache", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="compress a raw tensor dump into a cache file")
    p.add_argument("--features", required=True, help="raw tensor dump of the activations")
    p.add_argument("--labels", required=True, help="text file, one integer label per line")
    p.add_argument("--out", required=True, help="cache file to write")
    p.add_argument("--tau", type=float, default=1e-3, help="absolute error bound (0 = lossless)")
    p.add_argument("--chunk-size", type=int, default=2, help="samples per compressed chunk")
    p.add_argument("--transform", choices=("block", "none"), default="block")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--aug", choices=("none", "channel", "token"), default="none")
    p.add_argument("--gamma", type=float, default=0.25, help="channel fraction for --aug channel")
    p.add_argument("--alpha", type=float, default=0.25, help="token fraction for --aug token")
    p.add_argument("--aug-features", help="dump of the same samples from augmented inputs")

    p = sub.add_parser("inspect", help="print header and index, optionally verify checksums")
    p.add_argument("path")
    p.add_argument("--verify", action="store_true", help="check file and chunk checksums")

    p = sub.add_parser("bench", help="codec compression ratio and throughput")
    _data_source_flags(p)
    p.add_argument("--taus", type=_float_list, default=[0.0, 1e-3, 1e-2, 1e-1],
                   help="comma-separated tolerances to sweep")
    p.add_argument("--chunk-size", type=int, default=2)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="CSV report path")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("profile", help="compression ratio and time per chunk size")
    _data_source_flags(p)
    p.add_argument("--tau", type=float, default=1e-2)
    p.add_argument("--chunks", type=_int_list, default=[1, 2, 4, 8, 16],
                   help="comma-separated chunk sizes")
    p.add_argument("--out", help="CSV report path")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("e2e", help="synthetic end-to-end accuracy report")
    p.add_argument("--tau", type=float, default=1e-2)
    p.add_argument("--gamma", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--seed-count", type=int, default=3)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=600)
    p.add_argument("--stage", type=int, choices=(1, 2), default=2)
    p.add_argument("--chunk-size", type=int, default=2)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.3)
    p.add_argument("--out", help="CSV report path")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("cost-report", help="stage cost CSV -> per-stage and total costs")
    p.add_argument("--stages", required=True,
                   help="CSV with columns stage,flops_per_sample,memory,epochs,samples")
    p.add_argument("--out", help="CSV report path")
    p.add_argument("--no-figures", action="store_true")
    return parser


def _data_source_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--features", help="raw tensor dump; omit to generate synthetic features")
    p.add_argument("--n", type=int, default=64, help="synthetic sample count")
    p.add_argument("--stage", type=int, choices=(1, 2), default=1, help="synthetic feature depth")
    p.add_argument("--size", type=int, default=32, help="synthetic image size")
    p.add_argument("--seed", type=int, default=0)


def _load_or_generate(args) -> np.ndarray:
    if args.features:
        return read_tensor_dump(args.features)
    images, _ = gen_synthetic_dataset(args.seed, args.n, size=args.size)
    net = make_refnet(args.seed + 1)
    return forward(net, images, args.stage)


def _maybe_figure(enabled: bool, render, rows, out_path) -> None:
    if not enabled or out_path is None:
        return
    fig_path = reporting.figure_path_for(out_path)
    render(rows, fig_path)
    print(f"figure written to {fig_path}")


def _cmd_build(args) -> int:
    features = read_tensor_dump(args.features)
    labels = read_labels(args.labels)
    if labels.shape[0] != features.shape[0]:
        raise InvalidConfigError(
            f"{features.shape[0]} samples but {labels.shape[0]} labels"
        )
    channel_aug = token_aug = None
    if args.aug != "none":
        if not args.aug_features:
            raise InvalidConfigError("--aug requires --aug-features")
        aug_feats = read_tensor_dump(args.aug_features)
        if aug_feats.shape != features.shape:
            raise InvalidConfigError("augmented feature dump shape differs from --features")
        if args.aug == "channel":
            channel_aug = plan_channel_augmentation(
                features, aug_feats, args.gamma, seed=args.seed
            )
        else:
            token_aug = plan_token_augmentation_batch(features, aug_feats, args.alpha)
    header = build_cache(
        args.out, features, labels,
        tolerance=args.tau, chunk_size=args.chunk_size, transform=args.transform,
        seed=args.seed, channel_aug=channel_aug, token_aug=token_aug,
        workers=args.workers,
    )
    out_size = Path(args.out).stat().st_size
    print(
        f"built {args.out}: n={header.sample_count} k={header.chunk_size} "
        f"tau={header.params.tolerance:g} chunks={header.chunk_count} "
        f"bytes={out_size} ratio={out_size / features.nbytes:.4f}"
    )
    return EXIT_OK


def _cmd_inspect(args) -> int:
    with open_cache(args.path, verify=False) as handle:
        h = handle.header
        print(f"cache file      {args.path}")
        print(f"version         {h.version}")
        print(f"samples (n)     {h.sample_count}")
        print(f"chunk size (k)  {h.chunk_size}")
        print(f"chunk count     {h.chunk_count}")
        print(f"sample shape    {'x'.join(str(d) for d in h.sample_shape)}")
        print(f"tau             {h.params.tolerance:g}")
        print(f"transform       {h.params.transform}")
        print(f"aug kind        {h.aug_kind}")
        print(f"label width     {h.label_width}")
        print(f"seed            {h.seed}")
        total = sum(e.length for e in handle.index)
        print(f"payload bytes   {total}")
        if handle.aug_index:
            print(f"aug bytes       {sum(e.length for e in handle.aug_index)}")
        if args.verify:
            handle.verify()
            print("checksums       all valid")
    return EXIT_OK


def _cmd_bench(args) -> int:
    data = _load_or_generate(args)
    params_rows = []
    n = data.shape[0]
    k = max(1, args.chunk_size)
    spans = [(i, min(n, i + k)) for i in range(0, n, k)]
    for tau in args.taus:
        params = CodecParams(tolerance=tau)
        t0 = time.perf_counter()
        if args.workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=args.workers) as pool:
                chunks = list(pool.map(lambda s: encode(list(data[s[0]:s[1]]), params), spans))
        else:
            chunks = [encode(list(data[first:end]), params) for first, end in spans]
        t_enc = time.perf_counter() - t0
        t0 = time.perf_counter()
        for chunk in chunks:
            decode(chunk)
        t_dec = time.perf_counter() - t0
        raw = sum(c.raw_bytes for c in chunks)
        enc = sum(c.encoded_bytes for c in chunks)
        mb = raw / 1e6
        params_rows.append({
            "tau": f"{tau:g}", "chunk_size": k, "ratio": f"{enc / raw:.6f}",
            "encode_s": f"{t_enc:.6f}", "decode_s_per_sample": f"{t_dec / n:.8f}",
            "encode_mb_s": f"{mb / t_enc:.2f}", "decode_mb_s": f"{mb / t_dec:.2f}",
        })
        print(f"tau={tau:g}: ratio={enc / raw:.4f} encode={t_enc:.3f}s decode={t_dec:.3f}s")
    if args.out:
        reporting.write_csv(
            args.out,
            ["tau", "chunk_size", "ratio", "encode_s", "decode_s_per_sample",
             "encode_mb_s", "decode_mb_s"],
            params_rows,
        )
        print(f"report written to {args.out}")
    _maybe_figure(not args.no_figures, reporting.bench_figure, params_rows, args.out)
    return EXIT_OK


def _cmd_profile(args) -> int:
    data = _load_or_generate(args)
    rows = profile_compressibility(data, args.tau, args.chunks)
    csv_rows = [
        {
            "chunk_size": r.chunk_size, "ratio": f"{r.ratio:.6f}",
            "encode_s": f"{r.encode_s:.6f}",
            "decode_s_per_sample": f"{r.decode_s_per_sample:.8f}",
        }
        for r in rows
    ]
    for r in rows:
        print(
            f"chunk_size={r.chunk_size}: ratio={r.ratio:.4f} "
            f"encode={r.encode_s:.3f}s decode/sample={r.decode_s_per_sample:.6f}s"
        )
    if args.out:
        reporting.write_csv(
            args.out, ["chunk_size", "ratio", "encode_s", "decode_s_per_sample"], csv_rows
        )
        print(f"report written to {args.out}")
    _maybe_figure(not args.no_figures, reporting.profile_figure, csv_rows, args.out)
    return EXIT_OK


def _cmd_e2e(args) -> int:
    config = E2EConfig(
        tolerance=args.tau, gamma=args.gamma, seed=args.seed,
        seed_count=args.seed_count, n_train=args.n_train, n_test=args.n_test,
        stage=args.stage, chunk_size=args.chunk_size, epochs=args.epochs,
        learning_rate=args.lr,
    )
    report = run_e2e(config)
    rows = report_rows(report)
    for r in report.results:
        print(
            f"seed {r.seed}: raw={r.acc_raw:.4f} compressed={r.acc_compressed:.4f} "
            f"naive_flip={r.acc_naive_flip:.4f} sim_aug={r.acc_sim_aug:.4f} "
            f"cache_ratio={r.cache_ratio:.4f}"
        )
    print(
        f"means: raw={report.mean_raw:.4f} compressed={report.mean_compressed:.4f} "
        f"sim_aug={report.mean_sim_aug:.4f}"
    )
    gap = abs(report.mean_compressed - report.mean_raw)
    print(f"compressed within 1 point of raw: {gap <= 0.01 + 1e-12} (gap {gap * 100:.2f} pts)")
    print(
        f"sim-aware aug >= naive flip on flipped test set: "
        f"{report.sim_aug_wins}/{len(report.results)} seeds"
    )
    if args.out:
        reporting.write_csv(
            args.out,
            ["seed", "acc_raw", "acc_compressed", "acc_naive_flip", "acc_sim_aug", "cache_ratio"],
            rows,
        )
        print(f"report written to {args.out}")
    _maybe_figure(not args.no_figures, reporting.e2e_figure, rows, args.out)
    return EXIT_OK


def _cmd_cost_report(args) -> int:
    in_rows = reporting.read_csv(args.stages)
    if not in_rows:
        raise InvalidConfigError(f"no stage rows in {args.stages}")
    try:
        stages = [
            StageCost(
                stage_id=int(r["stage"]),
                flops_per_sample=float(r["flops_per_sample"]),
                memory=float(r["memory"]),
                epochs=float(r["epochs"]),
                samples=float(r["samples"]),
            )
            for r in in_rows
        ]
    except (KeyError, ValueError) as exc:
        raise InvalidConfigError(f"bad stage CSV: {exc}") from exc
    totals = cost_totals(stages)
    out_rows = [
        {
            "stage": st.stage_id, "flops_total": f"{st.total_flops:.6g}",
            "avg_mem": f"{st.memory:.6g}", "min_mem": f"{st.memory:.6g}",
        }
        for st in stages
    ]
    out_rows.append({
        "stage": "total", "flops_total": f"{totals.total_flops:.6g}",
        "avg_mem": f"{totals.average_memory:.6g}",
        "min_mem": f"{totals.minimum_memory:.6g}",
    })
    print(
        f"total FLOPs {totals.total_flops:.4g}, average memory "
        f"{totals.average_memory:.4g}, minimum memory {totals.minimum_memory:.4g}"
    )
    if args.out:
        reporting.write_csv(args.out, ["stage", "flops_total", "avg_mem", "min_mem"], out_rows)
        print(f"report written to {args.out}")
    _maybe_figure(not args.no_figures, reporting.cost_figure, out_rows, args.out)
    return EXIT_OK


_COMMANDS = {
    "build": _cmd_build,
    "inspect": _cmd_inspect,
    "bench": _cmd_bench,
    "profile": _cmd_profile,
    "e2e": _cmd_e2e,
    "cost-report": _cmd_cost_report,
}


def run(argv) -> int:
    """Parse argv and run one subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error ({args.command}): {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (CorruptionError, DecodeError, FormatError) as exc:
        print(f"error ({args.command}): {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except ActCacheError as exc:
        print(f"error ({args.command}): {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
