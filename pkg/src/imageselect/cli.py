"""``imageselect`` command line.

Exit codes: 0 success, 1 domain error (bad input, missing file), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import (
    SINGLE_METHODS,
    DescriptorCache,
    TransformLimits,
    calibrate_ensemble,
    default_thresholds,
    evaluate,
    generate_benchmark,
    load_benchmark,
    sweep,
    write_benchmark,
)
from .causal import analyze, fit_control, load_series_table, series_from_table, wearout_scan
from .comparator import ComparatorConfig, compare
from .dedup import TypedImage, cluster_group
from .descriptor import compute_descriptor, decode_image
from .selection import OrderedImage, RemovedImage, SelectionResult, aggregate, load_manifest, run_pipeline
from .service import ServiceConfig, serve

RECORD_VERSION = 1


class CliError(Exception):
    """Domain failure reported with exit code 1."""


def _emit(args, record: dict, human: str) -> None:
    if args.format == "record":
        print(json.dumps({"v": RECORD_VERSION, **record}, sort_keys=True))
    else:
        print(human)


def _require(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"file not found: {path}")
    return p


def _load_config(args) -> ServiceConfig:
    if args.config:
        _require(args.config)
    return ServiceConfig.load(args.config)


def parse_thresholds(text: str) -> list[float]:
    """``0..20`` (integer range), ``0..1:0.05`` (stepped range) or ``1,2,5`` (explicit list)."""
    if ".." in text:
        lo, rest = text.split("..", 1)
        hi, _, step = rest.partition(":")
        lo_f, hi_f, step_f = float(lo), float(hi), float(step) if step else 1.0
        if step_f <= 0 or hi_f < lo_f:
            raise ValueError(f"bad threshold range {text!r}")
        n = int(np.floor((hi_f - lo_f) / step_f + 1e-9)) + 1
        return [round(lo_f + i * step_f, 10) for i in range(n)]
    return sorted(float(v) for v in text.split(",") if v.strip())


def cmd_hash(args) -> None:
    for path in args.images:
        desc = compute_descriptor(decode_image(_require(path)), not args.no_edge_enhance)
        rec = {"image": path, **desc.to_record()}
        human = f"{path}\n  ahash {desc.ahash}  phash {desc.phash}  dhash {desc.dhash}  whash {desc.whash}  {desc.width}x{desc.height}"
        if args.format == "record":
            print(json.dumps({"v": RECORD_VERSION, **rec}, sort_keys=True))
        else:
            print(human)


def _comparator(args) -> ComparatorConfig:
    cfg = _load_config(args).comparator if args.config else ComparatorConfig()
    return cfg.with_overrides(
        phash_threshold=args.phash_threshold, dhash_threshold=args.dhash_threshold, hist_threshold=args.hist_threshold
    )


def cmd_compare(args) -> None:
    cfg = _comparator(args)
    a = compute_descriptor(decode_image(_require(args.left)), cfg.edge_enhance_dhash)
    b = compute_descriptor(decode_image(_require(args.right)), cfg.edge_enhance_dhash)
    report = compare(a, b, cfg)
    lines = [f"{args.left} vs {args.right}: {report.final}"]
    for c in report.components:
        lines.append(f"  {c.name:<10} distance {c.distance:<10.4g} threshold {c.threshold:<8g} {'dup' if c.is_duplicate else 'diff'}")
    _emit(args, report.to_record(), "\n".join(lines))


def cmd_dedup(args) -> None:
    """Near-duplicate clustering only: every image of an item is one group."""
    cfg = _comparator(args)
    for item in load_manifest(_require(args.manifest)):
        images, removed = aggregate(item.sources)
        typed = [
            TypedImage(im.image_id, compute_descriptor(decode_image(im.data), cfg.edge_enhance_dhash), "any", im.supplier, im.fetch_order)
            for im in images
        ]
        clusters = cluster_group(typed, cfg) if typed else []
        result = SelectionResult(item.item_id, removed=list(removed))
        for k, cl in enumerate(clusters):
            for m in cl.members:
                if m != cl.representative:
                    result.removed.append(RemovedImage(m, "near_duplicate", f"cluster {k}, kept {cl.representative}"))
        result.ordered = [OrderedImage(cl.representative, None, str(k), k + 1) for k, cl in enumerate(clusters)]
        result.stats = {"input": len(images) + len(removed), "clusters": len(clusters)}
        _emit(args, result.to_record(), result.table())


def cmd_select(args) -> None:
    cfg = _load_config(args)
    deps = cfg.deps()
    for item in load_manifest(_require(args.manifest)):
        for _, refs in item.sources:
            for ref in refs:
                _require(ref.ref)
        result = run_pipeline(item, deps)
        _emit(args, result.to_record(), result.table())


def cmd_calibrate(args) -> None:
    pairs = load_benchmark(_require(args.pairs))
    cfg = _comparator(args)
    cache = DescriptorCache(cfg.edge_enhance_dhash)
    if args.method == "ensemble":
        tuned, metrics = calibrate_ensemble(pairs, base=cfg, cache=cache)
        rec = {"method": "ensemble", "config": tuned.to_dict(), "metrics": metrics.to_record(), "seed": args.seed}
        human = (
            f"ensemble optimum: phash {tuned.phash_threshold}, dhash {tuned.dhash_threshold}, "
            f"hist {tuned.hist_threshold:g}\n  precision {metrics.precision:.3f} recall {metrics.recall:.3f} f1 {metrics.f1:.3f}"
        )
        _emit(args, rec, human)
        return
    thresholds = parse_thresholds(args.thresholds) if args.thresholds else default_thresholds(args.method)
    report = sweep(pairs, args.method, thresholds, cache)
    _emit(args, {**report.to_record(), "seed": args.seed}, report.table())


def cmd_benchgen(args) -> None:
    if args.seeds_dir:
        paths = sorted(p for p in _require(args.seeds_dir).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
        seeds = [decode_image(p) for p in paths]
    else:
        from .synthetic import random_product, render

        seeds = [render(random_product(s), args.size, args.size) for s in range(args.synthetic)]
    if len(seeds) < 2:
        raise CliError("benchgen needs at least two seed images")
    limits = TransformLimits()
    pairs = generate_benchmark(seeds, args.pairs, args.seed, limits)
    index = write_benchmark(pairs, args.out)
    n_dup = sum(p.label == "duplicate" for p in pairs)
    rec = {"index": str(index), "pairs": len(pairs), "duplicates": n_dup, "seeds": len(seeds), "seed": args.seed}
    _emit(args, rec, f"wrote {len(pairs)} pairs ({n_dup} duplicate) from {len(seeds)} seeds to {index} [seed {args.seed}]")


def cmd_causal(args) -> None:
    dates, data = load_series_table(_require(args.series))
    controls = [c for c in args.controls.split(",") if c] if args.controls else None
    try:
        treated, ctrl = series_from_table(dates, data, args.treated, args.intervention, controls)
    except KeyError as exc:
        raise CliError(str(exc)) from exc
    model = fit_control(treated, ctrl)
    est = analyze(treated, ctrl, args.boot, args.seed, model)
    rec = {"treated": treated.name, "r_squared": round(model.r_squared, 6), "seed": args.seed, "n_boot": args.boot}
    rec["estimate"] = est.to_record()
    lines = [
        f"{treated.name}: relative effect {est.relative_effect:+.2f}% "
        f"(95% interval {est.interval[0]:+.2f}..{est.interval[1]:+.2f}), prob_causal {est.prob_causal:.1f}%",
        f"  pre-period R^2 {model.r_squared:.3f}, {args.boot} bootstrap replicates, seed {args.seed}",
    ]
    if args.windows:
        scan = wearout_scan(treated, ctrl, model, [int(w) for w in args.windows.split(",")], args.boot, args.seed)
        rec["wearout"] = [{"weeks": w, **e.to_record()} for w, e in scan]
        lines.append("  weeks  effect%  prob%")
        lines += [f"  {w:>5}  {e.relative_effect:>7.2f}  {e.prob_causal:>5.1f}" for w, e in scan]
    if args.plot_data:
        Path(args.plot_data).write_text(json.dumps(est.plot_data()))
        lines.append(f"  plot data written to {args.plot_data}")
    _emit(args, rec, "\n".join(lines))


def cmd_serve(args) -> None:
    cfg = _load_config(args)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    serve(cfg, args.host, args.port)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config (thresholds, profiles, models, fetch limits)")
    common.add_argument("--format", choices=("human", "record"), default="human", help="output style (default human)")
    common.add_argument("--seed", type=int, default=0, help="random seed for randomized steps (default 0)")
    thresholds = argparse.ArgumentParser(add_help=False)
    thresholds.add_argument("--phash-threshold", type=int)
    thresholds.add_argument("--dhash-threshold", type=int)
    thresholds.add_argument("--hist-threshold", type=float)

    parser = argparse.ArgumentParser(prog="imageselect", description="Catalog image selection tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("hash", parents=[common], help="print image descriptors")
    p.add_argument("images", nargs="+")
    p.add_argument("--no-edge-enhance", action="store_true", help="plain dHash without the sharpening pre-pass")
    p.set_defaults(fn=cmd_hash)

    p = sub.add_parser("compare", parents=[common, thresholds], help="ensemble verdict for two images")
    p.add_argument("left")
    p.add_argument("right")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("dedup", parents=[common, thresholds], help="cluster near-duplicates per manifest item")
    p.add_argument("manifest")
    p.set_defaults(fn=cmd_dedup)

    p = sub.add_parser("select", parents=[common], help="run the full selection pipeline on a manifest")
    p.add_argument("manifest")
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("calibrate", parents=[common, thresholds], help="sweep thresholds over a pair benchmark")
    p.add_argument("pairs", help="JSON-lines benchmark index")
    p.add_argument("--method", choices=SINGLE_METHODS + ("ensemble",), default="phash")
    p.add_argument("--thresholds", help="e.g. 0..20, 0..1:0.05 or 2,4,8 (default: method's standard sweep)")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("benchgen", parents=[common], help="generate a labelled pair benchmark")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--seeds-dir", help="directory of seed images")
    src.add_argument("--synthetic", type=int, default=32, help="number of synthetic seed products (default 32)")
    p.add_argument("--size", type=int, default=320, help="synthetic seed size in pixels")
    p.add_argument("--pairs", type=int, default=400)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_benchgen)

    p = sub.add_parser("causal", parents=[common], help="synthetic-control effect estimate from a CSV")
    p.add_argument("series", help="CSV with a date column and one column per series")
    p.add_argument("--treated", required=True)
    p.add_argument("--intervention", required=True, help="first post-period date (or row index)")
    p.add_argument("--controls", help="comma-separated control columns (default: all others)")
    p.add_argument("--boot", type=int, default=500, help="bootstrap replicates")
    p.add_argument("--windows", help="comma-separated cumulative week windows for a wear-out scan")
    p.add_argument("--plot-data", help="write actual/counterfactual/difference series to this JSON file")
    p.set_defaults(fn=cmd_causal)

    p = sub.add_parser("serve", parents=[common], help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, help="listen port (default from config / IMAGESELECT_PORT)")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


run_cli = main

if __name__ == "__main__":
    sys.exit(main())
