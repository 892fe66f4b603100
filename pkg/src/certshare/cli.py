"""Command-line driver: ``certshare <command> [options]``.

Exit codes: 0 success, 1 sharing verified less than the baseline, 2 invalid
configuration, 3 unreadable or malformed input and output files.
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
from typing import Optional, Sequence

import numpy as np

from . import example
from .backends import check_domain
from .data import (
    FormatError,
    LabeledImage,
    RunRecord,
    load_cifar_binary,
    load_idx,
    load_network,
    template_set_from_dict,
    template_set_to_dict,
    write_report,
)
from .fixtures import fixture_path
from .network import Network
from .offline import ClusterParams, HalfSpaceParams, expand_templates, gen_templates_offline
from .regions import enumerate_patches, geometric_region, linf_region, split_interval, template_masks
from .sharing import (
    SearchParams,
    TemplateSet,
    gen_templates_geometric,
    gen_templates_online,
    verify_baseline,
    verify_with_sharing,
)

EXIT_OK, EXIT_REGRESSION, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
log = logging.getLogger("certshare")


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ helpers


def _floats(text: str, n: Optional[int], name: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--{name}: expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"--{name}: expected {n} values, got {len(vals)}")
    return vals


def _layers(text: str, net: Network) -> list:
    try:
        layers = sorted({int(v) for v in text.split(",")})
    except ValueError:
        raise ConfigError(f"--layers: expected comma-separated integers, got {text!r}") from None
    bad = [k for k in layers if not 1 <= k < net.num_layers]
    if bad:
        raise ConfigError(f"--layers: {bad} not hidden layers of a {net.num_layers}-layer network")
    return layers


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CERTSHARE_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"CERTSHARE_SEED must be an integer, got {env!r}") from None


def _dataset(args) -> list:
    sources = [s for s in (args.mnist_images and "mnist", args.cifar and "cifar", args.data and "data") if s]
    if len(sources) > 1:
        raise ConfigError("give exactly one of --mnist-images/--mnist-labels, --cifar, --data")
    if args.cifar:
        items = load_cifar_binary(args.cifar)
    elif args.data:
        doc = json.loads(Path(args.data).read_text(encoding="utf-8"))
        x = np.asarray(doc["x"], dtype=np.float64)
        items = [LabeledImage(np.clip(v, 0, 1), (v.size,), int(y)) for v, y in zip(x, doc["y"])]
    else:
        images = args.mnist_images or str(fixture_path("strokes-images.idx"))
        labels = args.mnist_labels or (
            str(fixture_path("strokes-labels.idx")) if not args.mnist_images else None)
        if labels is None:
            raise ConfigError("--mnist-images needs --mnist-labels")
        items = load_idx(images, labels)
    if args.count is not None:
        if args.count < 0:
            raise ConfigError("--count must be nonnegative")
        items = items[: args.count]
    return items


def _net(args) -> Network:
    return load_network(args.net or fixture_path("dense_7x20.json"))


def _check_input(net: Network, item: LabeledImage) -> None:
    if item.pixels.size != net.input_dim:
        raise ConfigError(f"inputs have {item.pixels.size} values, network expects {net.input_dim}")


def _params(args) -> SearchParams:
    return SearchParams(
        domain=check_domain(args.domain, ("box", "zono")),
        template_backend=check_domain(args.template_backend) if args.template_backend else None,
    )


def _config(args) -> dict:
    skip = {"func", "out_json", "out_csv", "threads", "repeat"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _emit(args, record: RunRecord) -> None:
    write_report(record, args.out_json, args.out_csv)
    print(json.dumps(record.stats, indent=1))


def _outcomes(report, image: int, offset: int) -> list:
    rows = []
    for o in report.outcomes:
        d = asdict(o)
        d["index"] = offset + o.index
        d["image"] = image
        rows.append(d)
    return rows


def _timed(fn, repeat: int):
    """Result of the first call and mean wall-clock seconds over ``repeat`` calls."""
    total = 0.0
    result = None
    for r in range(max(1, repeat)):
        t0 = time.perf_counter()
        out = fn()
        total += time.perf_counter() - t0
        if r == 0:
            result = out
    return result, total / max(1, repeat)


# ----------------------------------------------------------------- commands


def cmd_example(args) -> int:
    net = load_network(args.net or fixture_path("running_example.json"))
    if net.input_dim != 2 or net.num_layers != 3:
        print("network does not have the running example's 2-input, 3-layer shape")
        return EXIT_REGRESSION
    table = example.build_table(net)
    cols = ("I", "h1", "h2", "N", "verified", "contains h1(x5)")
    for row, cells in table.items():
        parts = [f"{c} = {example.format_intervals(cells[c])}" for c in cols if c in cells]
        print(f"{row:>4}: " + "; ".join(parts))
    bad = example.deviations(table)
    for row, col, got, want in bad:
        print(f"MISMATCH {row} {col}: got {example.format_intervals(got) if got is not None else '-'}, "
              f"expected {example.format_intervals(want)}")
    return EXIT_OK if not bad else EXIT_REGRESSION


def cmd_verify_patch(args) -> int:
    net = _net(args)
    items = _dataset(args)
    layers = _layers(args.layers, net)
    params = _params(args)
    if args.patch < 1:
        raise ConfigError("--patch must be at least 1")
    rows, per_image = [], []
    regression = False
    times = {"generation": 0.0, "baseline": 0.0, "sharing": 0.0, "matching": 0.0, "fallback": 0.0}
    offset = 0
    for n, item in enumerate(items):
        _check_input(net, item)
        if len(item.shape) != 3:
            raise ConfigError("patch runs need image inputs")
        masks = template_masks(args.masks, item.shape)
        if args.m is not None and args.m != len(masks):
            raise ConfigError(f"--m {args.m} does not match the {len(masks)} masks of kind {args.masks!r}")
        regions = enumerate_patches(item.pixels, item.shape, args.patch)
        ts, t_gen = _timed(lambda: gen_templates_online(net, item.pixels, item.label, masks, layers, params),
                           args.repeat)
        base, t_base = _timed(lambda: verify_baseline(net, regions, item.label, params.domain, args.threads),
                              args.repeat)
        share, t_share = _timed(
            lambda: verify_with_sharing(net, regions, item.label, ts, params.domain, threads=args.threads),
            args.repeat)
        if not base.verified <= share.verified:
            regression = True
        times["generation"] += t_gen
        times["baseline"] += t_base
        times["sharing"] += t_share
        times["matching"] += share.timings["matching"]
        times["fallback"] += share.timings["fallback"]
        rows.extend(_outcomes(share, n, offset))
        offset += len(regions)
        per_image.append({
            "image": n,
            "label": item.label,
            "templates": len(ts),
            "baseline_verified": len(base.verified),
            "sharing_verified": len(share.verified),
            "patch_verified": len(share.verified) == len(regions),
            **share.summary(),
        })
    total = max(len(rows), 1)
    matched = sum(1 for r in rows if r["matched_layer"] is not None)
    per_layer = {}
    for r in rows:
        if r["matched_layer"] is not None:
            per_layer[str(r["matched_layer"])] = per_layer.get(str(r["matched_layer"]), 0) + 1
    stats = {
        "images": len(items),
        "regions": len(rows),
        "verified": sum(1 for r in rows if r["verified"]),
        "match_rate": matched / total,
        "match_rate_per_layer": {k: v / total for k, v in sorted(per_layer.items())},
        "patch_verified_images": sum(1 for p in per_image if p["patch_verified"]),
        "superset": not regression,
        "per_image": per_image,
    }
    times["speedup"] = times["baseline"] / times["sharing"] if times["sharing"] > 0 else None
    _emit(args, RunRecord(_config(args), _seed(args), rows, stats, times))
    return EXIT_REGRESSION if regression else EXIT_OK


def cmd_verify_geometric(args) -> int:
    net = _net(args)
    items = _dataset(args)
    layers = _layers(args.layers, net)
    params = _params(args)
    gamma = _floats(args.gamma, 2, "gamma")
    contrast = _floats(args.contrast, 2, "contrast")
    brightness = _floats(args.brightness, 2, "brightness")
    if args.splits < 1 or args.m < 1:
        raise ConfigError("--splits and --m must be at least 1")
    rows, per_image = [], []
    regression = False
    times = {"generation": 0.0, "baseline": 0.0, "sharing": 0.0}
    offset = 0
    for n, item in enumerate(items):
        _check_input(net, item)
        regions = [geometric_region(item.pixels, item.shape, g, contrast, brightness)
                   for g in split_interval(gamma, args.splits)]
        ts, t_gen = _timed(lambda: gen_templates_geometric(net, item.pixels, item.shape, item.label, gamma,
                                                           args.m, layers, params), args.repeat)
        base, t_base = _timed(lambda: verify_baseline(net, regions, item.label, params.domain, args.threads),
                              args.repeat)
        share, t_share = _timed(
            lambda: verify_with_sharing(net, regions, item.label, ts, params.domain, threads=args.threads),
            args.repeat)
        if not base.verified <= share.verified:
            regression = True
        times["generation"] += t_gen
        times["baseline"] += t_base
        times["sharing"] += t_share
        rows.extend(_outcomes(share, n, offset))
        offset += len(regions)
        per_image.append({
            "image": n,
            "label": item.label,
            "templates": len(ts),
            "splits_matched": len(share.matched),
            "splits_verified": len(share.verified),
            "verified": len(share.verified) == len(regions),
        })
    stats = {
        "images": len(items),
        "splits": args.splits,
        "regions": len(rows),
        "splits_matched": sum(p["splits_matched"] for p in per_image),
        "splits_verified": sum(p["splits_verified"] for p in per_image),
        "images_verified": sum(1 for p in per_image if p["verified"]),
        "superset": not regression,
        "per_image": per_image,
    }
    _emit(args, RunRecord(_config(args), _seed(args), rows, stats, times))
    return EXIT_REGRESSION if regression else EXIT_OK


def _split(items: list, fraction: float, seed: int) -> tuple:
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("--train-fraction must lie in (0, 1]")
    order = np.random.default_rng(seed).permutation(len(items))
    cut = int(round(fraction * len(items)))
    return [items[i] for i in sorted(order[:cut])], [items[i] for i in sorted(order[cut:])]


def _offline_layer(args, net: Network) -> int:
    layers = _layers(args.layers, net)
    if len(layers) != 1:
        raise ConfigError("offline runs use a single template layer")
    return layers[0]


def cmd_templates_offline(args) -> int:
    net = load_network(args.net or fixture_path("blobs_net.json"))
    seed = _seed(args)
    items = _dataset(args)
    for item in items:
        _check_input(net, item)
    train, _ = _split(items, args.train_fraction, seed)
    k = _offline_layer(args, net)
    backend = check_domain(args.template_backend or "exact")
    domain = check_domain(args.domain, ("box", "zono"))
    if args.epsilon is None or args.epsilon < 0:
        raise ConfigError("--epsilon is required and must be nonnegative")
    if args.m is None or args.m < 1:
        raise ConfigError("--m must be at least 1 for offline generation")
    hs = HalfSpaceParams(n_hs=args.n_hs)
    cluster = ClusterParams(avg_size=args.cluster_size, seed=seed)
    xs = [it.pixels for it in train]
    ys = [it.label for it in train]
    sets = []
    t0 = time.perf_counter()
    for label in sorted(set(ys)):
        ts, groups = gen_templates_offline(
            net, xs, ys, lambda x: linf_region(x, args.epsilon, clip=True), k, args.m, label,
            backend=backend, hs=hs, cluster=cluster, domain=domain)
        if args.expand:
            factors = np.full(net.dim_at(k), args.expand)
            ts = expand_templates(net, ts, factors, label, hs=hs, max_iters=args.expand_iters)
        if not len(ts):
            log.warning("no templates for label %d", label)
        sets.append(template_set_to_dict(ts, net))
    elapsed = time.perf_counter() - t0
    doc = {"format": "certshare-offline/1", "layer": k, "epsilon": args.epsilon, "sets": sets}
    if args.out_json is None:
        raise ConfigError("--out-json is required to store the template sets")
    Path(args.out_json).write_text(json.dumps(doc, indent=1), encoding="utf-8")
    print(json.dumps({"labels": len(sets), "templates": sum(len(s["templates"]) for s in sets),
                      "train": len(train), "seconds": elapsed}, indent=1))
    return EXIT_OK


def cmd_verify_offline(args) -> int:
    net = load_network(args.net or fixture_path("blobs_net.json"))
    seed = _seed(args)
    if not args.templates:
        raise ConfigError("--templates is required")
    try:
        doc = json.loads(Path(args.templates).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{args.templates}: invalid JSON ({exc})") from exc
    sets = {}
    for s in doc.get("sets", []):
        ts = template_set_from_dict(s, net)
        sets[ts.label] = ts
    eps = doc.get("epsilon") if args.epsilon is None else args.epsilon
    items = _dataset(args)
    for item in items:
        _check_input(net, item)
    _, held = _split(items, args.train_fraction, seed)
    domain = check_domain(args.domain, ("box", "zono"))
    rows = []
    regression = False
    t_base = t_share = 0.0
    for n, item in enumerate(held):
        ts = sets.get(item.label, TemplateSet(label=item.label))
        regions = [linf_region(item.pixels, eps, clip=True)]
        t0 = time.perf_counter()
        base = verify_baseline(net, regions, item.label, domain)
        t1 = time.perf_counter()
        share = verify_with_sharing(net, regions, item.label, ts, domain)
        t2 = time.perf_counter()
        t_base += t1 - t0
        t_share += t2 - t1
        if not base.verified <= share.verified:
            regression = True
        rows.extend(_outcomes(share, n, n))
    total = max(len(rows), 1)
    stats = {
        "held_out": len(held),
        "matched": sum(1 for r in rows if r["matched_layer"] is not None),
        "verified": sum(1 for r in rows if r["verified"]),
        "match_rate": sum(1 for r in rows if r["matched_layer"] is not None) / total,
        "superset": not regression,
    }
    _emit(args, RunRecord(_config(args), seed, rows, stats, {"baseline": t_base, "sharing": t_share}))
    return EXIT_REGRESSION if regression else EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="certshare", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, default_layers="2,3"):
        p.add_argument("--net", help="network JSON (defaults to a shipped fixture)")
        p.add_argument("--mnist-images")
        p.add_argument("--mnist-labels")
        p.add_argument("--cifar", help="CIFAR-10 binary batch")
        p.add_argument("--data", help="JSON file with 'x' (vectors in [0,1]) and 'y' (labels)")
        p.add_argument("--count", type=int)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--layers", default=default_layers)
        p.add_argument("--m", type=int)
        p.add_argument("--domain", default="zono", choices=["box", "zono", "zonotope"])
        p.add_argument("--template-backend", choices=["box", "zono", "zonotope", "exact"])
        p.add_argument("--seed", type=int)
        p.add_argument("--out-json")
        p.add_argument("--out-csv")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--repeat", type=int, default=1)

    p = sub.add_parser("example", help="print and check the running-example propagation table")
    p.add_argument("--net", help="running-example network JSON")
    p.set_defaults(func=cmd_example)

    p = sub.add_parser("verify-patch", help="2x2 patch verification with and without templates")
    common(p)
    p.add_argument("--patch", type=int, default=2)
    p.add_argument("--masks", default="linf", choices=["linf", "center-border", "grid"])
    p.set_defaults(func=cmd_verify_patch, count=10)

    p = sub.add_parser("verify-geometric", help="rotation/contrast/brightness splits with templates")
    common(p)
    p.add_argument("--gamma", default="-2,2", help="rotation interval in degrees")
    p.add_argument("--contrast", default="0.9,1.1")
    p.add_argument("--brightness", default="-0.01,0.01")
    p.add_argument("--splits", type=int, default=4)
    p.set_defaults(func=cmd_verify_geometric, count=10, m=3)

    for name, func, helptext in (
        ("templates-offline", cmd_templates_offline, "generate templates over a training split"),
        ("verify-offline", cmd_verify_offline, "match held-out inputs against offline templates"),
    ):
        p = sub.add_parser(name, help=helptext)
        common(p, default_layers="1")
        p.add_argument("--train-fraction", type=float, default=0.8)
        p.add_argument("--templates", help="template file written by templates-offline")
        p.add_argument("--n-hs", type=int, default=30)
        p.add_argument("--cluster-size", type=int, default=50)
        p.add_argument("--expand", type=float, help="per-dimension expansion factor, e.g. 1.05")
        p.add_argument("--expand-iters", type=int, default=10)
        p.set_defaults(func=func, domain="box", epsilon=0.02, m=4)
    return parser


def _default_data(args) -> None:
    # Offline commands default to the shipped blobs dataset.
    if args.command in ("templates-offline", "verify-offline") and not (
        args.mnist_images or args.cifar or args.data
    ):
        args.data = str(fixture_path("blobs.json"))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command != "example":
            if args.threads < 1 or args.repeat < 1:
                raise ConfigError("--threads and --repeat must be at least 1")
            _default_data(args)
        return args.func(args)
    except (FormatError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
