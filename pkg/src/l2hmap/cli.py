"""Command-line entry point exposing the whole workflow.

Subcommands: synth, fuse, train, predict, assess, pipeline, net. Each
maps onto the library operations; `pipeline` chains them end to end on a
synthetic scene. Every run writes a run_manifest.json with the resolved
config hash, seeds, and input checksums. The log level is controlled by
the L2H_LOG environment variable (error, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import assessment, config as cfgmod, fusion, render, synth
from .errors import ConfigError, L2HError
from .grid import DEFAULT_SCHEME, read_grid, read_lines, write_grid, write_lines
from .network import describe, load_params, save_params
from .training import epoch_means, make_pairs, predict_tiled, train

log = logging.getLogger("l2h")


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("L2H_LOG", "info"), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)


def _scheme_for(num_classes):
    return DEFAULT_SCHEME.subset(num_classes)


# ------------------------------ synth ---------------------------------

def cmd_synth(args):
    cfg = cfgmod.load_config(args.spec)
    spec = cfgmod.scene_spec(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image, truth, products, roads = synth.generate(spec)
    write_grid(image, out / "image.lcr")
    write_grid(truth, out / "truth.lcr")
    for name, prod in zip("abc", products):
        write_grid(prod, out / f"product_{name}.lcr")
    write_lines(roads, out / "roads.lines")
    cfgmod.write_manifest(out / "run_manifest.json", "synth", cfg,
                          [args.spec] if args.spec else [])
    log.info("scene %dx%d with %d classes written to %s",
             spec.width, spec.height, spec.num_classes, out)
    return 0


# ------------------------------ fuse ----------------------------------

def _load_table(path, fallback_classes, name):
    if path:
        return fusion.read_table(path, name)
    return fusion.HarmonizationTable.identity(fallback_classes, f"identity-{name}")


def cmd_fuse(args):
    a, b, c = read_grid(args.a), read_grid(args.b), read_grid(args.c)
    num_classes = args.classes or DEFAULT_SCHEME.num_classes
    tables = [_load_table(p, num_classes, n)
              for p, n in ((args.table_a, "a"), (args.table_b, "b"), (args.table_c, "c"))]
    lines = read_lines(args.roads) if args.roads else None
    labels, report = fusion.fuse(a, b, c, tables, lines,
                                 width_px=args.road_width, fill_only=args.fill_only)
    write_grid(labels, args.out)
    if args.report:
        _write_json(report.to_dict(), args.report)
    inputs = [args.a, args.b, args.c] + [p for p in
                                         (args.roads, args.table_a, args.table_b,
                                          args.table_c) if p]
    manifest_path = Path(args.out).with_suffix(".manifest.json")
    cfgmod.write_manifest(manifest_path, "fuse",
                          {"road_width_px": args.road_width,
                           "roads_fill_only": args.fill_only}, inputs)
    log.info("fused labels: %d/%d stable pixels, %d road pixels",
             report.stable_pixels, report.total_pixels, report.road_pixels)
    return 0


# ------------------------------ train ---------------------------------

def _infer_classes(labels_grid):
    return int(labels_grid.band(0).max())


def cmd_train(args):
    cfg = cfgmod.load_config(args.config)
    image = read_grid(args.image)
    labels = read_grid(args.labels)
    tcfg = cfgmod.train_config(cfg)
    ncfg = cfgmod.net_config(cfg, num_classes=cfg["net_classes"] or _infer_classes(labels),
                             input_channels=image.bands)
    pairs = make_pairs(image, labels, tcfg)
    log.info("training on %d patches of %d px, %d epochs",
             len(pairs), tcfg.patch_size, tcfg.epochs)
    params, tlog = train(pairs, tcfg, ncfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_params(params, ncfg, out / "checkpoint.l2hp")
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as f:
        for entry in tlog:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    render.render_training_log(tlog, out / "training_curves.png")
    cfgmod.write_manifest(out / "run_manifest.json", "train", cfg,
                          [args.image, args.labels]
                          + ([args.config] if args.config else []))
    means = epoch_means(tlog)
    log.info("masked CE per epoch: first %.4f last %.4f", means[0], means[-1])
    return 0


# ------------------------------ predict -------------------------------

def cmd_predict(args):
    params, ncfg = load_params(args.checkpoint)
    image = read_grid(args.image)
    overrides = {"mosaic_tile": args.tile, "mosaic_overlap": args.overlap,
                 "mosaic_blend": args.blend}
    cfg = cfgmod.load_config(args.config, overrides)
    policy = cfgmod.mosaic_policy(cfg)
    class_map, max_prob = predict_tiled(params, ncfg, image, policy,
                                        threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_grid(class_map, out / "class_map.lcr")
    write_grid(max_prob, out / "max_prob.lcr")
    scheme = _scheme_for(ncfg.num_classes)
    render.render_class_map(class_map, scheme, out / "class_map.png",
                            out / "legend.json")
    cfgmod.write_manifest(out / "run_manifest.json", "predict", cfg,
                          [args.checkpoint, args.image])
    log.info("predicted %dx%d map into %s", class_map.width, class_map.height, out)
    return 0


# ------------------------------ assess --------------------------------

def _require(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise ConfigError(f"assess {args.mode} requires --{n}")


def cmd_assess(args):
    if args.mode == "matrix":
        _require(args, "map", "reference", "out")
        cmap = read_grid(args.map)
        ref = read_grid(args.reference)
        scheme = _scheme_for(args.classes or max(_infer_classes(cmap),
                                                 _infer_classes(ref)))
        points = assessment.sample_points(cmap, args.points, args.seed,
                                          strategy=args.strategy)
        assessment.lookup_classes(ref, points, target="reference")
        cm = assessment.confusion(points, scheme)
        assessment.write_confusion_csv(cm, args.out)
        if args.fig:
            render.render_confusion(cm, args.fig)
        log.info("confusion matrix over %d points written to %s", cm.total, args.out)
        return 0
    if args.mode == "metrics":
        _require(args, "matrix")
        cm = assessment.read_confusion_csv(args.matrix)
        m = assessment.metrics(cm)
        print(f"OA {m['oa'] * 100:.2f}")
        print(f"Kappa {m['kappa']:.4f}")
        if args.out:
            _write_json(m, args.out)
        if args.fig:
            render.render_confusion(cm, args.fig)
        return 0
    if args.mode == "areas":
        _require(args, "map", "regions", "reference", "out")
        cmap = read_grid(args.map)
        regions = read_grid(args.regions)
        ref = assessment.read_reference_csv(args.reference)
        stats = assessment.area_misestimation(cmap, regions, ref)
        scheme = _scheme_for(args.classes or _infer_classes(cmap))
        assessment.write_area_csv(stats, scheme, args.out)
        if args.fig:
            render.render_misestimation(stats, scheme, args.fig)
        log.info("area stats for %d regions written to %s", len(stats), args.out)
        return 0
    raise L2HError(f"unknown assess mode {args.mode!r}")


# ------------------------------ net -----------------------------------

def cmd_net(args):
    if args.mode != "inspect":
        raise L2HError(f"unknown net mode {args.mode!r}")
    if args.checkpoint:
        _, ncfg = load_params(args.checkpoint)
    else:
        cfg = cfgmod.load_config(args.config)
        ncfg = cfgmod.net_config(cfg, num_classes=cfg["net_classes"]
                                 or DEFAULT_SCHEME.num_classes)
    print(describe(ncfg))
    return 0


# ------------------------------ pipeline ------------------------------

def cmd_pipeline(args):
    cfg = cfgmod.load_config(args.config, {"scene_seed": args.seed})
    out = Path(args.out) if args.out else Path("l2h_run")
    out.mkdir(parents=True, exist_ok=True)
    scene_dir = out / "scene"
    scene_dir.mkdir(exist_ok=True)

    spec = cfgmod.scene_spec(cfg)
    scheme = _scheme_for(spec.num_classes)
    log.info("[1/5] generating %dx%d synthetic scene", spec.width, spec.height)
    image, truth, products, roads = synth.generate(spec)
    write_grid(image, scene_dir / "image.lcr")
    write_grid(truth, scene_dir / "truth.lcr")
    for name, prod in zip("abc", products):
        write_grid(prod, scene_dir / f"product_{name}.lcr")
    write_lines(roads, scene_dir / "roads.lines")

    log.info("[2/5] fusing coarse products and roads")
    tables = [fusion.HarmonizationTable.identity(spec.num_classes, f"identity-{n}")
              for n in "abc"]
    labels, report = fusion.fuse(products[0], products[1], products[2], tables,
                                 roads, width_px=cfg["road_width_px"],
                                 fill_only=cfg["roads_fill_only"])
    write_grid(labels, out / "labels.lcr")
    _write_json(report.to_dict(), out / "fusion_report.json")

    log.info("[3/5] training")
    tcfg = cfgmod.train_config(cfg)
    ncfg = cfgmod.net_config(cfg, num_classes=cfg["net_classes"] or spec.num_classes,
                             input_channels=image.bands)
    pairs = make_pairs(image, labels, tcfg)
    params, tlog = train(pairs, tcfg, ncfg)
    save_params(params, ncfg, out / "checkpoint.l2hp")
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as f:
        for entry in tlog:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    render.render_training_log(tlog, out / "training_curves.png")

    log.info("[4/5] predicting")
    policy = cfgmod.mosaic_policy(cfg)
    class_map, max_prob = predict_tiled(params, ncfg, image, policy,
                                        threads=args.threads)
    write_grid(class_map, out / "class_map.lcr")
    write_grid(max_prob, out / "max_prob.lcr")
    render.render_class_map(class_map, scheme, out / "class_map.png",
                            out / "legend.json")

    log.info("[5/5] assessing against clean ground truth")
    points = assessment.sample_points(class_map, cfg["assess_points"],
                                      cfg["assess_seed"],
                                      strategy=cfg["assess_strategy"])
    assessment.lookup_classes(truth, points, target="reference")
    cm = assessment.confusion(points, scheme)
    assessment.write_confusion_csv(cm, out / "confusion.csv")
    render.render_confusion(cm, out / "confusion.png")
    m = assessment.metrics(cm)
    # full-map pixel agreement against the clean truth
    agree = class_map.band(0) == truth.band(0)
    m["pixel_oa"] = float(np.count_nonzero(agree) / agree.size)
    ce_means = epoch_means(tlog)
    m["ce_epoch_means"] = [round(v, 10) for v in ce_means]
    _write_json(m, out / "metrics.json")
    cfgmod.write_manifest(out / "run_manifest.json", "pipeline", cfg,
                          [args.config] if args.config else [])
    print(f"OA {m['oa'] * 100:.2f}")
    print(f"Kappa {m['kappa']:.4f}")
    print(f"pixel OA {m['pixel_oa'] * 100:.2f}")
    return 0


# ------------------------------ parser --------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="l2h",
        description="Weakly supervised low-to-high land-cover mapping pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker parallelism cap (N=1 gives identical results)")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic scene")
    p.add_argument("--spec", help="scene spec file (flat key=value TOML)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fuse", parents=[common], help="build training labels")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--c", required=True)
    p.add_argument("--roads")
    p.add_argument("--table-a")
    p.add_argument("--table-b")
    p.add_argument("--table-c")
    p.add_argument("--classes", type=int, default=0,
                   help="legend size for identity tables (default: full scheme)")
    p.add_argument("--road-width", type=int, default=1)
    p.add_argument("--fill-only", action="store_true",
                   help="roads only fill unlabeled pixels instead of overriding")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("train", parents=[common], help="train on image/label pair")
    p.add_argument("--image", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="tiled seamless prediction")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--config")
    p.add_argument("--tile", type=int)
    p.add_argument("--overlap", type=int)
    p.add_argument("--blend", choices=["crop-center", "prob-average"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("assess", parents=[common], help="accuracy assessment")
    p.add_argument("mode", choices=["matrix", "metrics", "areas"])
    p.add_argument("--map")
    p.add_argument("--reference")
    p.add_argument("--regions")
    p.add_argument("--matrix")
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--strategy", choices=["uniform", "stratified-by-class"],
                   default="uniform")
    p.add_argument("--classes", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--fig", help="also render a figure to this path")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("net", parents=[common], help="network utilities")
    p.add_argument("mode", choices=["inspect"])
    p.add_argument("--checkpoint")
    p.add_argument("--config")
    p.set_defaults(func=cmd_net)

    p = sub.add_parser("pipeline", parents=[common],
                       help="synth + fuse + train + predict + assess")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, help="override the scene seed")
    p.add_argument("--out")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except L2HError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
