"""Command-line entry point: ``introspect <subcommand> [--flags]``.

Exit status: 0 success, 2 usage error, 3 data error, 4 numeric/validation
error.  ``INTROSPECT_THREADS`` caps per-image worker threads (0 = auto).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import cam as cammod
from . import evaluation
from . import explorer as ex
from .errors import IntrospectError, UsageError
from .featurizer import filter_bank_spec, load_weights, tiny_conv_spec
from .raster import Window, _atomic_write, crop, write_pgm, write_ppm
from .synthetic import SynthConfig, generate_synthetic
from .trainkit import (StackConfig, load_groundtruth, load_image, load_manifest, load_model,
                       save_model, train_stack)

log = logging.getLogger("introspect")

DEFAULT_ZOOM = cammod.DEFAULT_ZOOM


def _add_explore_knobs(p, iterations=4):
    p.add_argument("--iterations", type=int, default=iterations,
                   help="route length T in windows, root included (1-8)")
    p.add_argument("--beam-width", type=int, default=1, help="classes expanded per node (1-3)")
    p.add_argument("--policy", choices=ex.POLICIES, default="cam", help="guidance signal")


def _add_model_knobs(p):
    p.add_argument("--zoom", type=float, default=DEFAULT_ZOOM,
                   help="child side / geometric mean of parent sides (0.3-0.9)")
    p.add_argument("--input-side", type=int, default=128,
                   help="windows are resized so their smaller side is this many pixels")
    p.add_argument("--preserve-aspect", action=argparse.BooleanOptionalAction, default=True,
                   help="keep aspect ratio when resizing (off: square warp)")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-4,
                   help="SVM regularisation strength")
    p.add_argument("--epochs", type=int, default=50, help="SVM training epochs")
    p.add_argument("--extractor", choices=("filter-bank", "tiny-conv"), default="filter-bank",
                   help="built-in feature extractor")
    p.add_argument("--extractor-weights", type=Path, default=None,
                   help="weight container to load instead of the built-in extractor")
    p.add_argument("--extractor-seed", type=int, default=0,
                   help="seed for tiny-conv random initialisation")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="introspect", formatter_class=fmt,
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true", help="log progress lines to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", formatter_class=fmt, help="generate the synthetic benchmark")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True, help="generator seed")
    p.add_argument("--classes", type=int, default=2, help="number of classes")
    p.add_argument("--images-per-class", type=int, default=200, help="images per class")
    p.add_argument("--image-side", type=int, default=128, help="image side in pixels")
    p.add_argument("--patch-side", type=int, default=16, help="discriminative patch side")
    p.add_argument("--orientations", type=int, default=0,
                   help="distinct stripe angles (0: min(classes, 4))")
    p.add_argument("--patch-contrast", type=float, default=0.8,
                   help="stripe contrast of the patch relative to its full colour pair")
    p.add_argument("--test-fraction", type=float, default=0.5, help="share of test images")

    p = sub.add_parser("train", formatter_class=fmt, help="train a classifier stack")
    p.add_argument("--manifest", type=Path, required=True, help="dataset manifest (JSONL)")
    p.add_argument("--model", type=Path, required=True, help="output model file")
    p.add_argument("--seed", type=int, required=True, help="training seed")
    _add_explore_knobs(p)
    _add_model_knobs(p)

    p = sub.add_parser("predict", formatter_class=fmt, help="top-5 classes for one image")
    p.add_argument("--model", type=Path, required=True, help="model file")
    p.add_argument("--image", type=Path, required=True, help="PPM/PGM image")
    p.add_argument("--variant", choices=("baseline", "late", "early", "early-accum"),
                   default="early-accum", help="scoring variant")
    p.add_argument("--seed", type=int, default=0, help="seed for the random policy")
    _add_explore_knobs(p, iterations=0)

    p = sub.add_parser("explore", formatter_class=fmt, help="write an exploration tree")
    p.add_argument("--model", type=Path, required=True, help="model file")
    p.add_argument("--image", type=Path, required=True, help="PPM/PGM image")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="seed for the random policy")
    p.add_argument("--write-crops", action="store_true",
                   help="also write node_<id>.ppm crops and node_<id>_cam.ppm overlays")
    _add_explore_knobs(p, iterations=0)

    p = sub.add_parser("render-cam", formatter_class=fmt, help="render a class activation map")
    p.add_argument("--model", type=Path, required=True, help="model file")
    p.add_argument("--image", type=Path, required=True, help="PPM/PGM image")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--class", dest="class_name", default=None,
                   help="class name or index (default: top-scoring class)")
    p.add_argument("--alpha", type=float, default=0.5, help="overlay blend weight")

    for name, helptext in (("eval", "evaluate a model on the test split"),
                           ("ablate", "train and compare guidance variants")):
        p = sub.add_parser(name, formatter_class=fmt, help=helptext)
        p.add_argument("--manifest", type=Path, required=True, help="dataset manifest (JSONL)")
        p.add_argument("--out", type=Path, required=True, help="report directory")
        p.add_argument("--groundtruth", type=Path, default=None,
                       help="ground-truth sidecar (default: groundtruth.jsonl next to manifest)")
        p.add_argument("--radius", type=float, default=16.0,
                       help="localization hit radius in pixels")
        if name == "eval":
            p.add_argument("--model", type=Path, required=True, help="model file")
            p.add_argument("--variant", choices=evaluation.VARIANTS[:5], default="early-accum",
                           help="variant whose accuracy is printed")
            p.add_argument("--seed", type=int, default=0, help="seed for random controls")
            _add_explore_knobs(p, iterations=0)
        else:
            p.add_argument("--seed", type=int, required=True, help="training seed")
            p.add_argument("--iterations", type=int, default=4, help="route length T (1-8)")
            p.add_argument("--beam-width", type=int, default=1, help="classes expanded per node")
            _add_model_knobs(p)
    return parser


def _check_ranges(args) -> None:
    it = getattr(args, "iterations", 0)
    if it and not 1 <= it <= 8:
        raise UsageError(f"--iterations must lie in [1, 8], got {it}")
    bw = getattr(args, "beam_width", 1)
    if not 1 <= bw <= 3:
        raise UsageError(f"--beam-width must lie in [1, 3], got {bw}")
    zoom = getattr(args, "zoom", DEFAULT_ZOOM)
    if not 0.3 <= zoom <= 0.9:
        raise UsageError(f"--zoom must lie in [0.3, 0.9], got {zoom}")


def _extractor(args):
    if args.extractor_weights is not None:
        return load_weights(args.extractor_weights)
    if args.extractor == "tiny-conv":
        return tiny_conv_spec(args.extractor_seed)
    return filter_bank_spec()


def _stack_config(args, policy=None) -> StackConfig:
    return StackConfig(iterations=args.iterations, beam_width=args.beam_width, zoom=args.zoom,
                       input_side=args.input_side, preserve_aspect=args.preserve_aspect,
                       policy=policy or getattr(args, "policy", "cam"), seed=args.seed,
                       lam=args.lam, epochs=args.epochs)


def _load_stack(args):
    stack = load_model(args.model)
    cfg = stack.config
    iterations = args.iterations or cfg.iterations
    if iterations > len(stack.classifiers):
        raise UsageError(f"model was trained for {len(stack.classifiers)} iterations, "
                         f"requested {iterations}")
    cfg.iterations = iterations
    cfg.beam_width = args.beam_width
    cfg.policy = args.policy
    cfg.seed = args.seed
    return stack


def _groundtruth(args):
    path = args.groundtruth or args.manifest.parent / "groundtruth.jsonl"
    return load_groundtruth(path) if Path(path).exists() else None


def cmd_synth(args) -> int:
    cfg = SynthConfig(classes=args.classes, images_per_class=args.images_per_class,
                      image_side=args.image_side, patch_side=args.patch_side, seed=args.seed,
                      test_fraction=args.test_fraction, orientations=args.orientations,
                      patch_contrast=args.patch_contrast)
    path = generate_synthetic(args.out, cfg, min_patch_side=filter_bank_spec().receptive_field)
    print(path)
    return 0


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    stack = train_stack(manifest, _extractor(args), _stack_config(args), log=log.info)
    args.model.parent.mkdir(parents=True, exist_ok=True)
    save_model(stack, args.model)
    accs = stack.training["accuracies"]
    print(f"wrote {args.model}: per-iteration train accuracy "
          + " ".join(f"{a:.4f}" for a in accs["per_iteration"]))
    return 0


def _variant_scores(route, stack, variant):
    if variant == "baseline":
        return route.nodes[0].scores
    if variant == "late":
        return ex.fuse_late(route)
    if variant == "early":
        return ex.fuse_early(route, stack.early[len(route) - 1])
    return ex.fuse_early_accum(route, stack.early)


def cmd_predict(args) -> int:
    stack = _load_stack(args)
    img = load_image(args.image)
    tree = ex.explore(img, stack, stack.extractor, stack.config.explore_config())
    sv = _variant_scores(ex.select_route(tree), stack, args.variant)
    for c in sv.top(min(5, len(stack.classes))):
        print(f"{stack.classes[c]}\t{sv.probabilities[c]:.6f}")
    return 0


def cmd_explore(args) -> int:
    stack = _load_stack(args)
    img = load_image(args.image)
    tree = ex.explore(img, stack, stack.extractor, stack.config.explore_config())
    args.out.mkdir(parents=True, exist_ok=True)
    _atomic_write(args.out / "tree.json", ex.serialize_tree(tree).encode())
    if args.write_crops:
        cfg = stack.config
        for node in tree.nodes:
            view = ex.view_window(img, node.window, stack.extractor, cfg.input_side,
                                  cfg.preserve_aspect)
            c = node.scores.predicted
            m = cammod.compute_cam(view.fm, stack.classifiers[node.depth].weights[c], c,
                                   node.window, view.cell_stride)
            rgb = img if img.shape[2] == 3 else np.repeat(img, 3, axis=2)
            write_ppm(args.out / f"node_{node.id}.ppm", crop(rgb, node.window))
            write_ppm(args.out / f"node_{node.id}_cam.ppm", cammod.render_overlay(m, rgb))
    print(f"wrote {args.out / 'tree.json'} ({len(tree.nodes)} nodes)")
    return 0


def cmd_render_cam(args) -> int:
    stack = load_model(args.model)
    img = load_image(args.image)
    cfg = stack.config
    view = ex.view_window(img, Window.full(img), stack.extractor, cfg.input_side,
                          cfg.preserve_aspect)
    sv = ex.score(stack.classifiers[0], view.feature)
    if args.class_name is None:
        c = sv.predicted
    elif args.class_name in stack.classes:
        c = stack.classes.index(args.class_name)
    elif args.class_name.isdigit() and int(args.class_name) < len(stack.classes):
        c = int(args.class_name)
    else:
        raise UsageError(f"unknown class {args.class_name!r}")
    m = cammod.compute_cam(view.fm, stack.classifiers[0].weights[c], c, view.window,
                           view.cell_stride)
    args.out.mkdir(parents=True, exist_ok=True)
    write_pgm(args.out / "heatmap.pgm", cammod.render_heatmap(m))
    write_ppm(args.out / "overlay.ppm", cammod.render_overlay(m, img, args.alpha))
    print(f"class {stack.classes[c]}: wrote heatmap.pgm and overlay.ppm to {args.out}")
    return 0


def _write_report(report, out: Path, stem: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / f"{stem}.json", report.to_json().encode())
    _atomic_write(out / f"{stem}.txt", report.to_text().encode())


def cmd_eval(args) -> int:
    stack = _load_stack(args)
    manifest = load_manifest(args.manifest)
    report, _ = evaluation.evaluate(stack, manifest.split("test"),
                                    groundtruth=_groundtruth(args), radius=args.radius,
                                    seed=args.seed)
    _write_report(report, args.out, "report")
    print(f"{args.variant} accuracy {report.accuracy[args.variant]:.4f}")
    return 0


def cmd_ablate(args) -> int:
    manifest = load_manifest(args.manifest)
    extractor = _extractor(args)
    stacks = {}
    for policy in ex.POLICIES:
        log.info("training %s-guided stack", policy)
        stacks[policy] = train_stack(manifest, extractor, _stack_config(args, policy))
    report, _ = evaluation.evaluate(stacks["cam"], manifest.split("test"),
                                    groundtruth=_groundtruth(args), radius=args.radius,
                                    ablations={"saliency": stacks["saliency"],
                                               "random": stacks["random"]},
                                    seed=args.seed)
    _write_report(report, args.out, "ablation")
    for k in ("baseline", "early-accum", "same-classifier", "saliency", "random"):
        print(f"{k:<16}{report.accuracy[k]:.4f}")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "predict": cmd_predict,
            "explore": cmd_explore, "render-cam": cmd_render_cam, "eval": cmd_eval,
            "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        _check_ranges(args)
        return COMMANDS[args.command](args)
    except IntrospectError as exc:
        print(f"introspect {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, FloatingPointError) as exc:
        print(f"introspect {args.command}: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"introspect {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
