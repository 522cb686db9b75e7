"""``rapgs`` command line: features, score, prune, train, eval, bdrate,
synth, render and fit.

Exit codes: 0 success, 1 I/O error, 2 usage or validation error, 3 numeric
failure, 4 evaluation-domain failure (e.g. non-overlapping RD curves).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import formats, mlp
from .config import RunConfig, load_config
from .errors import NumericError, OverlapError, ValidationError
from .parallel import threads as thread_scope

log = logging.getLogger("rapgs")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC, EXIT_DOMAIN = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep argparse's exit code 2 but a uniform prefix
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"rapgs: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="plain-text 'key = value' config file")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--threads", type=int, help="worker threads (default 1); results do not depend on it")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _feature_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, help="nearest neighbours per primitive (default 128)")
    p.add_argument("--m", type=int, help="view directions for color anisotropy (default 64)")
    p.add_argument("--clip-lo", type=float, help="lower percentile for feature clipping (default 1)")
    p.add_argument("--clip-hi", type=float, help="upper percentile for feature clipping (default 99)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rapgs", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="store_true", help="print the version and exit")
    ap.add_argument("--json", action="store_true", help="with --version: machine-readable output")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("features", help="write the 15-column feature file for a scene")
    p.add_argument("--scene", type=Path, required=True, help="input PLY (optionally gzip-compressed)")
    p.add_argument("--out", type=Path, required=True, help="output RAPF feature file")
    _feature_flags(p)
    _common(p)

    p = sub.add_parser("score", help="importance scores for every primitive")
    p.add_argument("--scene", type=Path, required=True, help="input PLY")
    p.add_argument("--out", type=Path, required=True, help="output RAPS score file")
    p.add_argument("--method", choices=("rap", "opacity", "visibility"), default="rap",
                   help="scoring method (default rap)")
    p.add_argument("--weights", help="MLP weight JSON, or 'builtin' for the shipped weights (rap only)")
    p.add_argument("--views", type=Path, help="camera JSON (visibility only)")
    p.add_argument("--hist-bins", type=int, help="bins of the score histogram CSV (default 10)")
    _feature_flags(p)
    _common(p)

    p = sub.add_parser("prune", help="drop low-score primitives")
    p.add_argument("--scene", type=Path, required=True, help="input PLY")
    p.add_argument("--scores", type=Path, required=True, help="RAPS score file")
    p.add_argument("--retention", type=float, help="fraction of primitives to keep, in (0, 1]")
    p.add_argument("--threshold", type=float, help="keep primitives with score >= threshold")
    p.add_argument("--out", type=Path, required=True, help="output PLY")
    p.add_argument("--compress", action="store_true", help="gzip the output PLY")
    _common(p)

    p = sub.add_parser("train", help="train the scoring MLP through the differentiable renderer")
    p.add_argument("--manifest", type=Path, required=True,
                   help="text file: one '<ply> <camera json> <image dir>' line per scene")
    p.add_argument("--out-weights", type=Path, required=True, help="output weight JSON")
    p.add_argument("--log", type=Path, required=True, help="output CSV training log")
    p.add_argument("--iterations", type=int, help="optimizer steps (default 15000)")
    p.add_argument("--init-weights", help="start from these weights instead of a fresh init")
    _feature_flags(p)
    _common(p)

    p = sub.add_parser("eval", help="retention-ratio vs PSNR curve")
    p.add_argument("--scene", type=Path, required=True, help="input PLY")
    p.add_argument("--scores", type=Path, required=True, help="RAPS score file")
    p.add_argument("--views", type=Path, required=True, help="camera JSON with ground-truth image names")
    p.add_argument("--images", type=Path, help="image directory (default: 'images' next to the camera JSON)")
    p.add_argument("--ratios", help="comma-separated retention ratios (default 0.05..0.95 step 0.05)")
    p.add_argument("--rate-mode", choices=("bytes", "count"), help="rate axis (default bytes)")
    p.add_argument("--out-curve", type=Path, required=True, help="output CSV; a PNG plot is written next to it")
    p.add_argument("--label", default="", help="curve label used in the plot")
    _common(p)

    p = sub.add_parser("bdrate", help="Bjontegaard delta rate of one curve against another")
    p.add_argument("--test", type=Path, required=True, help="curve CSV under test")
    p.add_argument("--anchor", type=Path, required=True, help="reference curve CSV")
    p.add_argument("--plot", type=Path, help="optional PNG with both curves")

    p = sub.add_parser("synth", help="generate a synthetic scene with planted redundancy")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--informative", type=int, default=300)
    p.add_argument("--clones", type=int, default=120)
    p.add_argument("--floaters", type=int, default=60)
    p.add_argument("--ghosts", type=int, default=60)
    p.add_argument("--blobs", type=int, default=60)
    p.add_argument("--cameras", type=int, default=12)
    p.add_argument("--image-size", type=int, default=96)
    _common(p)

    p = sub.add_parser("render", help="render a scene from camera views")
    p.add_argument("--scene", type=Path, required=True, help="input PLY")
    p.add_argument("--views", type=Path, required=True, help="camera JSON")
    p.add_argument("--out", type=Path, required=True, help="output directory for PNGs")
    p.add_argument("--scores", type=Path, help="optional RAPS file for soft reweighting")
    p.add_argument("--raw", action="store_true", help="also write float RAPI images")
    _common(p)

    p = sub.add_parser("fit", help="optimize a scene against images with scheduled in-loop pruning")
    p.add_argument("--scene", type=Path, required=True, help="initial PLY")
    p.add_argument("--views", type=Path, required=True, help="camera JSON with ground-truth image names")
    p.add_argument("--images", type=Path, help="image directory (default: 'images' next to the camera JSON)")
    p.add_argument("--out", type=Path, required=True, help="output PLY")
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--period", type=int, default=1500, help="prune every this many iterations")
    p.add_argument("--drop", type=float, default=0.40, help="fraction removed at each prune")
    p.add_argument("--weights", help="MLP weight JSON or 'builtin'; omit to fit without pruning")
    p.add_argument("--log", type=Path, help="optional CSV log")
    _feature_flags(p)
    _common(p)
    return ap


# ---------------------------------------------------------------------------
# helpers


def _config(args, **flags) -> RunConfig:
    overrides = {"seed": getattr(args, "seed", None), "threads": getattr(args, "threads", None)}
    for key in ("k", "m", "clip_lo", "clip_hi", "iterations", "hist_bins", "rate_mode"):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    overrides.update(flags)
    return load_config(getattr(args, "config", None), overrides)


def _weights(spec: str | None) -> mlp.MlpWeights:
    if spec is None:
        raise ValidationError("--weights is required")
    return mlp.load_pretrained() if spec == "builtin" else mlp.load_weights(spec)


def _weights_input(spec: str | None) -> dict:
    return {"weights": mlp.pretrained_path() if spec == "builtin" else spec}


def _views(path: Path, images: Path | None = None, need_images: bool = False):
    image_dir = images if images is not None else path.parent / "images"
    views = formats.read_cameras(path, image_dir if need_images else None)
    if not views:
        raise ValidationError(f"{path}: no cameras")
    return views


def _clip(cfg: RunConfig) -> tuple:
    return (cfg.clip_lo, cfg.clip_hi)


# ---------------------------------------------------------------------------
# subcommands


def cmd_features(args) -> int:
    from .features import extract_features
    from .scene import load_ply

    cfg = _config(args)
    scene = load_ply(args.scene)
    res = extract_features(scene, k=cfg.k, m=cfg.m, seed=cfg.seed, clip=_clip(cfg))
    if res.degenerate:
        log.warning("scene has %d primitives <= K=%d; neighbour sets are padded", len(scene), cfg.k)
    formats.write_features(args.out, res.features)
    formats.write_provenance(args.out, {"scene": args.scene}, cfg.to_json(),
                             {"n": len(scene), "degenerate_neighbors": res.degenerate})
    return EXIT_OK


def cmd_score(args) -> int:
    from .inference import report_for, score_scene
    from .pruning import opacity_score
    from .scene import load_ply

    cfg = _config(args)
    if args.method == "rap" and args.weights is None:
        raise ValidationError("--method rap needs --weights (a JSON file or 'builtin')")
    if args.method == "visibility" and args.views is None:
        raise ValidationError("--method visibility needs --views")
    if args.method != "rap" and args.weights is not None:
        raise ValidationError(f"--weights is only used by --method rap, not {args.method}")
    scene = load_ply(args.scene)
    inputs = {"scene": args.scene}
    if args.method == "rap":
        weights = _weights(args.weights)
        report = score_scene(scene, weights, k=cfg.k, m=cfg.m, seed=cfg.seed, clip=_clip(cfg), bins=cfg.hist_bins)
        inputs.update(_weights_input(args.weights))
    elif args.method == "opacity":
        start = time.perf_counter()
        scores = opacity_score(scene)
        report = report_for("opacity", scores, time.perf_counter() - start, cfg.hist_bins)
    else:
        from .baselines import visibility_score

        views = _views(args.views)
        start = time.perf_counter()
        scores = visibility_score(scene, views)
        report = report_for("visibility", scores, time.perf_counter() - start, cfg.hist_bins,
                            views=len(views))
        inputs["views"] = args.views
    formats.write_scores(args.out, report.scores)
    hist = args.out.with_name(args.out.name + ".hist.csv")
    hist.write_text(formats.histogram_csv(report.histogram))
    from .plotting import plot_histogram

    plot_histogram(report.histogram, hist.with_suffix(".png"), title=f"{args.method} scores")
    # Wall-clock time lives in its own file so every other output stays byte-identical.
    timing = args.out.with_name(args.out.name + ".timing.json")
    timing.write_text(json.dumps({"method": args.method, "n": len(scene),
                                  "seconds": max(report.seconds, 1e-9)}) + "\n")
    prov = report.provenance()
    prov.pop("seconds")
    formats.write_provenance(args.out, inputs, cfg.to_json(), prov)
    return EXIT_OK


def cmd_prune(args) -> int:
    from .pruning import prune_by_ratio, prune_by_threshold
    from .scene import load_ply, save_ply

    cfg = _config(args)
    if (args.retention is None) == (args.threshold is None):
        raise ValidationError("give exactly one of --retention or --threshold")
    scene = load_ply(args.scene)
    scores = formats.read_scores(args.scores)
    if len(scores) != len(scene):
        raise ValidationError(f"{len(scores)} scores for a scene of {len(scene)} primitives")
    if args.retention is not None:
        out = prune_by_ratio(scene, scores, args.retention)
    else:
        out = prune_by_threshold(scene, scores, args.threshold)
    if len(out) == 0:
        log.warning("pruning removed every primitive; writing an empty scene")
        print("warning: pruned scene is empty", file=sys.stderr)
    save_ply(out, args.out, compress=args.compress)
    formats.write_provenance(args.out, {"scene": args.scene, "scores": args.scores}, cfg.to_json(),
                             {"retention": args.retention, "threshold": args.threshold,
                              "n_in": len(scene), "n_out": len(out)})
    return EXIT_OK


def cmd_train(args) -> int:
    from .plotting import plot_training_log
    from .scene import load_ply
    from .train import TrainingAborted, TrainingScene, train

    cfg = _config(args)
    tcfg = cfg.train_config()
    entries = formats.read_manifest(args.manifest)
    data = []
    for ply, cams, images in entries:
        views = formats.read_cameras(cams, images)
        if any(v.gt_image is None for v in views):
            raise ValidationError(f"{cams}: every camera needs an image")
        data.append(TrainingScene.prepare(load_ply(ply), views, tcfg, name=str(ply)))
    init = _weights(args.init_weights) if args.init_weights else None
    try:
        result = train(data, tcfg, init, progress_every=100 if args.verbose else 0)
    except TrainingAborted as exc:
        dump = args.out_weights.with_name(args.out_weights.name + ".abort.json")
        dump.write_text(json.dumps(exc.state, indent=1, default=str) + "\n")
        print(f"rapgs: {exc}; state written to {dump}", file=sys.stderr)
        return EXIT_NUMERIC
    mlp.save_weights(result.weights, args.out_weights)
    args.log.write_text(result.log_csv())
    if result.log:
        plot_training_log(result.log, args.log.with_suffix(".png"))
    inputs = {"manifest": args.manifest}
    for i, (ply, cams, _) in enumerate(entries):
        inputs[f"scene{i}"] = ply
        inputs[f"cameras{i}"] = cams
    formats.write_provenance(args.out_weights, inputs, cfg.to_json(), {"iterations": tcfg.iterations})
    formats.write_provenance(args.log, inputs, cfg.to_json(), {"iterations": tcfg.iterations})
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import retention_curve
    from .plotting import plot_retention_curves
    from .scene import load_ply

    ratios = None
    if args.ratios:
        try:
            ratios = tuple(float(x) for x in args.ratios.split(","))
        except ValueError:
            raise ValidationError(f"--ratios: cannot parse {args.ratios!r}") from None
    cfg = _config(args, ratios=ratios and " ".join(map(repr, ratios)))
    scene = load_ply(args.scene)
    scores = formats.read_scores(args.scores)
    if len(scores) != len(scene):
        raise ValidationError(f"{len(scores)} scores for a scene of {len(scene)} primitives")
    views = _views(args.views, args.images, need_images=True)
    if any(v.gt_image is None for v in views):
        raise ValidationError(f"{args.views}: every camera needs an image")
    curve = retention_curve(scene, scores, views, cfg.ratios, cfg.rate_mode, cfg.background,
                            label=args.label or args.scores.stem)
    args.out_curve.write_text(curve.to_csv())
    plot_retention_curves([curve], args.out_curve.with_suffix(".png"))
    formats.write_provenance(args.out_curve, {"scene": args.scene, "scores": args.scores, "views": args.views},
                             cfg.to_json())
    return EXIT_OK


def cmd_bdrate(args) -> int:
    from .evaluation import RdCurve, bd_rate

    test = RdCurve.from_csv(args.test.read_text(), label=args.test.stem)
    anchor = RdCurve.from_csv(args.anchor.read_text(), label=args.anchor.stem)
    value = bd_rate(test, anchor)
    if args.plot:
        from .plotting import plot_retention_curves

        plot_retention_curves([anchor, test], args.plot, x="rate")
        formats.write_provenance(args.plot, {"test": args.test, "anchor": args.anchor}, {}, {"bd_rate": value})
    print(f"{value:.2f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import SynthSpec, generate, write_dataset

    cfg = _config(args)
    spec = SynthSpec(
        informative=args.informative, clones=args.clones, floaters=args.floaters,
        ghosts=args.ghosts, blobs=args.blobs, cameras=args.cameras,
        image_size=args.image_size, seed=cfg.seed,
    )
    with thread_scope(cfg.threads):
        paths = write_dataset(generate(spec), args.out)
    formats.write_provenance(paths["scene"], {}, cfg.to_json(), {"synth": spec.__dict__})
    print(paths["manifest"])
    return EXIT_OK


def cmd_render(args) -> int:
    from .render import render
    from .scene import load_ply

    cfg = _config(args)
    scene = load_ply(args.scene)
    scores = None
    if args.scores:
        scores = formats.read_scores(args.scores).astype(np.float64)
        if len(scores) != len(scene):
            raise ValidationError(f"{len(scores)} scores for a scene of {len(scene)} primitives")
    views = _views(args.views)
    args.out.mkdir(parents=True, exist_ok=True)
    inputs = {"scene": args.scene, "views": args.views, "scores": args.scores}
    for v in views:
        img = render(v, scene, scores, cfg.background).image
        written = [args.out / f"{v.name}.png"]
        formats.write_png(written[0], img)
        if args.raw:
            written.append(args.out / f"{v.name}.rapi")
            formats.write_raw_image(written[1], img)
        for path in written:
            formats.write_provenance(path, inputs, cfg.to_json(), {"view": v.name})
    return EXIT_OK


def cmd_fit(args) -> int:
    from .inference import score_scene
    from .scene import load_ply, save_ply
    from .schedule import FitConfig, fit_scene, mean_psnr

    cfg = _config(args)
    scene = load_ply(args.scene)
    views = _views(args.views, args.images, need_images=True)
    scorer = None
    if args.weights:
        w = _weights(args.weights)

        def scorer(s):
            return score_scene(s, w, k=cfg.k, m=cfg.m, seed=cfg.seed, clip=_clip(cfg)).scores

    fcfg = FitConfig(iterations=args.iterations, period=args.period, drop_fraction=args.drop,
                     lambda_dssim=cfg.lambda_dssim, seed=cfg.seed, background=cfg.background)
    result = fit_scene(scene, views, fcfg, scorer)
    save_ply(result.scene, args.out)
    inputs = {"scene": args.scene, "views": args.views, **(_weights_input(args.weights) if args.weights else {})}
    fit_info = {"fit": {"iterations": args.iterations, "period": args.period, "drop": args.drop},
                "n_in": len(scene), "n_out": len(result.scene)}
    formats.write_provenance(args.out, inputs, cfg.to_json(), fit_info)
    if args.log:
        lines = ["iter,loss,primitives"] + [f"{i},{loss!r},{n}" for i, loss, n in result.log]
        args.log.write_text("\n".join(lines) + "\n")
        formats.write_provenance(args.log, inputs, cfg.to_json(), fit_info)
    print(f"primitives {len(scene)} -> {len(result.scene)}; "
          f"mean PSNR {mean_psnr(result.scene, views, cfg.background):.2f} dB")
    return EXIT_OK


COMMANDS = {
    "features": cmd_features,
    "score": cmd_score,
    "prune": cmd_prune,
    "train": cmd_train,
    "eval": cmd_eval,
    "bdrate": cmd_bdrate,
    "synth": cmd_synth,
    "render": cmd_render,
    "fit": cmd_fit,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.version:
        print(json.dumps({"name": "rapgs", "version": __version__}) if args.json else f"rapgs {__version__}")
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        n_threads = getattr(args, "threads", None) or 1
        if n_threads < 1:
            raise ValidationError("--threads must be >= 1")
        # BLAS stays single-threaded: parallelism comes only from the
        # fixed-chunk pool, which keeps every output independent of --threads.
        with threadpool_limits(limits=1), thread_scope(n_threads):
            return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"rapgs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OverlapError as exc:
        print(f"rapgs: error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except NumericError as exc:
        print(f"rapgs: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"rapgs: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
