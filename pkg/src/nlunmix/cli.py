"""Command-line front end: generate, detect, roc, extract, pipeline.

Exit codes: 0 success, 1 usage error, 2 I/O or file-format error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .detector import calibrate_threshold, detect_image, roc_curve
from .errors import FormatError, NlunmixError, NumericalError, UsageError
from .extraction import iterative_endmember_estimation, match_endmembers, mean_sam, mves, vca
from .mixing import generate_scene
from .scene_io import (
    LABEL_NAMES,
    LINEAR,
    NONLINEAR,
    SceneImage,
    ensure_dir,
    grid_shape,
    load_ground_truth,
    load_image,
    save_detection_map,
    save_endmembers,
    save_ground_truth,
    save_image,
    write_rows,
)
from .unmix import abundance_rmse, detect_then_unmix, fcls_everywhere, gp_reconstruct, reconstruction_rmse

log = logging.getLogger("nlunmix")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="ascii")


class Context:
    """Resolved configuration plus the command-line knobs."""

    def __init__(self, args):
        file_values = C.load_config(args.config) if args.config else {}
        self.cfg = C.resolve(args.preset, file_values, {"seed": None if args.seed is None else str(args.seed)})
        if "seed" not in self.cfg:
            raise UsageError("a seed is required (--seed or 'seed = ...' in the config)")
        try:
            self.seed = int(self.cfg["seed"])
        except ValueError:
            raise UsageError(f"seed must be an integer, got {self.cfg['seed']!r}") from None
        if not (0 <= self.seed < 2 ** 64):
            raise UsageError("seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        self.threads = args.threads
        self.out = ensure_dir(args.out or self.cfg.get("out", "out"))

    def settings(self):
        return C.gp_settings(self.cfg, self.seed, self.threads)

    def scene(self, eta=None) -> SceneImage:
        """The input image when ``image`` is configured, else a generated scene."""
        if self.cfg.get("image"):
            img = load_image(self.cfg["image"])
            if self.cfg.get("truth"):
                truth = load_ground_truth(self.cfg["truth"])
                img = SceneImage(img.pixels, truth=truth, width=img.width, height=img.height)
            return img
        return generate_scene(C.scene_config(self.cfg, self.seed, eta))

    def endmembers(self, image: SceneImage) -> np.ndarray:
        if self.cfg.get("endmembers"):
            return C.endmembers_from(self.cfg)
        if image.truth is not None and image.truth.endmembers is not None:
            return image.truth.endmembers
        raise UsageError("no endmembers: set 'endmembers = <csv>' in the config")


def _map_shape(image: SceneImage):
    if image.width and image.height:
        return image.width, image.height
    return grid_shape(image.n_pixels)


def _write_detection(out: Path, dmap, image: SceneImage) -> None:
    write_rows(
        out / "detection.csv",
        ["pixel_index", "T", "label"],
        ([i, float(t), LABEL_NAMES[int(l)]] for i, (t, l) in enumerate(zip(dmap.statistics, dmap.labels))),
    )
    w, h = _map_shape(image)
    save_detection_map(dmap, w, h, out / "detection.pgm")


# --------------------------------------------------------------------------
# subcommands


def cmd_generate(ctx: Context) -> int:
    image = ctx.scene()
    save_image(image, ctx.out / "scene.hdr")
    save_ground_truth(image.truth, ctx.out / "truth.csv")
    save_endmembers(image.truth.endmembers, ctx.out / "endmembers.csv")
    text = C.format_config(dict(ctx.cfg, seed=str(ctx.seed)))
    (ctx.out / "config.txt").write_text(text, encoding="ascii")
    sys.stdout.write(text)
    return EXIT_OK


def _detect(ctx: Context, image: SceneImage, M):
    settings = ctx.settings()
    pfa = C.get_float(ctx.cfg, "pfa")
    cal = calibrate_threshold(M, image, pfa, settings)
    hyper = cal.hypers[0] if settings.mode == "shared" else None
    dmap = detect_image(M, image, cal.tau, settings, hyper=hyper)
    return cal, dmap


def cmd_detect(ctx: Context) -> int:
    image = ctx.scene()
    M = ctx.endmembers(image)
    cal, dmap = _detect(ctx, image, M)
    _write_detection(ctx.out, dmap, image)
    _write_json(ctx.out / "calibration.json", cal.to_dict())
    flagged = float(np.mean(dmap.labels == NONLINEAR))
    print(f"tau = {cal.tau!r}  flagged = {flagged!r}")
    return EXIT_OK


def _roc_for(ctx: Context, image: SceneImage, M, name: str):
    if image.truth is None:
        raise UsageError("ROC needs ground-truth labels ('truth = <csv>' for a loaded image)")
    _, dmap = _detect(ctx, image, M)
    roc = roc_curve(dmap.statistics, image.truth.labels, ctx.cfg["orientation"])
    write_rows(ctx.out / name, ["threshold", "PFA", "PD"],
               zip(roc.thresholds.astype(float), roc.pfa.astype(float), roc.pd.astype(float)))
    return roc


def cmd_roc(ctx: Context) -> int:
    summary = {}
    if ctx.cfg.get("eta_sweep"):
        for eta in C.get_floats(ctx.cfg, "eta_sweep"):
            image = ctx.scene(eta=eta)
            roc = _roc_for(ctx, image, ctx.endmembers(image), f"roc_eta{eta!r}.csv")
            summary[f"eta={eta!r}"] = {"auc": roc.auc, "pd_at_pfa_0.1": roc.pd_at(0.1)}
            print(f"eta = {eta!r}  AUC = {roc.auc!r}")
    else:
        image = ctx.scene()
        roc = _roc_for(ctx, image, ctx.endmembers(image), "roc.csv")
        summary["roc"] = {"auc": roc.auc, "pd_at_pfa_0.1": roc.pd_at(0.1)}
        print(f"AUC = {roc.auc!r}")
    _write_json(ctx.out / "roc_summary.json", summary)
    return EXIT_OK


def cmd_extract(ctx: Context) -> int:
    image = ctx.scene()
    R = C.get_int(ctx.cfg, "n_endmembers", 2)
    reference = None
    if ctx.cfg.get("endmembers"):
        reference = C.endmembers_from(ctx.cfg)
    elif image.truth is not None:
        reference = image.truth.endmembers
    kind = ctx.cfg["extractor"]
    summary = {"extractor": kind}
    if kind == "vca":
        M_hat = vca(image, R, seed=ctx.seed)
    elif kind == "mves":
        M_hat, info = mves(image, R, info=True)
        write_rows(ctx.out / "trace.csv", ["sweep", "volume"], enumerate(map(float, info.volumes)))
        summary["min_barycentric"] = info.min_barycentric
    elif kind == "iterative":
        res = iterative_endmember_estimation(
            image, R, C.iterative_params(ctx.cfg), ctx.settings(), reference=reference
        )
        M_hat = res.endmembers
        header = ["iteration", "surviving_pixels", "discarded", "tau_r"]
        if reference is not None:
            header.append("sam_to_reference")
        rows = []
        for rec in res.trace:
            row = [rec.iteration, rec.surviving_pixels, rec.discarded, float(rec.tau_r)]
            if reference is not None:
                row.append(float(rec.sam_to_reference))
            rows.append(row)
        write_rows(ctx.out / "trace.csv", header, rows)
        summary["tau"] = res.tau
    else:
        raise UsageError(f"extractor must be vca, mves or iterative, got {kind!r}")
    if reference is not None:
        perm, angles = match_endmembers(M_hat, reference)
        M_hat = M_hat[:, perm]
        summary["sam"] = [float(a) for a in angles]
        summary["mean_sam"] = float(angles.mean())
        if kind != "vca":
            summary["vca_mean_sam"] = mean_sam(vca(image, R, seed=ctx.seed), reference)
        print(f"mean SAM = {summary['mean_sam']!r}")
    save_endmembers(M_hat, ctx.out / "endmembers_hat.csv")
    _write_json(ctx.out / "extract_summary.json", summary)
    return EXIT_OK


def cmd_pipeline(ctx: Context) -> int:
    image = ctx.scene()
    settings = ctx.settings()
    if ctx.cfg.get("endmembers") or ctx.cfg.get("extractor_for_pipeline", "known") == "known":
        M = ctx.endmembers(image)
    else:
        R = C.get_int(ctx.cfg, "n_endmembers", 2)
        M = iterative_endmember_estimation(image, R, C.iterative_params(ctx.cfg), settings).endmembers
    pfa = C.get_float(ctx.cfg, "pfa")
    res = detect_then_unmix(image, M, pfa, settings)
    A_fcls, rec_fcls = fcls_everywhere(image, M)
    hyper = res.calibration.hypers[0] if settings.mode == "shared" else None
    rec_gp = gp_reconstruct(M, image.pixels, settings, hyper=hyper)

    R = M.shape[1]
    write_rows(
        ctx.out / "abundances.csv",
        ["pixel_index"] + [f"alpha_{i + 1}" for i in range(R)] + ["label"],
        ([i] + [float(a) for a in res.abundances[i]] + [LABEL_NAMES[int(res.labels[i])]]
         for i in range(image.n_pixels)),
    )
    from .scene_io import DetectionMap

    dmap = DetectionMap(labels=res.labels, statistics=res.statistics, threshold=res.threshold)
    _write_detection(ctx.out, dmap, image)

    truth = image.truth
    # reconstructions are scored against the noiseless scene when it is known;
    # against the observed pixels the GP branch also fits part of the noise
    clean = truth.clean if truth is not None and truth.clean is not None else image.pixels
    recons = {"": res.reconstruction, "_fcls": rec_fcls, "_gp": rec_gp}
    metrics = {
        "tau": res.threshold,
        "counts": {
            "linear": int(np.sum(res.labels == LINEAR)),
            "nonlinear": int(np.sum(res.labels == NONLINEAR)),
        },
        "reconstruction_reference": "noiseless" if clean is not image.pixels else "observed",
    }
    for suffix, Y in recons.items():
        metrics["rmse_full_reconstruction" + suffix] = reconstruction_rmse(clean, Y)
        metrics["rmse_observed_reconstruction" + suffix] = reconstruction_rmse(image, Y)
    if truth is not None and truth.abundances is not None:
        subset = (truth.labels == LINEAR) & (res.labels == LINEAR)
        if subset.any():
            metrics["rmse_linear_subset"] = abundance_rmse(truth.abundances[subset], res.abundances[subset])
            metrics["rmse_linear_subset_fcls"] = abundance_rmse(truth.abundances[subset], A_fcls[subset])
        lmm = truth.labels == LINEAR
        if lmm.any():
            metrics["rmse_lmm_fcls_everywhere"] = abundance_rmse(truth.abundances[lmm], A_fcls[lmm])
    _write_json(ctx.out / "metrics.json", metrics)
    print(f"reconstruction RMSE: detect-then-unmix {metrics['rmse_full_reconstruction']!r}, "
          f"fcls {metrics['rmse_full_reconstruction_fcls']!r}, gp {metrics['rmse_full_reconstruction_gp']!r}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "detect": cmd_detect,
    "roc": cmd_roc,
    "extract": cmd_extract,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nlunmix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__name__.replace("cmd_", ""))
        p.add_argument("--config", help="flat key = value file")
        p.add_argument("--seed", type=int, help="64-bit seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--preset", help=f"one of {', '.join(sorted(C.PRESETS))}")
        p.add_argument("--threads", type=int, default=1, help="worker threads for per-pixel work")
        p.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        ctx = Context(args)
        return COMMANDS[args.command](ctx)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NlunmixError as exc:  # validation errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
