"""``srkit`` command-line interface.

Exit codes: 0 success, 2 I/O or file format, 3 shape/domain, 4 usage.
Human-readable messages go to stderr; with ``--stdout`` the JSON report is
the only thing written to stdout.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .errors import FormatError, InsufficientSamples, SrkitError
from .files import load_feature_stack, load_image, load_matrix
from .flowctl import (
    GateParams,
    UncertaintyMode,
    gate_alpha,
    make_schedule,
    tau_from_batch,
    u_fixed_kappa,
    u_from_tau,
    variance_map,
)
from .harness import HarnessConfig, run_pipeline
from .imgmath import Domain, ImageTensor, srgb_to_lab
from .loss import LossWeights, perceptual_distance, total_loss
from .metrics_blind import (
    FeatureMatrix,
    NiqeModel,
    NiqeParams,
    QuantileForecast,
    ece_regression,
    fid,
    gaussian_nll,
    niqe,
    niqe_fit,
    qnr,
)
from .metrics_ref import FsimParams, SsimParams, delta_e2000, dists_from_features, fsim, psnr, sam_degrees, ssim
from .normalize import FixedRangeSpec, PercentileNormSpec, band_percentiles, fixed_range_normalize, percentile_normalize
from .report import dumps, make_report
from .tensorfile import read_tensor, write_tensor

EXIT_OK, EXIT_IO, EXIT_DOMAIN, EXIT_USAGE = 0, 2, 3, 4

IMAGE_METRICS = ("psnr", "ssim", "fsim", "sam", "de2000", "niqe", "qnr")
SET_METRICS = ("fid", "dists", "lpips", "nll", "ece")
ALL_METRICS = IMAGE_METRICS + SET_METRICS


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _emit(report: dict, args, default_path=None):
    text = dumps(report)
    path = getattr(args, "report", None) or default_path
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    if args.stdout or not path:
        sys.stdout.write(text)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _caught(records) -> list[str]:
    return [str(w.message) for w in records]


# --------------------------------------------------------------------------
# normalize


def cmd_normalize(args) -> int:
    img = load_image(args.input, args.bits)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.mode == "percentile":
            spec = PercentileNormSpec(args.plow, args.phigh)
            out = percentile_normalize(ImageTensor(img.data, Domain.RAW_DN), spec)
            bands = band_percentiles(ImageTensor(img.data, Domain.RAW_DN), spec)
            params = {"mode": "percentile", "p_low": spec.p_low, "p_high": spec.p_high}
            extra = {"band_percentiles": [list(b) for b in bands]}
            for i, (lo, hi) in enumerate(bands):
                if lo == hi:
                    warnings.warn(f"band {i} is degenerate (Q_low == Q_high == {lo}); mapped to 0")
        else:
            spec = FixedRangeSpec(args.min, args.max)
            out = fixed_range_normalize(ImageTensor(img.data, Domain.RAW_DN), spec)
            params = {"mode": "fixed", "min_val": spec.min_val, "max_val": spec.max_val}
            extra = {}
            if spec.min_val == spec.max_val:
                warnings.warn("min_val == max_val; output is all zeros")
    write_tensor(args.output, out.data)
    params.update({"input": args.input, "output": args.output, "bits": args.bits, "percentile_method": "linear"})
    results = {"shape": list(out.shape), "min": float(out.data.min()), "max": float(out.data.max()), **extra}
    _emit(make_report("normalize", params, results, _caught(caught)), args, default_path=args.output + ".json")
    return EXIT_OK


# --------------------------------------------------------------------------
# metrics


def _load_unit(path, bits):
    img = load_image(path, bits)
    return img.data / img.peak, img.peak


def _metrics_item(job):
    ref_path, test_path, names, opts = job
    out = {"ref": ref_path, "test": test_path}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        test, peak = _load_unit(test_path, opts["bits"])
        out["peak"] = peak
        ref = None
        if ref_path is not None:
            ref, _ = _load_unit(ref_path, opts["bits"])
        for name in names:
            if name == "niqe":
                out["niqe"] = niqe(test, opts["niqe_model"])
                continue
            if name == "qnr":
                pan, _ = _load_unit(opts["pan"], opts["bits"])
                res = qnr(test, ref, pan, opts["alpha"], opts["beta"])
                out["qnr"] = {"d_lambda": res.d_lambda, "d_s": res.d_s, "qnr": res.qnr}
                continue
            if name == "psnr":
                out["psnr"] = psnr(ref, test, 1.0)
            elif name == "ssim":
                out["ssim"] = ssim(ref, test, SsimParams(R=1.0))
            elif name == "fsim":
                out["fsim"] = fsim(ref, test, FsimParams(peak=1.0))
            elif name == "sam":
                value, excluded = sam_degrees(ref, test, return_excluded=True)
                out["sam"] = value
                out["sam_excluded_pixels"] = excluded
            elif name == "de2000":
                out["de2000"] = delta_e2000(
                    srgb_to_lab(ImageTensor(ref, Domain.UNIT)), srgb_to_lab(ImageTensor(test, Domain.UNIT))
                )
    out["warnings"] = _caught(caught)
    return out


def cmd_metrics(args) -> int:
    names = [n.strip() for n in args.metrics.split(",") if n.strip()]
    unknown = [n for n in names if n not in ALL_METRICS]
    if unknown:
        raise UsageError(f"unknown metric(s): {', '.join(unknown)}; choose from {', '.join(ALL_METRICS)}")
    img_names = [n for n in names if n in IMAGE_METRICS]
    ref_needed = [n for n in img_names if n != "niqe"]
    if img_names and not args.test:
        raise UsageError(f"{', '.join(img_names)} need --test images")
    if ref_needed and len(args.ref or []) != len(args.test or []):
        raise UsageError(f"{', '.join(ref_needed)} need one --ref per --test image")
    if "niqe" in names and not args.niqe_model:
        raise UsageError("niqe needs --niqe-model")
    if "qnr" in names and not args.pan:
        raise UsageError("qnr needs --pan (the fused image is --test, the upsampled MS image is --ref)")
    if "fid" in names and not (args.features_a and args.features_b):
        raise UsageError("fid needs --features-a and --features-b feature matrix files")
    for n in ("dists", "lpips"):
        if n in names and not (args.features_a and args.features_b):
            raise UsageError(f"{n} needs --features-a and --features-b feature stack directories")
    if "nll" in names and not (args.y and args.mu and args.sigma):
        raise UsageError("nll needs --y, --mu and --sigma tensor files")
    if "ece" in names and not (args.y and args.quantiles):
        raise UsageError("ece needs --y and --quantiles tensor files")

    opts = {"bits": args.bits, "pan": args.pan, "alpha": args.alpha, "beta": args.beta, "niqe_model": None}
    params = {
        "metrics": names,
        "bits": args.bits,
        "value_scaling": "images divided by their full-scale peak; PSNR/SSIM use R = 1",
        "ssim": {"window_size": 11, "window_sigma": 1.5, "K1": 0.01, "K2": 0.03, "R": 1.0,
                 "multichannel": "Rec.709 luminance"},
        "fsim": {"T1": 0.85, "T2": 160.0, "alpha": 1.0, "beta": 1.0, "pc_scales": 4, "pc_orientations": 4,
                 "color": "luminance only"},
        "de2000": {"kL": 1.0, "kC": 1.0, "kH": 1.0, "white": "D65"},
    }
    if "niqe" in names:
        opts["niqe_model"] = NiqeModel.from_array(read_tensor(args.niqe_model))
        p = opts["niqe_model"].params
        opts["niqe_model"] = NiqeModel(opts["niqe_model"].mu, opts["niqe_model"].sigma,
                                       NiqeParams(p.patch_size, p.sharpness_threshold, p.n_scales,
                                                  p.mscn_sigma, p.mscn_c, 1.0))
        params["niqe"] = {"model": args.niqe_model, "patch_size": p.patch_size, "n_scales": p.n_scales}
    if "qnr" in names:
        params["qnr"] = {"alpha": args.alpha, "beta": args.beta, "q_window": 8, "q_stride": 1,
                         "difference_clip": [0.0, 1.0], "gradient": "Scharr magnitude"}

    results: dict = {"items": [], "set": {}}
    if img_names:
        refs = args.ref if ref_needed else [None] * len(args.test)
        jobs = [(r, t, img_names, opts) for r, t in zip(refs, args.test)]
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results["items"] = list(pool.map(_metrics_item, jobs))
        else:
            results["items"] = [_metrics_item(j) for j in jobs]

    set_warn = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if "fid" in names:
            results["set"]["fid"] = fid(FeatureMatrix(load_matrix(args.features_a)),
                                        FeatureMatrix(load_matrix(args.features_b)))
        if "dists" in names or "lpips" in names:
            fa, fb = load_feature_stack(args.features_a), load_feature_stack(args.features_b)
            if "lpips" in names:
                results["set"]["lpips"] = perceptual_distance(fa, fb)
            if "dists" in names:
                n = len(fa.layers)
                if args.dists_weights:
                    w = read_tensor(args.dists_weights).astype(np.float64).reshape(2, -1)
                    alpha, beta = w[0], w[1]
                else:
                    alpha = beta = np.full(n, 1.0 / (2 * n))
                results["set"]["dists"] = dists_from_features(fa, fb, alpha, beta)
                params["dists"] = {"alpha": alpha, "beta": beta}
        if "nll" in names:
            results["set"]["nll"] = gaussian_nll(read_tensor(args.y), read_tensor(args.mu), read_tensor(args.sigma))
            params["nll"] = {"reduction": "mean per element"}
        if "ece" in names:
            q = load_matrix(args.quantiles)
            levels = _floats(args.levels) if args.levels else list(np.arange(1, q.shape[1] + 1) / (q.shape[1] + 1))
            results["set"]["ece"] = ece_regression(QuantileForecast(levels, q), read_tensor(args.y))
            params["ece"] = {"levels": levels, "weights": "uniform"}
    set_warn.extend(_caught(caught))
    warn = [f"{it['test']}: {w}" for it in results["items"] for w in it.pop("warnings")] + set_warn
    _emit(make_report("metrics", params, results, warn), args)
    return EXIT_OK


# --------------------------------------------------------------------------
# loss


def cmd_loss(args) -> int:
    pred = load_image(args.pred, args.bits)
    target = load_image(args.target, args.bits)
    p, t = pred.data / pred.peak, target.data / target.peak
    z0 = t if args.z0 is None else load_image(args.z0, args.bits).data
    weights = LossWeights(args.lambda_fft, args.lambda_color, args.lambda_lpips, args.gamma, args.blur_sigma,
                          args.omega, args.fft_space)
    features = None
    if args.features_pred or args.features_target:
        if not (args.features_pred and args.features_target):
            raise UsageError("the perceptual term needs both --features-pred and --features-target")
        features = (load_feature_stack(args.features_pred), load_feature_stack(args.features_target))
    res = total_loss(ImageTensor(p, Domain.UNIT), ImageTensor(t, Domain.UNIT), z0, args.sigma_t, weights,
                     features, want_grad=bool(args.grad_out))
    if args.grad_out:
        write_tensor(args.grad_out, res.grad)
    params = {
        "pred": args.pred,
        "target": args.target,
        "z0": args.z0 or "target",
        "sigma_t": args.sigma_t,
        **weights.to_dict(),
        "omega_eps": 1e-4,
        "reduction": "mean",
        "color_space": "CIELAB D65",
        "grad_excludes": "perceptual",
        "grad_out": args.grad_out,
    }
    warn = [] if features else ["perceptual term absent (no feature stacks given)"]
    _emit(make_report("loss", params, res.to_dict(), warn), args)
    return EXIT_OK


# --------------------------------------------------------------------------
# uncertainty / gate / schedule


def cmd_uncertainty(args) -> int:
    if len(args.samples) < 2:
        raise InsufficientSamples(f"need at least 2 sample tensors, got {len(args.samples)}")
    samples = []
    for path in args.samples:
        img = load_image(path)
        samples.append(img.data / img.peak)
    v = variance_map(samples)
    if args.kappa is not None:
        res = u_fixed_kappa(v, args.kappa)
    else:
        batch = [float(np.mean(v.data))]
        if args.tau_batch:
            batch = list(np.asarray(read_tensor(args.tau_batch), dtype=np.float64).ravel())
        res = u_from_tau(v, tau_from_batch(batch))
    if args.variance_out:
        write_tensor(args.variance_out, v.data)
    params = {
        "samples": args.samples,
        "mode": res.mode.value,
        "kappa": args.kappa,
        "tau_batch": args.tau_batch,
        "tau_eps": 1e-12,
        "variance_estimator": "unbiased (T - 1)",
        "u_reduction": "mean over H x W x C",
    }
    results = {"u": res.u, "scale": res.scale, "mean_variance": float(np.mean(v.data)), "t_mc": len(samples)}
    _emit(make_report("uncertainty", params, results), args)
    return EXIT_OK


def _gate_params_from_args(args) -> GateParams:
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        return GateParams.from_dict(cfg.get("gate_params", cfg))
    if not args.block:
        raise UsageError("give at least one --block NAME:p0,pt,pu or a --config file")
    blocks = {}
    for spec in args.block:
        name, _, coeffs = spec.partition(":")
        vals = _floats(coeffs)
        if not name or len(vals) != 3:
            raise UsageError(f"bad --block {spec!r}; expected NAME:p0,pt,pu")
        blocks[name] = tuple(vals)
    return GateParams(blocks, args.s_ctrl)


def cmd_gate(args) -> int:
    gp = _gate_params_from_args(args)
    t_grid = _floats(args.t_norm) if args.t_norm else [t / args.steps for t in range(args.steps + 1)]
    alpha = {b: [gate_alpha(gp, b, t, args.u) for t in t_grid] for b in gp.blocks}
    scale = {b: [gp.s_ctrl * a for a in alpha[b]] for b in gp.blocks}
    params = {"gate_params": gp.to_dict(), "u": args.u, "t_norm": t_grid, "t_norm_definition": "t / T_s"}
    _emit(make_report("gate", params, {"alpha": alpha, "residual_scale": scale}), args)
    return EXIT_OK


def cmd_schedule(args) -> int:
    sched = make_schedule(args.steps, args.shift)
    params = {"steps": sched.steps, "shift": sched.shift, "family": "s*x / (1 + (s-1)*x), x = t/T_s"}
    _emit(make_report("schedule", params, {"sigmas": sched.sigmas}), args)
    return EXIT_OK


# --------------------------------------------------------------------------
# harness / niqe-fit


def cmd_harness(args) -> int:
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
    overrides = {
        "seed": args.seed,
        "size": args.size,
        "scale_factor": args.scale,
        "t_mc": args.t,
        "p_do": args.dropout,
        "kappa": args.kappa,
        "n_images": args.images,
        "steps": args.steps,
        "sigma_t": args.sigma_t,
        "uncertainty_mode": {"tau": "percentile-tau", "kappa": "fixed-kappa", None: None}[args.mode],
    }
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    report = run_pipeline(HarnessConfig.from_dict(cfg))
    text = report.to_json()
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
    if args.stdout or not args.report:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_niqe_fit(args) -> int:
    params = NiqeParams(args.patch_size, args.sharpness, args.scales)
    images = []
    for p in args.images:
        img = load_image(p, args.bits)
        images.append(img.data / img.peak)
    model = niqe_fit(images, params)
    write_tensor(args.output, model.to_array())
    report = make_report(
        "niqe-fit",
        {"images": args.images, "patch_size": params.patch_size, "sharpness_threshold": params.sharpness_threshold,
         "n_scales": params.n_scales, "mscn_sigma": params.mscn_sigma, "mscn_c": params.mscn_c},
        {"dim": model.dim, "output": args.output},
    )
    _emit(report, args)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_output(p):
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--stdout", action="store_true", help="print the JSON report on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="srkit", description="Super-resolution evaluation, loss and uncertainty toolkit.")
    parser.add_argument("--version", action="version", version=f"srkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("normalize", help="scale raw DN images to [0, 1]")
    p.add_argument("input")
    p.add_argument("output", help="output tensor file (.srtn)")
    p.add_argument("--mode", choices=("percentile", "fixed"), default="percentile")
    p.add_argument("--plow", type=float, default=2.0)
    p.add_argument("--phigh", type=float, default=98.0)
    p.add_argument("--min", type=float, default=0.0)
    p.add_argument("--max", type=float, default=3000.0)
    p.add_argument("--bits", type=int, choices=(12, 16))
    _add_output(p)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("metrics", help="full-reference, no-reference and set-level metrics")
    p.add_argument("--ref", nargs="+")
    p.add_argument("--test", nargs="+")
    p.add_argument("--metrics", default="psnr,ssim")
    p.add_argument("--bits", type=int, choices=(12, 16))
    p.add_argument("--pan")
    p.add_argument("--alpha", type=float, default=1.0, help="QNR spectral exponent")
    p.add_argument("--beta", type=float, default=1.0, help="QNR spatial exponent")
    p.add_argument("--features-a")
    p.add_argument("--features-b")
    p.add_argument("--dists-weights", help="2 x L tensor: alpha row then beta row")
    p.add_argument("--niqe-model")
    p.add_argument("--y")
    p.add_argument("--mu")
    p.add_argument("--sigma")
    p.add_argument("--quantiles", help="n x M predicted quantiles")
    p.add_argument("--levels", help="comma-separated quantile levels")
    p.add_argument("--jobs", type=int, default=1)
    _add_output(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("loss", help="loss breakdown and optional gradient")
    p.add_argument("--pred", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--z0")
    p.add_argument("--bits", type=int, choices=(12, 16))
    p.add_argument("--sigma-t", type=float, default=0.5)
    p.add_argument("--omega", choices=("uniform", "inv-sigma-sq"), default="uniform")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--blur-sigma", type=float, default=3.0)
    p.add_argument("--lambda-fft", type=float, default=1.0)
    p.add_argument("--lambda-color", type=float, default=1.0)
    p.add_argument("--lambda-lpips", type=float, default=1.0)
    p.add_argument("--fft-space", choices=("pixel", "latent"), default="pixel")
    p.add_argument("--features-pred")
    p.add_argument("--features-target")
    p.add_argument("--grad-out")
    _add_output(p)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("uncertainty", help="MC-dropout uncertainty from sample tensors")
    p.add_argument("samples", nargs="+")
    p.add_argument("--kappa", type=float, help="fixed scale; omit for the percentile-tau mode")
    p.add_argument("--tau-batch", help="tensor of per-image mean variances for tau")
    p.add_argument("--variance-out")
    _add_output(p)
    p.set_defaults(func=cmd_uncertainty)

    p = sub.add_parser("gate", help="per-block gate values over normalized time")
    p.add_argument("--block", action="append", help="NAME:p0,pt,pu (repeatable)")
    p.add_argument("--config", help="JSON file with gate_params")
    p.add_argument("--s-ctrl", type=float, default=1.0)
    p.add_argument("--u", type=float, required=True)
    p.add_argument("--t-norm", help="comma-separated normalized times")
    p.add_argument("--steps", type=int, default=10)
    _add_output(p)
    p.set_defaults(func=cmd_gate)

    p = sub.add_parser("schedule", help="print the flow-match sigma schedule")
    p.add_argument("--steps", type=int, default=28)
    p.add_argument("--shift", type=float, default=1.0)
    _add_output(p)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("harness", help="synthetic end-to-end run")
    p.add_argument("--config", help="JSON HarnessConfig; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--scale", type=int)
    p.add_argument("--t", type=int, help="MC sample count")
    p.add_argument("--dropout", type=float)
    p.add_argument("--mode", choices=("tau", "kappa"))
    p.add_argument("--kappa", type=float)
    p.add_argument("--images", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--sigma-t", type=float)
    _add_output(p)
    p.set_defaults(func=cmd_harness)

    p = sub.add_parser("niqe-fit", help="fit a pristine NIQE model from user images")
    p.add_argument("images", nargs="+")
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--patch-size", type=int, default=96)
    p.add_argument("--sharpness", type=float, default=0.75)
    p.add_argument("--scales", type=int, default=2)
    p.add_argument("--bits", type=int, choices=(12, 16))
    _add_output(p)
    p.set_defaults(func=cmd_niqe_fit)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"srkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError) as exc:
        print(f"srkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except SrkitError as exc:
        print(f"srkit {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code if exc.exit_code in (EXIT_IO, EXIT_DOMAIN) else EXIT_DOMAIN
    except (ValueError, KeyError) as exc:
        print(f"srkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
