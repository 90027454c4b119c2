"""Desk-scale exercise of the uncertainty -> gate -> loss chain.

A synthetic HR scene is degraded to LR, a toy reconstructor with inverted
dropout on its detail branch draws MC samples, and the run report collects
the resulting uncertainty, per-block gates, loss breakdown and metrics.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import DomainError, FormatError
from .flowctl import (
    GateParams,
    UncertaintyMode,
    blend_residual,
    gate_alpha,
    tau_from_batch,
    u_fixed_kappa,
    u_from_tau,
    variance_map,
)
from .imgmath import Domain, ImageTensor, gaussian_blur, gaussian_kernel, resize_bicubic, srgb_to_lab
from .loss import LossWeights, total_loss
from .metrics_ref import delta_e2000, fsim, psnr, sam_degrees, ssim

REPORT_SCHEMA_VERSION = 1
HIGHPASS_SIGMA = 2.0

# RNG streams, keyed together with (seed, image id, sample index)
_STREAM_SCENE = 0
_STREAM_DROPOUT = 1


def keyed_rng(seed: int, image_id: int, stream: int, k: int = 0) -> np.random.Generator:
    """Counter-based generator; any (seed, image, stream, k) can be drawn independently."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, image_id, stream, k])))


def default_gate_params() -> GateParams:
    return GateParams(
        {"block0": (1.0, -1.0, -2.0), "block1": (0.5, 0.0, -2.0), "block2": (0.0, 1.0, -2.0)},
        s_ctrl=1.0,
    )


@dataclass(frozen=True)
class HarnessConfig:
    seed: int = 0
    size: int = 64
    scale_factor: int = 4
    t_mc: int = 8
    p_do: float = 0.1
    uncertainty_mode: UncertaintyMode = UncertaintyMode.FIXED_KAPPA
    kappa: float = 1e-4
    gate_params: GateParams = field(default_factory=default_gate_params)
    weights: LossWeights = field(default_factory=LossWeights)
    n_images: int = 1
    steps: int = 10
    sigma_t: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "uncertainty_mode", UncertaintyMode(self.uncertainty_mode))
        if self.t_mc < 2:
            raise DomainError("t_mc must be at least 2")
        if not 0.0 <= self.p_do < 1.0:
            raise DomainError("dropout rate must lie in [0, 1)")
        if not self.kappa > 0:
            raise DomainError("kappa must be positive")
        if self.size < 4 * self.scale_factor or self.scale_factor < 1:
            raise DomainError("size must be at least 4 * scale_factor")
        if self.n_images < 1 or self.steps < 1:
            raise DomainError("n_images and steps must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["uncertainty_mode"] = self.uncertainty_mode.value
        d["gate_params"] = self.gate_params.to_dict()
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HarnessConfig":
        d = dict(d)
        if "gate_params" in d:
            d["gate_params"] = GateParams.from_dict(d["gate_params"])
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


# --------------------------------------------------------------------------
# synthetic scenes


def _band_limited_noise(rng, size: int) -> np.ndarray:
    field_ = np.zeros((size, size))
    for sigma, amp in ((1.0, 0.35), (3.0, 0.5), (max(size / 16, 1.0), 1.0)):
        n = rng.standard_normal((size, size))
        field_ += amp * gaussian_blur(n[:, :, None], gaussian_kernel(sigma))[:, :, 0]
    field_ -= field_.mean()
    return field_ / (field_.std() + 1e-12)


def _star_polygon_mask(rng, size: int) -> np.ndarray:
    """Random star-shaped polygon (a slump-scar footprint) as a boolean mask."""
    n_vert = 9
    cy, cx = rng.uniform(0.35, 0.65, 2) * size
    r_mean = rng.uniform(0.12, 0.22) * size
    # jittered even spacing keeps every angular gap below pi, so the centre sees each edge
    ang = (np.arange(n_vert) + rng.uniform(-0.3, 0.3, n_vert)) * 2 * np.pi / n_vert
    ang = np.sort((ang + rng.uniform(0, 2 * np.pi)) % (2 * np.pi))
    rad = r_mean * rng.uniform(0.6, 1.4, n_vert)
    vy, vx = cy + rad * np.sin(ang), cx + rad * np.cos(ang)

    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    phi = np.arctan2(yy - cy, xx - cx) % (2 * np.pi)
    # edge i joins vertex i-1 and i (cyclic); pick it by angle
    edge = np.searchsorted(ang, phi) % n_vert
    prev = (edge - 1) % n_vert
    ax, ay = vx[prev], vy[prev]
    bx, by = vx[edge], vy[edge]
    # inside iff pixel and centre lie on the same side of the edge
    side_p = (bx - ax) * (yy - ay) - (by - ay) * (xx - ax)
    side_c = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    return side_p * side_c >= 0


def synth_scene(seed: int, size: int, image_id: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """HR RGB scene in [0, 1] and its scar mask."""
    rng = keyed_rng(seed, image_id, _STREAM_SCENE)
    texture = _band_limited_noise(rng, size)
    mask = _star_polygon_mask(rng, size)
    albedo = 0.55 + 0.1 * texture
    albedo = np.where(mask, 0.45 * albedo + 0.05 * texture, albedo)
    tint = np.array([1.0, 0.97, 0.9])
    gain = rng.uniform(0.85, 1.15, 3)
    bias = rng.uniform(-0.04, 0.04, 3)
    hr = albedo[:, :, None] * tint * gain + bias
    hr = hr + 0.02 * np.stack([_band_limited_noise(rng, size) for _ in range(3)], axis=-1)
    return np.clip(hr, 0.0, 1.0), mask


def gen_pair(seed: int, size: int, scale_factor: int = 4, image_id: int = 0, return_mask: bool = False):
    """Deterministic (hr, lr) pair; LR is anti-alias blurred then bicubically downsampled."""
    hr_arr, mask = synth_scene(seed, size, image_id)
    hr = ImageTensor(hr_arr, Domain.UNIT)
    lr = resize_bicubic(gaussian_blur(hr, gaussian_kernel(scale_factor / 2.0)), 1.0 / scale_factor)
    return (hr, lr, mask) if return_mask else (hr, lr)


# --------------------------------------------------------------------------
# toy stochastic reconstructor


def dropout_mask(shape, p_do: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: Bernoulli(1 - p_do) scaled by 1 / (1 - p_do)."""
    if not 0.0 <= p_do < 1.0:
        raise DomainError("dropout rate must lie in [0, 1)")
    if p_do == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p_do
    return keep / (1.0 - p_do)


def reconstruct_mc(lr, t_mc: int, p_do: float, seed: int, scale_factor: int = 4, image_id: int = 0) -> list[ImageTensor]:
    """``t_mc`` reconstructions ``up + mask_k * highpass(up)`` of an LR image."""
    if t_mc < 2:
        raise DomainError("t_mc must be at least 2")
    if not 0.0 <= p_do < 1.0:
        raise DomainError("dropout rate must lie in [0, 1)")
    up = resize_bicubic(lr, float(scale_factor))
    up_arr = up.data if isinstance(up, ImageTensor) else up
    detail = up_arr - gaussian_blur(up_arr, gaussian_kernel(HIGHPASS_SIGMA))
    samples = []
    for k in range(t_mc):
        m = dropout_mask(up_arr.shape, p_do, keyed_rng(seed, image_id, _STREAM_DROPOUT, k))
        samples.append(ImageTensor(np.clip(up_arr + m * detail, 0.0, 1.0), Domain.UNIT))
    return samples


# --------------------------------------------------------------------------
# run report


@dataclass
class RunReport:
    config: dict
    records: list
    metadata: dict
    warnings: list = field(default_factory=list)
    toolkit_version: str = __version__
    schema_version: int = REPORT_SCHEMA_VERSION
    command: str = "harness"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        from .report import dumps

        return dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        from .report import loads

        d = loads(text)
        try:
            return cls(**d)
        except TypeError as exc:
            raise FormatError(f"not a run report: {exc}") from None


def _metrics(hr: ImageTensor, pred: ImageTensor) -> dict:
    return {
        "psnr": psnr(hr, pred, 1.0),
        "ssim": ssim(hr, pred),
        "sam": sam_degrees(hr, pred),
        "de2000": delta_e2000(srgb_to_lab(hr), srgb_to_lab(pred)),
        "fsim": fsim(hr, pred),
    }


def run_pipeline(config: HarnessConfig) -> RunReport:
    """Chain MC variance -> u -> per-block gates -> blended residuals, plus loss and metrics."""
    images = []
    for image_id in range(config.n_images):
        hr, lr = gen_pair(config.seed, config.size, config.scale_factor, image_id)
        samples = reconstruct_mc(lr, config.t_mc, config.p_do, config.seed, config.scale_factor, image_id)
        images.append((image_id, hr, lr, samples, variance_map(samples)))

    mean_vars = [float(np.mean(v.data)) for *_, v in images]
    tau = tau_from_batch(mean_vars) if config.uncertainty_mode is UncertaintyMode.PERCENTILE_TAU else None

    t_grid = [t / config.steps for t in range(config.steps + 1)]
    gp = config.gate_params
    records = []
    notes = []
    for (image_id, hr, lr, samples, v), mv in zip(images, mean_vars):
        if tau is not None:
            unc = u_from_tau(v, tau)
        else:
            unc = u_fixed_kappa(v, config.kappa)
        u = unc.u

        pred = ImageTensor(np.mean([s.data for s in samples], axis=0), Domain.UNIT)
        up = resize_bicubic(lr, float(config.scale_factor))
        residual = pred.data - up.data
        r_norm = float(np.linalg.norm(residual))

        alpha = {b: [gate_alpha(gp, b, t, u) for t in t_grid] for b in gp.blocks}
        blended = {
            b: [float(np.linalg.norm(blend_residual(residual, a, gp.s_ctrl))) for a in alpha[b]] for b in gp.blocks
        }
        breakdown = total_loss(pred, hr, hr, config.sigma_t, config.weights)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            metrics = _metrics(hr, pred)
        notes.extend(f"image {image_id}: {w.message}" for w in caught)
        records.append(
            {
                "image_id": image_id,
                "mean_variance": mv,
                "u": u,
                "uncertainty_mode": unc.mode.value,
                "scale": unc.scale,
                "t_norm": t_grid,
                "alpha": alpha,
                "residual_norm": r_norm,
                "blended_residual_norm": blended,
                "loss": breakdown.to_dict(),
                "metrics": metrics,
            }
        )

    metadata = {
        "u_granularity": "once per image; alpha evaluated over the t_norm grid",
        "u_reduction": "mean over H x W x C",
        "variance_estimator": "unbiased (T - 1)",
        "tau_eps": 1e-12,
        "highpass": f"identity - gaussian_blur(sigma={HIGHPASS_SIGMA})",
        "lr_degradation": f"gaussian_blur(sigma=scale/2) then bicubic 1/{config.scale_factor}",
        "loss_target": "mean MC reconstruction vs HR; z0 = HR (pixel space)",
        "rng": "Philox keyed by (seed, image_id, stream, k)",
    }
    return RunReport(config=config.to_dict(), records=records, metadata=metadata, warnings=notes)
