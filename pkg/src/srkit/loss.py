"""Training objective: flow-matching base term, radially weighted spectral
magnitude loss, blurred-CIELAB colour loss, feature-space perceptual
distance and their weighted total, with analytic gradients for the three
closed-form terms.

Every reduction is a mean over elements, so weights do not depend on image
resolution.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, ShapeError
from .imgmath import (
    Domain,
    ImageTensor,
    as_array,
    check_same_shape,
    correlate1d,
    gaussian_blur_adjoint,
    gaussian_kernel,
    srgb_array_to_lab,
    srgb_to_lab_vjp,
)

OMEGA_EPS = 1e-4


class OmegaMode(str, enum.Enum):
    UNIFORM = "uniform"
    INV_SIGMA_SQ = "inv-sigma-sq"


class FftSpace(str, enum.Enum):
    PIXEL = "pixel"
    LATENT = "latent"


@dataclass(frozen=True)
class LossWeights:
    lambda_fft: float = 1.0
    lambda_color: float = 1.0
    lambda_lpips: float = 1.0
    gamma: float = 1.0
    blur_sigma: float = 3.0
    omega_mode: OmegaMode = OmegaMode.UNIFORM
    fft_space: FftSpace = FftSpace.PIXEL

    def __post_init__(self):
        for name in ("lambda_fft", "lambda_color", "lambda_lpips", "gamma"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")
        if not self.blur_sigma > 0:
            raise DomainError("blur_sigma must be positive")
        object.__setattr__(self, "omega_mode", OmegaMode(self.omega_mode))
        object.__setattr__(self, "fft_space", FftSpace(self.fft_space))

    def to_dict(self) -> dict:
        return {
            "lambda_fft": self.lambda_fft,
            "lambda_color": self.lambda_color,
            "lambda_lpips": self.lambda_lpips,
            "gamma": self.gamma,
            "blur_sigma": self.blur_sigma,
            "omega_mode": self.omega_mode.value,
            "fft_space": self.fft_space.value,
        }


@dataclass(frozen=True)
class FeatureStack:
    """Per-layer ``(H_l, W_l, C_l)`` features and their channel weights."""

    layers: Sequence[np.ndarray]
    weights: Sequence[np.ndarray]

    def __post_init__(self):
        layers = [np.asarray(f, dtype=np.float64) for f in self.layers]
        layers = [f[:, :, None] if f.ndim == 2 else f for f in layers]
        weights = [np.asarray(w, dtype=np.float64).ravel() for w in self.weights]
        if len(weights) != len(layers):
            raise ShapeError("one weight vector per layer is required")
        for f, w in zip(layers, weights):
            if f.ndim != 3:
                raise ShapeError("feature layers must be H x W x C")
            if w.size != f.shape[2]:
                raise ShapeError(f"layer has {f.shape[2]} channels but {w.size} weights")
            if np.any(w < 0):
                raise DomainError("channel weights must be non-negative")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def unweighted(cls, layers) -> "FeatureStack":
        layers = [np.asarray(f, dtype=np.float64) for f in layers]
        return cls(layers, [np.ones(f.shape[-1] if f.ndim == 3 else 1) for f in layers])


@dataclass
class LossBreakdown:
    base: float
    fft: float
    color: float
    perceptual: float
    total: float
    weights: LossWeights
    perceptual_present: bool = False
    grad: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "base": self.base,
            "fft": self.fft,
            "color": self.color,
            "perceptual": self.perceptual,
            "perceptual_present": self.perceptual_present,
            "total": self.total,
            "weights": self.weights.to_dict(),
        }


def _pair(a, b):
    a, b = as_array(a), as_array(b)
    check_same_shape(a, b)
    return a, b


def omega(sigma_t: float, mode: OmegaMode) -> float:
    if OmegaMode(mode) is OmegaMode.UNIFORM:
        return 1.0
    return 1.0 / (sigma_t**2 + OMEGA_EPS)


def base_flow_loss(pred, z0, sigma_t: float, mode: OmegaMode = OmegaMode.UNIFORM, want_grad=False):
    p, z = _pair(pred, z0)
    w2 = omega(sigma_t, mode) ** 2
    r = p - z
    value = float(w2 * np.mean(r * r))
    if want_grad:
        return value, 2.0 * w2 * r / r.size
    return value


def radial_weight(h: int, w: int, gamma: float) -> np.ndarray:
    """``(rho / rho_max) ** gamma`` on the unshifted DFT grid.

    ``rho`` is the wrap-around distance from DC, so bin ``k`` and ``n - k``
    carry the same weight.
    """
    if h < 1 or w < 1:
        raise ShapeError("grid dimensions must be positive")
    if gamma < 0:
        raise DomainError("gamma must be non-negative")
    if gamma == 0:
        return np.ones((h, w))
    ky = np.arange(h)
    kx = np.arange(w)
    dy = np.minimum(ky, h - ky).astype(np.float64)
    dx = np.minimum(kx, w - kx).astype(np.float64)
    rho = np.hypot(dy[:, None], dx[None, :])
    rho_max = rho.max()
    if rho_max == 0:
        return np.zeros((h, w))
    return (rho / rho_max) ** gamma


def fft_loss(pred, target, gamma: float = 1.0, want_grad=False):
    """Mean radially weighted L1 distance between per-channel magnitude spectra."""
    p, t = _pair(pred, target)
    h, w, _ = p.shape
    W = radial_weight(h, w, gamma)[:, :, None]
    Fp = np.fft.fft2(p, axes=(0, 1))
    diff = np.abs(Fp) - np.abs(np.fft.fft2(t, axes=(0, 1)))
    value = float(np.mean(W * np.abs(diff)))
    if not want_grad:
        return value
    g_mag = W * np.sign(diff) / diff.size
    mag = np.abs(Fp)
    phase = np.divide(Fp, mag, out=np.zeros_like(Fp), where=mag > 0)
    # d|F_k|/dx_n = Re(conj(F_k)/|F_k| * e^{-i 2 pi k n / N})
    grad = np.real(np.fft.ifft2(g_mag * phase, axes=(0, 1))) * (h * w)
    return value, grad


def _check_unit_rgb(a: np.ndarray, src, what):
    if a.shape[2] != 3:
        raise DomainError(f"{what} must have 3 channels for the colour loss")
    if isinstance(src, ImageTensor) and src.domain is not Domain.UNIT:
        raise DomainError(f"{what} must be a unit-domain image")


def _blurred_lab(rgb: np.ndarray, kernel):
    lab = srgb_array_to_lab(rgb)
    return correlate1d(correlate1d(lab, kernel.weights, 0), kernel.weights, 1)


def color_loss(pred, target, blur_sigma: float = 3.0, want_grad=False):
    """L1 on blurred Lab plus L1 on per-channel spatial mean and stdev.

    Each term is averaged over channels (and pixels for the first one).
    The stdev is the population stdev over all pixels.
    """
    p, t = _pair(pred, target)
    _check_unit_rgb(p, pred, "pred")
    _check_unit_rgb(t, target, "target")
    kernel = gaussian_kernel(blur_sigma)
    bp = _blurred_lab(p, kernel)
    bt = _blurred_lab(t, kernel)
    n_pix = bp.shape[0] * bp.shape[1]

    d = bp - bt
    mu_p, mu_t = bp.mean(axis=(0, 1)), bt.mean(axis=(0, 1))
    sd_p, sd_t = bp.std(axis=(0, 1)), bt.std(axis=(0, 1))
    value = float(np.mean(np.abs(d)) + np.mean(np.abs(mu_p - mu_t)) + np.mean(np.abs(sd_p - sd_t)))
    if not want_grad:
        return value

    g = np.sign(d) / d.size
    g = g + np.sign(mu_p - mu_t) / (3.0 * n_pix)
    safe_sd = np.where(sd_p > 0, sd_p, 1.0)
    g_sd = np.where(sd_p > 0, np.sign(sd_p - sd_t) / (3.0 * n_pix * safe_sd), 0.0)
    g = g + g_sd * (bp - mu_p)
    g_lab = gaussian_blur_adjoint(g, kernel)
    return value, srgb_to_lab_vjp(p, g_lab)


def _unit_normalize(f: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.sum(f * f, axis=-1, keepdims=True))
    return np.divide(f, norm, out=np.zeros_like(f), where=norm > 0)


def perceptual_distance(fa: FeatureStack, fb: FeatureStack) -> float:
    """Sum over layers of the spatial mean of ``||w * (f_a - f_b)||^2`` on unit-normalized features."""
    if len(fa.layers) != len(fb.layers):
        raise ShapeError("feature stacks have different layer counts")
    total = 0.0
    for la, lb, w in zip(fa.layers, fb.layers, fa.weights):
        check_same_shape(la, lb, "feature layers")
        diff = w * (_unit_normalize(la) - _unit_normalize(lb))
        total += float(np.mean(np.sum(diff * diff, axis=-1)))
    return total


def total_loss(
    pred,
    target,
    z0,
    sigma_t: float,
    weights: LossWeights = LossWeights(),
    features: Optional[tuple[FeatureStack, FeatureStack]] = None,
    want_grad: bool = False,
) -> LossBreakdown:
    """Weighted objective; ``grad`` excludes the perceptual term (its features are external)."""
    p = as_array(pred)
    fft_ref = z0 if weights.fft_space is FftSpace.LATENT else target

    base = base_flow_loss(pred, z0, sigma_t, weights.omega_mode, want_grad)
    fft = fft_loss(pred, fft_ref, weights.gamma, want_grad)
    color = color_loss(pred, target, weights.blur_sigma, want_grad)
    grad = None
    if want_grad:
        (base, g_base), (fft, g_fft), (color, g_color) = base, fft, color
        grad = g_base + weights.lambda_fft * g_fft + weights.lambda_color * g_color
        assert grad.shape == p.shape

    perceptual = 0.0
    if features is not None:
        perceptual = perceptual_distance(*features)
    total = base + weights.lambda_fft * fft + weights.lambda_color * color + weights.lambda_lpips * perceptual
    return LossBreakdown(
        base=base,
        fft=fft,
        color=color,
        perceptual=perceptual,
        total=total,
        weights=weights,
        perceptual_present=features is not None,
        grad=grad,
    )
