"""Image mathematics shared by the loss, metric and harness modules.

Images are ``ImageTensor`` values: an ``(H, W, C)`` float64 array plus a
value-domain tag.  All border handling uses half-sample symmetric
reflection (``d c b a | a b c d | d c b a``), which keeps a normalized
symmetric filter mean-preserving.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EmptyInput, ShapeError

_DOMAIN_TOL = 1e-9


class Domain(str, enum.Enum):
    RAW_DN = "raw-dn"
    UNIT = "unit"
    LAB = "lab"
    LATENT = "latent"


@dataclass(frozen=True)
class ImageTensor:
    """Dense ``H x W x C`` image with a value-domain tag.

    A 2-D array is promoted to a single channel.  Unit images must lie in
    ``[0, 1]`` and Lab images must have three channels with ``L`` in
    ``[0, 100]``; violations raise :class:`DomainError`.
    """

    data: np.ndarray
    domain: Domain = Domain.LATENT

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError(f"expected an H x W x C array, got shape {arr.shape}")
        domain = Domain(self.domain)
        if domain is not Domain.RAW_DN and not np.all(np.isfinite(arr)):
            raise DomainError("non-finite samples")
        if domain is Domain.UNIT:
            if arr.min() < -_DOMAIN_TOL or arr.max() > 1 + _DOMAIN_TOL:
                raise DomainError("unit-domain samples must lie in [0, 1]")
        elif domain is Domain.LAB:
            if arr.shape[2] != 3:
                raise DomainError("Lab images need exactly 3 channels")
            L = arr[..., 0]
            if L.min() < -_DOMAIN_TOL or L.max() > 100 + _DOMAIN_TOL:
                raise DomainError("Lab lightness must lie in [0, 100]")
        object.__setattr__(self, "data", np.ascontiguousarray(arr))
        object.__setattr__(self, "domain", domain)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def with_data(self, data, domain=None) -> "ImageTensor":
        return ImageTensor(data, self.domain if domain is None else domain)


def as_image(img, domain=Domain.LATENT) -> ImageTensor:
    """Pass an ImageTensor through; wrap a bare array with ``domain``."""
    if isinstance(img, ImageTensor):
        return img
    return ImageTensor(img, domain)


def as_array(img) -> np.ndarray:
    if isinstance(img, ImageTensor):
        return img.data
    arr = np.asarray(img, dtype=np.float64)
    return arr[:, :, None] if arr.ndim == 2 else arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what="inputs"):
    if a.shape != b.shape:
        raise ShapeError(f"{what} differ in shape: {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# colour


_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_SRGB = np.linalg.inv(_SRGB_TO_XYZ)
# D65 white taken as the image of RGB (1, 1, 1) so neutrals get a* = b* = 0 exactly.
D65_WHITE = _SRGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0
_LAB_EPS = _DELTA**3
_LAB_SLOPE = 1.0 / (3.0 * _DELTA**2)


def _srgb_eotf(c):
    return np.where(c <= 0.04045, c / 12.92, ((np.maximum(c, 0.04045) + 0.055) / 1.055) ** 2.4)


def _srgb_eotf_deriv(c):
    return np.where(c <= 0.04045, 1.0 / 12.92, 2.4 / 1.055 * ((np.maximum(c, 0.04045) + 0.055) / 1.055) ** 1.4)


def _srgb_oetf(c):
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.maximum(c, 0.0031308) ** (1 / 2.4) - 0.055)


def _lab_f(t):
    return np.where(t > _LAB_EPS, np.cbrt(np.maximum(t, _LAB_EPS)), t * _LAB_SLOPE + 4.0 / 29.0)


def _lab_f_deriv(t):
    return np.where(t > _LAB_EPS, np.cbrt(np.maximum(t, _LAB_EPS)) ** -2 / 3.0, _LAB_SLOPE)


def _lab_f_inv(f):
    return np.where(f > _DELTA, f**3, (f - 4.0 / 29.0) / _LAB_SLOPE)


def srgb_array_to_lab(rgb: np.ndarray) -> np.ndarray:
    """sRGB in ``[0, 1]`` (last axis = 3) to CIELAB, D65."""
    lin = _srgb_eotf(rgb)
    xyz = lin @ _SRGB_TO_XYZ.T / D65_WHITE
    f = _lab_f(xyz)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def srgb_to_lab_vjp(rgb: np.ndarray, grad_lab: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. Lab back to the sRGB input."""
    lin = _srgb_eotf(rgb)
    t = lin @ _SRGB_TO_XYZ.T / D65_WHITE
    df = _lab_f_deriv(t)
    gL, ga, gb = grad_lab[..., 0], grad_lab[..., 1], grad_lab[..., 2]
    g_f = np.stack([500.0 * ga, 116.0 * gL - 500.0 * ga + 200.0 * gb, -200.0 * gb], axis=-1)
    g_xyz = g_f * df / D65_WHITE
    g_lin = g_xyz @ _SRGB_TO_XYZ
    return g_lin * _srgb_eotf_deriv(rgb)


def lab_array_to_srgb(lab: np.ndarray) -> np.ndarray:
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = _lab_f_inv(np.stack([fx, fy, fz], axis=-1)) * D65_WHITE
    return _srgb_oetf(xyz @ _XYZ_TO_SRGB.T)


def srgb_to_lab(img) -> ImageTensor:
    img = as_image(img, Domain.UNIT)
    if img.domain is not Domain.UNIT or img.channels != 3:
        raise DomainError("srgb_to_lab needs a 3-channel unit-domain image")
    lab = srgb_array_to_lab(img.data)
    lab[..., 0] = np.clip(lab[..., 0], 0.0, 100.0)
    return ImageTensor(lab, Domain.LAB)


def lab_to_srgb(img) -> ImageTensor:
    """Inverse of :func:`srgb_to_lab`; out-of-gamut values are clipped."""
    img = as_image(img, Domain.LAB)
    if img.domain is not Domain.LAB:
        raise DomainError("lab_to_srgb needs a Lab image")
    return ImageTensor(np.clip(lab_array_to_srgb(img.data), 0.0, 1.0), Domain.UNIT)


def luminance(img) -> np.ndarray:
    """Rec.709 luma for 3-channel input, the channel itself for 1-channel."""
    arr = as_array(img)
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    if arr.shape[2] == 3:
        return arr @ np.array([0.2126, 0.7152, 0.0722])
    raise DomainError(f"no luminance projection for {arr.shape[2]} channels")


# --------------------------------------------------------------------------
# filtering


@dataclass(frozen=True)
class GaussianKernel:
    sigma: float
    radius: int
    weights: np.ndarray = field(repr=False)


def gaussian_kernel(sigma: float, radius: int | None = None) -> GaussianKernel:
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    min_radius = max(1, math.ceil(3.0 * sigma))
    radius = min_radius if radius is None else int(radius)
    if radius < min_radius:
        raise DomainError(f"radius must be at least ceil(3*sigma) = {min_radius}")
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return GaussianKernel(float(sigma), radius, w / w.sum())


def reflect_indices(n: int, radius: int) -> np.ndarray:
    """Source index for padded positions ``-radius .. n-1+radius``."""
    m = np.arange(-radius, n + radius) % (2 * n)
    return np.where(m < n, m, 2 * n - 1 - m)


def correlate1d(x: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    """Reflect-padded correlation of ``x`` with an odd-length 1-D filter."""
    r = len(weights) // 2
    n = x.shape[axis]
    padded = np.take(x, reflect_indices(n, r), axis=axis)
    padded = np.moveaxis(padded, axis, 0)
    out = np.zeros((n,) + padded.shape[1:])
    for k, w in enumerate(weights):
        if w != 0.0:
            out += w * padded[k : k + n]
    return np.moveaxis(out, 0, axis)


def correlate1d_adjoint(g: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    """Exact transpose of :func:`correlate1d` (padding folded back)."""
    r = len(weights) // 2
    n = g.shape[axis]
    g0 = np.moveaxis(g, axis, 0)
    spread = np.zeros((n + 2 * r,) + g0.shape[1:])
    for k, w in enumerate(weights):
        if w != 0.0:
            spread[k : k + n] += w * g0
    out = np.zeros_like(g0)
    np.add.at(out, reflect_indices(n, r), spread)
    return np.moveaxis(out, 0, axis)


def gaussian_blur(img, kernel: GaussianKernel | float):
    """Separable channel-wise Gaussian blur; returns the input's type."""
    if not isinstance(kernel, GaussianKernel):
        kernel = gaussian_kernel(kernel)
    arr = as_array(img)
    out = correlate1d(correlate1d(arr, kernel.weights, 0), kernel.weights, 1)
    if isinstance(img, ImageTensor):
        if img.domain is Domain.UNIT:
            out = np.clip(out, 0.0, 1.0)
        return img.with_data(out)
    return out


def gaussian_blur_adjoint(g: np.ndarray, kernel: GaussianKernel) -> np.ndarray:
    return correlate1d_adjoint(correlate1d_adjoint(g, kernel.weights, 1), kernel.weights, 0)


_SCHARR_DERIV = np.array([-0.5, 0.0, 0.5])
_SCHARR_SMOOTH = np.array([3.0, 10.0, 3.0]) / 16.0


def scharr_gradients(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(gx, gy) of a 2-D array, each with unit response on a unit ramp."""
    gx = correlate1d(correlate1d(x, _SCHARR_DERIV, 1), _SCHARR_SMOOTH, 0)
    gy = correlate1d(correlate1d(x, _SCHARR_DERIV, 0), _SCHARR_SMOOTH, 1)
    return gx, gy


def gradient_magnitude(img) -> ImageTensor:
    img = as_image(img)
    if img.channels != 1:
        raise DomainError("gradient_magnitude needs a single-channel image")
    gx, gy = scharr_gradients(img.data[:, :, 0])
    return ImageTensor(np.hypot(gx, gy), Domain.LATENT)


def dft2_magnitude(img) -> ImageTensor:
    """Per-channel ``|DFT|``, unshifted (DC at index (0, 0))."""
    arr = as_array(img)
    return ImageTensor(np.abs(np.fft.fft2(arr, axes=(0, 1))), Domain.LATENT)


def percentile(values, p: float) -> float:
    """Inclusive linear-interpolation percentile, ``p`` in [0, 100]."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInput("percentile of an empty array")
    if not 0.0 <= p <= 100.0:
        raise DomainError(f"percentile level {p} outside [0, 100]")
    if not np.all(np.isfinite(v)):
        raise DomainError("percentile input must be finite")
    return float(np.percentile(v, p, method="linear"))


# --------------------------------------------------------------------------
# resampling


def _catmull_rom(x):
    a = -0.5
    x = np.abs(x)
    return np.where(
        x <= 1.0,
        (a + 2.0) * x**3 - (a + 3.0) * x**2 + 1.0,
        np.where(x < 2.0, a * x**3 - 5.0 * a * x**2 + 8.0 * a * x - 4.0 * a, 0.0),
    )


def bicubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``(n_out, n_in)`` Catmull-Rom resampling matrix, pixel-centre aligned, edge-clamped."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(int)
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for off in (-1, 0, 1, 2):
        idx = base + off
        w = _catmull_rom(src - idx)
        np.add.at(mat, (rows, np.clip(idx, 0, n_in - 1)), w)
    return mat


def output_size(n: int, factor: float) -> int:
    return max(1, int(math.floor(n * factor + 0.5)))


def resize_bicubic(img, factor: float):
    if not factor > 0:
        raise DomainError("resize factor must be positive")
    arr = as_array(img)
    h, w = arr.shape[:2]
    mh = bicubic_matrix(h, output_size(h, factor))
    mw = bicubic_matrix(w, output_size(w, factor))
    out = np.einsum("ih,hwc,jw->ijc", mh, arr, mw, optimize=True)
    if isinstance(img, ImageTensor):
        if img.domain is Domain.UNIT:
            out = np.clip(out, 0.0, 1.0)
        elif img.domain is Domain.LAB:
            out[..., 0] = np.clip(out[..., 0], 0.0, 100.0)
        return img.with_data(out)
    return out
