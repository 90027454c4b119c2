"""No-reference and distributional metrics: FID, NIQE, QNR, Gaussian NLL
and quantile-coverage calibration error.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import DomainError, NumericalError, ShapeError, SizeError
from .imgmath import as_array, check_same_shape, correlate1d, gaussian_kernel, luminance, resize_bicubic, scharr_gradients

EIG_TOL = 1e-8


# --------------------------------------------------------------------------
# FID


@dataclass(frozen=True)
class FeatureMatrix:
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ShapeError("feature matrix must be n x d")
        if arr.shape[0] < 2:
            raise DomainError("at least 2 feature vectors are needed for a covariance")
        if not np.all(np.isfinite(arr)):
            raise DomainError("feature matrix has non-finite entries")
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def gaussian(self):
        return self.data.mean(axis=0), np.atleast_2d(np.cov(self.data, rowvar=False, ddof=1))


def _psd_eigh(m: np.ndarray, what: str):
    m = (m + m.T) / 2.0
    lam, vec = np.linalg.eigh(m)
    if lam.min() < -EIG_TOL:
        raise NumericalError(f"{what} has eigenvalue {lam.min():.3g} below -{EIG_TOL}")
    return np.maximum(lam, 0.0), vec


def frechet_distance(mu1, cov1, mu2, cov2) -> float:
    """``|mu1 - mu2|^2 + Tr(cov1) + Tr(cov2) - 2 Tr((S cov2 S)^(1/2))`` with ``S = cov1^(1/2)``."""
    lam, vec = _psd_eigh(cov1, "first covariance")
    s = (vec * np.sqrt(lam)) @ vec.T
    inner, _ = _psd_eigh(s @ cov2 @ s, "covariance product")
    diff = np.asarray(mu1) - np.asarray(mu2)
    d2 = diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * np.sqrt(inner).sum()
    # a squared distance; only rounding can take it below zero
    return float(max(d2, 0.0))


def fid(fa: FeatureMatrix, fb: FeatureMatrix) -> float:
    if not isinstance(fa, FeatureMatrix):
        fa = FeatureMatrix(fa)
    if not isinstance(fb, FeatureMatrix):
        fb = FeatureMatrix(fb)
    if fa.d != fb.d:
        raise ShapeError(f"feature dimensions differ: {fa.d} vs {fb.d}")
    for f in (fa, fb):
        if f.n < f.d:
            warnings.warn(f"FID: {f.n} samples for {f.d} dims, covariance is rank-deficient")
    mu1, c1 = fa.gaussian()
    mu2, c2 = fb.gaussian()
    return frechet_distance(mu1, c1, mu2, c2)


# --------------------------------------------------------------------------
# NIQE

_GAM = np.arange(0.2, 10.0 + 1e-9, 0.001)
_R_GGD = gamma_fn(1 / _GAM) * gamma_fn(3 / _GAM) / gamma_fn(2 / _GAM) ** 2
_R_AGGD = gamma_fn(2 / _GAM) ** 2 / (gamma_fn(1 / _GAM) * gamma_fn(3 / _GAM))


def ggd_fit(x: np.ndarray) -> tuple[float, float]:
    """Moment-matched generalized Gaussian: (shape, variance)."""
    x = x.ravel()
    sigma_sq = float(np.mean(x * x))
    e = float(np.mean(np.abs(x)))
    rho = sigma_sq / (e * e) if e > 0 else math.inf
    return float(_GAM[np.argmin(np.abs(rho - _R_GGD))]), sigma_sq


def aggd_fit(x: np.ndarray) -> tuple[float, float, float, float]:
    """Moment-matched asymmetric GGD: (shape, mean, left var, right var)."""
    x = x.ravel()
    left = x[x < 0]
    right = x[x > 0]
    left_std = math.sqrt(np.mean(left * left)) if left.size else 0.0
    right_std = math.sqrt(np.mean(right * right)) if right.size else 0.0
    gamma_hat = left_std / right_std if right_std > 0 else math.inf
    e = float(np.mean(np.abs(x)))
    msq = float(np.mean(x * x))
    r_hat = e * e / msq if msq > 0 else 0.0
    if math.isfinite(gamma_hat):
        r_hat_norm = r_hat * (gamma_hat**3 + 1) * (gamma_hat + 1) / (gamma_hat**2 + 1) ** 2
    else:
        r_hat_norm = r_hat
    alpha = float(_GAM[np.argmin((_R_AGGD - r_hat_norm) ** 2)])
    ratio = math.sqrt(gamma_fn(1 / alpha) / gamma_fn(3 / alpha))
    bl, br = left_std * ratio, right_std * ratio
    mean = (br - bl) * gamma_fn(2 / alpha) / gamma_fn(1 / alpha)
    return alpha, float(mean), left_std**2, right_std**2


@dataclass(frozen=True)
class NiqeParams:
    patch_size: int = 96
    sharpness_threshold: float = 0.75
    n_scales: int = 2
    mscn_sigma: float = 7.0 / 6.0
    mscn_c: float = 1.0
    peak: float = 1.0  # input value mapped to 255

    def to_list(self) -> list[float]:
        return [self.patch_size, self.sharpness_threshold, self.n_scales, self.mscn_sigma, self.mscn_c, self.peak]

    @classmethod
    def from_list(cls, v) -> "NiqeParams":
        return cls(int(v[0]), float(v[1]), int(v[2]), float(v[3]), float(v[4]), float(v[5]))


@dataclass(frozen=True)
class NiqeModel:
    mu: np.ndarray
    sigma: np.ndarray
    params: NiqeParams = field(default_factory=NiqeParams)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).ravel()
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        if sigma.shape != (mu.size, mu.size):
            raise ShapeError("NIQE covariance must be d x d for a d-vector mean")
        if not np.allclose(sigma, sigma.T, atol=1e-10 * max(1.0, np.abs(sigma).max())):
            raise DomainError("NIQE covariance must be symmetric")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.size

    def to_array(self) -> np.ndarray:
        """Single-tensor layout: row 0 params (zero-padded), row 1 mean, rows 2.. covariance."""
        d = self.dim
        header = np.zeros(max(d, 6))
        header[:6] = self.params.to_list()
        out = np.zeros((d + 2, max(d, 6)))
        out[0] = header
        out[1, :d] = self.mu
        out[2:, :d] = self.sigma
        return out

    @classmethod
    def from_array(cls, arr) -> "NiqeModel":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 3:
            raise ShapeError("NIQE model tensor must be (d + 2) x max(d, 6)")
        d = arr.shape[0] - 2
        return cls(arr[1, :d], arr[2:, :d], NiqeParams.from_list(arr[0, :6]))


def mscn(img: np.ndarray, params: NiqeParams) -> tuple[np.ndarray, np.ndarray]:
    """Mean-subtracted contrast-normalized coefficients and the local deviation map."""
    k = gaussian_kernel(params.mscn_sigma)
    mu = correlate1d(correlate1d(img, k.weights, 0), k.weights, 1)
    var = correlate1d(correlate1d(img * img, k.weights, 0), k.weights, 1) - mu * mu
    sd = np.sqrt(np.abs(var))
    return (img - mu) / (sd + params.mscn_c), sd


def _patch_features(m: np.ndarray) -> np.ndarray:
    feats = list(ggd_fit(m))
    for shifted in (
        m[:, 1:] * m[:, :-1],
        m[1:, :] * m[:-1, :],
        m[1:, 1:] * m[:-1, :-1],
        m[1:, :-1] * m[:-1, 1:],
    ):
        alpha, mean, lv, rv = aggd_fit(shifted)
        feats.extend([alpha, mean, lv, rv])
    return np.array(feats)


def niqe_features(img, params: NiqeParams = NiqeParams(), select_sharp: bool = False) -> np.ndarray:
    """Per-patch NSS features, ``(n_patches, 18 * n_scales)``.

    With ``select_sharp`` only patches whose mean local deviation exceeds
    ``sharpness_threshold`` times the image maximum are kept (pristine-model fitting).
    """
    y = luminance(as_array(img)) * (255.0 / params.peak)
    ps = params.patch_size
    h, w = y.shape
    if h < 2 * ps or w < 2 * ps:
        raise SizeError(f"image {h}x{w} needs at least {2 * ps}px per side for {ps}px patches")
    nh, nw = h // ps, w // ps
    y = y[: nh * ps, : nw * ps]

    per_scale = []
    sharp = None
    for scale in range(params.n_scales):
        p = ps // (2**scale)
        if p < 2:
            raise SizeError("patch size too small for the requested number of scales")
        m, sd = mscn(y, params)
        rows = []
        sharp_s = []
        for i in range(nh):
            for j in range(nw):
                sl = (slice(i * p, (i + 1) * p), slice(j * p, (j + 1) * p))
                rows.append(_patch_features(m[sl]))
                sharp_s.append(sd[sl].mean())
        per_scale.append(np.array(rows))
        if scale == 0:
            sharp = np.array(sharp_s)
        y = resize_bicubic(y[:, :, None], 0.5)[:, :, 0]
    feats = np.hstack(per_scale)
    if select_sharp and sharp is not None and sharp.max() > 0:
        feats = feats[sharp > params.sharpness_threshold * sharp.max()]
    return feats


def mvg_distance(mu_n, sigma_n, mu_x, sigma_x) -> tuple[float, bool]:
    """Mahalanobis-type distance between two Gaussians; flag is set when a pseudo-inverse was needed."""
    diff = np.asarray(mu_n) - np.asarray(mu_x)
    pooled = (np.asarray(sigma_n) + np.asarray(sigma_x)) / 2.0
    pooled = (pooled + pooled.T) / 2.0
    lam, vec = np.linalg.eigh(pooled)
    cutoff = max(lam.max(), 0.0) * pooled.shape[0] * np.finfo(float).eps
    singular = bool(lam.min() <= cutoff)
    inv_lam = np.where(lam > cutoff, 1.0 / np.where(lam > cutoff, lam, 1.0), 0.0)
    proj = vec.T @ diff
    return float(math.sqrt(max(float(np.sum(inv_lam * proj * proj)), 0.0))), singular


def niqe(img, model: NiqeModel) -> float:
    feats = niqe_features(img, model.params)
    if feats.shape[1] != model.dim:
        raise ShapeError(f"extractor gives {feats.shape[1]} features, model expects {model.dim}")
    if feats.shape[0] < 2:
        raise SizeError("need at least two patches to fit a covariance")
    mu_x = feats.mean(axis=0)
    sigma_x = np.cov(feats, rowvar=False)
    value, singular = mvg_distance(model.mu, model.sigma, mu_x, sigma_x)
    if singular:
        warnings.warn("NIQE: pooled covariance is singular, pseudo-inverse used")
    return value


def niqe_fit(images: Sequence, params: NiqeParams = NiqeParams()) -> NiqeModel:
    """Pristine model from user-supplied images, sharp patches only."""
    feats = np.vstack([niqe_features(im, params, select_sharp=True) for im in images])
    if feats.shape[0] < 2:
        raise SizeError("pristine images yield fewer than two sharp patches")
    return NiqeModel(feats.mean(axis=0), np.cov(feats, rowvar=False), params)


# --------------------------------------------------------------------------
# QNR

Q_WINDOW = 8


def _box_mean(x: np.ndarray, n: int) -> np.ndarray:
    rows = np.lib.stride_tricks.sliding_window_view(x, n, axis=0).mean(axis=-1)
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=1).mean(axis=-1)


def _box_is_flat(x: np.ndarray, n: int) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view
    hi = view(view(x, n, axis=0).max(axis=-1), n, axis=1).max(axis=-1)
    lo = view(view(x, n, axis=0).min(axis=-1), n, axis=1).min(axis=-1)
    return hi == lo


def q_index_map(x: np.ndarray, y: np.ndarray, window: int = Q_WINDOW) -> np.ndarray:
    """Wang-Bovik Q on every ``window x window`` block (unit stride).

    Both blocks constant: 1 if their means agree else 0.  Both means zero
    with some variance: the contrast-structure factor alone.
    """
    if min(x.shape) < window:
        raise SizeError(f"image {x.shape} smaller than the {window}px Q window")
    mx, my = _box_mean(x, window), _box_mean(y, window)
    vx = np.maximum(_box_mean(x * x, window) - mx * mx, 0.0)
    vy = np.maximum(_box_mean(y * y, window) - my * my, 0.0)
    cxy = _box_mean(x * y, window) - mx * my
    # one-pass variances leave rounding residue on constant blocks
    flat_x, flat_y = _box_is_flat(x, window), _box_is_flat(y, window)
    vx[flat_x] = 0.0
    vy[flat_y] = 0.0
    cxy[flat_x | flat_y] = 0.0
    vsum = vx + vy
    msum = mx * mx + my * my
    q = np.empty_like(mx)
    full = (vsum > 0) & (msum > 0)
    q[full] = 4.0 * cxy[full] * mx[full] * my[full] / (vsum[full] * msum[full])
    flat = vsum == 0
    q[flat] = (mx[flat] == my[flat]).astype(float)
    dark = (vsum > 0) & (msum == 0)
    q[dark] = 2.0 * cxy[dark] / vsum[dark]
    return q


def q_index(x: np.ndarray, y: np.ndarray, window: int = Q_WINDOW) -> float:
    return float(q_index_map(x, y, window).mean())


def _gradient(x: np.ndarray) -> np.ndarray:
    gx, gy = scharr_gradients(x)
    return np.hypot(gx, gy)


@dataclass(frozen=True)
class QnrResult:
    d_lambda: float
    d_s: float
    qnr: float

    def __iter__(self):
        return iter((self.d_lambda, self.d_s, self.qnr))


def qnr(fused, original_ms, pan, alpha: float = 1.0, beta: float = 1.0, window: int = Q_WINDOW) -> QnrResult:
    """Spectral and spatial distortion and their combined index.

    ``original_ms`` must already be upsampled to the fused resolution.
    Absolute Q differences are clipped to [0, 1] so QNR stays in [0, 1].
    """
    f, o = as_array(fused), as_array(original_ms)
    check_same_shape(f, o, "fused and original multispectral images")
    p = as_array(pan)
    if p.shape[:2] != f.shape[:2] or p.shape[2] != 1:
        raise ShapeError("pan must be single-channel at the fused resolution")
    p = p[:, :, 0]
    B = f.shape[2]
    if B < 2:
        raise DomainError("QNR needs at least 2 bands")
    if not (alpha > 0 and beta > 0):
        raise DomainError("QNR exponents must be positive")

    d_lambda = np.mean(
        [min(abs(q_index(o[..., i], o[..., j], window) - q_index(f[..., i], f[..., j], window)), 1.0)
         for i, j in combinations(range(B), 2)]
    )
    gp = _gradient(p)
    d_s = np.mean(
        [min(abs(q_index(_gradient(o[..., b]), gp, window) - q_index(_gradient(f[..., b]), gp, window)), 1.0)
         for b in range(B)]
    )
    d_lambda, d_s = float(d_lambda), float(d_s)
    return QnrResult(d_lambda, d_s, float((1.0 - d_lambda) ** alpha * (1.0 - d_s) ** beta))


# --------------------------------------------------------------------------
# probabilistic calibration


def gaussian_nll(y, mu, sigma) -> float:
    """Mean per-element negative log-likelihood under ``N(mu, sigma^2)``."""
    y, mu, sigma = (np.asarray(a, dtype=np.float64).ravel() for a in (y, mu, sigma))
    if not (y.size == mu.size == sigma.size) or y.size == 0:
        raise ShapeError("y, mu and sigma must be non-empty and equally long")
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    r = (y - mu) / sigma
    return float(0.5 * np.mean(np.log(2.0 * np.pi * sigma * sigma) + r * r))


@dataclass(frozen=True)
class QuantileForecast:
    levels: np.ndarray
    quantiles: np.ndarray  # n x M
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.float64).ravel()
        q = np.asarray(self.quantiles, dtype=np.float64)
        if q.ndim == 1:
            q = q[:, None]
        if q.ndim != 2 or q.shape[1] != levels.size:
            raise ShapeError("quantiles must be n x M for M levels")
        if np.any((levels <= 0) | (levels >= 1)) or np.any(np.diff(levels) <= 0):
            raise DomainError("levels must be strictly increasing inside (0, 1)")
        if np.any(q[:, 1:] < q[:, :-1]):
            raise DomainError("predicted quantiles must be non-decreasing in the level")
        w = np.full(levels.size, 1.0 / levels.size) if self.weights is None else np.asarray(self.weights, dtype=np.float64).ravel()
        if w.size != levels.size or np.any(w < 0):
            raise DomainError("one non-negative weight per level is required")
        if abs(w.sum() - 1.0) > 1e-9:
            raise DomainError(f"level weights sum to {w.sum()}, not 1")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "quantiles", q)
        object.__setattr__(self, "weights", w)


def empirical_coverage(forecast: QuantileForecast, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != forecast.quantiles.shape[0] or y.size == 0:
        raise ShapeError("one observation per forecast row is required")
    return np.mean(y[:, None] <= forecast.quantiles, axis=0)


def ece_regression(forecast: QuantileForecast, y) -> float:
    cov = empirical_coverage(forecast, y)
    return float(np.sum(forecast.weights * np.abs(cov - forecast.levels)))
