"""Full-reference metrics: PSNR, SSIM, SAM, CIEDE2000, FSIM and the
feature-based DISTS distance.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, DomainError, ShapeError, SizeError
from .imgmath import Domain, ImageTensor, as_array, check_same_shape, luminance, scharr_gradients
from .loss import FeatureStack


def _pair(ref, test):
    a, b = as_array(ref), as_array(test)
    check_same_shape(a, b, "reference and test images")
    return a, b


def psnr(ref, test, R: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    if not R > 0:
        raise DomainError("peak value R must be positive")
    a, b = _pair(ref, test)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(R * R / mse)


# --------------------------------------------------------------------------
# SSIM


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    window_sigma: float = 1.5
    K1: float = 0.01
    K2: float = 0.03
    R: float = 1.0

    def __post_init__(self):
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise DomainError("SSIM window size must be a positive odd integer")

    @property
    def C1(self) -> float:
        return (self.K1 * self.R) ** 2

    @property
    def C2(self) -> float:
        return (self.K2 * self.R) ** 2

    def window_1d(self) -> np.ndarray:
        r = self.window_size // 2
        x = np.arange(-r, r + 1, dtype=np.float64)
        w = np.exp(-0.5 * (x / self.window_sigma) ** 2)
        return w / w.sum()


def _filter_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    n = len(w)
    rows = np.lib.stride_tricks.sliding_window_view(x, n, axis=0) @ w
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=1) @ w


def ssim_map(x: np.ndarray, y: np.ndarray, params: SsimParams = SsimParams()) -> np.ndarray:
    """Local SSIM over every position where the window fits entirely."""
    if min(x.shape) < params.window_size:
        raise SizeError(f"image {x.shape} smaller than the {params.window_size}px SSIM window")
    w = params.window_1d()
    mx, my = _filter_valid(x, w), _filter_valid(y, w)
    sxx = _filter_valid(x * x, w) - mx * mx
    syy = _filter_valid(y * y, w) - my * my
    sxy = _filter_valid(x * y, w) - mx * my
    C1, C2 = params.C1, params.C2
    return ((2 * mx * my + C1) * (2 * sxy + C2)) / ((mx * mx + my * my + C1) * (sxx + syy + C2))


def _planes(a: np.ndarray, b: np.ndarray):
    """Luminance for RGB, the plane itself for grey, every channel otherwise."""
    if a.shape[2] in (1, 3):
        return [(luminance(a), luminance(b))]
    return [(a[:, :, c], b[:, :, c]) for c in range(a.shape[2])]


def ssim(ref, test, params: SsimParams = SsimParams()) -> float:
    a, b = _pair(ref, test)
    return float(np.mean([ssim_map(x, y, params).mean() for x, y in _planes(a, b)]))


# --------------------------------------------------------------------------
# SAM


def sam_degrees(ref, test, return_excluded: bool = False):
    """Mean per-pixel spectral angle in degrees.

    Pixels where either spectrum has zero norm are skipped; their count is
    returned alongside the angle when ``return_excluded`` is set.
    """
    a, b = _pair(ref, test)
    if a.shape[2] < 2:
        raise DomainError("SAM needs at least 2 channels")
    x = a.reshape(-1, a.shape[2])
    y = b.reshape(-1, b.shape[2])
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    keep = (nx > 0) & (ny > 0)
    excluded = int(np.count_nonzero(~keep))
    if not keep.any():
        raise DegenerateInput("every pixel has a zero spectrum")
    ux = x[keep] / nx[keep, None]
    uy = y[keep] / ny[keep, None]
    # 2*atan2(|u-v|, |u+v|) is exact near 0 and 180 degrees where arccos is not
    ang = 2.0 * np.arctan2(np.linalg.norm(ux - uy, axis=1), np.linalg.norm(ux + uy, axis=1))
    value = float(np.degrees(ang).mean())
    if excluded:
        warnings.warn(f"SAM skipped {excluded} zero-norm pixels")
    return (value, excluded) if return_excluded else value


# --------------------------------------------------------------------------
# CIEDE2000


def delta_e2000_array(lab1: np.ndarray, lab2: np.ndarray, kL=1.0, kC=1.0, kH=1.0) -> np.ndarray:
    """Element-wise CIEDE2000 between Lab arrays with a trailing axis of 3."""
    L1, a1, b1 = np.moveaxis(np.asarray(lab1, dtype=np.float64), -1, 0)
    L2, a2, b2 = np.moveaxis(np.asarray(lab2, dtype=np.float64), -1, 0)

    C1 = np.hypot(a1, b1)
    C2 = np.hypot(a2, b2)
    Cbar7 = ((C1 + C2) / 2.0) ** 7
    G = 0.5 * (1.0 - np.sqrt(Cbar7 / (Cbar7 + 25.0**7)))
    a1p = (1.0 + G) * a1
    a2p = (1.0 + G) * a2
    C1p = np.hypot(a1p, b1)
    C2p = np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0

    dLp = L2 - L1
    dCp = C2p - C1p
    chroma_zero = C1p * C2p == 0
    dh = h2p - h1p
    dhp = np.where(dh > 180.0, dh - 360.0, np.where(dh < -180.0, dh + 360.0, dh))
    dhp = np.where(chroma_zero, 0.0, dhp)
    dHp = 2.0 * np.sqrt(C1p * C2p) * np.sin(np.radians(dhp) / 2.0)

    Lbar = (L1 + L2) / 2.0
    Cbarp = (C1p + C2p) / 2.0
    hsum = h1p + h2p
    hbar = np.where(
        np.abs(h1p - h2p) <= 180.0,
        hsum / 2.0,
        np.where(hsum < 360.0, (hsum + 360.0) / 2.0, (hsum - 360.0) / 2.0),
    )
    hbar = np.where(chroma_zero, hsum, hbar)

    T = (
        1.0
        - 0.17 * np.cos(np.radians(hbar - 30.0))
        + 0.24 * np.cos(np.radians(2.0 * hbar))
        + 0.32 * np.cos(np.radians(3.0 * hbar + 6.0))
        - 0.20 * np.cos(np.radians(4.0 * hbar - 63.0))
    )
    SL = 1.0 + 0.015 * (Lbar - 50.0) ** 2 / np.sqrt(20.0 + (Lbar - 50.0) ** 2)
    SC = 1.0 + 0.045 * Cbarp
    SH = 1.0 + 0.015 * Cbarp * T
    Cbarp7 = Cbarp**7
    RC = 2.0 * np.sqrt(Cbarp7 / (Cbarp7 + 25.0**7))
    dtheta = 30.0 * np.exp(-(((hbar - 275.0) / 25.0) ** 2))
    RT = -RC * np.sin(np.radians(2.0 * dtheta))

    tL = dLp / (kL * SL)
    tC = dCp / (kC * SC)
    tH = dHp / (kH * SH)
    return np.sqrt(np.maximum(tL * tL + tC * tC + tH * tH + RT * tC * tH, 0.0))


def delta_e2000(ref_lab, test_lab) -> float:
    """Mean per-pixel CIEDE2000 between two Lab images (k_L = k_C = k_H = 1)."""
    for img in (ref_lab, test_lab):
        if not isinstance(img, ImageTensor) or img.domain is not Domain.LAB:
            raise DomainError("delta_e2000 needs two Lab-domain ImageTensors")
    a, b = _pair(ref_lab, test_lab)
    return float(delta_e2000_array(a, b).mean())


# --------------------------------------------------------------------------
# FSIM


@dataclass(frozen=True)
class FsimParams:
    T1: float = 0.85
    T2: float = 160.0
    alpha: float = 1.0
    beta: float = 1.0
    pc_scales: int = 4
    pc_orientations: int = 4
    min_wavelength: float = 6.0
    mult: float = 2.0
    sigma_on_f: float = 0.55
    d_theta_on_sigma: float = 1.2
    noise_k: float = 2.0
    peak: float = 1.0  # input value mapped to 255 before PC and GM

    def __post_init__(self):
        for name in ("T1", "T2", "alpha", "beta", "pc_scales", "pc_orientations", "peak"):
            if not getattr(self, name) > 0:
                raise DomainError(f"FSIM parameter {name} must be positive")


def _freq_grid(n: int) -> np.ndarray:
    if n % 2:
        return np.arange(-(n - 1) / 2, (n - 1) / 2 + 1) / max(n - 1, 1)
    return np.arange(-n / 2, n / 2) / n


def phase_congruency(img: np.ndarray, params: FsimParams = FsimParams()) -> np.ndarray:
    """Log-Gabor phase congruency summed over orientations, with noise compensation."""
    rows, cols = img.shape
    nscale, norient = params.pc_scales, params.pc_orientations
    eps = 1e-4
    theta_sigma = math.pi / norient / params.d_theta_on_sigma

    image_fft = np.fft.fft2(img)
    x, y = np.meshgrid(_freq_grid(cols), _freq_grid(rows))
    radius = np.fft.ifftshift(np.hypot(x, y))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    radius[0, 0] = 1.0
    sin_t, cos_t = np.sin(theta), np.cos(theta)

    lowpass = 1.0 / (1.0 + (radius / 0.45) ** (2 * 15))
    log_gabor = []
    for s in range(nscale):
        fo = 1.0 / (params.min_wavelength * params.mult**s)
        lg = np.exp(-(np.log(radius / fo) ** 2) / (2 * math.log(params.sigma_on_f) ** 2)) * lowpass
        lg[0, 0] = 0.0
        log_gabor.append(lg)

    energy_all = np.zeros((rows, cols))
    an_all = np.zeros((rows, cols))
    for o in range(norient):
        angl = o * math.pi / norient
        ds = sin_t * math.cos(angl) - cos_t * math.sin(angl)
        dc = cos_t * math.cos(angl) + sin_t * math.sin(angl)
        dtheta = np.abs(np.arctan2(ds, dc))
        spread = np.exp(-(dtheta**2) / (2 * theta_sigma**2))

        sum_e = np.zeros((rows, cols))
        sum_o = np.zeros((rows, cols))
        sum_an = np.zeros((rows, cols))
        responses = []
        spatial_filters = []
        for s in range(nscale):
            filt = log_gabor[s] * spread
            spatial_filters.append(np.real(np.fft.ifft2(filt)) * math.sqrt(rows * cols))
            eo = np.fft.ifft2(image_fft * filt)
            responses.append(eo)
            sum_an += np.abs(eo)
            sum_e += eo.real
            sum_o += eo.imag
            if s == 0:
                em_n = np.sum(filt**2)

        x_energy = np.hypot(sum_e, sum_o) + eps
        mean_e, mean_o = sum_e / x_energy, sum_o / x_energy
        energy = np.zeros((rows, cols))
        for eo in responses:
            e, od = eo.real, eo.imag
            energy += e * mean_e + od * mean_o - np.abs(e * mean_o - od * mean_e)

        # Rayleigh noise model estimated from the finest scale
        median_e2n = np.median(np.abs(responses[0]) ** 2)
        noise_power = -median_e2n / math.log(0.5) / em_n
        sf = np.stack(spatial_filters)
        est_sum_an2 = np.sum(sf**2)
        est_sum_aiaj = 0.0
        for i in range(nscale - 1):
            for j in range(i + 1, nscale):
                est_sum_aiaj += np.sum(sf[i] * sf[j])
        est_noise_energy2 = 2 * noise_power * est_sum_an2 + 4 * noise_power * est_sum_aiaj
        tau = math.sqrt(max(est_noise_energy2, 0.0) / 2)
        threshold = tau * math.sqrt(math.pi / 2) + params.noise_k * math.sqrt((2 - math.pi / 2) * tau**2)
        threshold /= 1.7
        energy_all += np.maximum(energy - threshold, 0.0)
        an_all += sum_an

    return energy_all / (an_all + eps)


def _fsim_planes(a: np.ndarray, params: FsimParams):
    y = luminance(a) * (255.0 / params.peak)
    f = max(1, round(min(y.shape) / 256))
    if f > 1:
        kernel = np.ones(f) / f
        y = np.lib.stride_tricks.sliding_window_view(y, f, axis=0) @ kernel
        y = np.lib.stride_tricks.sliding_window_view(y, f, axis=1) @ kernel
        y = y[::f, ::f]
    pc = phase_congruency(y, params)
    gx, gy = scharr_gradients(y)
    # canonical FSIM uses the /16 Scharr stencil, twice the unit-ramp one
    return pc, 2.0 * np.hypot(gx, gy)


def fsim(ref, test, params: FsimParams = FsimParams()) -> float:
    a, b = _pair(ref, test)
    pc1, g1 = _fsim_planes(a, params)
    pc2, g2 = _fsim_planes(b, params)
    s_pc = (2 * pc1 * pc2 + params.T1) / (pc1**2 + pc2**2 + params.T1)
    s_g = (2 * g1 * g2 + params.T2) / (g1**2 + g2**2 + params.T2)
    s_l = s_pc**params.alpha * s_g**params.beta
    pc_max = np.maximum(pc1, pc2)
    denom = pc_max.sum()
    if denom <= 0:
        raise DegenerateInput("phase congruency is zero everywhere")
    return float(np.sum(pc_max * s_l) / denom)


# --------------------------------------------------------------------------
# DISTS from external features


def _correlation(x: np.ndarray, y: np.ndarray) -> tuple[float, bool]:
    """Pearson correlation; constant inputs give 1 if equal else 0 (flagged)."""
    x = x.ravel()
    y = y.ravel()
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        equal = sx == 0.0 and sy == 0.0 and x[0] == y[0]
        return (1.0 if equal else 0.0), True
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0)), False


def dists_from_features(fa: FeatureStack, fb: FeatureStack, alpha, beta) -> float:
    """Sum of ``alpha_l (1 - rho(structure)) + beta_l (1 - rho(channel means))``."""
    alpha = np.asarray(alpha, dtype=np.float64).ravel()
    beta = np.asarray(beta, dtype=np.float64).ravel()
    n = len(fa.layers)
    if len(fb.layers) != n or alpha.size != n or beta.size != n:
        raise ShapeError("layer counts of features and alpha/beta weights must agree")
    total = 0.0
    degenerate = 0
    for la, lb, a_l, b_l in zip(fa.layers, fb.layers, alpha, beta):
        check_same_shape(la, lb, "feature layers")
        rho_s, d1 = _correlation(la, lb)
        rho_t, d2 = _correlation(la.mean(axis=(0, 1)), lb.mean(axis=(0, 1)))
        degenerate += d1 + d2
        total += a_l * (1.0 - rho_s) + b_l * (1.0 - rho_t)
    if degenerate:
        warnings.warn(f"DISTS: {degenerate} correlation(s) over constant features")
    return float(total)
