"""Flow-match noising, uncertainty-gated control scalars and MC-dropout
uncertainty aggregation.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, EmptyInput, InsufficientSamples, ShapeError
from .imgmath import ImageTensor, as_array, as_image, percentile

TAU_EPS = 1e-12


@dataclass(frozen=True)
class NoiseSchedule:
    steps: int
    sigmas: np.ndarray = field(repr=False)
    shift: float = 1.0

    def t_norm(self, t: int) -> float:
        return t / self.steps


def make_schedule(steps: int, shift: float = 1.0) -> NoiseSchedule:
    """Shifted-linear sigmas ``s*x / (1 + (s-1)*x)`` at ``x = t/steps``, t = 1..steps."""
    if steps < 1:
        raise DomainError("schedule needs at least one step")
    if not shift > 0:
        raise DomainError("shift must be positive")
    x = np.arange(1, steps + 1, dtype=np.float64) / steps
    sigmas = shift * x / (1.0 + (shift - 1.0) * x)
    return NoiseSchedule(int(steps), sigmas, float(shift))


def add_noise(z0, eps, sigma_t: float):
    """``(1 - sigma_t) * z0 + sigma_t * eps``; the endpoints are returned exactly."""
    a, e = as_array(z0), as_array(eps)
    if a.shape != e.shape:
        raise ShapeError(f"z0 {a.shape} and eps {e.shape} differ")
    if not 0.0 <= sigma_t <= 1.0:
        raise DomainError("sigma_t must lie in [0, 1]")
    if sigma_t == 0.0:
        out = a.copy()
    elif sigma_t == 1.0:
        out = e.copy()
    else:
        out = (1.0 - sigma_t) * a + sigma_t * e
    return ImageTensor(out) if isinstance(z0, ImageTensor) else out


@dataclass(frozen=True)
class GateParams:
    """Per-block gate coefficients ``(p0, pt, pu)`` and the global strength."""

    blocks: Mapping[str, tuple[float, float, float]]
    s_ctrl: float = 1.0

    def __post_init__(self):
        if not self.s_ctrl > 0:
            raise DomainError("s_ctrl must be positive")
        blocks = {}
        for name, triple in self.blocks.items():
            p = tuple(float(v) for v in triple)
            if len(p) != 3:
                raise DomainError(f"block {name!r} needs (p0, pt, pu)")
            blocks[str(name)] = p
        object.__setattr__(self, "blocks", blocks)

    def to_dict(self) -> dict:
        return {"blocks": {k: list(v) for k, v in self.blocks.items()}, "s_ctrl": self.s_ctrl}

    @classmethod
    def from_dict(cls, d) -> "GateParams":
        return cls({k: tuple(v) for k, v in d["blocks"].items()}, float(d.get("s_ctrl", 1.0)))


_ALPHA_MIN = math.nextafter(0.0, 1.0)
_ALPHA_MAX = math.nextafter(1.0, 0.0)


def logistic(x: float) -> float:
    """Logistic function kept strictly inside (0, 1) even where it saturates in float64."""
    if x >= 0:
        y = 1.0 / (1.0 + math.exp(-x))
    else:
        ex = math.exp(x)
        y = ex / (1.0 + ex)
    return min(max(y, _ALPHA_MIN), _ALPHA_MAX)


def gate_alpha(params: GateParams, block: str, t_norm: float, u: float) -> float:
    p0, pt, pu = params.blocks[block]
    if not (0.0 <= t_norm <= 1.0 and 0.0 <= u <= 1.0):
        raise DomainError("t_norm and u must lie in [0, 1]")
    return logistic(p0 + pt * t_norm + pu * u)


def blend_residual(r, alpha: float, s_ctrl: float):
    if not s_ctrl > 0:
        raise DomainError("s_ctrl must be positive")
    if isinstance(r, ImageTensor):
        return r.with_data(s_ctrl * alpha * r.data)
    return s_ctrl * alpha * np.asarray(r, dtype=np.float64)


class UncertaintyMode(str, enum.Enum):
    PERCENTILE_TAU = "percentile-tau"
    FIXED_KAPPA = "fixed-kappa"


@dataclass(frozen=True)
class UncertaintyResult:
    variance_map: ImageTensor
    scale: float
    u: float
    mode: UncertaintyMode


def variance_map(samples: Sequence) -> ImageTensor:
    """Unbiased per-element variance across the MC samples (order-invariant)."""
    if len(samples) < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {len(samples)}")
    arrs = [as_array(s) for s in samples]
    for a in arrs[1:]:
        if a.shape != arrs[0].shape:
            raise ShapeError("MC samples differ in shape")
    # sorting makes the result bitwise independent of sample order; shifting by
    # the minimum makes identical samples give exactly zero
    stack = np.sort(np.stack(arrs), axis=0)
    d = stack - stack[0]
    d -= d.mean(axis=0)
    return ImageTensor(np.sum(d * d, axis=0) / (len(arrs) - 1))


def tau_from_batch(mean_variances) -> float:
    v = np.asarray(mean_variances, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInput("tau needs at least one mean variance")
    return percentile(v, 95.0) + TAU_EPS


def u_from_tau(v, tau: float) -> UncertaintyResult:
    if not tau > 0:
        raise DomainError("tau must be positive")
    v = as_image(v)
    # ratio before the mean: v == tau then gives exactly 1
    u = float(np.clip(np.mean(np.clip(v.data, 0.0, tau) / tau), 0.0, 1.0))
    return UncertaintyResult(v, float(tau), u, UncertaintyMode.PERCENTILE_TAU)


def u_fixed_kappa(v, kappa: float) -> UncertaintyResult:
    if not kappa > 0:
        raise DomainError("kappa must be positive")
    v = as_image(v)
    u = float(-np.expm1(-np.mean(v.data) / kappa))
    return UncertaintyResult(v, float(kappa), u, UncertaintyMode.FIXED_KAPPA)
