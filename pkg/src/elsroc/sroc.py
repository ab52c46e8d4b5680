"""Summary ROC curves, AUC, summary points and elliptical regions.

The curve for a fitted model is the regression line of transformed
sensitivity on transformed FPR, ``z_p = mu_p + (sigma / sigma2_q)(z_q - mu_q)``,
mapped back to the unit square.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .model_fit import FitResult, ModelSpec, gls_mean
from .study_data import Dataset
from .transforms import t_alpha, t_alpha_inv, t_alpha_inv_clamped

DEFAULT_GRID_SIZE = 1001
VAR_FLOOR = 1e-12
EDGE = 1e-6


class DegenerateCurveError(ValueError):
    """Between-study FPR variance is zero; only the summary point exists."""


class RegionKind(str, enum.Enum):
    CONFIDENCE = "confidence"
    PREDICTION = "prediction"


def fpr_grid(grid_size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """``grid_size`` equally spaced interior points of (0, 1)."""
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    return np.arange(1, grid_size + 1) / (grid_size + 1.0)


def trapezoid_area(u, s) -> float:
    """Area under ``s(u)`` on (0, 1) with flat extensions to both ends."""
    uu = np.concatenate([[0.0], u, [1.0]])
    ss = np.concatenate([[s[0]], s, [s[-1]]])
    return float(np.sum(0.5 * (ss[1:] + ss[:-1]) * np.diff(uu)))


@dataclass(frozen=True, eq=False)
class SrocCurve:
    fpr_grid: np.ndarray = field(repr=False)
    sens_values: np.ndarray = field(repr=False)
    auc: float
    spec: ModelSpec | None = None


def curve_values(mu_p, mu_q, slope, spec: ModelSpec, u) -> np.ndarray:
    zq = t_alpha(spec.pair.alpha_q, u)
    zp = mu_p + slope * (zq - mu_q)
    return t_alpha_inv_clamped(spec.pair.alpha_p, zp)


def summary_curve(fit: FitResult, grid_size: int = DEFAULT_GRID_SIZE) -> SrocCurve:
    th = fit.theta
    if th.sigma2_q <= VAR_FLOOR:
        raise DegenerateCurveError(f"{fit.spec}: between-study FPR variance {th.sigma2_q:.3g} is zero")
    u = fpr_grid(grid_size)
    s = curve_values(th.mu_p, th.mu_q, th.sigma / th.sigma2_q, fit.spec, u)
    return SrocCurve(u, s, trapezoid_area(u, s), fit.spec)


def auc(curve: SrocCurve) -> float:
    return trapezoid_area(curve.fpr_grid, curve.sens_values)


def summary_point(fit: FitResult):
    """Back-transformed mean as ``(fpr, sens)``."""
    a = fit.spec.pair
    return (t_alpha_inv(a.alpha_q, fit.theta.mu_q), t_alpha_inv(a.alpha_p, fit.theta.mu_p))


@dataclass(frozen=True, eq=False)
class RegionEllipse:
    center: np.ndarray
    shape: np.ndarray
    level: float
    kind: RegionKind
    boundary: np.ndarray = field(repr=False)
    warnings: tuple = ()

    @property
    def radius(self):
        return chi2_2_radius(self.level)

    @property
    def area(self):
        """Area of the ellipse on the transformed scale."""
        return math.pi * self.radius**2 * math.sqrt(max(np.linalg.det(self.shape), 0.0))


def chi2_2_radius(level: float) -> float:
    """Square root of the chi-square(2) quantile, which has a closed form."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    return math.sqrt(-2.0 * math.log1p(-level))


def mean_covariance(fit: FitResult) -> np.ndarray:
    """Covariance of the estimated mean on the transformed scale."""
    if fit.spec.family == 1:
        return fit.theta.cov / fit.N
    _, A = gls_mean(fit.z, fit.D, fit.theta.cov)
    return A


def region(
    fit: FitResult,
    data: Dataset | None = None,
    kind=RegionKind.CONFIDENCE,
    level: float = 0.95,
    points: int = 360,
) -> RegionEllipse:
    kind = RegionKind(kind)
    shape = mean_covariance(fit)
    if kind is RegionKind.PREDICTION:
        shape = shape + fit.theta.cov
    shape = 0.5 * (shape + shape.T)
    warnings = []
    if np.linalg.eigvalsh(shape).min() <= 0.0:
        shape = shape + 1e-10 * np.eye(2)
        warnings.append("shape matrix not positive definite; added 1e-10 ridge")
    L = np.linalg.cholesky(shape)
    t = np.linspace(0.0, 2.0 * math.pi, points, endpoint=False)
    circle = np.stack([np.cos(t), np.sin(t)])
    zs = fit.theta.mean[:, None] + chi2_2_radius(level) * (L @ circle)
    a = fit.spec.pair
    sens = t_alpha_inv_clamped(a.alpha_p, zs[0])
    fpr = t_alpha_inv_clamped(a.alpha_q, zs[1])
    boundary = np.clip(np.column_stack([fpr, sens]), EDGE, 1.0 - EDGE)
    return RegionEllipse(fit.theta.mean.copy(), shape, level, kind, boundary, tuple(warnings))
