"""Model selection criteria and selection over the candidate grid.

All scores are "smaller is better". Empirical-likelihood scores are the
-2 log EL ratio ``R`` and are ``+inf`` when the origin is outside the
convex hull of the constraint vectors.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .model_fit import (
    FitError,
    FitResult,
    ModelSpec,
    conditional_loglik,
    default_grid,
    fit,
    gls_mean,
    marginal_covs,
    params_to_sigma,
    _blup_arrays,
    _inv2,
)
from .study_data import Dataset
from .transforms import t_alpha_inv_clamped

N_PARAMS = 5
EL_MAXITER = 50
GK_REL_STEP = 1e-4


class CriterionKind(str, enum.Enum):
    AIC = "aic"
    AIC_noJ = "aic-noj"
    cAIC_VB = "caic-vb"
    cAIC_GK = "caic-gk"
    EL_fix = "el-fix"
    EL_blup = "el-blup"

    @classmethod
    def parse(cls, text) -> "CriterionKind":
        if isinstance(text, cls):
            return text
        t = str(text).strip().lower().replace("_", "-")
        for k in cls:
            if k.value == t:
                return k
        raise ValueError(f"unknown criterion {text!r}; expected one of {[k.value for k in cls]}")

    @property
    def label(self):
        return {
            "aic": "AIC", "aic-noj": "AIC-noJ", "caic-vb": "cAIC-VB",
            "caic-gk": "cAIC-GK", "el-fix": "EL-fix", "el-blup": "EL-blup",
        }[self.value]


ALL_KINDS = tuple(CriterionKind)


class NoSelectableModel(RuntimeError):
    pass


@dataclass(frozen=True)
class CriterionScore:
    spec: ModelSpec
    kind: CriterionKind
    value: float
    feasible: bool = True

    def __post_init__(self):
        if not self.feasible and self.value != math.inf:
            object.__setattr__(self, "value", math.inf)


@dataclass(frozen=True, eq=False)
class ElSolution:
    weights: np.ndarray
    lam: np.ndarray
    R: float
    feasible: bool


# ---------------------------------------------------------------------------
# Empirical likelihood
# ---------------------------------------------------------------------------

_ANGLE_TOL = 1e-9


def _hull_status(u):
    """'interior', 'line' (origin inside a 1-d hull) or 'outside' for 2-d u."""
    nz = u[np.hypot(u[:, 0], u[:, 1]) > 0.0]
    ang = np.sort(np.arctan2(nz[:, 1], nz[:, 0]))
    gaps = np.diff(np.concatenate([ang, ang[:1] + 2 * math.pi]))
    gmax = gaps.max()
    if gmax < math.pi - _ANGLE_TOL:
        return "interior"
    if gmax > math.pi + _ANGLE_TOL:
        return "outside"
    # One gap of exactly pi: origin on the hull boundary; feasible only if
    # every point lies on the line through the origin, in both directions.
    d = nz[0] / np.hypot(*nz[0])
    cross = nz[:, 0] * d[1] - nz[:, 1] * d[0]
    proj = nz @ d
    scale = np.abs(proj).max()
    if np.all(np.abs(cross) <= 1e-12 * scale) and proj.min() < 0 < proj.max():
        return "line"
    return "outside"


def _infeasible(n, k):
    return ElSolution(np.full(n, np.nan), np.full(k, np.nan), math.inf, False)


def el_solve(u) -> ElSolution:
    """Maximise ``prod w_i`` subject to ``sum w_i u_i = 0``, ``sum w_i = 1``.

    ``u`` is an (N, 2) array (or (N,) for the scalar case). Returns the
    weights, the dual multiplier and ``R = -2 sum log(N w_i)``.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    n, k = u.shape
    if n < 2:
        raise ValueError("empirical likelihood needs at least 2 points")
    if not np.all(np.isfinite(u)):
        return _infeasible(n, k)
    scale = np.abs(u).max()
    if scale == 0.0:
        return ElSolution(np.full(n, 1.0 / n), np.zeros(k), 0.0, True)
    us = u / scale
    if k == 1:
        status = "interior" if us.min() < 0.0 < us.max() else "outside"
        basis = None
    elif k == 2:
        status = _hull_status(us)
        basis = None
        if status == "line":
            nz = us[np.hypot(us[:, 0], us[:, 1]) > 0.0]
            basis = nz[0] / np.hypot(*nz[0])
            us = (us @ basis)[:, None]
    else:
        raise ValueError("only 1- or 2-dimensional constraints are supported")
    if status == "outside":
        return _infeasible(n, k)
    lam_s, _, _ = _kernels.el_dual_newton(np.ascontiguousarray(us), EL_MAXITER)
    t = 1.0 + us @ lam_s
    if t.min() <= 1.0 / (2 * n):
        return _infeasible(n, k)
    w = 1.0 / (n * t)
    if abs(w.sum() - 1.0) > 1e-8 or np.abs(w @ us).max() > 1e-8:
        return _infeasible(n, k)
    lam = lam_s / scale if basis is None else basis * lam_s[0] / scale
    return ElSolution(w, lam, float(2.0 * np.sum(np.log(t))), True)


def _back_transform(spec: ModelSpec, z):
    z = np.asarray(z, dtype=float)
    return np.stack(
        [t_alpha_inv_clamped(spec.pair.alpha_p, z[..., 0]), t_alpha_inv_clamped(spec.pair.alpha_q, z[..., 1])],
        axis=-1,
    )


def _el_score(spec, kind, u):
    sol = el_solve(u)
    return CriterionScore(spec, kind, sol.R, sol.feasible)


def score_el_fix(fit: FitResult, data: Dataset | None = None) -> CriterionScore:
    target = _back_transform(fit.spec, fit.theta.mean)
    return _el_score(fit.spec, CriterionKind.EL_fix, fit.y - target)


def score_el_blup(fit: FitResult, data: Dataset | None = None) -> CriterionScore:
    if fit.spec.family == 1:
        s = score_el_fix(fit, data)
        return CriterionScore(s.spec, CriterionKind.EL_blup, s.value, s.feasible)
    yhat = _back_transform(fit.spec, fit.blups)
    return _el_score(fit.spec, CriterionKind.EL_blup, fit.y - yhat)


# ---------------------------------------------------------------------------
# Likelihood criteria
# ---------------------------------------------------------------------------


def score_aic(fit: FitResult, with_jacobian: bool = True) -> CriterionScore:
    ll = fit.loglik_y if with_jacobian else fit.loglik_transformed
    kind = CriterionKind.AIC if with_jacobian else CriterionKind.AIC_noJ
    return CriterionScore(fit.spec, kind, -2.0 * ll + 2.0 * N_PARAMS)


def aicc_value(fit: FitResult) -> float:
    """AIC with the small-sample penalty ``2k(k+1)/(N-k-1)`` added."""
    n, k = fit.N, N_PARAMS
    if n == k + 1:
        raise ValueError("AICc is undefined for N = k + 1")
    return score_aic(fit).value + 2.0 * k * (k + 1) / (n - k - 1)


def hat_trace_vb(fit: FitResult) -> float:
    """Trace of d zhat / d z with the variance parameters held fixed."""
    Sigma = fit.theta.cov
    W, _ = _inv2(marginal_covs(Sigma, fit.D))
    A = np.linalg.inv(W.sum(axis=0))
    SW = np.einsum("ij,njk->nik", Sigma, W)
    I_SW = np.eye(2) - SW
    own = np.einsum("nij,jk,nkl->nil", I_SW, A, W)
    return float(np.trace(own, axis1=1, axis2=2).sum() + np.trace(SW, axis1=1, axis2=2).sum())


def _predict(z, D, x):
    Sigma = params_to_sigma(x)
    mu, _ = gls_mean(z, D, Sigma)
    return _blup_arrays(z, D, mu, Sigma)


def gk_penalty(fit: FitResult) -> float:
    """Trace of d zhat / d z including re-estimation of the variance parameters.

    Central differences, one refit per perturbed coordinate and sign.
    Returns ``nan`` if a refit fails.
    """
    z, D = np.array(fit.z), np.ascontiguousarray(fit.D)
    reml = fit.method == "REML"
    sd = z.std(axis=0, ddof=1)
    total = 0.0
    for c in range(2):
        h = GK_REL_STEP * (sd[c] if sd[c] > 0 else 1.0)
        for i in range(fit.N):
            zhat = []
            for sign in (1.0, -1.0):
                zp = z.copy()
                zp[i, c] += sign * h
                x, f, ok = _kernels.refit_local(fit.params, zp, D, reml)
                if not ok:
                    return math.nan
                zhat.append(_predict(zp, D, x)[i, c])
            total += (zhat[0] - zhat[1]) / (2.0 * h)
    return total


def score_caic(fit: FitResult, data: Dataset | None = None, variant: str = "VB") -> CriterionScore:
    variant = variant.upper()
    kind = {"VB": CriterionKind.cAIC_VB, "GK": CriterionKind.cAIC_GK}[variant]
    if fit.spec.family == 1:
        return CriterionScore(fit.spec, kind, score_aic(fit).value)
    penalty = hat_trace_vb(fit) if variant == "VB" else gk_penalty(fit)
    if not np.isfinite(penalty):
        return CriterionScore(fit.spec, kind, math.inf, False)
    return CriterionScore(fit.spec, kind, -2.0 * conditional_loglik(fit, y_scale=True) + 2.0 * penalty)


def score(fit: FitResult, kind, data: Dataset | None = None) -> CriterionScore:
    kind = CriterionKind.parse(kind)
    if kind is CriterionKind.AIC:
        return score_aic(fit, True)
    if kind is CriterionKind.AIC_noJ:
        return score_aic(fit, False)
    if kind is CriterionKind.cAIC_VB:
        return score_caic(fit, data, "VB")
    if kind is CriterionKind.cAIC_GK:
        return score_caic(fit, data, "GK")
    if kind is CriterionKind.EL_fix:
        return score_el_fix(fit, data)
    return score_el_blup(fit, data)


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------


def fit_grid(data: Dataset, grid: Sequence[ModelSpec] | None = None, method: str = "REML"):
    """Fit every spec; failed or non-converged fits come back as ``None``."""
    out = []
    for spec in grid if grid is not None else default_grid():
        try:
            f = fit(data, spec, method)
        except FitError:
            f = None
        out.append(f if f is not None and f.converged else None)
    return out


def score_fits(fits, grid, kinds: Iterable, data: Dataset | None = None):
    """``{kind: [CriterionScore aligned with grid]}``; missing fits score +inf."""
    res = {}
    for kind in map(CriterionKind.parse, kinds):
        res[kind] = [
            score(f, kind, data) if f is not None else CriterionScore(spec, kind, math.inf, False)
            for spec, f in zip(grid, fits)
        ]
    return res


def rank_scores(scores: Sequence[CriterionScore]) -> list[CriterionScore]:
    """Ascending by value; ties by (family, alpha_p, alpha_q)."""
    return sorted(scores, key=lambda s: (s.value, s.spec.key))


def select(data: Dataset, grid: Sequence[ModelSpec] | None = None, kind="el-blup", method: str = "REML"):
    grid = list(grid) if grid is not None else default_grid()
    if not grid:
        raise ValueError("empty model grid")
    fits = fit_grid(data, grid, method)
    kind = CriterionKind.parse(kind)
    ranked = rank_scores(score_fits(fits, grid, [kind], data)[kind])
    if not np.isfinite(ranked[0].value):
        raise NoSelectableModel(f"no candidate model has a finite {kind.label} score")
    return ranked
