"""Fitting one candidate model: a family index plus a transformation pair.

Family 1 treats the transformed rates ``z_i`` as i.i.d. bivariate normal
(closed form). Family 2 adds the known within-study covariance
``D_i = diag(d2_p, d2_q)`` so ``z_i ~ N(mu, Sigma + D_i)``; its variance
parameters are found numerically with the mean profiled out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import _kernels
from .study_data import Dataset
from .transforms import ALPHA_GRID, TransformPair, log_jacobian

METHODS = ("REML", "ML")
MAXITER = 2000
FTOL = 1e-10
RIDGE = _kernels.RIDGE


class FitError(ValueError):
    """The data cannot support the requested model."""


@dataclass(frozen=True, order=True)
class ModelSpec:
    family: int
    pair: TransformPair

    def __post_init__(self):
        if self.family not in (1, 2):
            raise ValueError(f"family must be 1 or 2, got {self.family!r}")

    @property
    def key(self):
        """Canonical ordering and tie-break key."""
        return (self.family, self.pair.alpha_p, self.pair.alpha_q)

    def __str__(self):
        return f"F{self.family}(ap={self.pair.alpha_p:g},aq={self.pair.alpha_q:g})"


def default_grid(alphas=ALPHA_GRID) -> list[ModelSpec]:
    """Candidate models in canonical order (family, alpha_p, alpha_q)."""
    return [
        ModelSpec(fam, TransformPair(ap, aq))
        for fam, ap, aq in product((1, 2), sorted(alphas), sorted(alphas))
    ]


@dataclass(frozen=True)
class Theta:
    mu_p: float
    mu_q: float
    sigma2_p: float
    sigma2_q: float
    sigma: float

    @property
    def mean(self):
        return np.array([self.mu_p, self.mu_q])

    @property
    def cov(self):
        return np.array([[self.sigma2_p, self.sigma], [self.sigma, self.sigma2_q]])

    @property
    def rho(self):
        denom = math.sqrt(self.sigma2_p * self.sigma2_q)
        return self.sigma / denom if denom > 0 else 0.0


@dataclass(frozen=True, eq=False)
class FitResult:
    spec: ModelSpec
    method: str
    theta: Theta
    loglik_transformed: float
    loglik_y: float
    restricted_loglik: float
    blups: np.ndarray = field(repr=False)
    converged: bool
    iterations: int
    z: np.ndarray = field(repr=False)
    D: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    params: np.ndarray = field(repr=False)

    @property
    def N(self):
        return self.z.shape[0]

    @property
    def log_jacobian_sum(self):
        return self.loglik_y - self.loglik_transformed


def _check_method(method):
    m = str(method).upper()
    if m not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    return m


def _inv2(V):
    """Inverses and determinants of a stack of 2x2 matrices."""
    a, b, c, d = V[:, 0, 0], V[:, 0, 1], V[:, 1, 0], V[:, 1, 1]
    det = a * d - b * c
    inv = np.empty_like(V)
    inv[:, 0, 0] = d / det
    inv[:, 0, 1] = -b / det
    inv[:, 1, 0] = -c / det
    inv[:, 1, 1] = a / det
    return inv, det


def marginal_covs(Sigma, D):
    """``V_i = Sigma + D_i + ridge*I`` as an (N, 2, 2) stack."""
    n = D.shape[0]
    V = np.broadcast_to(Sigma, (n, 2, 2)).copy()
    V[:, 0, 0] += D[:, 0] + RIDGE
    V[:, 1, 1] += D[:, 1] + RIDGE
    return V


def gls_mean(z, D, Sigma):
    """GLS mean and its covariance ``(sum W_i)^-1``."""
    W, _ = _inv2(marginal_covs(Sigma, D))
    S = W.sum(axis=0)
    b = np.einsum("nij,nj->i", W, z)
    A = np.linalg.inv(S)
    return A @ b, A


def gaussian_loglik(z, mean, V):
    """Sum of bivariate normal log-densities; ``mean`` is (2,) or (N, 2)."""
    W, det = _inv2(V)
    r = z - mean
    q = np.einsum("ni,nij,nj->n", r, W, r)
    return float(np.sum(-math.log(2 * math.pi) - 0.5 * np.log(det) - 0.5 * q))


def _restricted_loglik(z, V, mu):
    W, det = _inv2(V)
    S = W.sum(axis=0)
    r = z - mu
    q = np.einsum("ni,nij,nj->", r, W, r)
    n = z.shape[0]
    return float(
        -0.5 * np.sum(np.log(det)) - 0.5 * math.log(np.linalg.det(S)) - 0.5 * q
        - (n - 1) * math.log(2 * math.pi)
    )


def _build(spec, method, z, D, y, Sigma, mu, converged, iterations, params):
    V = marginal_covs(Sigma, D)
    ll = gaussian_loglik(z, mu, V)
    lj = float(np.sum(log_jacobian(spec.pair, y)))
    theta = Theta(float(mu[0]), float(mu[1]), float(Sigma[0, 0]), float(Sigma[1, 1]), float(Sigma[0, 1]))
    if spec.family == 1:
        blups = z.copy()
    else:
        blups = _blup_arrays(z, D, mu, Sigma)
    for arr in (blups, z, D, y):
        arr.setflags(write=False)
    return FitResult(
        spec=spec,
        method=method,
        theta=theta,
        loglik_transformed=ll,
        loglik_y=ll + lj,
        restricted_loglik=_restricted_loglik(z, V, mu),
        blups=blups,
        converged=bool(converged),
        iterations=int(iterations),
        z=z,
        D=D,
        y=y,
        params=params,
    )


def _sample_moments(z, method):
    n = z.shape[0]
    mu = z.mean(axis=0)
    r = z - mu
    S = r.T @ r / (n - 1 if method == "REML" else n)
    return mu, S


def fit_family1(data: Dataset, pair: TransformPair, method: str = "REML") -> FitResult:
    """Closed-form fit with no within-study variance."""
    method = _check_method(method)
    z = data.z(pair)
    mu, S = _sample_moments(z, method)
    if S[0, 0] <= 0.0 or S[1, 1] <= 0.0:
        raise FitError(f"degenerate transformed data for {pair}: a coordinate has zero variance")
    sp, sq = math.sqrt(S[0, 0]), math.sqrt(S[1, 1])
    rmax = math.tanh(_kernels.ATANH_RHO_MAX)
    r = min(max(S[0, 1] / (sp * sq), -rmax), rmax)
    params = np.array([math.log(sp), math.log(sq), math.atanh(r)])
    return _build(
        ModelSpec(1, pair), method, z, np.zeros_like(z), np.array(data.y), S, mu, True, 0, params
    )


def start_points(z, method="REML"):
    """Five deterministic optimizer starts around the sample moments."""
    _, S = _sample_moments(z, method)
    lo = _kernels.LOG_SD_MIN
    lp = max(0.5 * math.log(max(S[0, 0], 1e-300)), lo)
    lq = max(0.5 * math.log(max(S[1, 1], 1e-300)), lo)
    denom = math.sqrt(max(S[0, 0] * S[1, 1], 1e-300))
    a = math.atanh(min(max(S[0, 1] / denom, -0.95), 0.95))
    return np.array(
        [
            [lp, lq, a],
            [lp + 0.5, lq + 0.5, a],
            [lp - 0.5, lq - 0.5, a],
            [lp, lq, math.atanh(-0.5)],
            [lp, lq, math.atanh(0.5)],
        ]
    )


def params_to_sigma(x):
    vp, vq, c = _kernels.unpack(np.asarray(x, dtype=float))
    return np.array([[vp, c], [c, vq]])


def fit_arrays(z, D, method="REML", spec=None, y=None) -> FitResult:
    """Family-2 fit on explicit transformed data ``z`` and variances ``D``.

    ``D`` may be zero (then the model is Family 1 estimated numerically).
    """
    method = _check_method(method)
    z = np.ascontiguousarray(z, dtype=float)
    D = np.ascontiguousarray(D, dtype=float)
    if z.ndim != 2 or z.shape[1] != 2 or D.shape != z.shape:
        raise ValueError("z and D must both have shape (N, 2)")
    if z.shape[0] < 3:
        raise FitError("need at least 3 studies")
    if np.any(D < 0.0) or not np.all(np.isfinite(D)):
        raise ValueError("within-study variances must be finite and non-negative")
    reml = method == "REML"
    x, f, iters, conv = _kernels.fit_profile(start_points(z, method), z, D, reml, MAXITER, FTOL)
    if not np.isfinite(f):
        raise FitError("objective is not finite at any start")
    Sigma = params_to_sigma(x)
    mu, _ = gls_mean(z, D, Sigma)
    if spec is None:
        spec = ModelSpec(2, TransformPair(1.0, 1.0))
    if y is None:
        y = np.full_like(z, 0.5)
    return _build(spec, method, z, D, np.asarray(y, dtype=float), Sigma, mu, conv, iters, x)


def fit_family2(data: Dataset, pair: TransformPair, method: str = "REML") -> FitResult:
    D = data.d2(pair)
    if np.any(D <= 0.0):
        raise ValueError("within-study variances must be strictly positive")
    return fit_arrays(data.z(pair), D, method, ModelSpec(2, pair), np.array(data.y))


def fit(data: Dataset, spec: ModelSpec, method: str = "REML") -> FitResult:
    if spec.family == 1:
        return fit_family1(data, spec.pair, method)
    return fit_family2(data, spec.pair, method)


def _blup_arrays(z, D, mu, Sigma):
    W, _ = _inv2(marginal_covs(Sigma, D))
    G = np.einsum("ij,njk->nik", Sigma, W)
    return mu + np.einsum("nij,nj->ni", G, z - mu)


def blup(fit: FitResult, data: Dataset | None = None) -> np.ndarray:
    """Empirical BLUPs of the study-level transformed rates, shape (N, 2)."""
    if fit.spec.family == 1:
        return np.array(fit.z)
    return _blup_arrays(fit.z, fit.D, fit.theta.mean, fit.theta.cov)


def conditional_loglik(fit: FitResult, data: Dataset | None = None, y_scale: bool = False) -> float:
    """``sum_i log N(z_i; zhat_i, D_i)``, plus the log-Jacobian if ``y_scale``.

    For Family 1 there is no random effect and the marginal log-likelihood
    is returned.
    """
    if fit.spec.family == 1:
        return fit.loglik_y if y_scale else fit.loglik_transformed
    if np.any(fit.D <= 0.0):
        raise FitError("conditional density needs strictly positive within-study variances")
    n = fit.N
    V = np.zeros((n, 2, 2))
    V[:, 0, 0] = fit.D[:, 0]
    V[:, 1, 1] = fit.D[:, 1]
    ll = gaussian_loglik(fit.z, fit.blups, V)
    return ll + fit.log_jacobian_sum if y_scale else ll


def literal_conditional_difference(fit: FitResult) -> float:
    """``l(theta; Z) - l(theta; Zhat)``: marginal log-likelihood minus the same
    function evaluated with the observations replaced by their BLUPs."""
    V = marginal_covs(fit.theta.cov, fit.D)
    return fit.loglik_transformed - gaussian_loglik(fit.blups, fit.theta.mean, V)
