"""The ``t_alpha`` family of monotone maps from (0, 1) to the real line.

``t_alpha(x) = alpha*log(x) - (2 - alpha)*log(1 - x)`` with ``alpha`` in
[0, 2]. ``alpha = 1`` is the logit, ``alpha = 2`` is ``2 log x`` and
``alpha = 0`` is ``-2 log(1 - x)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from . import _kernels

__all__ = [
    "Alpha",
    "TransformPair",
    "TransformDomainError",
    "TransformRangeError",
    "t_alpha",
    "t_alpha_deriv",
    "t_alpha_inv",
    "t_alpha_inv_clamped",
    "log_jacobian",
]

ALPHA_GRID = (0.0, 0.6, 1.0, 1.4, 2.0)


class TransformDomainError(ValueError):
    """Argument outside the open unit interval."""


class TransformRangeError(ValueError):
    """Value outside the range of a boundary transform (alpha 0 or 2)."""


def _check_alpha(alpha) -> float:
    a = float(alpha)
    if not (0.0 <= a <= 2.0) or np.isnan(a):
        raise ValueError(f"alpha must lie in [0, 2], got {alpha!r}")
    return a


@dataclass(frozen=True, order=True)
class Alpha:
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", _check_alpha(self.value))

    def __float__(self):
        return self.value


@dataclass(frozen=True, order=True)
class TransformPair:
    """Transformation parameters for (sensitivity, false positive rate)."""

    alpha_p: float
    alpha_q: float

    def __post_init__(self):
        object.__setattr__(self, "alpha_p", _check_alpha(self.alpha_p))
        object.__setattr__(self, "alpha_q", _check_alpha(self.alpha_q))


def _unit_interval(x):
    x = np.asarray(x, dtype=float)
    if np.any(~((x > 0.0) & (x < 1.0))):
        raise TransformDomainError("argument must lie strictly inside (0, 1)")
    return x


def _out(res, like):
    return float(res) if np.ndim(like) == 0 else res


def t_alpha(alpha, x):
    a = _check_alpha(alpha)
    xa = _unit_interval(x)
    if a == 1.0:
        res = logit(xa)
    elif a == 2.0:
        res = 2.0 * np.log(xa)
    elif a == 0.0:
        res = -2.0 * np.log1p(-xa)
    else:
        res = a * np.log(xa) - (2.0 - a) * np.log1p(-xa)
    return _out(res, x)


def t_alpha_deriv(alpha, x):
    a = _check_alpha(alpha)
    xa = _unit_interval(x)
    res = a / xa + (2.0 - a) / (1.0 - xa)
    return _out(res, x)


def t_alpha_inv(alpha, z):
    """Unique ``x`` in (0, 1) with ``t_alpha(alpha, x) == z``.

    Raises :class:`TransformRangeError` when ``alpha`` is 0 (needs z > 0)
    or 2 (needs z < 0) and ``z`` is outside the map's range.
    """
    a = _check_alpha(alpha)
    za = np.asarray(z, dtype=float)
    if np.any(~np.isfinite(za)):
        raise TransformRangeError("z must be finite")
    if a == 1.0:
        res = expit(za)
    elif a == 2.0:
        if np.any(za >= 0.0):
            raise TransformRangeError("alpha=2 requires z < 0")
        res = np.exp(0.5 * za)
    elif a == 0.0:
        if np.any(za <= 0.0):
            raise TransformRangeError("alpha=0 requires z > 0")
        res = -np.expm1(-0.5 * za)
    else:
        res = _kernels.t_inv(a, np.atleast_1d(za).ravel()).reshape(za.shape)
    return _out(res, z)


def t_alpha_inv_clamped(alpha, z):
    """Like :func:`t_alpha_inv` but maps out-of-range z to 0 or 1."""
    a = _check_alpha(alpha)
    za = np.asarray(z, dtype=float)
    if a == 2.0:
        res = np.where(za < 0.0, np.exp(0.5 * np.minimum(za, 0.0)), 1.0)
    elif a == 0.0:
        res = np.where(za > 0.0, -np.expm1(-0.5 * np.maximum(za, 0.0)), 0.0)
    elif a == 1.0:
        res = expit(za)
    else:
        res = _kernels.t_inv(a, np.atleast_1d(za).ravel()).reshape(za.shape)
    return _out(res, z)


def log_jacobian(pair: TransformPair, y):
    """``log t'_{alpha_p}(sens) + log t'_{alpha_q}(fpr)`` per study.

    ``y`` has shape (2,) or (n, 2) with columns (sens, fpr).
    """
    ya = np.asarray(y, dtype=float)
    lj = np.log(t_alpha_deriv(pair.alpha_p, ya[..., 0])) + np.log(
        t_alpha_deriv(pair.alpha_q, ya[..., 1])
    )
    return _out(lj, ya[..., 0])
