"""Centered, standardized Stukel generating family and the induced risk.

The linear predictor on the centered dose scale is ``eta = beta0 + beta1 * x``
and ``eta_c = eta - beta0 = beta1 * x``.  The generating family is

    G_c = beta0 + f_up(alpha1, eta_c)      if eta_c >= 0
    G_c = beta0 - f_up(alpha2, -eta_c)     if eta_c < 0

with ``f_up(a, v) = (exp(a v) - 1) / a`` for ``a > 0``, ``v`` for ``a = 0`` and
``-log(1 - a v) / a`` for ``a < 0``.  Writing the lower tail as a reflection of
the upper tail keeps one set of formulas (and one series window) for both.

Every member passes through ``(eta_c = 0, G_c = beta0)`` with unit slope, so
the risk at the standardization point is ``sigmoid(beta0)`` for all ``alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

from . import _kernels as _k

__all__ = [
    "ALPHA_BOX",
    "G_MAX",
    "NAMED_LINKS",
    "SERIES_EPS",
    "Delta",
    "LinkEvaluation",
    "LinkTerms",
    "evaluate",
    "generating_family",
    "generating_family_slope",
    "inverse_branch",
    "link_terms",
    "risk",
    "risk_gradient",
]

#: |G_c| is clipped here before the sigmoid.
G_MAX = _k.G_MAX
#: Branches use a Taylor series in ``z = alpha * |eta_c|`` when |z| is below this.
SERIES_EPS = _k.SERIES_EPS
#: Box for the link parameters during fitting.
ALPHA_BOX = (-8.0, 8.0)

#: Approximate members of the family for some classical links.  Documentation
#: constants only; no accuracy is claimed.
NAMED_LINKS: dict[str, tuple[float, float]] = {
    "logistic": (0.0, 0.0),
    "probit": (0.165, 0.165),
    "loglog": (-0.037, 0.62),
    "cloglog": (0.62, -0.037),
}


@dataclass(frozen=True)
class Delta:
    """Joint parameter vector ``[beta0, beta1, alpha1, alpha2]``.

    ``beta0`` and ``beta1`` live on the centered (and possibly rescaled) dose
    axis used for fitting.
    """

    beta0: float
    beta1: float
    alpha1: float = 0.0
    alpha2: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"Delta components must be finite, got {self.as_array()}")

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.beta0, self.beta1, self.alpha1, self.alpha2], dtype=float)

    @classmethod
    def from_array(cls, values: ArrayLike) -> "Delta":
        b0, b1, a1, a2 = (float(v) for v in np.asarray(values, dtype=float).ravel())
        return cls(b0, b1, a1, a2)

    @property
    def alpha(self) -> tuple[float, float]:
        return (self.alpha1, self.alpha2)


class LinkTerms(NamedTuple):
    """Generating family value and its derivatives at a set of doses."""

    g: NDArray[np.float64]
    """G_c at each dose (clipped to +-G_MAX)."""
    dg: NDArray[np.float64]
    """dG_c / d(beta0, beta1, alpha1, alpha2), shape (n, 4); zero where saturated."""
    slope: NDArray[np.float64]
    """dG_c / d eta_c."""
    saturated: NDArray[np.bool_]


@dataclass(frozen=True)
class LinkEvaluation:
    eta: float
    eta_c: float
    g_value: float
    risk: float
    branch: str
    saturated: bool


def link_terms(params: ArrayLike, x: ArrayLike) -> LinkTerms:
    """Evaluate G_c and its gradient for parameters ``[b0, b1, a1, a2]``.

    This is the workhorse behind every likelihood computation; it takes a
    plain array rather than a :class:`Delta` to stay cheap inside optimizers.
    """
    b0, b1, a1, a2 = (float(p) for p in params)
    g, dg, slope, sat = _k.terms(b0, b1, a1, a2, np.ascontiguousarray(x, dtype=float))
    return LinkTerms(g, dg, slope, sat)


# ---------------------------------------------------------------------------
# Public evaluation functions
# ---------------------------------------------------------------------------

def generating_family(delta: Delta, eta_c: ArrayLike) -> NDArray[np.float64] | float:
    """G_c(alpha, eta) as a function of ``eta_c = eta - beta0``.

    Values with ``|G_c| >= G_MAX`` are clipped; use :func:`evaluate` to see the
    saturation flag.
    """
    scalar = np.ndim(eta_c) == 0
    terms = link_terms([delta.beta0, 1.0, delta.alpha1, delta.alpha2], np.atleast_1d(eta_c))
    return float(terms.g[0]) if scalar else terms.g


def generating_family_slope(delta: Delta, eta_c: ArrayLike) -> NDArray[np.float64] | float:
    """dG_c / d eta_c."""
    scalar = np.ndim(eta_c) == 0
    terms = link_terms([delta.beta0, 1.0, delta.alpha1, delta.alpha2], np.atleast_1d(eta_c))
    return float(terms.slope[0]) if scalar else terms.slope


def risk(delta: Delta, x: ArrayLike) -> NDArray[np.float64] | float:
    """R(x) = sigmoid(G_c) at centered dose(s) ``x``."""
    scalar = np.ndim(x) == 0
    g = link_terms(delta.as_array(), np.atleast_1d(x)).g
    r = expit(g)
    return float(r[0]) if scalar else r


def risk_gradient(delta: Delta, x: ArrayLike) -> NDArray[np.float64]:
    """Analytic dR/d(beta0, beta1, alpha1, alpha2).

    Returns shape (4,) for scalar ``x`` and (n, 4) otherwise.  Rows where the
    risk is saturated are exact zeros.
    """
    scalar = np.ndim(x) == 0
    terms = link_terms(delta.as_array(), np.atleast_1d(x))
    r = expit(terms.g)
    grad = (r * (1.0 - r))[:, None] * terms.dg
    return grad[0] if scalar else grad


def evaluate(delta: Delta, x: float) -> LinkEvaluation:
    """Full diagnostic evaluation of the link at one centered dose."""
    terms = link_terms(delta.as_array(), np.array([float(x)]))
    eta_c = delta.beta1 * float(x)
    if eta_c >= 0:
        side, a = "upper", delta.alpha1
    else:
        side, a = "lower", delta.alpha2
    sign = "zero" if a == 0 else ("pos" if a > 0 else "neg")
    g = float(terms.g[0])
    return LinkEvaluation(
        eta=delta.beta0 + eta_c,
        eta_c=eta_c,
        g_value=g,
        risk=float(expit(g)),
        branch=f"{side}_{sign}",
        saturated=bool(terms.saturated[0]),
    )


def inverse_branch(a: float, t: float) -> float:
    """Solve ``f_up(a, v) = t`` for ``v >= 0`` given ``t >= 0``.

    Returns ``inf`` when the solution overflows.
    """
    if t < 0:
        raise ValueError("inverse_branch expects t >= 0")
    return float(_k.inverse_branch(float(a), float(t)))
