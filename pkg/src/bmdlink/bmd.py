"""Closed-form benchmark dose for the link-family model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logit

from .dataset import CenteredDesign
from .likelihood import FittedModel
from .link import Delta, inverse_branch, risk

__all__ = [
    "BmdResult",
    "UnreachableTargetError",
    "bmd_closed_form",
    "bmd_value",
    "compute_bmre",
    "estimate_bmd",
    "extra_risk",
]


class UnreachableTargetError(ArithmeticError):
    """The target risk cannot be attained by the fitted curve."""


@dataclass(frozen=True)
class BmdResult:
    bmr: float
    p0: float
    bmre: float
    lbmr: float
    bmd_centered: float
    bmd: float
    branch: str
    extrapolated: bool = False


def compute_bmre(p0: float, bmr: float) -> tuple[float, float]:
    """Absolute risk ``p0 + (1 - p0) bmr`` at the BMD and its logit."""
    if not 0.0 <= p0 < 1.0:
        raise ValueError(f"background risk must lie in [0, 1), got {p0}")
    if not 0.0 < bmr < 1.0:
        raise ValueError(f"bmr must lie in (0, 1), got {bmr}")
    bmre = p0 + (1.0 - p0) * bmr
    return bmre, float(logit(bmre))


def bmd_closed_form(delta: Delta, lbmr: float) -> tuple[float, str]:
    """Centered dose at which ``G_c = lbmr``.

    Uses the upper branch (``alpha1``) when ``lbmr >= beta0`` and the lower
    branch (``alpha2``) otherwise.  Raises :class:`UnreachableTargetError`
    when the inversion overflows.
    """
    b0, b1, a1, a2 = delta.as_array()
    if b1 == 0:
        raise UnreachableTargetError("beta1 = 0: flat dose-response curve")
    t = lbmr - b0
    if t >= 0:
        side, a, v = "S1", a1, inverse_branch(a1, t)
        u = v
    else:
        side, a, v = "S2", a2, inverse_branch(a2, -t)
        u = -v
    if not math.isfinite(u):
        raise UnreachableTargetError(f"target logit {lbmr:.6g} is beyond reach of branch {side}")
    sign = "zero" if a == 0 else ("pos" if a > 0 else "neg")
    return u / b1, f"{side}_{sign}"


def extra_risk(delta: Delta, x, x_min: float):
    """``(R(x) - p0) / (1 - p0)`` with ``p0 = R(x_min)``."""
    p0 = risk(delta, x_min)
    return (np.asarray(risk(delta, x)) - p0) / (1.0 - p0)


def _bmd_from_delta(delta: Delta, design: CenteredDesign, bmr: float) -> BmdResult:
    if delta.beta1 <= 0:
        raise UnreachableTargetError("the dose-response curve is not increasing")
    p0 = float(risk(delta, design.x_min))
    bmre, lbmr = compute_bmre(p0, bmr)
    x_bmd, branch = bmd_closed_form(delta, lbmr)
    bmd = design.to_original(x_bmd)
    lo, hi = design.raw_doses[0], design.raw_doses[-1]
    return BmdResult(
        bmr=bmr, p0=p0, bmre=bmre, lbmr=lbmr,
        bmd_centered=float(x_bmd), bmd=float(bmd), branch=branch,
        extrapolated=not (lo <= bmd <= hi),
    )


def estimate_bmd(fit: FittedModel | Delta, design: CenteredDesign, bmr: float) -> BmdResult:
    """BMD in original dose units; background is the model risk at the lowest dose.

    Accepts a :class:`FittedModel` or a bare :class:`Delta` on ``design``'s
    scale.  Raises :class:`UnreachableTargetError` for a non-increasing curve.
    """
    delta = fit.delta_hat if isinstance(fit, FittedModel) else fit
    return _bmd_from_delta(delta, design, bmr)


def bmd_value(delta: Delta, design: CenteredDesign, bmr: float) -> float:
    """BMD in original units, ``inf`` for non-increasing or unreachable curves."""
    if delta.beta1 <= 0:
        return math.inf
    try:
        return _bmd_from_delta(delta, design, bmr).bmd
    except (UnreachableTargetError, ValueError):
        return math.inf
