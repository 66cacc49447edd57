"""Model-averaged BMD over eight standard quantal dose-response models.

Each model is fitted by box-constrained maximum likelihood on the raw dose
axis (internally divided by the largest dose for conditioning; BMDs are
equivariant under that rescaling), its BMD comes from the model's closed
form, and the per-model BMDs are combined with Akaike weights.

All closed forms define the BMD through extra risk
``(R(d) - R(0)) / (1 - R(0)) = bmr``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import minimize
from scipy.special import expit, logit, ndtr, ndtri, xlogy

from .dataset import DoseResponseDataset

__all__ = [
    "MODELS",
    "MaResult",
    "ModelAveragingError",
    "StandardModel",
    "StandardModelFit",
    "aic_weights",
    "estimate_bmd_ma",
    "fit_standard_model",
]

_RMIN = 1e-300


class ModelAveragingError(RuntimeError):
    """No model produced a usable fit."""


@dataclass(frozen=True)
class StandardModel:
    """One row of the model list.

    ``risk(theta, s)`` returns ``(R, dR/dtheta)`` on the rescaled dose
    ``s = d / dose_scale``; ``bmd(theta, bmr)`` is in the same units.
    ``to_raw(theta, dose_scale)`` maps parameters back to raw dose units.
    """

    model_id: int
    name: str
    param_names: tuple[str, ...]
    bounds: tuple[tuple[float, float], ...]
    natural_bounds: tuple[tuple[bool, bool], ...]
    risk: Callable[[NDArray, NDArray], tuple[NDArray, NDArray]] = field(repr=False)
    bmd: Callable[[NDArray, float], float] = field(repr=False)
    to_raw: Callable[[NDArray, float], NDArray] = field(repr=False)
    starts: Callable[[NDArray, NDArray], list[NDArray]] = field(repr=False)

    @property
    def n_params(self) -> int:
        return len(self.param_names)


# ---------------------------------------------------------------------------
# Model definitions
# ---------------------------------------------------------------------------

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _npdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def _logistic(th, s):
    b0, b1 = th
    r = expit(b0 + b1 * s)
    w = r * (1 - r)
    return r, np.stack([w, w * s], axis=1)


def _probit(th, s):
    b0, b1 = th
    z = b0 + b1 * s
    p = _npdf(z)
    return ndtr(z), np.stack([p, p * s], axis=1)


def _quantal_linear(th, s):
    b0, b1 = th
    e = np.exp(-b0 - b1 * s)
    return 1 - e, np.stack([e, e * s], axis=1)


def _quantal_quadratic(th, s):
    g0, b1 = th
    e = np.exp(-b1 * s * s)
    r = g0 + (1 - g0) * (1 - e)
    return r, np.stack([e, (1 - g0) * e * s * s], axis=1)


def _two_stage(th, s):
    b0, b1, b2 = th
    e = np.exp(-b0 - b1 * s - b2 * s * s)
    return 1 - e, np.stack([e, e * s, e * s * s], axis=1)


def _log_model(core):
    """``g0 + (1 - g0) F(b0, b1, log s)`` with the ``s = 0`` limit ``g0``."""

    def risk(th, s):
        g0, b0, b1 = th
        pos = s > 0
        ls = np.log(np.where(pos, s, 1.0))
        F, dF0, dF1 = core(b0, b1, ls)
        F = np.where(pos, F, 0.0)
        dF0 = np.where(pos, dF0, 0.0)
        dF1 = np.where(pos, dF1, 0.0)
        r = g0 + (1 - g0) * F
        return r, np.stack([1 - F, (1 - g0) * dF0, (1 - g0) * dF1], axis=1)

    return risk


def _ll_core(b0, b1, ls):
    F = expit(b0 + b1 * ls)
    w = F * (1 - F)
    return F, w, w * ls


def _lp_core(b0, b1, ls):
    z = b0 + b1 * ls
    p = _npdf(z)
    return ndtr(z), p, p * ls


def _weibull_core(b0, b1, ls):
    h = np.exp(np.clip(b0 + b1 * ls, -745.0, 700.0))
    e = np.exp(-h)
    return 1 - e, e * h, e * h * ls


def _T(bmr):
    return -math.log1p(-bmr)


def _bmd_logistic(th, bmr):
    b0, b1 = th
    if b1 <= 0:
        return math.inf
    return math.log((1 + math.exp(-b0) * bmr) / (1 - bmr)) / b1


def _bmd_probit(th, bmr):
    b0, b1 = th
    if b1 <= 0:
        return math.inf
    phi0 = float(ndtr(b0))
    return (float(ndtri(bmr * (1 - phi0) + phi0)) - b0) / b1


def _bmd_ql(th, bmr):
    return _T(bmr) / th[1] if th[1] > 0 else math.inf


def _bmd_qq(th, bmr):
    return math.sqrt(_T(bmr) / th[1]) if th[1] > 0 else math.inf


def _bmd_two_stage(th, bmr):
    _, b1, b2 = th
    T = _T(bmr)
    den = b1 + math.sqrt(b1 * b1 + 4 * b2 * T)
    # rationalized root, exact as b2 -> 0
    return 2 * T / den if den > 0 else math.inf


def _bmd_log(inv):
    def bmd(th, bmr):
        _, b0, b1 = th
        if b1 <= 0:
            return math.inf
        return math.exp(min((inv(bmr) - b0) / b1, 700.0))

    return bmd


def _raw_linear(th, sc):
    return np.array([th[0], th[1] / sc])


def _raw_qq(th, sc):
    return np.array([th[0], th[1] / sc**2])


def _raw_two_stage(th, sc):
    return np.array([th[0], th[1] / sc, th[2] / sc**2])


def _raw_log(th, sc):
    return np.array([th[0], th[1] - th[2] * math.log(sc), th[2]])


def _clip_p(p):
    return np.clip(p, 0.02, 0.98)


def _starts_logistic(s, p):
    b0 = float(logit(_clip_p(p[0])))
    return [np.array([b0, 1.0]), np.array([b0, 4.0]), np.array([0.0, 0.5])]


def _starts_probit(s, p):
    b0 = float(ndtri(_clip_p(p[0])))
    return [np.array([b0, 0.5]), np.array([b0, 2.0]), np.array([0.0, 0.3])]


def _starts_ql(s, p):
    b0 = -math.log1p(-float(_clip_p(p[0])))
    return [np.array([b0, 0.5]), np.array([b0, 2.0]), np.array([0.01, 0.1])]


def _starts_qq(s, p):
    g0 = float(_clip_p(p[0]))
    return [np.array([g0, 0.5]), np.array([g0, 3.0]), np.array([0.01, 0.1])]


def _starts_two_stage(s, p):
    b0 = -math.log1p(-float(_clip_p(p[0])))
    return [np.array([b0, 0.5, 0.1]), np.array([b0, 0.01, 2.0]), np.array([b0, 2.0, 0.01])]


def _starts_log(s, p):
    g0 = float(min(_clip_p(p[0]), 0.5))
    out = []
    for b1 in (0.5, 1.0, 3.0):
        out.append(np.array([g0, 0.0, b1]))
    out.append(np.array([0.01, -1.0, 1.0]))
    return out


_B = 50.0
_SLOPE = 1e3
_NONE = (False, False)
_LOWER = (True, False)
_BOTH = (True, True)

MODELS: tuple[StandardModel, ...] = (
    StandardModel(1, "Logistic", ("beta0", "beta1"), ((-_B, _B), (-_SLOPE, _SLOPE)),
                  (_NONE, _NONE), _logistic, _bmd_logistic, _raw_linear, _starts_logistic),
    StandardModel(2, "Probit", ("beta0", "beta1"), ((-_B, _B), (-_SLOPE, _SLOPE)),
                  (_NONE, _NONE), _probit, _bmd_probit, _raw_linear, _starts_probit),
    StandardModel(3, "Quantal-linear", ("beta0", "beta1"), ((0.0, _B), (0.0, _SLOPE)),
                  (_LOWER, _LOWER), _quantal_linear, _bmd_ql, _raw_linear, _starts_ql),
    StandardModel(4, "Quantal-quadratic", ("gamma0", "beta1"), ((0.0, 1.0), (0.0, _SLOPE)),
                  (_BOTH, _LOWER), _quantal_quadratic, _bmd_qq, _raw_qq, _starts_qq),
    StandardModel(5, "Two-stage", ("beta0", "beta1", "beta2"), ((0.0, _B), (0.0, _SLOPE), (0.0, _SLOPE)),
                  (_LOWER, _LOWER, _LOWER), _two_stage, _bmd_two_stage, _raw_two_stage, _starts_two_stage),
    StandardModel(6, "Log-logistic", ("gamma0", "beta0", "beta1"), ((0.0, 1.0), (-_B, _B), (0.0, 18.0)),
                  (_BOTH, _NONE, _LOWER), _log_model(_ll_core),
                  _bmd_log(lambda b: math.log(b / (1 - b))), _raw_log, _starts_log),
    StandardModel(7, "Log-probit", ("gamma0", "beta0", "beta1"), ((0.0, 1.0), (-_B, _B), (0.0, 18.0)),
                  (_BOTH, _NONE, _LOWER), _log_model(_lp_core),
                  _bmd_log(lambda b: float(ndtri(b))), _raw_log, _starts_log),
    StandardModel(8, "Weibull", ("gamma0", "beta0", "beta1"), ((0.0, 1.0), (-_B, _B), (0.0, 18.0)),
                  (_BOTH, _NONE, _LOWER), _log_model(_weibull_core),
                  _bmd_log(lambda b: math.log(-math.log1p(-b))), _raw_log, _starts_log),
)

_BY_ID = {m.model_id: m for m in MODELS}


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StandardModelFit:
    model_id: int
    name: str
    params: NDArray[np.float64]
    """Parameters in raw dose units, ordered as ``param_names``."""
    param_names: tuple[str, ...]
    loglik: float
    aic: float
    bmd: float
    """``inf`` when the fitted curve is flat or decreasing."""
    converged: bool
    boundary: bool = False
    dose_scale: float = 1.0
    scaled_params: NDArray[np.float64] = field(default=None, repr=False)

    @property
    def bmd_available(self) -> bool:
        return bool(np.isfinite(self.bmd))

    def risk(self, doses: ArrayLike) -> NDArray[np.float64]:
        s = np.atleast_1d(np.asarray(doses, dtype=float)) / self.dose_scale
        return _BY_ID[self.model_id].risk(self.scaled_params, s)[0]


def _negloglik(model, s, y, n):
    def f(theta):
        r, dr = model.risk(theta, s)
        r = np.clip(r, _RMIN, 1.0)
        q = np.clip(1.0 - r, _RMIN, 1.0)
        ll = float(np.sum(xlogy(y, r) + xlogy(n - y, q)))
        g = (np.where(y > 0, y / r, 0.0) - np.where(n - y > 0, (n - y) / q, 0.0)) @ dr
        return -ll, -g

    return f


def fit_standard_model(model_id: int, data: DoseResponseDataset, bmr: float) -> StandardModelFit:
    """Box-constrained MLE for one of the eight models and its closed-form BMD."""
    if not 0 < bmr < 1:
        raise ValueError("bmr must lie in (0, 1)")
    model = _BY_ID[model_id]
    d = data.doses.astype(float)
    sc = float(np.max(np.abs(d))) or 1.0
    s = d / sc
    y = data.events.astype(float)
    n = data.trials.astype(float)
    f = _negloglik(model, s, y, n)
    best = None
    for th0 in model.starts(s, y / n):
        th0 = np.array([min(max(v, lo), hi) for v, (lo, hi) in zip(th0, model.bounds)])
        res = minimize(f, th0, jac=True, method="L-BFGS-B", bounds=model.bounds,
                       options=dict(maxiter=2000, ftol=1e-14, gtol=1e-9))
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun - 1e-10):
            best = res
    if best is None:
        return StandardModelFit(model_id, model.name, np.full(model.n_params, np.nan), model.param_names,
                                -math.inf, math.inf, math.inf, False, True, sc)
    th = best.x
    # projected gradient: components pushing into an active bound do not count
    g = best.jac
    pg = g.copy()
    hit_artificial = False
    for k, ((lo, hi), (nat_lo, nat_hi)) in enumerate(zip(model.bounds, model.natural_bounds)):
        if th[k] <= lo + 1e-9 and g[k] > 0:
            pg[k] = 0.0
            hit_artificial |= not nat_lo
        elif th[k] >= hi - 1e-9 and g[k] < 0:
            pg[k] = 0.0
            hit_artificial |= not nat_hi
    ll = -float(best.fun)
    converged = bool(np.max(np.abs(pg)) <= 1e-4 * max(1.0, abs(ll)))
    bmd = model.bmd(th, bmr)
    bmd = bmd * sc if np.isfinite(bmd) and bmd > 0 else math.inf
    return StandardModelFit(
        model_id=model.model_id, name=model.name, params=model.to_raw(th, sc),
        param_names=model.param_names, loglik=ll, aic=-2.0 * ll + 2.0 * model.n_params,
        bmd=float(bmd), converged=converged, boundary=bool(hit_artificial), dose_scale=sc,
        scaled_params=th,
    )


# ---------------------------------------------------------------------------
# Averaging
# ---------------------------------------------------------------------------

def aic_weights(aics: ArrayLike) -> NDArray[np.float64]:
    """Akaike weights ``exp(-A_k / 2) / sum_j exp(-A_j / 2)``.

    Entries equal to ``+inf`` get weight 0.
    """
    a = np.asarray(aics, dtype=float)
    if a.size == 0 or not np.any(np.isfinite(a)):
        raise ModelAveragingError("no finite AIC to weight")
    if np.any(np.isnan(a)) or np.any(a == -np.inf):
        raise ValueError("AICs must be finite or +inf")
    z = -0.5 * (a - np.min(a))
    w = np.exp(z)
    return w / np.sum(w)


@dataclass(frozen=True)
class MaResult:
    weights: NDArray[np.float64]
    """One weight per model in ``MODELS`` order; excluded models get 0."""
    bmd_ma: float
    per_model: tuple[StandardModelFit, ...]
    excluded: tuple[tuple[int, str], ...] = ()
    """``(model_id, reason)`` for every model left out of the average."""
    bmr: float = 0.1


def estimate_bmd_ma(data: DoseResponseDataset, bmr: float, model_ids: tuple[int, ...] | None = None) -> MaResult:
    """Fit every model, weight the usable ones by AIC and average their BMDs.

    A model is excluded (and the weights renormalized over the rest) if its
    fit did not converge, a parameter is held at an artificial bound, or its
    BMD is unavailable.
    """
    ids = model_ids or tuple(m.model_id for m in MODELS)
    fits = tuple(fit_standard_model(k, data, bmr) for k in ids)
    excluded = []
    aics = np.full(len(fits), np.inf)
    for i, f in enumerate(fits):
        if not f.converged:
            excluded.append((f.model_id, "not converged"))
        elif f.boundary:
            excluded.append((f.model_id, "boundary"))
        elif not f.bmd_available:
            excluded.append((f.model_id, "bmd unavailable"))
        else:
            aics[i] = f.aic
    if not np.any(np.isfinite(aics)):
        raise ModelAveragingError("all models were excluded: " + "; ".join(f"{k}: {r}" for k, r in excluded))
    w = aic_weights(aics)
    used = np.isfinite(aics)
    bmds = np.array([f.bmd for f in fits])
    bmd_ma = float(np.sum(w[used] * bmds[used]))
    return MaResult(weights=w, bmd_ma=bmd_ma, per_model=fits, excluded=tuple(excluded), bmr=bmr)
