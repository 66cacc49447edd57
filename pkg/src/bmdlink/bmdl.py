"""Lower confidence bounds for the benchmark dose.

Four constructions are provided: the Wald-type confidence ellipsoid for the
parameters mapped through the BMD function (``ML``), inversion of the
likelihood-ratio test (``LR``), inversion of the score test (``ST``) and the
parametric bootstrap (``BT``).  The first three are two-sided constructions,
so a one-sided bound at level ``1 - tau`` is the lower end of the
``1 - 2 tau`` two-sided interval.  The bootstrap bound is a lower quantile and
is one-sided as it stands.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtri
from scipy.stats import chi2, qmc

from . import _kernels as _k
from .bmd import estimate_bmd
from .dataset import generate_binomial_responses
from .likelihood import ConstrainedFit, FittedModel, fit_constrained, fit_mle

__all__ = [
    "METHODS",
    "BmdlResult",
    "MethodUnavailableError",
    "ConstrainedProfile",
    "bmdl_bootstrap",
    "bmdl_lr",
    "bmdl_ml",
    "bmdl_score",
    "bootstrap_bmds",
    "compute_bmdl",
    "score_statistic",
]

log = logging.getLogger(__name__)

METHODS = ("ML", "LR", "ST", "BT")


class MethodUnavailableError(RuntimeError):
    """The requested bound cannot be computed for this fit."""


@dataclass(frozen=True)
class BmdlResult:
    method: str
    level: float
    tau: float
    bmdl: float
    bmd: float
    upper: float | None = None
    flags: tuple[str, ...] = ()
    diagnostics: dict[str, Any] = field(default_factory=dict, repr=False)


def _clamp(value: float, fit: FittedModel, bmd: float, flags: list[str]) -> float:
    if value > bmd:
        value = bmd
    if fit.design.raw_doses[0] >= 0 and value < 0:
        flags.append("clamped_at_zero")
        value = 0.0
    return float(value)


def _bmd_many(P: np.ndarray, fit: FittedModel, bmr: float) -> np.ndarray:
    design = fit.design
    xb = _k.bmd_centered_many(np.ascontiguousarray(P, dtype=float), design.x_min, bmr)
    return np.where(np.isfinite(xb), xb * design.scale + design.dose_mean, np.inf)


# ---------------------------------------------------------------------------
# ML: minimum of the BMD over the Wald confidence ellipsoid
# ---------------------------------------------------------------------------

def bmdl_ml(
    fit: FittedModel,
    bmr: float,
    tau: float = 0.05,
    n_boundary: int = 8192,
    n_interior: int = 2048,
    n_refine: int = 10,
    seed: int = 0,
) -> BmdlResult:
    """Minimum of S(delta) over ``{delta : (delta_hat - delta)' J_n (delta_hat - delta) <= chi2_4}``.

    The ellipsoid is explored with scrambled Sobol points on its surface and
    in its interior; the best ``n_refine`` points seed SLSQP refinements.
    Parameter vectors whose BMD is unreachable (e.g. a non-increasing curve)
    count as ``+inf``.
    """
    if fit.covariance is None:
        raise MethodUnavailableError("covariance is not positive definite")
    point = estimate_bmd(fit, fit.design, bmr)
    dhat = fit.delta_hat.as_array()
    p = dhat.size
    radius = math.sqrt(chi2.ppf(1.0 - 2.0 * tau, p))
    try:
        chol = np.linalg.cholesky(fit.covariance)
    except np.linalg.LinAlgError:
        raise MethodUnavailableError("covariance is not positive definite") from None

    sobol = qmc.Sobol(d=p + 1, scramble=True, seed=seed)
    m = 1 << int(math.ceil(math.log2(max(n_boundary, n_interior, 2))))
    U = sobol.random(m)
    # map to directions via the normal quantile; the last column sets the interior radius
    Z = ndtri(np.clip(U[:, :p], 1e-12, 1 - 1e-12))
    dirs = Z / np.linalg.norm(Z, axis=1, keepdims=True)
    shell = dirs[:n_boundary] * radius
    inner = dirs[:n_interior] * (radius * U[:n_interior, p:] ** (1.0 / p))
    Zs = np.vstack([np.zeros((1, p)), shell, inner])
    P = dhat + Zs @ chol.T
    S = _bmd_many(P, fit, bmr)

    def objective(z):
        if not np.all(np.isfinite(z)):
            return 1e30
        val = _bmd_many((dhat + chol @ z)[None, :], fit, bmr)[0]
        return val if np.isfinite(val) else 1e30

    cons = {"type": "ineq", "fun": lambda z: radius * radius - z @ z, "jac": lambda z: -2.0 * z}
    order = np.argsort(S)[:n_refine]
    refined = []
    with np.errstate(over="ignore", invalid="ignore"):
        for k in order:
            if not np.isfinite(S[k]):
                continue
            res = minimize(objective, Zs[k], method="SLSQP", constraints=[cons],
                           options=dict(maxiter=200, ftol=1e-12))
            z = res.x
            if not np.all(np.isfinite(z)):
                continue
            r2 = float(z @ z)
            if r2 > radius * radius * (1 + 1e-8):
                z = z * (radius / math.sqrt(r2))
            refined.append(objective(z))
    s_min = min([float(np.min(S))] + refined)
    finite = S[np.isfinite(S)]
    upper = float(np.max(finite)) if finite.size == S.size else math.inf
    flags: list[str] = []
    if not fit.converged:
        flags.append("fit_not_converged")
    bmdl = _clamp(s_min, fit, point.bmd, flags)
    return BmdlResult(
        method="ML", level=1.0 - tau, tau=tau, bmdl=bmdl, bmd=point.bmd, upper=upper,
        flags=tuple(flags),
        diagnostics=dict(
            chi2_quantile=radius * radius, df=p, two_sided_level=1.0 - 2.0 * tau,
            points_evaluated=int(S.size), sample_min=float(np.min(S)),
            refined_min=float(min(refined)) if refined else None,
        ),
    )


# ---------------------------------------------------------------------------
# Profile machinery shared by LR and ST
# ---------------------------------------------------------------------------

class ConstrainedProfile:
    """Constrained fits ``R_E(d) = bmr`` along the dose axis, cached by dose.

    Fits are warm-started from the nearest dose already computed, plus the
    unconstrained MLE and the default alpha starts.
    """

    def __init__(self, fit: FittedModel, bmr: float, score_variance: str = "rao"):
        self.fit = fit
        self.bmr = bmr
        self.score_variance = score_variance
        self._cache: dict[float, ConstrainedFit] = {}

    def at(self, dose: float) -> ConstrainedFit:
        dose = float(dose)
        hit = self._cache.get(dose)
        if hit is not None:
            return hit
        starts = [self.fit.delta_hat.as_array()]
        if self._cache:
            near = sorted(self._cache, key=lambda d: abs(d - dose))[:2]
            starts = [self._cache[d].delta_hat0.as_array() for d in near
                      if self._cache[d].delta_hat0 is not None] + starts
        cf = fit_constrained(
            self.fit.design, self.fit.data, self.fit.design.to_centered(dose), self.bmr,
            options=self.fit.options, starts=starts,
        )
        self._cache[dose] = cf
        return cf

    def lr_statistic(self, dose: float) -> float:
        """Deviance difference ``2 (l_hat - l_0(d))``; ``inf`` if the constraint is infeasible."""
        cf = self.at(dose)
        if not cf.feasible:
            return math.inf
        return max(2.0 * (self.fit.loglik - cf.loglik0), 0.0)

    def score_statistic(self, dose: float) -> float:
        cf = self.at(dose)
        if not cf.feasible:
            return math.inf
        return score_statistic(self.fit, cf, self.score_variance)

    @property
    def evaluated(self) -> dict[float, ConstrainedFit]:
        return dict(sorted(self._cache.items()))


def score_statistic(fit: FittedModel, constrained: ConstrainedFit, variance: str = "rao") -> float:
    """Score statistic at the constrained MLE ``delta_hat0``.

    ``variance="rao"`` (default) returns ``U' J^-1 U`` with ``U`` the full
    score and ``J`` the expected information at ``delta_hat0``, restricted to
    the coordinates not held at the alpha box by an outward-pointing score.
    The constraint fixes a nonlinear function of all four parameters, so the
    score at ``delta_hat0`` is generally nonzero in every coordinate.

    ``variance="efficient"`` returns ``u0^2 / sigma0^2`` with ``u0`` the
    intercept component and ``sigma0^2 = J_00 - J_0psi J_psipsi^-1 J_psi0``
    its efficient information.  This equals the Rao form only when the score
    vanishes in the nuisance coordinates ``psi``.

    Returns ``nan`` when the relevant information is degenerate.
    """
    x = fit.design.centered_doses
    y = fit.data.events.astype(float)
    n = fit.data.trials.astype(float)
    params = constrained.delta_hat0.as_array()
    _, grad, info, _ = _k.loglik(params, x, y, n)
    if variance == "efficient":
        u0 = grad[0]
        J_pp = info[1:, 1:]
        J_0p = info[0, 1:]
        try:
            eff = info[0, 0] - J_0p @ np.linalg.solve(J_pp, J_0p)
        except np.linalg.LinAlgError:
            return math.nan
        if not eff > 1e-12 * max(info[0, 0], 1e-300):
            return math.nan
        return float(u0 * u0 / eff)
    if variance != "rao":
        raise ValueError(f"unknown score variance {variance!r}")
    lo, hi = fit.options.alpha_box
    free = [0, 1]
    for k in (2, 3):
        at_lo = params[k] <= lo + 1e-9 and grad[k] < 0
        at_hi = params[k] >= hi - 1e-9 and grad[k] > 0
        if not (at_lo or at_hi):
            free.append(k)
    U = grad[free]
    J = info[np.ix_(free, free)]
    eig = np.linalg.eigvalsh(J)
    if not eig[0] > 1e-12 * max(eig[-1], 1e-300):
        return math.nan
    return float(max(U @ np.linalg.solve(J, U), 0.0))


def _invert_profile(stat, lo: float, hi: float, threshold: float, n_grid: int, max_bisect: int, tol: float):
    """Smallest dose in (lo, hi] with ``stat(d) <= threshold``.

    Scans ``n_grid`` equally spaced doses downwards from ``hi``, takes the
    smallest accepted grid dose and bisects against the rejected neighbour
    below it.
    """
    grid = lo + (hi - lo) * np.arange(n_grid, 0, -1) / n_grid
    values = [(float(d), stat(d)) for d in grid]
    accepted = [d for d, v in values if v <= threshold]
    indeterminate = sum(1 for _, v in values if math.isnan(v))
    if not accepted:
        return hi, values, {"indeterminate": indeterminate, "no_acceptance": True}
    d_acc = min(accepted)
    below = [d for d, v in values if d < d_acc]
    d_rej = max(below) if below else lo
    v_acc = stat(d_acc)
    steps = 0
    for steps in range(1, max_bisect + 1):
        mid = 0.5 * (d_rej + d_acc)
        v = stat(mid)
        if v <= threshold:
            d_acc, v_acc = mid, v
        else:
            d_rej = mid
        if abs(v_acc - threshold) <= tol or (d_acc - d_rej) <= 1e-10 * max(hi, 1.0):
            break
    return d_acc, values, {
        "indeterminate": indeterminate, "bisection_steps": steps,
        "statistic_at_bound": float(v_acc), "rejected_below": float(d_rej),
    }


def _profile_bound(method, statistic, fit, bmr, tau, profile, n_grid, max_bisect, tol):
    point = estimate_bmd(fit, fit.design, bmr)
    threshold = float(chi2.ppf(1.0 - 2.0 * tau, 1))
    lo = float(fit.design.raw_doses[0])
    hi = point.bmd
    flags: list[str] = []
    if not fit.converged:
        flags.append("fit_not_converged")
    if not hi > lo:
        raise MethodUnavailableError("estimated BMD is not above the lowest dose")
    stat = getattr(profile, statistic)
    bound, values, info = _invert_profile(stat, lo, hi, threshold, n_grid, max_bisect, tol)
    if info.get("no_acceptance"):
        flags.append("no_grid_dose_accepted")
    if info["indeterminate"] > n_grid // 2:
        raise MethodUnavailableError(f"{method}: statistic indeterminate on most of the grid")
    if bound - lo <= 1e-6 * (hi - lo):
        flags.append("boundary")
        bound = lo
    bmdl = _clamp(bound, fit, hi, flags)
    return BmdlResult(
        method=method, level=1.0 - tau, tau=tau, bmdl=bmdl, bmd=hi, flags=tuple(flags),
        diagnostics=dict(chi2_quantile=threshold, df=1, two_sided_level=1.0 - 2.0 * tau,
                         profile=values, **info),
    )


def bmdl_lr(
    fit: FittedModel,
    bmr: float,
    tau: float = 0.05,
    profile: ConstrainedProfile | None = None,
    n_grid: int = 50,
    max_bisect: int = 60,
    tol: float = 1e-3,
) -> BmdlResult:
    """Smallest dose whose constrained deviance increase is within ``chi2_1(1 - 2 tau)``."""
    profile = profile or ConstrainedProfile(fit, bmr)
    return _profile_bound("LR", "lr_statistic", fit, bmr, tau, profile, n_grid, max_bisect, tol)


def bmdl_score(
    fit: FittedModel,
    bmr: float,
    tau: float = 0.05,
    profile: ConstrainedProfile | None = None,
    n_grid: int = 50,
    max_bisect: int = 60,
    tol: float = 1e-3,
) -> BmdlResult:
    """Smallest dose whose score statistic is within ``chi2_1(1 - 2 tau)``."""
    profile = profile or ConstrainedProfile(fit, bmr)
    return _profile_bound("ST", "score_statistic", fit, bmr, tau, profile, n_grid, max_bisect, tol)


# ---------------------------------------------------------------------------
# Parametric bootstrap
# ---------------------------------------------------------------------------

def bootstrap_bmds(
    fit: FittedModel,
    bmrs: list[float] | tuple[float, ...],
    replicates: int = 2000,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Refit the model to datasets simulated from the fitted risks.

    Replicate ``k`` draws from ``SeedSequence(seed).spawn`` child ``k``, so
    results do not depend on evaluation order.  Returns the ``(replicates,
    len(bmrs))`` array of BMDs (``inf`` where unreachable) and a boolean mask
    of converged refits.
    """
    risks = fit.fitted_risks
    data = fit.data
    children = np.random.SeedSequence(seed).spawn(replicates)
    out = np.full((replicates, len(bmrs)), np.nan)
    ok = np.zeros(replicates, dtype=bool)
    for k, child in enumerate(children):
        rng = np.random.default_rng(child)
        sim = generate_binomial_responses(risks, data.trials, rng, doses=data.doses)
        refit = fit_mle(fit.design, sim, fit.options)
        ok[k] = refit.converged
        P = refit.delta_hat.as_array()[None, :]
        for j, b in enumerate(bmrs):
            out[k, j] = _bmd_many(P, refit, b)[0]
    return out, ok


def _lower_order_statistic(values: np.ndarray, tau: float) -> float:
    srt = np.sort(values)
    k = max(int(math.ceil(tau * srt.size - 1e-9)), 1)
    return float(srt[k - 1])


def bmdl_bootstrap(
    fit: FittedModel,
    bmr: float,
    tau: float = 0.05,
    replicates: int = 2000,
    seed: int | None = None,
    samples: tuple[np.ndarray, np.ndarray] | None = None,
) -> BmdlResult:
    """Lower ``tau`` order statistic (the ``ceil(tau B)``-th) of bootstrap BMDs.

    Non-converged refits are dropped; more than 10% dropped flags the result
    as unreliable.  ``samples`` may carry a precomputed single-BMR output of
    :func:`bootstrap_bmds`.
    """
    if seed is None and samples is None:
        raise ValueError("the bootstrap needs an explicit seed")
    if replicates < 200 and samples is None:
        raise ValueError("use at least 200 bootstrap replicates")
    if samples is None:
        samples = bootstrap_bmds(fit, [bmr], replicates, seed)
    bmds, ok = samples
    bmds = np.asarray(bmds).reshape(len(ok), -1)[:, 0]
    point = estimate_bmd(fit, fit.design, bmr)
    kept = bmds[ok & ~np.isnan(bmds)]
    flags: list[str] = []
    dropped = int(len(ok) - kept.size)
    if dropped > 0.1 * len(ok):
        flags.append("unreliable")
    if kept.size == 0:
        raise MethodUnavailableError("no bootstrap refit converged")
    q = _lower_order_statistic(kept, tau)
    bmdl = _clamp(q, fit, point.bmd, flags)
    finite = kept[np.isfinite(kept)]
    return BmdlResult(
        method="BT", level=1.0 - tau, tau=tau, bmdl=bmdl, bmd=point.bmd, flags=tuple(flags),
        diagnostics=dict(
            replicates=int(len(ok)), dropped=dropped, seed=seed,
            order_statistic=max(int(math.ceil(tau * kept.size - 1e-9)), 1),
            quantile_unclamped=q, samples=finite,
        ),
    )


def compute_bmdl(
    method: str,
    fit: FittedModel,
    bmr: float,
    tau: float = 0.05,
    seed: int | None = None,
    replicates: int = 2000,
    profile: ConstrainedProfile | None = None,
) -> BmdlResult:
    """Dispatch on ``method`` in ``METHODS``."""
    method = method.upper()
    if method == "ML":
        return bmdl_ml(fit, bmr, tau)
    if method == "LR":
        return bmdl_lr(fit, bmr, tau, profile=profile)
    if method == "ST":
        return bmdl_score(fit, bmr, tau, profile=profile)
    if method == "BT":
        return bmdl_bootstrap(fit, bmr, tau, replicates=replicates, seed=seed)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
