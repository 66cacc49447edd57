"""Binomial likelihood for the link-family model, unconstrained and constrained MLE.

The log-likelihood omits the binomial coefficients, which do not depend on
the parameters; every downstream use is a difference of log-likelihoods.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize
from scipy.special import expit

from .dataset import CenteredDesign, DoseResponseDataset
from . import _kernels as _k
from .link import ALPHA_BOX, Delta, link_terms

__all__ = [
    "DEFAULT_ALPHA_STARTS",
    "ConstrainedFit",
    "FitOptions",
    "FittedModel",
    "SaturationError",
    "constrained_intercept",
    "fisher_information",
    "fit_constrained",
    "fit_mle",
    "log_likelihood",
    "score",
]

log = logging.getLogger(__name__)

DEFAULT_ALPHA_STARTS: tuple[tuple[float, float], ...] = (
    (0.0, 0.0),
    (0.165, 0.165),
    (0.62, -0.037),
    (-0.037, 0.62),
    (2.0, -1.0),
    (-1.0, 2.0),
)

_BIG = 1e15


class SaturationError(ArithmeticError):
    """A fitted risk is numerically 0 or 1, so Var(ybar) degenerates."""


@dataclass(frozen=True)
class FitOptions:
    alpha_box: tuple[float, float] = ALPHA_BOX
    alpha_starts: tuple[tuple[float, float], ...] = DEFAULT_ALPHA_STARTS
    tol_grad: float = 1e-6
    tol_step: float = 1e-8
    max_iter: int = 500
    beta_max: float = 1e4
    """Largest |beta| on the fitting scale before the fit is declared boundary-stuck."""
    tie_tol: float = 1e-8


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Maximum-likelihood fit of the link-family model."""

    delta_hat: Delta
    loglik: float
    fisher_info: NDArray[np.float64]
    covariance: NDArray[np.float64] | None
    converged: bool
    iterations: int
    grad_norm: float
    design: CenteredDesign
    data: DoseResponseDataset
    boundary: bool = False
    warnings: tuple[str, ...] = ()
    options: FitOptions = field(default_factory=FitOptions, repr=False)

    @property
    def fitted_risks(self) -> NDArray[np.float64]:
        return expit(link_terms(self.delta_hat.as_array(), self.design.centered_doses).g)

    @property
    def standard_errors(self) -> NDArray[np.float64] | None:
        if self.covariance is None:
            return None
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


@dataclass(frozen=True)
class ConstrainedFit:
    """MLE subject to ``R_E(candidate_dose) = bmr`` (centered dose scale)."""

    delta_hat0: Delta | None
    loglik0: float
    candidate_dose: float
    bmr: float
    converged: bool
    feasible: bool = True


# ---------------------------------------------------------------------------
# Likelihood pieces
# ---------------------------------------------------------------------------

def _loglik_terms(params, x, y, n):
    """log-likelihood, score and the link terms at ``params`` (never raises)."""
    terms = link_terms(params, x)
    ll, grad, _, _ = _k.loglik(np.asarray(params, dtype=float), x, y, n)
    return ll, grad, terms, expit(terms.g)


def _arrays(design: CenteredDesign, data: DoseResponseDataset):
    return design.centered_doses, data.events.astype(float), data.trials.astype(float)


def log_likelihood(delta: Delta, design: CenteredDesign, data: DoseResponseDataset) -> float:
    """Sum of ``y log R + (n - y) log(1 - R)`` over dose groups.

    Returns ``-inf`` when a saturated risk contradicts the data (e.g. R = 0
    with events observed).
    """
    x, y, n = _arrays(design, data)
    ll, _, terms, _ = _loglik_terms(delta.as_array(), x, y, n)
    if np.any(terms.saturated):
        g = terms.g[terms.saturated]
        ys, ns = y[terms.saturated], n[terms.saturated]
        if np.any((g > 0) & (ys < ns)) or np.any((g < 0) & (ys > 0)):
            return -math.inf
    return ll


def _check_saturation(terms):
    if np.any(terms.saturated):
        raise SaturationError("fitted risk saturated at 0 or 1")


def score(delta: Delta, design: CenteredDesign, data: DoseResponseDataset) -> NDArray[np.float64]:
    """Score vector ``sum_i dr_i/d delta * (ybar_i - r_i) / Var(ybar_i)``."""
    x, y, n = _arrays(design, data)
    _, grad, terms, _ = _loglik_terms(delta.as_array(), x, y, n)
    _check_saturation(terms)
    return grad


def _fisher(terms, r, n):
    w = n * r * (1.0 - r)
    return (terms.dg * w[:, None]).T @ terms.dg


def fisher_information(delta: Delta, design: CenteredDesign, data: DoseResponseDataset) -> NDArray[np.float64]:
    """Expected information ``sum_i n_i / (r_i (1 - r_i)) * dr_i dr_i'``."""
    terms = link_terms(delta.as_array(), design.centered_doses)
    _check_saturation(terms)
    return _fisher(terms, expit(terms.g), data.trials.astype(float))


# ---------------------------------------------------------------------------
# Unconstrained fit: alpha profiled, Fisher scoring on beta
# ---------------------------------------------------------------------------

def _fit_beta(alpha, beta, x, y, n, beta_max, max_iter=100):
    """Fisher scoring for (beta0, beta1) with alpha held fixed."""
    return _k.fit_beta(float(alpha[0]), float(alpha[1]), float(beta[0]), float(beta[1]),
                       x, y, n, float(beta_max), max_iter)


def _logistic_start(x, y, n, beta_max):
    pbar = np.clip(y.sum() / n.sum(), 1e-3, 1 - 1e-3)
    params, _, _ = _fit_beta((0.0, 0.0), (math.log(pbar / (1 - pbar)), 0.0), x, y, n, beta_max)
    return params[:2]


def _projected_grad(params, grad, box):
    pg = grad.copy()
    lo, hi = box
    for k in (2, 3):
        if params[k] <= lo + 1e-12 and pg[k] < 0:
            pg[k] = 0.0
        elif params[k] >= hi - 1e-12 and pg[k] > 0:
            pg[k] = 0.0
    return pg


def _polish(params, x, y, n, box, tol_grad, max_iter=50):
    """Fisher scoring on the free coordinates of the full parameter vector."""
    lo, hi = box
    params = np.asarray(params, dtype=float)
    ll, grad, info, _ = _k.loglik(params, x, y, n)
    its = 0
    for its in range(1, max_iter + 1):
        pg = _projected_grad(params, grad, box)
        if np.linalg.norm(pg) <= 0.1 * tol_grad:
            break
        free = np.ones(4, dtype=bool)
        for k in (2, 3):
            free[k] = not (pg[k] == 0.0 and (params[k] <= lo + 1e-12 or params[k] >= hi - 1e-12))
        step = np.zeros(4)
        step[free] = np.linalg.lstsq(info[np.ix_(free, free)], grad[free], rcond=1e-13)[0]
        t = 1.0
        improved = False
        while t > 1e-8:
            trial = params + t * step
            trial[2:] = np.clip(trial[2:], lo, hi)
            out = _k.loglik(trial, x, y, n)
            if out[0] >= ll:
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        moved = np.max(np.abs(trial - params))
        params = trial
        ll, grad, info, _ = out
        if moved < 1e-14:
            break
    return params, ll, grad, its


def fit_mle(
    design: CenteredDesign,
    data: DoseResponseDataset,
    options: FitOptions | None = None,
) -> FittedModel:
    """Maximum-likelihood fit with alpha restricted to ``options.alpha_box``.

    The link parameters are optimized by L-BFGS-B on the profile likelihood
    (beta re-fitted by Fisher scoring at each alpha), from each of the
    ``alpha_starts``.  The best likelihood wins, ties going to the smallest
    ``|alpha|``.  A fit that does not meet the gradient tolerance is returned
    with ``converged=False`` rather than raising.
    """
    opts = options or FitOptions()
    x, y, n = _arrays(design, data)
    box = opts.alpha_box
    beta_start = _logistic_start(x, y, n, opts.beta_max)

    candidates = []
    total_iter = 0
    for a_start in opts.alpha_starts:
        a0 = np.clip(np.asarray(a_start, dtype=float), *box)
        cache = {"beta": beta_start.copy()}

        def objective(alpha, cache=cache):
            params, ll, grad = _fit_beta(alpha, cache["beta"], x, y, n, opts.beta_max)
            if not np.isfinite(ll) or np.max(np.abs(params[:2])) > opts.beta_max:
                cache["beta"] = beta_start.copy()
            else:
                cache["beta"] = params[:2]
            return -ll, -grad[2:]

        res = minimize(
            objective, a0, jac=True, method="L-BFGS-B",
            bounds=[box, box],
            options=dict(maxiter=opts.max_iter, ftol=1e-15, gtol=1e-10),
        )
        total_iter += int(res.get("nit", 0))
        params, ll, _ = _fit_beta(res.x, cache["beta"], x, y, n, opts.beta_max)
        candidates.append((ll, params))

    best_ll = max(c[0] for c in candidates)
    near = [c for c in candidates if c[0] >= best_ll - opts.tie_tol]
    ll, params = min(near, key=lambda c: float(np.hypot(c[1][2], c[1][3])))

    params, ll, grad, its = _polish(params, x, y, n, box, opts.tol_grad)
    total_iter += its
    pg = _projected_grad(params, grad, box)
    grad_norm = float(np.linalg.norm(pg))

    terms = link_terms(params, x)
    info = _k.loglik(params, x, y, n)[2]
    info = 0.5 * (info + info.T)
    warnings = []
    boundary = bool(np.any(terms.saturated) or np.max(np.abs(params[:2])) > opts.beta_max)
    if boundary:
        warnings.append("fit is boundary-stuck (saturated risks or diverging beta)")
    at_box = [k for k in (2, 3) if params[k] <= box[0] + 1e-9 or params[k] >= box[1] - 1e-9]
    if at_box:
        warnings.append("link parameter(s) at the alpha box: " + ", ".join(f"alpha{k - 1}" for k in at_box))
    covariance = None
    try:
        eig = np.linalg.eigvalsh(info)
        if eig[0] > 1e-12 * max(eig[-1], 1e-300):
            covariance = np.linalg.inv(info)
            covariance = 0.5 * (covariance + covariance.T)
    except np.linalg.LinAlgError:
        pass
    if covariance is None:
        warnings.append("Fisher information is singular; covariance unavailable")
        # singular information with a 0/n group fitted to its limit: the supremum is at infinity
        ybar = y / n
        r = expit(terms.g)
        if np.any(((ybar == 0) | (ybar == 1)) & (np.abs(r - ybar) < 1e-6)) and not boundary:
            boundary = True
            warnings.append("fit is boundary-stuck (separated data)")
    converged = bool(np.isfinite(ll) and grad_norm <= opts.tol_grad and not boundary)
    if not converged:
        warnings.append(f"fit did not converge (projected gradient norm {grad_norm:.3g})")
    return FittedModel(
        delta_hat=Delta.from_array(params),
        loglik=float(ll),
        fisher_info=info,
        covariance=covariance,
        converged=converged,
        iterations=total_iter,
        grad_norm=grad_norm,
        design=design,
        data=data,
        boundary=boundary,
        warnings=tuple(warnings),
        options=opts,
    )


# ---------------------------------------------------------------------------
# Constrained fit under H0: R_E(x_d) = bmr
# ---------------------------------------------------------------------------

def constrained_intercept(beta1: float, alpha1: float, alpha2: float, x_min: float, x_d: float, bmr: float):
    """Intercept that puts extra risk ``bmr`` at ``x_d`` for given (beta1, alpha).

    With ``f(x) = G_c(x) - beta0`` the constraint reads
    ``softplus(b + f_d) - softplus(b + f_m) = -log(1 - bmr)``, whose left side
    increases monotonically in ``b`` from 0 to ``f_d - f_m``.  The unique root
    is returned in closed form, or ``None`` when ``f_d - f_m <= -log(1 - bmr)``
    (no intercept can reach the target).

    Returns ``(b, db/d(beta1, alpha1, alpha2))``.
    """
    ok, b, db = _k.constrained_intercept(float(beta1), float(alpha1), float(alpha2),
                                         float(x_min), float(x_d), -math.log1p(-bmr))
    return (b, db) if ok else None


def fit_constrained(
    design: CenteredDesign,
    data: DoseResponseDataset,
    candidate_dose_centered: float,
    bmr: float,
    options: FitOptions | None = None,
    starts: list[np.ndarray] | None = None,
    use_alpha_grid: bool = True,
) -> ConstrainedFit:
    """Maximize the likelihood subject to extra risk ``bmr`` at the candidate dose.

    The background ``p0`` is the model risk at the lowest design dose.  The
    intercept is eliminated through :func:`constrained_intercept`, leaving a
    bounded problem in ``(log beta1, alpha1, alpha2)``.  ``starts`` are extra
    starting points given as full ``[b0, b1, a1, a2]`` vectors (the intercept
    is ignored); with ``use_alpha_grid`` the alpha starts of ``options`` are
    tried as well.
    """
    if not 0 < bmr < 1:
        raise ValueError("bmr must lie in (0, 1)")
    opts = options or FitOptions()
    x, y, n = _arrays(design, data)
    x_min = float(x[0])
    x_d = float(candidate_dose_centered)
    T = -math.log1p(-bmr)
    box = opts.alpha_box
    if x_d <= x_min:
        return ConstrainedFit(None, -math.inf, x_d, bmr, False, feasible=False)

    def objective(theta):
        return _k.constrained_objective(theta, x, y, n, x_min, x_d, T)

    initial = []
    for s in starts or []:
        s = np.asarray(s, dtype=float)
        if s[1] > 0:
            initial.append((s[1], s[2], s[3]))
    if use_alpha_grid or not initial:
        b1_guess = initial[0][0] if initial else 1.0 / max(x[-1] - x_min, 1e-12)
        initial.extend((b1_guess, a[0], a[1]) for a in opts.alpha_starts)

    bounds = [(math.log(1e-10), math.log(opts.beta_max)), box, box]
    best = None
    for b1, a1, a2 in initial:
        a1 = float(np.clip(a1, *box))
        a2 = float(np.clip(a2, *box))
        # raise beta1 until the target becomes reachable
        while b1 <= opts.beta_max and not _k.constrained_intercept(b1, a1, a2, x_min, x_d, T)[0]:
            b1 *= 2.0
        if b1 > opts.beta_max:
            continue
        theta0 = np.array([math.log(b1), a1, a2])
        res = minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options=dict(maxiter=opts.max_iter, ftol=1e-14, gtol=1e-9))
        if res.fun >= _BIG:
            continue
        if best is None or res.fun < best.fun - opts.tie_tol or (
            abs(res.fun - best.fun) <= opts.tie_tol and np.hypot(*res.x[1:]) < np.hypot(*best.x[1:])
        ):
            best = res
    if best is None:
        return ConstrainedFit(None, -math.inf, x_d, bmr, False, feasible=False)
    beta1 = math.exp(best.x[0])
    b, _ = constrained_intercept(beta1, best.x[1], best.x[2], x_min, x_d, bmr)
    delta0 = Delta(float(b), beta1, float(best.x[1]), float(best.x[2]))
    return ConstrainedFit(delta0, float(-best.fun), x_d, bmr, bool(best.success), feasible=True)
