"""Quantal dose-response data, dose centering and trend screening."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "MIN_GROUPS",
    "CenteredDesign",
    "DataValidationError",
    "DoseResponseDataset",
    "KendallResult",
    "center",
    "generate_binomial_responses",
    "kendall_screen",
    "kendall_tau_b",
    "read_csv",
]

MIN_GROUPS = 3
# exact enumeration above this many groups gets expensive (n!)
_MAX_EXACT_GROUPS = 8


class DataValidationError(ValueError):
    """Raised for malformed or inconsistent dose-response data."""


@dataclass(frozen=True, eq=False)
class DoseResponseDataset:
    """Dose groups with group sizes and adverse-event counts.

    Doses must be strictly increasing and there must be at least three groups;
    with two groups the link parameters cannot be identified.
    """

    doses: NDArray[np.float64]
    trials: NDArray[np.int64]
    events: NDArray[np.int64]

    def __post_init__(self):
        doses = np.array(self.doses, dtype=float)
        trials = np.asarray(self.trials)
        events = np.asarray(self.events)
        if doses.ndim != 1 or trials.shape != doses.shape or events.shape != doses.shape:
            raise DataValidationError("doses, trials and events must be 1-d arrays of equal length")
        if doses.size < MIN_GROUPS:
            raise DataValidationError(f"need at least {MIN_GROUPS} dose groups, got {doses.size}")
        if not np.all(np.isfinite(doses)):
            raise DataValidationError("doses must be finite")
        if np.any(np.diff(doses) <= 0):
            raise DataValidationError("doses must be strictly increasing")
        for name, arr in (("trials", trials), ("events", events)):
            if not np.all(np.isfinite(arr)) or np.any(np.asarray(arr, dtype=float) % 1 != 0):
                raise DataValidationError(f"{name} must be integers")
        trials = trials.astype(np.int64)
        events = events.astype(np.int64)
        if np.any(trials <= 0):
            raise DataValidationError("group sizes must be positive")
        if np.any(events < 0) or np.any(events > trials):
            raise DataValidationError("events must satisfy 0 <= events <= trials")
        for name, arr in (("doses", doses), ("trials", trials), ("events", events)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_arrays(cls, doses: ArrayLike, trials: ArrayLike, events: ArrayLike) -> "DoseResponseDataset":
        return cls(np.asarray(doses), np.asarray(trials), np.asarray(events))

    @property
    def n_groups(self) -> int:
        return int(self.doses.size)

    @property
    def proportions(self) -> NDArray[np.float64]:
        return self.events / self.trials

    def __eq__(self, other):
        if not isinstance(other, DoseResponseDataset):
            return NotImplemented
        return (
            np.array_equal(self.doses, other.doses)
            and np.array_equal(self.trials, other.trials)
            and np.array_equal(self.events, other.events)
        )

    def __repr__(self):
        return (
            f"DoseResponseDataset(doses={self.doses.tolist()}, "
            f"trials={self.trials.tolist()}, events={self.events.tolist()})"
        )


@dataclass(frozen=True, eq=False)
class CenteredDesign:
    """Centered (and optionally rescaled) dose axis: ``x = (d - dose_mean) / scale``."""

    raw_doses: NDArray[np.float64]
    dose_mean: float
    scale: float
    centered_doses: NDArray[np.float64] = field(repr=False)

    def to_centered(self, dose: ArrayLike) -> NDArray[np.float64] | float:
        out = (np.asarray(dose, dtype=float) - self.dose_mean) / self.scale
        return float(out) if out.ndim == 0 else out

    def to_original(self, x: ArrayLike) -> NDArray[np.float64] | float:
        out = np.asarray(x, dtype=float) * self.scale + self.dose_mean
        return float(out) if out.ndim == 0 else out

    @property
    def x_min(self) -> float:
        return float(self.centered_doses[0])


def center(data: DoseResponseDataset, normalize: bool = False) -> CenteredDesign:
    """Center doses at their mean; with ``normalize`` also divide by max |d - mean|."""
    if data.n_groups < MIN_GROUPS:
        raise DataValidationError(f"need at least {MIN_GROUPS} dose groups")
    d = data.doses
    mean = float(np.mean(d))
    dev = d - mean
    scale = float(np.max(np.abs(dev))) if normalize else 1.0
    x = dev / scale
    x.setflags(write=False)
    return CenteredDesign(raw_doses=d, dose_mean=mean, scale=scale, centered_doses=x)


# ---------------------------------------------------------------------------
# Kendall trend screening
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KendallResult:
    tau: float
    p_value: float
    passed: bool


def kendall_tau_b(x: ArrayLike, y: ArrayLike) -> NDArray[np.float64] | float:
    """Kendall tau-b of ``x`` against ``y`` (or each row of a 2-d ``y``).

    Tied pairs contribute zero to the concordance sum.  Returns 0 when either
    variable is constant.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y2 = np.atleast_2d(y)
    i, j = np.triu_indices(x.size, k=1)
    sx = np.sign(x[j] - x[i])
    sy = np.sign(y2[:, j] - y2[:, i])
    num = sy @ sx
    denom = np.sqrt(np.count_nonzero(sx) * np.count_nonzero(sy, axis=1).astype(float))
    with np.errstate(invalid="ignore", divide="ignore"):
        tau = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0)
    return float(tau[0]) if single else tau


def kendall_screen(data: DoseResponseDataset, threshold: float = 0.15) -> KendallResult:
    """One-sided (increasing) Kendall trend test of proportions against dose.

    The p-value is exact over all orderings of the group proportions for up to
    eight groups; beyond that scipy's one-sided test is used.
    """
    p = data.proportions
    if np.all(p == p[0]):
        return KendallResult(0.0, 1.0, False)
    tau = kendall_tau_b(data.doses, p)
    n = p.size
    if n <= _MAX_EXACT_GROUPS:
        perms = np.array(list(itertools.permutations(range(n))))
        taus = kendall_tau_b(data.doses, p[perms])
        p_value = float(np.mean(taus >= tau - 1e-12))
    else:
        from scipy.stats import kendalltau

        p_value = float(kendalltau(data.doses, p, alternative="greater").pvalue)
    return KendallResult(float(tau), p_value, p_value <= threshold)


# ---------------------------------------------------------------------------
# Simulation and I/O
# ---------------------------------------------------------------------------

def generate_binomial_responses(
    risks: ArrayLike,
    trials: ArrayLike,
    rng_seed: int | np.random.Generator,
    doses: ArrayLike | None = None,
) -> DoseResponseDataset:
    """Draw ``y_i ~ Binomial(n_i, risk_i)``.

    ``rng_seed`` may be an integer seed or an existing Generator (which is
    advanced).  ``doses`` defaults to ``0, 1, ..., k-1``.
    """
    risks = np.asarray(risks, dtype=float)
    trials = np.asarray(trials, dtype=np.int64)
    if risks.shape != trials.shape:
        raise ValueError("risks and trials must have the same length")
    if np.any(risks < 0) or np.any(risks > 1) or np.any(~np.isfinite(risks)):
        raise ValueError("risks must lie in [0, 1]")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    events = rng.binomial(trials, risks)
    if doses is None:
        doses = np.arange(risks.size, dtype=float)
    return DoseResponseDataset.from_arrays(doses, trials, events)


def _parse_rows(reader, source: str) -> DoseResponseDataset:
    header = next(reader, None)
    if header is None:
        raise DataValidationError(f"{source}: empty file")
    header = [h.strip().lower() for h in header]
    if header != ["dose", "n", "events"]:
        raise DataValidationError(f"{source}: expected header 'dose,n,events', got {','.join(header)!r}")
    doses, trials, events = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise DataValidationError(f"{source}: row {lineno}: expected 3 fields, got {len(row)}")
        try:
            d = float(row[0])
            n = int(row[1])
            y = int(row[2])
        except ValueError as exc:
            raise DataValidationError(f"{source}: row {lineno}: {exc}") from None
        if not math.isfinite(d):
            raise DataValidationError(f"{source}: row {lineno}: dose is not finite")
        doses.append(d)
        trials.append(n)
        events.append(y)
    if not doses:
        raise DataValidationError(f"{source}: no data rows")
    try:
        return DoseResponseDataset.from_arrays(doses, trials, events)
    except DataValidationError as exc:
        raise DataValidationError(f"{source}: {exc}") from None


def read_csv(path: str | Path | io.TextIOBase) -> DoseResponseDataset:
    """Read a ``dose,n,events`` CSV.  Malformed rows raise, naming the row."""
    if isinstance(path, io.TextIOBase):
        return _parse_rows(csv.reader(path), "<stream>")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        return _parse_rows(csv.reader(fh), str(path))
