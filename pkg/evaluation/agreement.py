# evaluation/agreement.py

"""
Method Agreement
----------------
Agreement between reference and estimated EF values: mean absolute difference,
Bland-Altman bias and limits of agreement, and a regression check for
proportional bias.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from pipeline.errors import DomainError

logger = logging.getLogger("ventriq.agreement")

LOA_Z = 1.96


@dataclass(frozen=True, eq=False)
class PairedMeasurements:
    reference: np.ndarray
    estimate: np.ndarray
    subjects: Tuple[str, ...] = ()

    def __post_init__(self):
        reference = np.asarray(self.reference, dtype=np.float64).ravel()
        estimate = np.asarray(self.estimate, dtype=np.float64).ravel()
        if len(reference) != len(estimate):
            raise DomainError(f"{len(reference)} reference values but {len(estimate)} estimates")
        if not (np.all(np.isfinite(reference)) and np.all(np.isfinite(estimate))):
            raise DomainError("Paired measurements must be finite")
        subjects = tuple(str(s) for s in self.subjects) or tuple(str(i + 1) for i in range(len(reference)))
        if len(subjects) != len(reference):
            raise DomainError("One subject label per pair is required")
        object.__setattr__(self, "reference", reference)
        object.__setattr__(self, "estimate", estimate)
        object.__setattr__(self, "subjects", subjects)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[float, float]], subjects: Optional[Sequence[str]] = None):
        pairs = list(pairs)
        reference = [r for r, _ in pairs]
        estimate = [e for _, e in pairs]
        return cls(np.asarray(reference, dtype=np.float64), np.asarray(estimate, dtype=np.float64),
                   tuple(subjects or ()))

    def __len__(self):
        return len(self.reference)

    @property
    def differences(self) -> np.ndarray:
        return self.estimate - self.reference

    @property
    def means(self) -> np.ndarray:
        return (self.estimate + self.reference) / 2.0

    def swapped(self) -> "PairedMeasurements":
        return PairedMeasurements(self.estimate, self.reference, self.subjects)


def mean_abs_difference(pairs: PairedMeasurements) -> Tuple[float, float]:
    """Mean and sample sd of |estimate - reference|; sd is 0 for a single pair."""
    if len(pairs) == 0:
        raise DomainError("Mean absolute difference needs at least one pair")
    absolute = np.abs(pairs.differences)
    sd = float(absolute.std(ddof=1)) if len(absolute) > 1 else 0.0
    return float(absolute.mean()), sd


@dataclass(frozen=True)
class BlandAltmanReport:
    bias: float
    sd: float
    loa_lower: float
    loa_upper: float
    bias_ci: Tuple[float, float]
    n: int
    loa_lower_ci: Tuple[float, float]
    loa_upper_ci: Tuple[float, float]
    within_loa_percent: float

    def to_dict(self) -> dict:
        return {
            "bias": self.bias,
            "sd": self.sd,
            "loa_lower": self.loa_lower,
            "loa_upper": self.loa_upper,
            "bias_ci": list(self.bias_ci),
            "n": self.n,
            "loa_lower_ci": list(self.loa_lower_ci),
            "loa_upper_ci": list(self.loa_upper_ci),
            "within_loa_percent": self.within_loa_percent,
        }


def bland_altman(pairs: PairedMeasurements) -> BlandAltmanReport:
    """
    Differences are estimate - reference. LoA = bias +/- 1.96 sd; the bias CI uses
    t(0.975, n-1) * sd / sqrt(n) and each LoA CI t(0.975, n-1) * sd * sqrt(3 / n).
    """
    n = len(pairs)
    if n < 2:
        raise DomainError(f"Bland-Altman analysis needs at least 2 pairs, got {n}")
    d = pairs.differences
    bias = float(d.mean())
    sd = float(d.std(ddof=1))
    loa_lower, loa_upper = bias - LOA_Z * sd, bias + LOA_Z * sd

    t_crit = float(stats.t.ppf(0.975, n - 1))
    bias_half = t_crit * sd / np.sqrt(n)
    loa_half = t_crit * sd * np.sqrt(3.0 / n)
    within = float(np.mean((d >= loa_lower) & (d <= loa_upper)) * 100.0)
    logger.debug(f"Bland-Altman over {n} pairs: bias={bias:.4g}, LoA=[{loa_lower:.4g}, {loa_upper:.4g}]")
    return BlandAltmanReport(
        bias=bias, sd=sd, loa_lower=loa_lower, loa_upper=loa_upper,
        bias_ci=(bias - bias_half, bias + bias_half), n=n,
        loa_lower_ci=(loa_lower - loa_half, loa_lower + loa_half),
        loa_upper_ci=(loa_upper - loa_half, loa_upper + loa_half),
        within_loa_percent=within,
    )


@dataclass(frozen=True)
class ProportionalBias:
    slope: float
    flagged: bool
    intercept: float
    stderr: float

    def to_dict(self) -> dict:
        return {"slope": self.slope, "flagged": self.flagged, "intercept": self.intercept, "stderr": self.stderr}


def proportional_bias_check(pairs: PairedMeasurements) -> ProportionalBias:
    """OLS of differences on means; flagged when |slope| exceeds two standard errors."""
    if len(pairs) < 3:
        raise DomainError(f"Proportional bias check needs at least 3 pairs, got {len(pairs)}")
    means = pairs.means
    if np.ptp(means) == 0:
        raise DomainError("All pair means are equal; the regression slope is undefined")
    fit = stats.linregress(means, pairs.differences)
    slope, stderr = float(fit.slope), float(fit.stderr)
    flagged = bool(abs(slope) > 2.0 * stderr)
    if flagged:
        logger.warning(f"Proportional bias: slope {slope:.4g} exceeds two standard errors ({stderr:.4g})")
    return ProportionalBias(slope, flagged, float(fit.intercept), stderr)


def plot_points(pairs: PairedMeasurements) -> List[dict]:
    """Rows of the differences-vs-means scatter."""
    return [
        {"subject": s, "mean": float(m), "difference": float(d)}
        for s, m, d in zip(pairs.subjects, pairs.means, pairs.differences)
    ]
