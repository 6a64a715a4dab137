"""Analysis metrics: relative improvement, IQM, backward transfer and
mean/standard-error aggregation across seeds."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from farcuriosity_lab.exceptions import InvalidArgumentError, UndefinedMetricError


def relative_improvement(r_far: float, r_base: float) -> float:
    """
    `(r_far - r_base) / r_base`, negated when both returns are negative so that
    a larger (less negative) return still reads as an improvement.

    Args:
        r_far: Return of the method being compared.
        r_base: Baseline return, must be nonzero.

    Returns:
        The relative improvement.

    Example:
        ```python
        relative_improvement(13073.0, 2946.2)  # 3.4372...
        relative_improvement(-8.0, -5.1)  # -0.5686...
        ```
    """
    if r_base == 0:
        raise UndefinedMetricError("Relative improvement is undefined for r_base = 0.")
    raw = (r_far - r_base) / r_base
    if r_far < 0 and r_base < 0:
        return -raw
    return raw


def iqm(scores: Sequence[float]) -> float:
    """Interquartile mean: drop the `n // 4` lowest and highest, average the rest."""
    values = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    if values.size == 0:
        raise InvalidArgumentError("iqm of an empty score list.")
    cut = values.size // 4
    return float(values[cut : values.size - cut].mean())


def bwt(xi) -> float:
    """
    Backward transfer of a `T x T` performance matrix whose entry `[j, i]` is
    the performance on task `i` after training through task `j`.
    Negative values quantify forgetting.
    """
    xi = np.asarray(xi, dtype=np.float64)
    if xi.ndim != 2 or xi.shape[0] != xi.shape[1]:
        raise InvalidArgumentError(f"bwt needs a square matrix, got {xi.shape}.")
    n_tasks = xi.shape[0]
    if n_tasks < 2:
        raise InvalidArgumentError("bwt needs at least two tasks.")
    idx = np.arange(n_tasks - 1)
    return float(np.mean(xi[-1, idx] - xi[idx, idx]))


def mean_stderr(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and standard error (sample std / sqrt(n)); stderr is 0 for n = 1."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise InvalidArgumentError("mean_stderr of an empty list.")
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def trend_slope(steps: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of `values` against `steps`; 0 with fewer than 2 points."""
    steps = np.asarray(steps, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if steps.size < 2 or np.ptp(steps) == 0:
        return 0.0
    return float(np.polyfit(steps, values, 1)[0])


@dataclass
class MetricsTable:
    """Inputs for the forgetting and comparison metrics of a set of runs."""

    xi: Optional[np.ndarray] = None
    scores: Dict[str, List[float]] = field(default_factory=dict)
    mean_returns: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.xi is not None:
            self.xi = np.asarray(self.xi, dtype=np.float64)
            if self.xi.ndim != 2 or self.xi.shape[0] != self.xi.shape[1]:
                raise InvalidArgumentError("xi must be a square matrix.")

    def add_score(self, run: str, score: float) -> None:
        self.scores.setdefault(run, []).append(float(score))

    def bwt(self) -> float:
        if self.xi is None:
            raise InvalidArgumentError("No performance matrix recorded.")
        return bwt(self.xi)

    def iqm(self, run: str) -> float:
        return iqm(self.scores.get(run, []))

    def relative_improvement(self, method: str, baseline: str) -> float:
        return relative_improvement(
            self.mean_returns[method], self.mean_returns[baseline]
        )
