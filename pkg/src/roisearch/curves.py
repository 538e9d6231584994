"""Learning curves: truncation, linear-tail extrapolation and fidelity selection."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InsufficientDataError, SingularFitError

DEFAULT_THRESHOLD = 0.75
DEFAULT_FRACTIONS = (0.2, 0.28, 0.36, 0.44, 0.52, 0.6, 0.68, 0.76, 0.84, 0.92, 1.0)


@dataclass(frozen=True)
class LearningCurve:
    """NE gain observed at increasing training steps (examples consumed)."""

    points: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        pts = tuple((int(s), float(v)) for s, v in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 2:
            raise InsufficientDataError("a learning curve needs at least 2 points")
        steps = [s for s, _ in pts]
        if any(s < 0 for s in steps) or any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("steps must be non-negative and strictly increasing")

    @classmethod
    def from_arrays(cls, steps, values) -> LearningCurve:
        return cls(tuple(zip(steps, values)))

    @property
    def steps(self) -> np.ndarray:
        return np.array([s for s, _ in self.points], dtype=float)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.points], dtype=float)

    @property
    def last_step(self) -> int:
        return self.points[-1][0]

    @property
    def last_value(self) -> float:
        return self.points[-1][1]

    def __len__(self) -> int:
        return len(self.points)

    def to_list(self) -> list[list]:
        return [[s, v] for s, v in self.points]


@dataclass(frozen=True)
class LinearFit:
    m: float
    c: float
    window: int

    def __call__(self, step: float) -> float:
        return self.m * step + self.c


@dataclass(frozen=True)
class FidelityReport:
    candidate_fractions: tuple[float, ...]
    taus: tuple[float, ...]
    chosen_fraction: float
    threshold: float
    metric: str = "raw"
    met: bool = True
    notes: dict = field(default_factory=dict)

    def tau_at(self, fraction: float) -> float:
        i = min(range(len(self.candidate_fractions)), key=lambda k: abs(self.candidate_fractions[k] - fraction))
        return self.taus[i]

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "candidate_fractions": list(self.candidate_fractions),
            "taus": [None if math.isnan(t) else t for t in self.taus],
            "chosen_fraction": self.chosen_fraction,
            "threshold": self.threshold,
            "met": self.met,
        }


def kendall_tau(a: Sequence[float], b: Sequence[float]) -> float:
    """Kendall tau-b between two equal-length sequences.

    Returns NaN when either side is constant, since tau-b is undefined there.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"kendall_tau needs equal-length 1-d inputs, got {a.shape} and {b.shape}")
    if a.shape[0] < 2:
        raise ValueError("kendall_tau needs at least 2 observations")
    s, tied_a, tied_b, n0 = kernels.pair_counts(a, b)
    return tau_b_from_counts(s, tied_a, tied_b, n0)


def tau_b_from_counts(s: int, tied_a: int, tied_b: int, n0: int) -> float:
    denom = (n0 - tied_a) * (n0 - tied_b)
    if denom == 0:
        return math.nan
    return s / math.sqrt(denom)


def truncate(curve: LearningCurve, fraction: float) -> LearningCurve:
    """Keep the points at or before ``fraction`` of the curve's last step."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return curve
    limit = fraction * curve.last_step * (1 + 1e-9)
    kept = tuple(p for p in curve.points if p[0] <= limit)
    if len(kept) < 2:
        raise InsufficientDataError(f"fraction {fraction} leaves {len(kept)} point(s)")
    return LearningCurve(kept)


def default_window(n_points: int) -> int:
    return max(2, int(round(0.2 * n_points)))


def fit_linear_tail(curve: LearningCurve, window: int | None = None) -> LinearFit:
    """Ordinary least squares line through the last ``window`` points."""
    n = len(curve)
    if window is None:
        window = default_window(n)
    if not 2 <= window <= n:
        raise ValueError(f"window must be in [2, {n}], got {window}")
    x = curve.steps[-window:]
    y = curve.values[-window:]
    xm = x.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise SingularFitError("tail steps are all identical")
    m = float(dx @ (y - y.mean())) / sxx
    c = float(y.mean() - m * xm)
    return LinearFit(m, c, window)


def extrapolate_long_term(curve: LearningCurve, window: int | None = None, delta_x: float = 0.0) -> float:
    """Last observed NE gain plus the tail slope times ``delta_x``."""
    if delta_x < 0:
        raise ValueError("delta_x must be non-negative")
    fit = fit_linear_tail(curve, window)
    return curve.last_value + fit.m * delta_x


def metric_at(curve: LearningCurve, fraction: float, metric: str, horizon: int | None = None,
              window: int | None = None) -> float:
    """Score a curve truncated to ``fraction`` with the raw or extrapolated metric.

    ``horizon`` is the target step for extrapolation (defaults to the full
    curve's last step).
    """
    part = truncate(curve, fraction)
    if metric == "raw":
        return part.last_value
    if metric == "extrapolated":
        target = curve.last_step if horizon is None else horizon
        return extrapolate_long_term(part, window, max(0.0, target - part.last_step))
    raise ValueError(f"unknown metric {metric!r}")


def select_fidelity(
    pilot_curves: Sequence[LearningCurve],
    metric: str = "raw",
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    threshold: float = DEFAULT_THRESHOLD,
    window: int | None = None,
) -> FidelityReport:
    """Find the smallest fraction whose pilot ranking tracks the full-horizon ranking.

    Each pilot is scored at every candidate fraction and compared, via Kendall
    tau-b, against its NE gain at the full horizon. If no fraction reaches
    ``threshold`` the report carries ``chosen_fraction=1.0`` and ``met=False``.
    """
    if len(pilot_curves) < 5:
        raise InsufficientDataError(f"need at least 5 pilot curves, got {len(pilot_curves)}")
    horizon = pilot_curves[0].last_step
    if any(c.last_step != horizon for c in pilot_curves):
        raise ValueError("pilot curves must all cover the full horizon")
    fractions = tuple(sorted(float(f) for f in fractions))
    reference = [c.last_value for c in pilot_curves]
    taus = []
    for f in fractions:
        scores = [metric_at(c, f, metric, horizon, window) for c in pilot_curves]
        taus.append(kendall_tau(scores, reference))
    chosen, met = 1.0, False
    for f, t in zip(fractions, taus):
        if not math.isnan(t) and t >= threshold:
            chosen, met = f, True
            break
    return FidelityReport(fractions, tuple(taus), chosen, threshold, metric, met)
