"""Distribution-distance estimators and path statistics: Kolmogorov-style
distances against chi references, running-sum maxima, quantile discrepancy
reports, and the CUSUM drift statistic."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .engine import Trajectory


@dataclass(frozen=True)
class EmpiricalSample:
    """A multiset of nonnegative statistic realizations with a label."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size == 0:
            raise ValueError("empirical sample must be nonempty")
        if not np.all(np.isfinite(values)):
            raise ValueError("empirical sample contains non-finite values")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.values.size

    def scaled(self, factor: float) -> "EmpiricalSample":
        return EmpiricalSample(values=self.values * factor, label=self.label)


def chi_reference_cdf(d: int):
    """CDF of |Z| for Z ~ N(0, I_d); closed form 1 - exp(-x^2/2) when d = 2."""
    if d == 2:
        return lambda x: -np.expm1(-0.5 * np.square(x))
    dist = sps.chi(df=d)
    return dist.cdf


def kolmogorov_vs_reference(sample: EmpiricalSample, reference_cdf,
                            c: float = 100.0, grid_points: int = 1000) -> float:
    """sup over x in [0, c] of |empirical CDF - reference CDF|.

    The sup is evaluated on a uniform grid plus the sample points themselves;
    at each sample point both one-sided empirical limits are checked, so the
    result is exact over the pooled evaluation set.
    """
    if c <= 0:
        raise ValueError(f"c must be positive, got {c}")
    xs = np.sort(sample.values)
    n = xs.size
    grid = np.linspace(0.0, c, grid_points)
    pts = np.unique(np.concatenate([grid, xs[xs <= c]]))
    ref = np.asarray(reference_cdf(pts), dtype=float)
    # right-continuous empirical CDF and its left limits
    upper = np.searchsorted(xs, pts, side="right") / n
    lower = np.searchsorted(xs, pts, side="left") / n
    return float(np.max(np.maximum(np.abs(upper - ref), np.abs(lower - ref))))


def whiten(endpoints: np.ndarray, scaling: np.ndarray,
           label: str = "") -> EmpiricalSample:
    """Map each endpoint v to |scaling^{-1/2} v| and collect the norms.

    ``scaling`` is the covariance used for standardization; it must be
    symmetric positive definite.
    """
    endpoints = np.atleast_2d(np.asarray(endpoints, dtype=float))
    scaling = np.asarray(scaling, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (scaling + scaling.T))
    if vals[0] <= 1e-14 * max(1.0, abs(vals[-1])):
        raise np.linalg.LinAlgError("scaling matrix is singular")
    inv_root = (vecs / np.sqrt(vals)) @ vecs.T
    norms = np.linalg.norm(endpoints @ inv_root.T, axis=1)
    return EmpiricalSample(values=norms, label=label)


def max_partial_sum(traj: Trajectory, center: np.ndarray | None = None) -> float:
    """U_n = max over t of the Euclidean norm of sum_{s<=t} (Y_s - center)."""
    ys = traj.ys
    if ys.shape[0] == 0:
        raise ValueError("trajectory is empty")
    center = traj.theta_star if center is None else np.asarray(center, dtype=float)
    sums = np.cumsum(ys - center, axis=0)
    return float(np.max(np.linalg.norm(sums, axis=1)))


def max_partial_sum_paths(paths: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Vectorized U_n over a stack of paths shaped (n, reps, d)."""
    sums = np.cumsum(paths - center, axis=0)
    return np.max(np.linalg.norm(sums, axis=2), axis=0)


@dataclass(frozen=True)
class QuantileReport:
    """Per-alpha quantile comparison between a base sample and an approximation."""

    alphas: np.ndarray
    base_quantiles: np.ndarray
    approx_quantiles: np.ndarray
    discrepancy: float
    argmax_alpha: float
    base_label: str = ""
    approx_label: str = ""


def default_alpha_grid() -> np.ndarray:
    return np.round(np.arange(0.01, 1.0, 0.01), 2)


def quantile_discrepancy(base: EmpiricalSample, approx: EmpiricalSample,
                         alpha_grid=None) -> QuantileReport:
    """Max over the alpha grid of the relative error between the (1-alpha)
    quantiles of ``approx`` and ``base``.

    Quantiles use linear interpolation between order statistics.
    """
    alphas = default_alpha_grid() if alpha_grid is None else np.asarray(alpha_grid, dtype=float)
    if np.any(alphas <= 0) or np.any(alphas >= 1):
        raise ValueError("alpha grid must lie strictly inside (0, 1)")
    levels = 1.0 - alphas
    q_base = np.quantile(base.values, levels)
    q_approx = np.quantile(approx.values, levels)
    zero = np.flatnonzero(q_base == 0.0)
    if zero.size:
        raise ZeroDivisionError(
            f"base quantile at alpha={alphas[zero[0]]:g} is zero; relative error undefined"
        )
    rel = np.abs(q_approx - q_base) / np.abs(q_base)
    idx = int(np.argmax(rel))
    return QuantileReport(
        alphas=alphas,
        base_quantiles=q_base,
        approx_quantiles=q_approx,
        discrepancy=float(rel[idx]),
        argmax_alpha=float(alphas[idx]),
        base_label=base.label,
        approx_label=approx.label,
    )


def cusum(traj: Trajectory, t: int) -> tuple[float, int]:
    """R_t = max over s in [1, t] of s * |Ybar_s - Ybar_t|, with the argmax s.

    Ties go to the smallest s.
    """
    ybars = traj.ybars
    if not 1 <= t <= ybars.shape[0]:
        raise ValueError(f"t={t} outside [1, {ybars.shape[0]}]")
    s = np.arange(1, t + 1)
    vals = s * np.linalg.norm(ybars[:t] - ybars[t - 1], axis=1)
    idx = int(np.argmax(vals))  # argmax returns the first (smallest-s) maximizer
    return float(vals[idx]), idx + 1


def cusum_from_partial_sums(S: np.ndarray, t: int) -> tuple[float, int]:
    """Identical statistic computed from partial sums S_t = sum_{s<=t} Y_s,
    using s|Ybar_s - Ybar_t| = |S_s - (s/t) S_t|."""
    s = np.arange(1, t + 1)
    vals = np.linalg.norm(S[:t] - np.outer(s / t, S[t - 1]), axis=1)
    idx = int(np.argmax(vals))
    return float(vals[idx]), idx + 1


@dataclass(frozen=True)
class QQTable:
    """Aligned quantile columns for the three comparison processes."""

    alphas: np.ndarray
    q_base: np.ndarray
    q_fclt: np.ndarray
    q_aggr: np.ndarray
    q_client: np.ndarray
    header_comments: tuple = field(default_factory=tuple)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            for line in self.header_comments:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(["alpha", "q_base", "q_fclt", "q_aggr", "q_client"])
            for row in zip(self.alphas, self.q_base, self.q_fclt,
                           self.q_aggr, self.q_client):
                writer.writerow([f"{v:.6g}" for v in row])


def qq_table(base: EmpiricalSample, fclt: EmpiricalSample, aggr: EmpiricalSample,
             client: EmpiricalSample, alpha_grid=None,
             header_comments=()) -> QQTable:
    alphas = default_alpha_grid() if alpha_grid is None else np.asarray(alpha_grid, dtype=float)
    levels = 1.0 - alphas
    return QQTable(
        alphas=alphas,
        q_base=np.quantile(base.values, levels),
        q_fclt=np.quantile(fclt.values, levels),
        q_aggr=np.quantile(aggr.values, levels),
        q_client=np.quantile(client.values, levels),
        header_comments=tuple(header_comments),
    )
