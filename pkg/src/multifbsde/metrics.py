"""Path norms, error reports against references, and convergence slopes.

The two batch path norms follow the convergence-study convention used for
the benchmark experiments: both reduce each time slice to a root of the
batch-mean squared Euclidean norm, then take the maximum (sup-style) or
the plain average over slices.  Note the averaged norm is an unweighted
mean of per-step RMS values, not a time integral; a conventional
L2-in-time variant is provided separately for sanity checks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParameterDomainError
from .rollout import PathBatch


def _slice_rms(paths: np.ndarray) -> np.ndarray:
    """Per-time-slice sqrt(mean_m ||A_n(m)||^2) for (M, T) or (M, T, q) input."""
    a = np.asarray(paths, dtype=np.float64)
    if a.ndim == 2:
        sq = np.square(a)
    elif a.ndim == 3:
        sq = np.sum(np.square(a), axis=2)
    else:
        raise ParameterDomainError(f"expected (M, T) or (M, T, q) paths, got {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ParameterDomainError(f"empty path batch of shape {a.shape}")
    return np.sqrt(np.mean(sq, axis=0))


def s2_norm(paths: np.ndarray) -> float:
    """max over time slices of the batch RMS."""
    return float(np.max(_slice_rms(paths)))


def h2_norm(paths: np.ndarray) -> float:
    """average over time slices of the batch RMS."""
    return float(np.mean(_slice_rms(paths)))


def h2_norm_time_integrated(paths: np.ndarray, h: float) -> float:
    """Conventional (E integral ||A||^2 dt)^(1/2) with a left Riemann sum."""
    rms = _slice_rms(paths)
    return float(np.sqrt(h * np.sum(np.square(rms))))


@dataclass(frozen=True)
class ErrorReport:
    """Path and initial-value errors of an approximation against a reference."""

    y0_abs_error: float
    y0_rel_error: float
    x_error_s2: float
    y_error_s2: float
    z_error_h2: float
    m: int
    n_steps: int

    def __post_init__(self):
        vals = (self.y0_abs_error, self.y0_rel_error, self.x_error_s2,
                self.y_error_s2, self.z_error_h2)
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ParameterDomainError(f"error entries must be finite and nonnegative: {vals}")

    CSV_HEADER = ["m", "n_steps", "y0_abs_error", "y0_rel_error",
                  "x_error_s2", "y_error_s2", "z_error_h2"]

    def csv_row(self) -> list:
        return [self.m, self.n_steps, repr(self.y0_abs_error), repr(self.y0_rel_error),
                repr(self.x_error_s2), repr(self.y_error_s2), repr(self.z_error_h2)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_HEADER)
            w.writerow(self.csv_row())


def error_report(approx: PathBatch, ref: PathBatch, y0_approx: float,
                 y0_ref: float) -> ErrorReport:
    """Pathwise differences reduced by the batch norms; requires paired samples.

    The two batches must share the grid and the driving noise so that the
    per-sample differences are meaningful.
    """
    if approx.grid != ref.grid:
        raise ParameterDomainError(
            f"grids differ: {approx.grid} vs {ref.grid}"
        )
    for name, a, b in (("X", approx.x, ref.x), ("Y", approx.y, ref.y),
                       ("Z", approx.z, ref.z)):
        if a.shape != b.shape:
            raise ParameterDomainError(f"{name} shapes differ: {a.shape} vs {b.shape}")
    y0_abs = abs(float(y0_approx) - float(y0_ref))
    return ErrorReport(
        y0_abs_error=y0_abs,
        y0_rel_error=y0_abs / abs(float(y0_ref)) if y0_ref != 0 else np.inf if y0_abs else 0.0,
        x_error_s2=s2_norm(approx.x - ref.x),
        y_error_s2=s2_norm(approx.y - ref.y),
        z_error_h2=h2_norm(approx.z - ref.z),
        m=approx.m,
        n_steps=approx.grid.n_steps,
    )


def fit_loglog_slope(points) -> tuple:
    """Least-squares line through (log h, log error); returns (slope, intercept)."""
    pts = [(float(h), float(e)) for h, e in points]
    if len(pts) < 2:
        raise ParameterDomainError("slope fitting needs at least two points")
    if any(h <= 0 or e <= 0 for h, e in pts):
        raise ParameterDomainError(f"log-log fit requires positive coordinates: {pts}")
    hs = np.log([p[0] for p in pts])
    es = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(hs, es, 1)
    return float(slope), float(intercept)
