"""Error and evidence diagnostics for filter runs."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dynamics import NumericalInstabilityError


def rmse_block(predicted, observed) -> float:
    """Euclidean norm of the block residual.

    Deliberately not divided by the element count, so magnitudes grow with
    block size and wavelength count.
    """
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if predicted.shape != observed.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {observed.shape}")
    return float(np.linalg.norm((predicted - observed).ravel()))


def rmse_total(per_block) -> float:
    return float(np.sum(per_block))


def log_evidence_trace(increments) -> np.ndarray:
    """Cumulative log-evidence from per-step, per-block increments ``(K, n_blocks)``."""
    inc = np.asarray(increments, dtype=float)
    if inc.ndim == 1:
        inc = inc[:, None]
    if not np.all(np.isfinite(inc)):
        step = int(np.argwhere(~np.isfinite(inc))[0][0])
        raise NumericalInstabilityError(f"non-finite log-likelihood increment at step index {step}")
    return np.cumsum(inc.sum(axis=1))


def effective_sample_size(weights, tol=1e-9) -> float:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > tol:
        raise ValueError("weights must be nonnegative and sum to 1")
    return float(1.0 / np.sum(w * w))


def state_rmse(estimate, truth) -> float:
    """Root mean square error against the latent state (debug diagnostic)."""
    d = np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class MetricTrace:
    steps: np.ndarray
    times: np.ndarray
    rmse: np.ndarray              # (K, n_blocks)
    log_increment: np.ndarray     # (K, n_blocks)
    ess: np.ndarray | None = None

    @classmethod
    def from_output(cls, out) -> "MetricTrace":
        return cls(out.steps, out.times, out.rmse, out.log_increment, out.ess)

    @property
    def rmse_total(self) -> np.ndarray:
        return self.rmse.sum(axis=1)

    @property
    def log_evidence(self) -> np.ndarray:
        return log_evidence_trace(self.log_increment)

    def rows(self, per_block=True):
        n_blocks = self.rmse.shape[1]
        logev = self.log_evidence
        for i, (k, t) in enumerate(zip(self.steps, self.times)):
            yield int(k), float(t), "rmse", "total", float(self.rmse_total[i])
            yield int(k), float(t), "log_evidence", "total", float(logev[i])
            if per_block:
                for b in range(n_blocks):
                    yield int(k), float(t), "rmse", b, float(self.rmse[i, b])
                for b in range(n_blocks):
                    yield int(k), float(t), "log_increment", b, float(self.log_increment[i, b])

    def to_csv(self, path, per_block=True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "time", "metric", "block", "value"])
            for row in self.rows(per_block):
                w.writerow([row[0], repr(row[1]), row[2], row[3], repr(row[4])])


def read_metric_totals(path) -> dict:
    """Read the ``total`` rows of a metrics CSV -> {metric: (steps, times, values)}."""
    series: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["block"] != "total":
                continue
            s = series.setdefault(row["metric"], ([], [], []))
            s[0].append(int(row["step"]))
            s[1].append(float(row["time"]))
            s[2].append(float(row["value"]))
    return {m: tuple(np.array(v) for v in s) for m, s in series.items()}
