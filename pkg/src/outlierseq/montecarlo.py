"""Monte Carlo estimation of detection error probabilities and exponents.

Trial ``t`` for detector ``d`` at sample size ``n`` reads its uniforms from
row ``t`` of a counter-based stream keyed by ``(seed, d, n)``: column 0
places the outlier, columns ``1 .. M*n`` fill the ``(M, n)`` observation
matrix by inverse-cdf.  Trials are therefore independent of one another and
of how they are grouped into blocks or spread over threads, and error
counts are aggregated as integers, so a configuration always yields the
same curve byte for byte.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Sequence, Union

import numpy as np
from scipy import stats

from .detectors import DetectorKind, argmax_lowest, batch_scores
from .distributions import DistributionSpec
from .errors import ConfigInvalid, InsufficientData, OutlierSeqError
from .rng import stream_key, uniforms

__all__ = [
    "ExperimentConfig",
    "TrialOutcome",
    "CurveRow",
    "ErrorCurve",
    "ExponentFit",
    "run_trial",
    "simulate_trials",
    "estimate_error_curve",
    "fit_exponent",
    "wilson_interval",
    "resolve_workers",
]

Placement = Union[str, int]

# Upper bound on doubles held per simulation block.
_BLOCK_DOUBLES = 1 << 21
_Z95 = NormalDist().inv_cdf(0.975)


@dataclass(frozen=True)
class ExperimentConfig:
    m: int
    n_grid: tuple[int, ...]
    trials: int
    pi: DistributionSpec
    mu: DistributionSpec
    detectors: tuple[DetectorKind, ...]
    seed: int = 0
    placement: Placement = "uniform"
    min_errors_for_fit: int = 10

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "detectors", tuple(self.detectors))
        self.validate()

    def validate(self) -> None:
        if isinstance(self.m, bool) or not isinstance(self.m, int) or self.m < 2:
            raise ConfigInvalid("m", "must be an integer >= 2")
        if not self.n_grid:
            raise ConfigInvalid("n_grid", "must be nonempty")
        if any(n < 2 for n in self.n_grid):
            raise ConfigInvalid("n_grid", "every n must be >= 2")
        if any(a >= b for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ConfigInvalid("n_grid", "must be strictly increasing")
        if isinstance(self.trials, bool) or not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigInvalid("trials", "must be an integer >= 1")
        if self.trials >= 2**32:
            raise ConfigInvalid("trials", "must be < 2**32")
        if self.mu == self.pi:
            raise ConfigInvalid("mu", "must differ from pi")
        if not self.detectors:
            raise ConfigInvalid("detectors", "must be nonempty")
        if len({d.ident() for d in self.detectors}) != len(self.detectors):
            raise ConfigInvalid("detectors", "duplicate detector")
        if not 0 <= self.seed < 2**64:
            raise ConfigInvalid("seed", "must be a 64-bit unsigned integer")
        if self.placement != "uniform":
            if isinstance(self.placement, bool) or not isinstance(self.placement, int):
                raise ConfigInvalid("placement", "must be 'uniform' or an index")
            if not 0 <= self.placement < self.m:
                raise ConfigInvalid("placement", f"index must lie in [0, {self.m})")
        if self.min_errors_for_fit < 1:
            raise ConfigInvalid("min_errors_for_fit", "must be >= 1")
        if self.m * max(self.n_grid) + 1 > 2**32:
            raise ConfigInvalid("n_grid", "m * n exceeds the per-trial counter space")


@dataclass(frozen=True)
class TrialOutcome:
    correct: bool
    chosen: int
    truth: int


def _block_size(m: int, n: int) -> int:
    return max(1, _BLOCK_DOUBLES // (m * n + 1))


def simulate_trials(config: ExperimentConfig, detector: DetectorKind, n: int,
                    start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
    """Truth and chosen indices for trials ``start .. stop - 1``."""
    m = config.m
    key = stream_key(config.seed, detector.ident(), n)
    rows = np.arange(start, stop, dtype=np.uint64)[:, None]
    cols = np.arange(m * n + 1, dtype=np.uint64)[None, :]
    u = uniforms(key, rows, cols)
    if config.placement == "uniform":
        truth = np.minimum((u[:, 0] * m).astype(np.int64), m - 1)
    else:
        truth = np.full(stop - start, int(config.placement), dtype=np.int64)
    grid = u[:, 1:].reshape(-1, m, n)
    x = config.pi.quantile(grid)
    picks = np.arange(stop - start)
    x[picks, truth] = config.mu.quantile(grid[picks, truth])
    scores = batch_scores(x, config.pi, detector)
    return truth, argmax_lowest(scores)


def run_trial(config: ExperimentConfig, detector: DetectorKind, n: int, trial_index: int) -> TrialOutcome:
    """One realisation of the model; a pure function of its arguments."""
    truth, chosen = simulate_trials(config, detector, n, trial_index, trial_index + 1)
    return TrialOutcome(bool(truth[0] == chosen[0]), int(chosen[0]), int(truth[0]))


def resolve_workers(workers: int | None = None) -> int:
    """Worker count: explicit value, else ``OUTLIERSEQ_THREADS``; 0 means all cores."""
    if workers is None:
        raw = os.environ.get("OUTLIERSEQ_THREADS", "0").strip() or "0"
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigInvalid("OUTLIERSEQ_THREADS", f"not an integer: {raw!r}") from None
    if workers < 0:
        raise ConfigInvalid("threads", "must be >= 0")
    return workers or (os.cpu_count() or 1)


def wilson_interval(errors: int, trials: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    p = errors / trials
    z2n = z * z / trials
    centre = (p + z2n / 2.0) / (1.0 + z2n)
    half = z * math.sqrt(p * (1.0 - p) / trials + z2n / (4.0 * trials)) / (1.0 + z2n)
    return max(0.0, min(centre - half, p)), min(1.0, max(centre + half, p))


@dataclass(frozen=True)
class CurveRow:
    detector: str
    n: int
    trials: int
    errors: int
    pe_hat: float
    log_pe: float
    ci_low: float
    ci_high: float

    @classmethod
    def from_counts(cls, detector: str, n: int, trials: int, errors: int) -> "CurveRow":
        if not 0 <= errors <= trials:
            raise ValueError(f"errors={errors} outside [0, {trials}]")
        pe = errors / trials
        lo, hi = wilson_interval(errors, trials)
        return cls(detector, n, trials, errors, pe, math.log(pe) if errors else -math.inf, lo, hi)


_CSV_COLUMNS = ("detector", "n", "trials", "errors", "pe_hat", "log_pe", "ci_low", "ci_high")


@dataclass
class ErrorCurve:
    rows: list[CurveRow] = field(default_factory=list)

    def for_detector(self, detector: str) -> list[CurveRow]:
        return [r for r in self.rows if r.detector == detector]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for r in self.rows:
            # repr() gives the shortest string that parses back to the same float
            writer.writerow([r.detector, r.n, r.trials, r.errors, repr(r.pe_hat),
                             repr(r.log_pe), repr(r.ci_low), repr(r.ci_high)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ErrorCurve":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != _CSV_COLUMNS:
            raise ValueError(f"expected columns {','.join(_CSV_COLUMNS)}")
        rows = []
        for rec in reader:
            rows.append(CurveRow(rec["detector"], int(rec["n"]), int(rec["trials"]), int(rec["errors"]),
                                 float(rec["pe_hat"]), float(rec["log_pe"]),
                                 float(rec["ci_low"]), float(rec["ci_high"])))
        return cls(rows)


def _count_errors(config: ExperimentConfig, detector: DetectorKind, n: int,
                  bounds: tuple[int, int]) -> int:
    truth, chosen = simulate_trials(config, detector, n, *bounds)
    return int(np.count_nonzero(truth != chosen))


def estimate_error_curve(config: ExperimentConfig, workers: int | None = None) -> ErrorCurve:
    """Error rate with Wilson 95% interval for every (detector, n) cell.

    With uniform placement the overall error rate estimates the maximum
    error probability, since every index has the same conditional error
    probability by symmetry.
    """
    workers = resolve_workers(workers)
    rows = []
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for detector in config.detectors:
            for n in config.n_grid:
                step = _block_size(config.m, n)
                blocks = [(s, min(s + step, config.trials)) for s in range(0, config.trials, step)]
                if pool is not None and len(blocks) > 1:
                    counts = list(pool.map(lambda b: _count_errors(config, detector, n, b), blocks))
                else:
                    counts = [_count_errors(config, detector, n, b) for b in blocks]
                rows.append(CurveRow.from_counts(detector.name, n, config.trials, sum(counts)))
    except OutlierSeqError as exc:
        raise type(exc)(f"{detector.name} at n={n}: {exc}") from exc
    finally:
        if pool is not None:
            pool.shutdown()
    return ErrorCurve(rows)


@dataclass(frozen=True)
class ExponentFit:
    """Least-squares line through ``(n, log pe_hat)``.

    ``slope`` is the raw regression slope; ``alpha = -slope`` is the
    empirical error exponent.
    """

    detector: str
    slope: float
    intercept: float
    r_squared: float
    theoretical_floor: float | None
    rows_used: int

    @property
    def alpha(self) -> float:
        return -self.slope

    def to_dict(self) -> dict:
        return {
            "detector": self.detector,
            "alpha": self.alpha,
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "theoretical_floor": self.theoretical_floor,
            "rows_used": self.rows_used,
        }


def fit_exponent(curve: ErrorCurve | Sequence[CurveRow], detector: str | DetectorKind,
                 floor: float | None = None, min_errors: int = 10) -> ExponentFit:
    """Fit ``log pe_hat = intercept + slope * n`` over rows with enough errors.

    Rows with fewer than ``min_errors`` errors are dropped; at least three
    rows at two or more distinct ``n`` must remain.
    """
    name = detector if isinstance(detector, str) else detector.name
    rows = curve.for_detector(name) if isinstance(curve, ErrorCurve) else [r for r in curve if r.detector == name]
    usable = [r for r in rows if r.errors >= min_errors]
    if len(usable) < 3:
        raise InsufficientData(f"{name}: {len(usable)} rows with >= {min_errors} errors, need 3")
    n = np.array([r.n for r in usable], dtype=float)
    if np.unique(n).size < 2:
        raise InsufficientData(f"{name}: all usable rows share n={int(n[0])}")
    logs = np.array([r.log_pe for r in usable])
    res = stats.linregress(n, logs)
    return ExponentFit(name, float(res.slope), float(res.intercept), float(res.rvalue**2), floor, len(usable))

