"""Outlying-sequence detection rules.

Each rule scores the M sequences and returns the index of the largest score.
``ML`` needs the outlier law; ``KL`` and ``MMD`` are universal and their
scoring functions never receive it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .distributions import DistributionSpec, distribution_to_dict
from .errors import InvalidLikelihood, OutlierSeqError, SampleTooSmall, with_index
from .kl_estimator import FixedCells, FixedPoints, PartitionSchedule, SqrtN, kl_scores
from .mmd_estimator import GaussianKernel, KernelSpec, mmd_scores

__all__ = [
    "ML",
    "KL",
    "MMD",
    "DetectorKind",
    "DetectionResult",
    "SequenceBatch",
    "score_ml",
    "ml_scores",
    "detect",
    "batch_scores",
    "argmax_lowest",
]


@dataclass(frozen=True)
class ML:
    """Likelihood-ratio rule with the outlier law ``mu`` known."""

    mu: DistributionSpec
    name = "ml"

    def ident(self) -> str:
        return f"ml:{sorted(distribution_to_dict(self.mu).items())}"


@dataclass(frozen=True)
class KL:
    schedule: PartitionSchedule = field(default_factory=SqrtN)
    clamp_cell_mass: float | None = None
    name = "kl"

    def ident(self) -> str:
        return f"kl:{self.schedule.describe()}:{self.clamp_cell_mass}"


@dataclass(frozen=True)
class MMD:
    kernel: KernelSpec = field(default_factory=GaussianKernel)
    name = "mmd"

    def ident(self) -> str:
        return f"mmd:gaussian:{self.kernel.gamma!r}"


DetectorKind = Union[ML, KL, MMD]


@dataclass(frozen=True)
class SequenceBatch:
    """M sequences of equal length n, stored as an ``(M, n)`` array."""

    sequences: np.ndarray

    def __post_init__(self):
        seqs = self.sequences
        if not isinstance(seqs, np.ndarray):
            rows = [np.asarray(s, dtype=float) for s in seqs]
            if len({r.shape for r in rows}) > 1:
                raise ValueError("all sequences must have the same length")
            seqs = np.array(rows, dtype=float)
        seqs = np.asarray(seqs, dtype=float)
        if seqs.ndim != 2:
            raise ValueError("sequences must form an (M, n) array")
        if seqs.shape[0] < 2:
            raise ValueError(f"need at least 2 sequences, got {seqs.shape[0]}")
        if seqs.shape[1] < 2:
            raise SampleTooSmall(f"sequences need at least 2 points, got {seqs.shape[1]}")
        object.__setattr__(self, "sequences", seqs)

    @property
    def m(self) -> int:
        return self.sequences.shape[0]

    @property
    def n(self) -> int:
        return self.sequences.shape[1]


@dataclass(frozen=True)
class DetectionResult:
    chosen_index: int
    scores: list[float]
    detector: str

    def to_dict(self) -> dict:
        return {
            "chosen_index": self.chosen_index,
            "scores": [_json_score(s) for s in self.scores],
            "detector": self.detector,
        }


def _json_score(s: float):
    if math.isinf(s):
        return "inf" if s > 0 else "-inf"
    return s


def score_ml(seq: Sequence[float], pi: DistributionSpec, mu: DistributionSpec) -> float:
    """Average log-likelihood ratio ``(1/n) sum log mu(y)/pi(y)``."""
    y = np.asarray(seq, dtype=float)
    lmu = mu.logpdf(y)
    lpi = pi.logpdf(y)
    if np.any(np.isneginf(lmu)) or np.any(np.isneginf(lpi)):
        raise InvalidLikelihood("a density vanishes at an observed point")
    return float(np.mean(lmu - lpi))


def ml_scores(x: np.ndarray, pi: DistributionSpec, mu: DistributionSpec) -> np.ndarray:
    """Likelihood scores along the last axis, with support-mismatch markers.

    A sequence with a point outside supp(pi) but inside supp(mu) scores
    ``+inf``; one with a point outside supp(mu) scores ``-inf``.  A point
    outside both supports raises :class:`InvalidLikelihood`.
    """
    x = np.asarray(x, dtype=float)
    lmu = mu.logpdf(x)
    lpi = pi.logpdf(x)
    mu_zero = np.isneginf(lmu)
    pi_zero = np.isneginf(lpi)
    if np.any(mu_zero & pi_zero):
        raise InvalidLikelihood("an observed point lies outside both supports")
    with np.errstate(invalid="ignore"):
        scores = np.mean(lmu - lpi, axis=-1)
    scores = np.where(mu_zero.any(axis=-1), -np.inf, scores)
    return np.where(pi_zero.any(axis=-1), np.inf, scores)


def batch_scores(x: np.ndarray, pi: DistributionSpec, detector: DetectorKind) -> np.ndarray:
    """Detector statistic for each sequence along the last axis of ``x``."""
    if isinstance(detector, ML):
        return ml_scores(x, pi, detector.mu)
    if isinstance(detector, KL):
        return kl_scores(x, pi, detector.schedule, detector.clamp_cell_mass)
    if isinstance(detector, MMD):
        return mmd_scores(x, pi, detector.kernel)
    raise TypeError(f"unknown detector {detector!r}")


def argmax_lowest(scores) -> np.ndarray:
    """Index of the maximum along the last axis; ties go to the lowest index."""
    return np.argmax(np.asarray(scores), axis=-1)


def detect(batch: SequenceBatch, pi: DistributionSpec, detector: DetectorKind,
           scorer: Callable[[np.ndarray], float] | None = None) -> DetectionResult:
    """Score every sequence and pick the most outlying one.

    ``scorer`` overrides the detector's statistic (one sequence in, one
    float out) and exists for testing the decision logic in isolation.
    """
    if not isinstance(batch, SequenceBatch):
        batch = SequenceBatch(batch)
    if scorer is not None:
        scores = np.array([scorer(s) for s in batch.sequences], dtype=float)
    else:
        scores = np.empty(batch.m)
        for i, seq in enumerate(batch.sequences):
            try:
                scores[i] = batch_scores(seq[None, :], pi, detector)[0]
            except OutlierSeqError as exc:
                raise with_index(exc, i) from exc
    name = detector.name if detector is not None else "custom"
    return DetectionResult(int(argmax_lowest(scores)), [float(s) for s in scores], name)


def parse_schedule(text: str) -> PartitionSchedule:
    """``sqrt_n``, ``fixed_cells:<T>`` or ``fixed_points:<l>``."""
    kind, _, arg = text.partition(":")
    if kind == "sqrt_n" and not arg:
        return SqrtN()
    if kind in ("fixed_cells", "fixed_points") and arg.isdigit():
        size = int(arg)
        if kind == "fixed_cells":
            if size < 2:
                raise ValueError("fixed_cells needs at least 2 cells")
            return FixedCells(size)
        if size < 1:
            raise ValueError("fixed_points needs at least 1 point")
        return FixedPoints(size)
    raise ValueError(f"unrecognised schedule {text!r}")
