"""Reconstruction quality and detection scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, NamedTuple, Optional, Set, Tuple

import numpy as np

from .grids import SceneGrid, VelocityGrid


def l2_error(Q_true, q_s, q_nu) -> float:
    """Frobenius distance between the true PSR and ``q_s + q_nu``."""
    Q_true = np.asarray(Q_true, dtype=float)
    est = np.asarray(q_s, dtype=float) + np.asarray(q_nu, dtype=float)
    if Q_true.shape != est.shape:
        raise ValueError(f"shape mismatch {Q_true.shape} vs {est.shape}")
    return float(np.linalg.norm(Q_true - est))


def ssim(img_a, img_b, k1: float = 0.01, k2: float = 0.03) -> float:
    """Structural similarity computed from whole-image statistics.

    Uses population (1/n) moments and dynamic range
    ``L = max(max(a), max(b))``. Two all-zero images score 1.
    """
    a = np.asarray(img_a, dtype=float).ravel()
    b = np.asarray(img_b, dtype=float).ravel()
    if np.shape(img_a) != np.shape(img_b):
        raise ValueError("images must have the same shape")
    L = max(a.max(), b.max())
    if L <= 0 and not (a.any() or b.any()):
        return 1.0
    # the index is scale invariant; normalizing keeps c1, c2 from underflowing
    a, b = a / L, b / L
    c1, c2 = k1 ** 2, k2 ** 2
    mu_a, mu_b = a.mean(), b.mean()
    da, db = a - mu_a, b - mu_b
    var_a, var_b = np.mean(da * da), np.mean(db * db)
    cov = np.mean(da * db)
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(num / den)


class Detection(NamedTuple):
    pixel_index: int
    velocity_index: int
    amplitude: float


def detect(q_nu, threshold_db: float = -40.0) -> List[Detection]:
    """Entries of ``q_nu`` above ``10**(threshold_db/20) * max(q_nu)``.

    The comparison is strict, except that entries equal to the maximum are
    always reported, so a 0 dB threshold returns exactly the peak(s).
    """
    if threshold_db > 0:
        raise ValueError("threshold_db must be <= 0")
    q = np.asarray(q_nu, dtype=float)
    peak = q.max() if q.size else 0.0
    if peak <= 0:
        return []
    level = 10.0 ** (threshold_db / 20.0) * peak
    hits = np.argwhere((q > level) | (q == peak))
    return [Detection(int(k), int(kp), float(q[kp, k])) for kp, k in hits]


@dataclass
class DetectionReport:
    true_positives: int
    false_positives: int
    false_negatives: int
    detections: List[Detection] = field(default_factory=list)
    ppv: float = float("nan")

    @property
    def ppv_defined(self) -> bool:
        """False when there were no detections and PPV is undefined."""
        return (self.true_positives + self.false_positives) > 0

    @property
    def n_detections(self) -> int:
        return len(self.detections)


def _support(truth, grid, velocities) -> Set[Tuple[int, int]]:
    if isinstance(truth, (set, frozenset)):
        return set(truth)
    if grid is None or velocities is None:
        raise ValueError("grid and velocities are needed to index a scene")
    return truth.truth_support(grid, velocities)


def ppv(detections: Iterable[Detection], truth, grid: Optional[SceneGrid] = None,
        velocities: Optional[VelocityGrid] = None) -> DetectionReport:
    """Score detections against the true movers.

    A detection counts as a true positive only if both its pixel and its
    velocity index match a mover. ``truth`` is a scene or a set of
    ``(pixel_index, velocity_index)`` pairs.
    """
    detections = list(detections)
    support = _support(truth, grid, velocities)
    hit = {(d.pixel_index, d.velocity_index) for d in detections} & support
    tp = len(hit)
    fp = len(detections) - tp
    fn = len(support) - tp
    value = tp / (tp + fp) if (tp + fp) > 0 else float("nan")
    return DetectionReport(tp, fp, fn, detections, value)


def count_false_alarms(q_nu, truth, grid: Optional[SceneGrid] = None,
                       velocities: Optional[VelocityGrid] = None,
                       threshold_db: float = -40.0) -> int:
    return ppv(detect(q_nu, threshold_db), truth, grid, velocities).false_positives
