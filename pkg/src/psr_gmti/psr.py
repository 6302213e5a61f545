"""Phase-space reflectivity (PSR) matrices.

Rows index hypothesized velocities, columns index pixels. The stationary
part lives on the single zero-velocity row; movers fill the other rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Tuple

import numpy as np

from .grids import SceneGrid, VelocityGrid


class SceneConflictError(ValueError):
    """Two targets claim the same pixel."""


@dataclass
class PsrDecomposition:
    """Stationary (rank-one, known row) and moving (sparse) PSR components."""

    q_s: np.ndarray
    q_nu: np.ndarray
    stationary_index: int

    @property
    def total(self) -> np.ndarray:
        return self.q_s + self.q_nu

    @property
    def shape(self) -> Tuple[int, int]:
        return self.q_s.shape

    @property
    def stationary_reflectivity(self) -> np.ndarray:
        return self.q_s[self.stationary_index].copy()


def project_stationary(X, stationary_index: int) -> np.ndarray:
    """Keep only the zero-velocity row, clamped to be nonnegative."""
    X = np.asarray(X, dtype=float)
    out = np.zeros_like(X)
    out[stationary_index] = np.maximum(X[stationary_index], 0.0)
    return out


def project_moving(X, stationary_index: int) -> np.ndarray:
    """Zero the zero-velocity row and clamp the rest to be nonnegative."""
    out = np.maximum(np.asarray(X, dtype=float), 0.0)
    out[stationary_index] = 0.0
    return out


def soft_threshold(X, tau: float) -> np.ndarray:
    """Entrywise ``sign(x) * max(|x| - tau, 0)``; the prox of ``tau * ||.||_1``."""
    if tau < 0:
        raise ValueError("threshold must be nonnegative")
    X = np.asarray(X, dtype=float)
    return np.sign(X) * np.maximum(np.abs(X) - tau, 0.0)


def hard_threshold_topk(X, k: int) -> np.ndarray:
    """Keep the ``k`` largest-magnitude entries and zero the rest.

    Ties are resolved in favor of the lowest row-major index, which makes
    the result independent of platform sort details.
    """
    X = np.asarray(X, dtype=float)
    if k < 0:
        raise ValueError("k must be nonnegative")
    flat = X.reshape(-1)
    if k >= flat.size:
        return X.copy()
    out = np.zeros_like(flat)
    if k > 0:
        keep = np.argsort(-np.abs(flat), kind="stable")[:k]
        out[keep] = flat[keep]
    return out.reshape(X.shape)


def build_psr(scene, grid: SceneGrid, velocities: VelocityGrid) -> PsrDecomposition:
    """Ground-truth PSR components for a scene.

    Stationary point targets, extended targets and clutter go to the
    zero-velocity row of ``q_s``; every mover puts its reflectivity at
    ``(velocity index, pixel)`` in ``q_nu``. Off-grid velocities raise
    :class:`~psr_gmti.grids.OffGridVelocityError`.
    """
    M, N = velocities.n_velocities, grid.n_pixels
    vs = velocities.stationary_index
    q_s = np.zeros((M, N))
    q_nu = np.zeros((M, N))
    claimed = {}

    def claim(k, what):
        if k in claimed:
            raise SceneConflictError(f"pixel {grid.pixel_rowcol(k)} holds {claimed[k]} and {what}")
        claimed[k] = what

    for ext in scene.extended_targets:
        for row, col in ext.pixels():
            k = grid.pixel_index(row, col)
            claim(k, "an extended target")
            q_s[vs, k] = ext.reflectivity
    for tgt in scene.point_targets:
        k = grid.pixel_index(*tgt.pixel)
        kp = velocities.index_of(tgt.velocity)
        claim(k, f"a target at velocity {tuple(tgt.velocity)}")
        if kp == vs:
            q_s[vs, k] = tgt.reflectivity
        else:
            q_nu[kp, k] = tgt.reflectivity
    if scene.clutter is not None:
        clutter = np.asarray(scene.clutter, dtype=float).reshape(-1)
        if clutter.size != N:
            raise ValueError("clutter map size does not match the scene grid")
        moving_cols = q_nu.any(axis=0)
        q_s[vs] += np.where(moving_cols, 0.0, clutter)
    return PsrDecomposition(q_s, q_nu, vs)


def moving_image(q_nu) -> np.ndarray:
    """Superimpose all velocity rows into one ``N``-pixel image."""
    return np.asarray(q_nu, dtype=float).sum(axis=0)


def stationary_image(q_s, stationary_index: int) -> np.ndarray:
    return np.asarray(q_s, dtype=float)[stationary_index].copy()


class VelocityEstimate(NamedTuple):
    pixel: Tuple[int, int]
    velocity: Tuple[float, float]
    amplitude: float


def velocity_estimates(q_nu, grid: SceneGrid, velocities: VelocityGrid,
                       detection_threshold: float = 0.01) -> List[VelocityEstimate]:
    """Per-entry velocity read-out of the moving component.

    Every entry above ``detection_threshold * max(q_nu)`` yields one record,
    ordered by pixel then velocity index.
    """
    if not 0.0 <= detection_threshold <= 1.0:
        raise ValueError("detection threshold must lie in [0, 1]")
    q_nu = np.asarray(q_nu, dtype=float)
    peak = q_nu.max() if q_nu.size else 0.0
    if peak <= 0:
        return []
    level = detection_threshold * peak
    hits = np.argwhere(q_nu > level) if detection_threshold < 1 else np.argwhere(q_nu >= peak)
    samples = velocities.samples
    out = [
        VelocityEstimate(grid.pixel_rowcol(k), (float(samples[kp, 0]), float(samples[kp, 1])),
                         float(q_nu[kp, k]))
        for kp, k in hits
    ]
    out.sort(key=lambda e: (e.pixel, e.velocity))
    return out


def save_matrix_csv(path, Q) -> None:
    """One CSV row per velocity index."""
    np.savetxt(path, np.asarray(Q, dtype=float), delimiter=",", fmt="%.17g")


def load_matrix_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=","))
