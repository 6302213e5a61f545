"""Matrix-free lifted forward operator mapping a PSR matrix to SAR data.

Measurements live in the frequency domain, indexed by ``p = m * L + l``
for slow-time sample ``s_m`` and angular frequency ``omega_l``. Kernel
entries are ``exp(i omega_l (R + B) / c0) / sqrt(P)``, so every column of
the operator has unit norm.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .grids import AcquisitionGeometry, phase

_HEADER = struct.Struct("<QQQ")


@dataclass
class Measurements:
    """Stacked SAR samples ``d[p]`` with ``p = m * n_freq + l``."""

    data: np.ndarray
    n_slow: int
    n_freq: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex).reshape(-1)
        if self.data.size != self.n_slow * self.n_freq:
            raise ValueError(
                f"expected {self.n_slow * self.n_freq} samples, got {self.data.size}"
            )

    def __len__(self):
        return self.data.size

    def index(self, p: int) -> Tuple[int, int]:
        """``(slow_index, freq_index)`` of measurement ``p``."""
        if not 0 <= p < self.data.size:
            raise IndexError(p)
        return divmod(int(p), self.n_freq)

    def flat_index(self, m: int, l: int) -> int:
        return int(m) * self.n_freq + int(l)

    def as_matrix(self) -> np.ndarray:
        """View as ``(n_slow, n_freq)``."""
        return self.data.reshape(self.n_slow, self.n_freq)

    def with_data(self, data) -> "Measurements":
        return Measurements(data, self.n_slow, self.n_freq)

    def to_fast_time(self) -> np.ndarray:
        """Range profiles per pulse via inverse DFT over frequency (display only)."""
        return np.fft.fftshift(np.fft.ifft(self.as_matrix(), axis=1), axes=1)

    def save(self, path) -> None:
        write_flat(path, self.as_matrix())

    @classmethod
    def load(cls, path) -> "Measurements":
        arr = read_flat(path)
        return cls(arr.reshape(-1), arr.shape[0], arr.shape[1])

    def save_csv(self, path, geometry: Optional[AcquisitionGeometry] = None) -> None:
        m, l = np.divmod(np.arange(self.data.size), self.n_freq)
        cols = [np.arange(self.data.size), m, l]
        header = "p,slow_index,freq_index"
        if geometry is not None:
            cols += [geometry.trajectory.slow_time_samples[m], geometry.radar.omegas[l]]
            header += ",s,omega"
        cols += [self.data.real, self.data.imag]
        header += ",re,im"
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for row in zip(*cols):
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    @classmethod
    def load_csv(cls, path) -> "Measurements":
        raw = np.genfromtxt(path, delimiter=",", names=True)
        n_slow = int(raw["slow_index"].max()) + 1
        n_freq = int(raw["freq_index"].max()) + 1
        return cls(raw["re"] + 1j * raw["im"], n_slow, n_freq)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_flat(path, array) -> None:
    """Write a 2D array as little-endian complex64 pairs after a
    ``(count, rows, cols)`` uint64 header."""
    a = np.asarray(array)
    if a.ndim != 2:
        raise ValueError("flat format stores 2D arrays")
    payload = np.empty(a.size * 2, dtype="<f4")
    flat = a.reshape(-1)
    payload[0::2] = np.real(flat)
    payload[1::2] = np.imag(flat) if np.iscomplexobj(flat) else 0.0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(a.size, a.shape[0], a.shape[1]))
        fh.write(payload.tobytes())


def read_flat(path) -> np.ndarray:
    """Inverse of :func:`write_flat`; returns a complex128 ``(rows, cols)`` array."""
    blob = Path(path).read_bytes()
    count, rows, cols = _HEADER.unpack_from(blob)
    if count != rows * cols:
        raise ValueError("corrupt header: count != rows * cols")
    payload = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    if payload.size != 2 * count:
        raise ValueError("payload length does not match header")
    return (payload[0::2] + 1j * payload[1::2]).astype(complex).reshape(rows, cols)


class LiftedOperator:
    """Forward map ``F`` from ``(M, N)`` PSR matrices to ``P`` measurements and
    its adjoint, applied on the fly in slow-time blocks.

    Parameters
    ----------
    geometry : AcquisitionGeometry
    block_bytes : int
        Upper bound on the size of one temporary kernel block.
    n_workers : int
        Threads used over slow-time blocks. Partial adjoint sums are reduced
        in block order, so results do not depend on this number.
    cache_bytes : int
        When the whole kernel fits in this budget it is generated once at
        construction and kept; larger operators are regenerated block by
        block on every application. ``0`` disables the cache.
    """

    def __init__(self, geometry: AcquisitionGeometry, block_bytes: int = 64 * 2**20,
                 n_workers: int = 1, cache_bytes: int = 512 * 2**20):
        self.geometry = geometry
        self.cache_bytes = int(cache_bytes)
        self._cache = None
        self.n_workers = max(1, int(n_workers))
        scene, radar = geometry.scene, geometry.radar
        self.M, self.N = geometry.shape
        self.L = radar.n_freq
        self.n_slow = geometry.n_slow
        self.P = self.n_slow * self.L
        self.kernel_scale = 1.0 / np.sqrt(self.P)
        self.c0 = radar.c0

        s = geometry.trajectory.slow_time_samples
        pts = np.column_stack([scene.pixel_centers, scene.heights()])  # (N, 3)
        grad = scene.gradients()  # (N, 2)
        gam = geometry.trajectory.position(s)  # (S, 3)
        diff = pts[None, :, :] - gam[:, None, :]
        dist = np.linalg.norm(diff, axis=-1)
        u = diff / dist[..., None]
        # u . [nu, grad psi . nu] = nu . (u_xy + u_z grad psi)
        self._slow = s
        self._range = 2.0 * dist  # (S, N)
        self._proj = u[..., :2] + u[..., 2:3] * grad[None, :, :]  # (S, N, 2)
        self._vel = geometry.velocities.samples  # (M, 2)

        omegas = radar.omegas
        self._omega0 = float(omegas[0])
        self._domega = float(omegas[1] - omegas[0]) if self.L > 1 else 0.0

        per_slow = self.L * self.M * self.N * 16
        self.block = int(max(1, min(self.n_slow, block_bytes // max(per_slow, 1))))
        if self.cached:
            self._cache = self._kernel_block(0, self.n_slow)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.M, self.N)

    @property
    def stationary_index(self) -> int:
        return self.geometry.stationary_index

    # kernel ---------------------------------------------------------------

    def delays(self, m: int) -> np.ndarray:
        """``(M, N)`` total path ``R + B`` for slow-time sample ``m``."""
        b = 2.0 * self._slow[m] * (self._vel @ self._proj[m].T)
        return self._range[m][None, :] + b

    def _kernel_block(self, m0: int, m1: int) -> np.ndarray:
        """Kernel rows for slow-time samples ``m0..m1-1``: ``((m1-m0)*L, M*N)``."""
        tau = np.stack([self.delays(m).reshape(-1) for m in range(m0, m1)])
        k = np.empty((m1 - m0, self.L, tau.shape[1]), dtype=complex)
        k[:, 0] = self.kernel_scale * np.exp(1j * (self._omega0 / self.c0) * tau)
        if self.L > 1:
            step = np.exp(1j * (self._domega / self.c0) * tau)
            for l in range(1, self.L):
                np.multiply(k[:, l - 1], step, out=k[:, l])
        return k.reshape((m1 - m0) * self.L, -1)

    @property
    def cached(self) -> bool:
        return self.P * self.M * self.N * 16 <= self.cache_bytes

    def _block_kernel(self, m0: int, m1: int) -> np.ndarray:
        if self._cache is None:
            return self._kernel_block(m0, m1)
        return self._cache[m0 * self.L:m1 * self.L]

    def _blocks(self) -> List[Tuple[int, int]]:
        if self.cached:
            return [(0, self.n_slow)]
        return [(m, min(m + self.block, self.n_slow)) for m in range(0, self.n_slow, self.block)]

    def _map(self, fn, blocks) -> Iterator:
        if self.n_workers == 1 or len(blocks) == 1:
            return map(fn, blocks)
        with ThreadPoolExecutor(self.n_workers) as pool:
            return iter(list(pool.map(fn, blocks)))

    def kernel(self, l: int, m: int, k: int, kp: int) -> complex:
        """Single kernel entry evaluated directly from the phase function."""
        g = self.geometry
        x = g.scene.pixel_centers[k]
        nu = g.velocities.samples[kp]
        ph = phase(g.radar.omegas[l], g.trajectory, self._slow[m], x, nu,
                   g.scene.topography, self.c0)
        return complex(self.kernel_scale * np.exp(1j * ph))

    # application ---------------------------------------------------------

    def forward(self, Q) -> np.ndarray:
        """``d = F(Q)`` for ``Q`` of shape ``(M, N)`` or a batch ``(B, M, N)``."""
        Q = np.asarray(Q)
        batched = Q.ndim == 3
        if Q.shape[-2:] != (self.M, self.N) or Q.ndim not in (2, 3):
            raise ValueError(f"expected PSR matrix of shape {(self.M, self.N)}, got {Q.shape}")
        q = Q.reshape(-1, self.M * self.N).T  # (MN, B)
        out = np.empty((self.P, q.shape[1]), dtype=complex)

        def work(blk):
            m0, m1 = blk
            out[m0 * self.L:m1 * self.L] = self._block_kernel(m0, m1) @ q

        for _ in self._map(work, self._blocks()):
            pass
        return out.T if batched else out[:, 0]

    def adjoint(self, d) -> np.ndarray:
        """``F^H d`` as a complex ``(M, N)`` matrix (or ``(B, M, N)`` batch)."""
        if isinstance(d, Measurements):
            d = d.data
        d = np.asarray(d)
        batched = d.ndim == 2
        if d.shape[-1] != self.P or d.ndim not in (1, 2):
            raise ValueError(f"expected {self.P} measurements, got shape {d.shape}")
        dd = d.reshape(-1, self.P).T  # (P, B)

        def work(blk):
            m0, m1 = blk
            # conj(K^T conj(d)) avoids materializing K^H
            return (self._block_kernel(m0, m1).T @ dd[m0 * self.L:m1 * self.L].conj()).conj()

        acc = np.zeros((self.M * self.N, dd.shape[1]), dtype=complex)
        for part in self._map(work, self._blocks()):
            acc += part
        res = acc.T.reshape(-1, self.M, self.N)
        return res if batched else res[0]

    def normal(self, Q) -> np.ndarray:
        """``F^H F Q`` in a single pass over the kernel blocks."""
        Q = np.asarray(Q)
        if Q.shape != (self.M, self.N):
            raise ValueError(f"expected PSR matrix of shape {(self.M, self.N)}, got {Q.shape}")
        q = Q.reshape(-1)

        def work(blk):
            k = self._block_kernel(*blk)
            return (k.T @ (k @ q).conj()).conj()

        acc = np.zeros(self.M * self.N, dtype=complex)
        for part in self._map(work, self._blocks()):
            acc += part
        return acc.reshape(self.M, self.N)

    def measure(self, Q) -> Measurements:
        return Measurements(self.forward(Q), self.n_slow, self.L)

    def backprojection(self, d) -> np.ndarray:
        """Real part of ``F^H d``; the cached data term used by the solvers."""
        return np.real(self.adjoint(d))

    def materialize(self, max_entries: int = 20_000_000) -> np.ndarray:
        """Dense ``(P, M*N)`` kernel matrix, for toy-scale validation only."""
        if self.P * self.M * self.N > max_entries:
            raise MemoryError("operator too large to materialize")
        return self._kernel_block(0, self.n_slow)

    def spectral_norm(self, n_iter: int = 100, seed: int = 0, tol: float = 1e-10) -> float:
        """Largest singular value of ``F`` by power iteration on ``F^H F``."""
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((self.M, self.N)) + 1j * rng.standard_normal((self.M, self.N))
        x /= np.linalg.norm(x)
        lam = 0.0
        for _ in range(n_iter):
            y = self.adjoint(self.forward(x))
            new = float(np.linalg.norm(y))
            x = y / new
            if abs(new - lam) <= tol * new:
                lam = new
                break
            lam = new
        return float(np.sqrt(lam))


def normal_residual(q_s, q_nu, G) -> np.ndarray:
    """Gradient direction ``(Qs + Qnu) - G`` under ``F^H F ~ I``."""
    return np.asarray(q_s) + np.asarray(q_nu) - np.asarray(G)


def exact_gradient(op: LiftedOperator, Q, d) -> np.ndarray:
    """``Re(F^H (F(Q) - d))`` without the identity approximation."""
    if isinstance(d, Measurements):
        d = d.data
    return np.real(op.adjoint(op.forward(Q) - d))
