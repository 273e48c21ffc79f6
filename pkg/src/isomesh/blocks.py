"""Degree-5 height-field fits and the block subdivision/merging of a cloud."""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass

import numpy as np

from .geometry import as_cloud

log = logging.getLogger(__name__)

DEGREE = 5
EXPONENTS = np.array([(i, d - i) for d in range(DEGREE + 1) for i in range(d, -1, -1)], dtype=np.int64)
N_COEFFS = len(EXPONENTS)  # 21
RIDGE = 1e-8


class BlockSubdivisionError(RuntimeError):
    pass


@dataclass(frozen=True)
class PolySurface:
    """Height field ``w = h(u, v)`` over a local frame.

    ``axes`` rows are (u, v, w) directions; ``scale`` normalizes (u, v)
    before the monomials are formed.
    """

    origin: np.ndarray
    axes: np.ndarray
    scale: float
    coefficients: np.ndarray

    def to_local(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.origin) @ self.axes.T

    def height(self, u, v) -> np.ndarray:
        return _design(np.asarray(u) / self.scale, np.asarray(v) / self.scale) @ self.coefficients

    def lift(self, u, v) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        w = self.height(u, v)
        return self.origin + np.column_stack([u, v, w]) @ self.axes

    def residuals(self, points) -> np.ndarray:
        q = self.to_local(points)
        return self.height(q[:, 0], q[:, 1]) - q[:, 2]


def _design(u, v) -> np.ndarray:
    return (u[:, None] ** EXPONENTS[:, 0]) * (v[:, None] ** EXPONENTS[:, 1])


def pca_frame(points: np.ndarray):
    origin = points.mean(axis=0)
    if len(points) < 2:
        return origin, np.eye(3)
    _, _, vt = np.linalg.svd(points - origin, full_matrices=True)
    axes = vt.copy()
    if np.linalg.det(axes) < 0:
        axes[2] *= -1
    return origin, axes


def fit_polynomial(points):
    """Least-squares degree-5 height field in the points' PCA frame.

    The normal axis is the least-variance direction. Returns the surface and
    the fitting error, the largest |h(u, v) - w| over the points. Fits with
    fewer points than coefficients (or a rank-deficient design) use a small
    ridge term.
    """
    pts = as_cloud(points)
    origin, axes = pca_frame(pts)
    q = (pts - origin) @ axes.T
    scale = float(np.abs(q[:, :2]).max())
    if not scale > 0:
        scale = 1.0
    A = _design(q[:, 0] / scale, q[:, 1] / scale)
    w = q[:, 2]
    coef = None
    if len(pts) >= N_COEFFS:
        coef, _, rank, _ = np.linalg.lstsq(A, w, rcond=None)
        if rank < N_COEFFS:
            coef = None
    if coef is None:
        AtA = A.T @ A
        lam = RIDGE * max(np.trace(AtA) / N_COEFFS, np.finfo(float).tiny)
        try:
            coef = np.linalg.solve(AtA + lam * np.eye(N_COEFFS), A.T @ w)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError("degenerate polynomial fit even with ridge regularization") from None
    surf = PolySurface(origin, axes, scale, coef)
    err = float(np.abs(A @ coef - w).max())
    return surf, err


# ---------------------------------------------------------------------------
# blocks


@dataclass
class Block:
    lo: np.ndarray
    hi: np.ndarray
    point_indices: np.ndarray
    surface: PolySurface
    fit_error: float

    def contains(self, points) -> np.ndarray:
        return np.all((points >= self.lo) & (points <= self.hi), axis=1)

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))


def _make_block(lo, hi, idx, cloud) -> Block:
    surf, err = fit_polynomial(cloud[idx])
    return Block(np.asarray(lo, float), np.asarray(hi, float), np.asarray(idx, np.int64), surf, err)


def _grid_split(lo, hi, idx, cloud, n):
    """Non-empty cells of an n*n*n split of box [lo, hi] holding the given points."""
    size = (hi - lo) / n
    cell = np.floor((cloud[idx] - lo) / size).astype(np.int64)
    np.clip(cell, 0, n - 1, out=cell)
    key = (cell[:, 0] * n + cell[:, 1]) * n + cell[:, 2]
    out = []
    for k in np.unique(key):
        c = np.array([k // (n * n), (k // n) % n, k % n])
        out.append((lo + c * size, lo + (c + 1) * size, idx[key == k]))
    return out


def _adjacent(a: Block, b: Block, tol: float) -> bool:
    return bool(np.all(a.lo <= b.hi + tol) and np.all(b.lo <= a.hi + tol))


def build_blocks(
    cloud,
    tau_e: float,
    n1: int = 10,
    n2_start: int = 2,
    n2_cap: int = 6,
    enlarge: float = 1.01,
    merge: bool = True,
) -> list[Block]:
    """Cover the cloud with boxes whose points each admit a fit within ``tau_e``.

    1. Split the bounding box into ``n1**3`` equal boxes (empty ones dropped).
    2. A box whose fit error exceeds ``tau_e`` is split ``n2**3``-wise,
       raising ``n2`` from ``n2_start`` until every sub-box passes.
    3. Adjacent (touching or overlapping) boxes are merged greedily, lowest
       merged error first, while the merged fit stays within ``tau_e``.
    4. Every box is scaled by ``enlarge`` about its center.
    """
    pts = as_cloud(cloud)
    if not tau_e > 0:
        raise ValueError("tau_e must be positive")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    ext = hi - lo
    ext = np.maximum(ext, 1e-6 * max(float(ext.max()), 1e-12))
    hi = lo + ext
    tol = 1e-9 * float(np.linalg.norm(ext))

    blocks: list[Block] = []
    for cell_id, (clo, chi, idx) in enumerate(_grid_split(lo, hi, np.arange(len(pts)), pts, n1)):
        b = _make_block(clo, chi, idx, pts)
        if b.fit_error <= tau_e:
            blocks.append(b)
            continue
        for n2 in range(n2_start, n2_cap + 1):
            subs = [_make_block(a, c, i, pts) for a, c, i in _grid_split(clo, chi, idx, pts, n2)]
            if all(s.fit_error <= tau_e for s in subs):
                blocks.extend(subs)
                break
        else:
            raise BlockSubdivisionError(
                f"block {cell_id} [{clo.round(6).tolist()}, {chi.round(6).tolist()}] with {len(idx)} points "
                f"still exceeds tau_e={tau_e:g} at n2={n2_cap}"
            )

    if merge:
        blocks = _merge(blocks, pts, tau_e, tol)

    out = []
    for b in blocks:
        c = 0.5 * (b.lo + b.hi)
        h = 0.5 * (b.hi - b.lo) * enlarge
        out.append(Block(c - h, c + h, b.point_indices, b.surface, b.fit_error))
    return out


def _merge(blocks: list[Block], pts: np.ndarray, tau_e: float, tol: float) -> list[Block]:
    alive = dict(enumerate(blocks))
    next_id = len(blocks)
    heap: list = []
    cache: dict = {}

    def try_pair(i, j):
        a, b = alive[i], alive[j]
        idx = np.union1d(a.point_indices, b.point_indices)
        merged = _make_block(np.minimum(a.lo, b.lo), np.maximum(a.hi, b.hi), idx, pts)
        if merged.fit_error <= tau_e:
            cache[i, j] = merged
            heapq.heappush(heap, (merged.fit_error, i, j))

    ids = list(alive)
    los = np.array([alive[i].lo for i in ids])
    his = np.array([alive[i].hi for i in ids])
    for k, i in enumerate(ids):
        adj = np.all(los[k + 1 :] <= his[k] + tol, axis=1) & np.all(los[k] <= his[k + 1 :] + tol, axis=1)
        for m in np.flatnonzero(adj):
            try_pair(i, ids[k + 1 + m])

    while heap:
        _, i, j = heapq.heappop(heap)
        if i not in alive or j not in alive:
            cache.pop((i, j), None)
            continue
        merged = cache.pop((i, j))
        del alive[i], alive[j]
        new = next_id
        next_id += 1
        for k in list(alive):
            if _adjacent(merged, alive[k], tol):
                alive[new] = merged
                try_pair(k, new)
        alive[new] = merged
    return list(alive.values())


def mergeable_pairs(blocks: list[Block], cloud, tau_e: float) -> list[tuple[int, int]]:
    """Adjacent block pairs whose merged fit would stay within ``tau_e`` (empty at the fixpoint).

    Adjacency is judged on the blocks as passed in.
    """
    pts = as_cloud(cloud)
    ext = pts.max(axis=0) - pts.min(axis=0)
    tol = 1e-9 * float(np.linalg.norm(ext))
    out = []
    for i in range(len(blocks)):
        for j in range(i + 1, len(blocks)):
            if _adjacent(blocks[i], blocks[j], tol):
                idx = np.union1d(blocks[i].point_indices, blocks[j].point_indices)
                if fit_polynomial(pts[idx])[1] <= tau_e:
                    out.append((i, j))
    return out
