"""Closest-point queries against triangle sets."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def closest_point_on_triangles(p, a, b, c) -> np.ndarray:
    """Closest point of each closed triangle (a, b, c) to the paired point p.

    All arguments broadcast to shape (N, 3). Follows the Voronoi-region
    classification from Ericson, *Real-Time Collision Detection*, 5.1.5.
    Degenerate triangles fall through to the edge/vertex regions.
    """
    p, a, b, c = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (p, a, b, c)))
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def put(mask, value):
        m = mask & ~done
        if m.any():
            out[m] = value[m] if np.ndim(value) == 2 else value
            done[m] = True

    with np.errstate(invalid="ignore", divide="ignore"):
        put((d1 <= 0) & (d2 <= 0), a)
        put((d3 >= 0) & (d4 <= d3), b)
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        put((d6 >= 0) & (d5 <= d6), c)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        inside = a + v[:, None] * ab + w[:, None] * ac
        rest = ~done
        if rest.any():
            ok = rest & np.all(np.isfinite(inside), axis=1)
            out[ok] = inside[ok]
            done |= ok
    if not done.all():
        # zero-area triangle with coincident corners: nearest of its edges
        m = ~done
        cands = [_closest_on_segment(p[m], s, e) for s, e in ((a[m], b[m]), (b[m], c[m]), (c[m], a[m]))]
        d = np.stack([np.linalg.norm(q - p[m], axis=1) for q in cands])
        pick = np.argmin(d, axis=0)
        out[m] = np.stack(cands)[pick, np.arange(m.sum())]
    return out


def _closest_on_segment(p, s, e):
    d = e - s
    dd = np.einsum("ij,ij->i", d, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(dd > 0, np.einsum("ij,ij->i", p - s, d) / dd, 0.0)
    t = np.clip(t, 0.0, 1.0)
    return s + t[:, None] * d


def point_triangle_distances(p, a, b, c) -> np.ndarray:
    q = closest_point_on_triangles(p, a, b, c)
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), q.shape)
    return np.sqrt(np.einsum("ij,ij->i", q - p, q - p))


class TriangleIndex:
    """Exact nearest-triangle queries accelerated by a k-d tree over centroids.

    A query first takes the best of the ``k`` triangles with the nearest
    centroids as an upper bound ``ub``; any triangle that could beat ``ub``
    has its centroid within ``ub + r_max`` (``r_max`` = largest
    centroid-to-corner radius), so all such triangles are checked. The
    returned distances are therefore identical to a brute-force scan.
    """

    def __init__(self, triangles: np.ndarray, k: int = 8):
        self.tri = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
        if len(self.tri) == 0:
            raise ValueError("no triangles")
        self.centroids = self.tri.mean(axis=1)
        self.r_max = float(np.linalg.norm(self.tri - self.centroids[:, None], axis=2).max())
        self.tree = cKDTree(self.centroids)
        self.k = min(k, len(self.tri))

    def _pairs(self, pts, tri_idx):
        t = self.tri[tri_idx]
        return closest_point_on_triangles(pts, t[:, 0], t[:, 1], t[:, 2])

    def query(self, points, chunk: int = 4096):
        """Return (distance, triangle index, closest point) for each query point."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = len(pts)
        dist = np.empty(n)
        which = np.empty(n, dtype=np.int64)
        closest = np.empty((n, 3))
        for s in range(0, n, chunk):
            sl = slice(s, min(n, s + chunk))
            d, w, c = self._query_chunk(pts[sl])
            dist[sl], which[sl], closest[sl] = d, w, c
        return dist, which, closest

    def _query_chunk(self, pts):
        m = len(pts)
        _, near = self.tree.query(pts, k=self.k)
        near = near.reshape(m, -1)
        q = self._pairs(np.repeat(pts, near.shape[1], axis=0), near.ravel())
        d = np.linalg.norm(q - np.repeat(pts, near.shape[1], axis=0), axis=1).reshape(m, -1)
        ub = d.min(axis=1)

        cand = self.tree.query_ball_point(pts, ub + self.r_max + 1e-12 * (1.0 + ub))
        lens = np.fromiter((len(c) for c in cand), dtype=np.int64, count=m)
        flat = np.fromiter((i for c in cand for i in c), dtype=np.int64, count=int(lens.sum()))
        owner = np.repeat(np.arange(m), lens)
        q = self._pairs(pts[owner], flat)
        diff = q - pts[owner]
        dd = np.sqrt(np.einsum("ij,ij->i", diff, diff))

        # per-query argmin with lowest triangle index on ties
        order = np.lexsort((flat, dd, owner))
        starts = np.concatenate([[0], np.cumsum(lens)[:-1]])
        best = order[starts]
        return dd[best], flat[best], q[best]


def brute_force_distances(points, triangles) -> np.ndarray:
    """O(N*F) reference scan; used as the oracle for :class:`TriangleIndex`."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
    out = np.empty(len(pts))
    for i, p in enumerate(pts):
        out[i] = point_triangle_distances(p[None, :], tri[:, 0], tri[:, 1], tri[:, 2]).min()
    return out
