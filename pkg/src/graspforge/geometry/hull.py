"""Convex pieces backed by Qhull."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ..errors import DegenerateInput


@dataclass(frozen=True)
class ConvexPiece:
    """Convex solid given by its hull vertices.

    vertices: (n, 3) float64; every vertex is extreme (lies on the hull).
    equations: (k, 4) outward face planes; n . x + d <= 0 inside.
    """

    vertices: np.ndarray
    equations: np.ndarray = field(repr=False, compare=False, default=None)
    volume: float = field(compare=False, default=0.0)

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Half-space membership test for one point or an (n, 3) batch."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        d = pts @ self.equations[:, :3].T + self.equations[:, 3]
        return (d <= tol).all(axis=1)

    def support(self, direction: np.ndarray) -> np.ndarray:
        """Extreme vertex along `direction` (local frame)."""
        return self.vertices[int(np.argmax(self.vertices @ direction))]

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)


def convex_hull(points) -> ConvexPiece:
    """Convex hull of >= 4 non-coplanar points.

    Returned vertices are the extreme input points (ascending input order);
    interior points are discarded.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DegenerateInput("points must be (n, 3)")
    if len(pts) < 4:
        raise DegenerateInput("need at least 4 points")
    if not np.isfinite(pts).all():
        raise DegenerateInput("non-finite point")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateInput(f"degenerate point set: {exc}") from exc
    idx = np.sort(hull.vertices)
    return ConvexPiece(
        vertices=np.ascontiguousarray(pts[idx]),
        equations=np.ascontiguousarray(hull.equations),
        volume=float(hull.volume),
    )
