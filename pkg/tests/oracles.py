"""Independent reference implementations used to check the library.

Everything here is deliberately written from different math than the code
under test: box distances come from separating axes plus brute-force
feature enumeration, inside tests from crossing parity of a single ray.
"""
from __future__ import annotations

import numpy as np


def quat_from_rng(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def quat_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def box_corners(half: np.ndarray, rot: np.ndarray, trans: np.ndarray) -> np.ndarray:
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
    return (signs * half) @ rot.T + trans


_EDGE_PAIRS = [(a, b) for a in range(8) for b in range(a + 1, 8)
               if bin(a ^ b).count("1") == 1]


def sat_boxes_overlap(half_a, rot_a, trans_a, half_b, rot_b, trans_b) -> bool:
    """15-axis separating-axis test for two oriented boxes."""
    t = trans_b - trans_a
    axes = [rot_a[:, i] for i in range(3)] + [rot_b[:, i] for i in range(3)]
    for i in range(3):
        for j in range(3):
            c = np.cross(rot_a[:, i], rot_b[:, j])
            n = np.linalg.norm(c)
            if n > 1e-12:
                axes.append(c / n)
    for ax in axes:
        ra = np.abs(rot_a.T @ ax) @ half_a
        rb = np.abs(rot_b.T @ ax) @ half_b
        if abs(t @ ax) > ra + rb + 1e-12:
            return False
    return True


def point_to_box_distance(p, half, rot, trans) -> float:
    local = rot.T @ (p - trans)
    clamped = np.clip(local, -half, half)
    return float(np.linalg.norm(local - clamped))


def segment_segment_distance(p1, q1, p2, q2) -> float:
    """Closest distance between segments [p1,q1] and [p2,q2]."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    if a < 1e-24 and e < 1e-24:
        return float(np.linalg.norm(r))
    if a < 1e-24:
        t = np.clip(f / e, 0.0, 1.0)
        s = 0.0
    else:
        c = d1 @ r
        if e < 1e-24:
            t = 0.0
            s = np.clip(-c / a, 0.0, 1.0)
        else:
            b = d1 @ d2
            den = a * e - b * b
            s = np.clip((b * f - c * e) / den, 0.0, 1.0) if den > 1e-24 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t = 1.0
                s = np.clip((b - c) / a, 0.0, 1.0)
    return float(np.linalg.norm(p1 + d1 * s - (p2 + d2 * t)))


def sat_box_distance(half_a, rot_a, trans_a, half_b, rot_b, trans_b) -> float:
    """Exact distance between oriented boxes: 0 when SAT finds no gap,
    otherwise min over vertex-to-box and edge-to-edge features."""
    if sat_boxes_overlap(half_a, rot_a, trans_a, half_b, rot_b, trans_b):
        return 0.0
    ca = box_corners(half_a, rot_a, trans_a)
    cb = box_corners(half_b, rot_b, trans_b)
    best = np.inf
    for p in ca:
        best = min(best, point_to_box_distance(p, half_b, rot_b, trans_b))
    for p in cb:
        best = min(best, point_to_box_distance(p, half_a, rot_a, trans_a))
    for (i, j) in _EDGE_PAIRS:
        for (k, m) in _EDGE_PAIRS:
            best = min(best, segment_segment_distance(ca[i], ca[j], cb[k], cb[m]))
    return best


def count_ray_crossings(origin: np.ndarray, direction: np.ndarray,
                        tris: np.ndarray) -> int:
    """Number of triangle crossings with t > 0 (Moller-Trumbore, half-open)."""
    o = np.asarray(origin, float)
    d = np.asarray(direction, float)
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    pvec = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = o - tris[:, 0]
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    qvec = np.cross(tvec, e1)
    v = (qvec @ d) * inv
    t = np.einsum("ij,ij->i", e2, qvec) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-12)
    return int(hit.sum())


def points_inside_mesh(points: np.ndarray, tris: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    """Parity inside test with a random ray direction per call."""
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    return np.array([count_ray_crossings(p, d, tris) % 2 == 1 for p in points])


def sample_interior_points(mesh_tris: np.ndarray, n: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample n points strictly inside a closed mesh."""
    flat = mesh_tris.reshape(-1, 3)
    lo = flat.min(axis=0)
    hi = flat.max(axis=0)
    out = []
    while sum(len(o) for o in out) < n:
        cand = rng.uniform(lo, hi, size=(4 * n, 3))
        mask = points_inside_mesh(cand, mesh_tris, rng)
        out.append(cand[mask])
    return np.concatenate(out)[:n]
