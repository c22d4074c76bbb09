"""Ray/triangle and ray/mesh intersection with a BVH acceleration index.

All hot loops are numba kernels over flat float64 arrays. The scalar
``intersect_triangle`` entry point and the BVH traversal share the same
Möller-Trumbore kernel, so a BVH query is bit-identical to an exhaustive scan.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import cached_property

import numba
import numpy as np

logger = logging.getLogger(__name__)

T_MIN = 1e-6  # m; rejects hits at the camera origin
DET_EPS = 1e-12
DEGENERATE_AREA_EPS = 1e-12  # m^2
UNIT_TOL = 1e-9
LEAF_SIZE = 4

_jit = numba.njit(cache=True, nogil=True, error_model="numpy")


def _as_vec3(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr.tolist()}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "origin", _as_vec3(self.origin, "origin"))
        direction = _as_vec3(self.direction, "direction")
        norm = float(np.linalg.norm(direction))
        if abs(norm - 1.0) > UNIT_TOL:
            raise ValueError(f"ray direction must be unit length, |d| = {norm!r}")
        object.__setattr__(self, "direction", direction)

    @classmethod
    def towards(cls, origin, direction) -> "Ray":
        """Build a ray, normalizing ``direction`` first."""
        d = np.asarray(direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if n == 0.0:
            raise ValueError("zero-length direction")
        return cls(origin, d / n)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True, eq=False)
class Triangle:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        for name in "abc":
            object.__setattr__(self, name, _as_vec3(getattr(self, name), name))

    @property
    def area(self) -> float:
        return 0.5 * float(np.linalg.norm(np.cross(self.b - self.a, self.c - self.a)))

    def point(self, u: float, v: float) -> np.ndarray:
        return (1.0 - u - v) * self.a + u * self.b + v * self.c


@dataclass(frozen=True)
class Hit:
    t: float
    u: float
    v: float
    triangle_index: int


# ---------------------------------------------------------------------------
# kernels


@_jit
def _moller_trumbore(ox, oy, oz, dx, dy, dz, ax, ay, az, bx, by, bz, cx, cy, cz):
    e1x = bx - ax
    e1y = by - ay
    e1z = bz - az
    e2x = cx - ax
    e2y = cy - ay
    e2z = cz - az
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < DET_EPS:
        return False, 0.0, 0.0, 0.0
    inv = 1.0 / det
    sx = ox - ax
    sy = oy - ay
    sz = oz - az
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return False, 0.0, 0.0, 0.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return False, 0.0, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t < T_MIN:
        return False, 0.0, 0.0, 0.0
    return True, t, u, v


@_jit
def _hit_triangle(o, d, v0, v1, v2, i):
    return _moller_trumbore(
        o[0], o[1], o[2], d[0], d[1], d[2],
        v0[i, 0], v0[i, 1], v0[i, 2],
        v1[i, 0], v1[i, 1], v1[i, 2],
        v2[i, 0], v2[i, 1], v2[i, 2],
    )


@_jit
def _box_entry(o, d, lo, hi, node, t_far):
    """Entry distance of the ray into a node box clipped to [0, t_far]; inf on miss."""
    t0 = 0.0
    t1 = t_far
    for k in range(3):
        if d[k] == 0.0:
            if o[k] < lo[node, k] or o[k] > hi[node, k]:
                return np.inf
            continue
        inv = 1.0 / d[k]
        ta = (lo[node, k] - o[k]) * inv
        tb = (hi[node, k] - o[k]) * inv
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return np.inf
    return t0


@_jit
def _bvh_query(o, d, lo, hi, left, right, start, count, order, v0, v1, v2):
    best_t = np.inf
    best_u = 0.0
    best_v = 0.0
    best_i = -1
    if lo.shape[0] == 0:
        return best_i, best_t, best_u, best_v
    stack = np.empty(128, dtype=np.int64)
    top = 0
    if _box_entry(o, d, lo, hi, 0, np.inf) < np.inf:
        stack[0] = 0
        top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        # boxes entered exactly at best_t are kept: they may hold a lower-index tie
        if not _box_entry(o, d, lo, hi, node, best_t) <= best_t:
            continue
        if left[node] < 0:
            for j in range(start[node], start[node] + count[node]):
                tri = order[j]
                ok, t, u, v = _hit_triangle(o, d, v0, v1, v2, tri)
                if ok and (t < best_t or (t == best_t and tri < best_i)):
                    best_t = t
                    best_u = u
                    best_v = v
                    best_i = tri
            continue
        a = left[node]
        b = right[node]
        ta = _box_entry(o, d, lo, hi, a, best_t)
        tb = _box_entry(o, d, lo, hi, b, best_t)
        if ta > tb:
            a, b = b, a
            ta, tb = tb, ta
        # near child is pushed last so it is popped first; a missed box is inf
        if tb < np.inf and tb <= best_t:
            stack[top] = b
            top += 1
        if ta < np.inf and ta <= best_t:
            stack[top] = a
            top += 1
    return best_i, best_t, best_u, best_v


@_jit
def _bvh_query_batch(origins, dirs, lo, hi, left, right, start, count, order, v0, v1, v2):
    n = origins.shape[0]
    idx = np.full(n, -1, dtype=np.int64)
    ts = np.full(n, np.inf)
    us = np.zeros(n)
    vs = np.zeros(n)
    for r in range(n):
        i, t, u, v = _bvh_query(
            origins[r], dirs[r], lo, hi, left, right, start, count, order, v0, v1, v2
        )
        idx[r] = i
        ts[r] = t
        us[r] = u
        vs[r] = v
    return idx, ts, us, vs


@_jit
def _scan_query_batch(origins, dirs, v0, v1, v2):
    n = origins.shape[0]
    m = v0.shape[0]
    idx = np.full(n, -1, dtype=np.int64)
    ts = np.full(n, np.inf)
    us = np.zeros(n)
    vs = np.zeros(n)
    for r in range(n):
        o = origins[r]
        d = dirs[r]
        for i in range(m):
            ok, t, u, v = _hit_triangle(o, d, v0, v1, v2, i)
            # ascending scan with strict < keeps the lowest index on ties
            if ok and t < ts[r]:
                ts[r] = t
                us[r] = u
                vs[r] = v
                idx[r] = i
    return idx, ts, us, vs


@_jit
def _build(centroids, tlo, thi, leaf_size):
    m = centroids.shape[0]
    cap = max(1, 2 * m)
    lo = np.empty((cap, 3))
    hi = np.empty((cap, 3))
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    count = np.zeros(cap, dtype=np.int64)
    order = np.arange(m)
    n_nodes = 1
    start[0] = 0
    count[0] = m
    work = np.empty(cap, dtype=np.int64)
    work[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = work[top]
        s = start[node]
        c = count[node]
        for k in range(3):
            lo[node, k] = np.inf
            hi[node, k] = -np.inf
        clo = np.full(3, np.inf)
        chi = np.full(3, -np.inf)
        for j in range(s, s + c):
            tri = order[j]
            for k in range(3):
                lo[node, k] = min(lo[node, k], tlo[tri, k])
                hi[node, k] = max(hi[node, k], thi[tri, k])
                clo[k] = min(clo[k], centroids[tri, k])
                chi[k] = max(chi[k], centroids[tri, k])
        if c <= leaf_size:
            continue
        axis = 0
        ext = chi[0] - clo[0]
        for k in range(1, 3):
            if chi[k] - clo[k] > ext:
                ext = chi[k] - clo[k]
                axis = k
        seg = order[s : s + c].copy()
        keys = np.empty(c)
        for j in range(c):
            keys[j] = centroids[seg[j], axis]
        perm = np.argsort(keys, kind="mergesort")
        for j in range(c):
            order[s + j] = seg[perm[j]]
        half = c // 2
        a = n_nodes
        b = n_nodes + 1
        n_nodes += 2
        start[a] = s
        count[a] = half
        start[b] = s + half
        count[b] = c - half
        left[node] = a
        right[node] = b
        work[top] = a
        work[top + 1] = b
        top += 2
    return lo[:n_nodes], hi[:n_nodes], left[:n_nodes], right[:n_nodes], start[:n_nodes], count[:n_nodes], order


# ---------------------------------------------------------------------------
# mesh + index


@dataclass(frozen=True, eq=False)
class BVH:
    """Flattened bounding-volume hierarchy; node 0 is the root."""

    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.lo.shape[0])

    def depth(self) -> int:
        if self.n_nodes == 0:
            return 0
        best = 0
        stack = [(0, 1)]
        while stack:
            node, depth = stack.pop()
            best = max(best, depth)
            if self.left[node] >= 0:
                stack.append((int(self.left[node]), depth + 1))
                stack.append((int(self.right[node]), depth + 1))
        return best


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle mesh in meters.

    Construct through :meth:`from_arrays`, which validates indices and drops
    degenerate faces. ``bvh`` is ``None`` until :func:`build_bvh` is called.
    """

    vertices: np.ndarray
    faces: np.ndarray
    bvh: BVH | None = None
    dropped_degenerate: int = 0

    @classmethod
    def from_arrays(cls, vertices, faces) -> "TriangleMesh":
        verts = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        tris = np.array(faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(verts)):
            raise ValueError("mesh vertices must be finite")
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            bad = int(np.flatnonzero((tris < 0).any(axis=1) | (tris >= len(verts)).any(axis=1))[0])
            raise IndexError(f"face {bad} references a vertex outside 0..{len(verts) - 1}")
        dropped = 0
        if len(tris):
            area = 0.5 * np.linalg.norm(
                np.cross(verts[tris[:, 1]] - verts[tris[:, 0]], verts[tris[:, 2]] - verts[tris[:, 0]]),
                axis=1,
            )
            keep = area > DEGENERATE_AREA_EPS
            dropped = int((~keep).sum())
            if dropped:
                logger.warning("dropped %d degenerate face(s)", dropped)
            tris = tris[keep]
        verts.setflags(write=False)
        tris.setflags(write=False)
        return cls(verts, tris, None, dropped)

    @property
    def n_triangles(self) -> int:
        return int(self.faces.shape[0])

    def __len__(self) -> int:
        return self.n_triangles

    def triangle(self, i: int) -> Triangle:
        a, b, c = self.vertices[self.faces[i]]
        return Triangle(a, b, c)

    @cached_property
    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-face vertex arrays ``(v0, v1, v2)``, each (m, 3) contiguous."""
        f = self.faces
        return tuple(np.ascontiguousarray(self.vertices[f[:, k]]) for k in range(3))

    def translated(self, offset) -> "TriangleMesh":
        shifted = self.vertices + np.asarray(offset, dtype=np.float64)
        shifted.setflags(write=False)
        return TriangleMesh(shifted, self.faces, None, self.dropped_degenerate)


def intersect_triangle(ray: Ray, tri: Triangle) -> Hit | None:
    """Möller-Trumbore test of one ray against one triangle, both faces.

    Returns ``None`` for misses, parallel rays (``|det| < DET_EPS``) and hits
    closer than ``T_MIN``. ``triangle_index`` of the result is 0.
    """
    o, d = ray.origin, ray.direction
    ok, t, u, v = _moller_trumbore(
        o[0], o[1], o[2], d[0], d[1], d[2], *tri.a, *tri.b, *tri.c
    )
    return Hit(float(t), float(u), float(v), 0) if ok else None


def build_bvh(mesh: TriangleMesh, leaf_size: int = LEAF_SIZE) -> TriangleMesh:
    """Return a copy of ``mesh`` carrying a median-split BVH."""
    v0, v1, v2 = mesh.corners
    tlo = np.minimum(np.minimum(v0, v1), v2)
    thi = np.maximum(np.maximum(v0, v1), v2)
    if mesh.n_triangles:
        # conservative padding so slab-test rounding never rejects a true hit
        pad = 1e-9 * (1.0 + float(np.abs(mesh.vertices).max()))
        tlo = tlo - pad
        thi = thi + pad
    centroids = (v0 + v1 + v2) / 3.0
    if mesh.n_triangles == 0:
        empty = np.empty((0, 3))
        ints = np.empty(0, dtype=np.int64)
        bvh = BVH(empty, empty, ints, ints, ints, ints, ints)
    else:
        bvh = BVH(*_build(centroids, tlo, thi, leaf_size))
    if bvh.depth() > 120:
        raise RuntimeError(f"BVH depth {bvh.depth()} exceeds traversal stack")
    return replace(mesh, bvh=bvh)


def _require_bvh(mesh: TriangleMesh) -> BVH:
    if mesh.bvh is None:
        raise ValueError("mesh has no BVH; call build_bvh(mesh) first")
    return mesh.bvh


def nearest_hit(mesh: TriangleMesh, ray: Ray) -> Hit | None:
    """Closest hit with ``t >= T_MIN``; equal ``t`` resolves to the lowest face index."""
    bvh = _require_bvh(mesh)
    v0, v1, v2 = mesh.corners
    i, t, u, v = _bvh_query(
        ray.origin, ray.direction, bvh.lo, bvh.hi, bvh.left, bvh.right,
        bvh.start, bvh.count, bvh.order, v0, v1, v2,
    )
    if i < 0:
        return None
    return Hit(float(t), float(u), float(v), int(i))


def _ray_arrays(origins, directions) -> tuple[np.ndarray, np.ndarray]:
    o = np.ascontiguousarray(np.asarray(origins, dtype=np.float64).reshape(-1, 3))
    d = np.ascontiguousarray(np.asarray(directions, dtype=np.float64).reshape(-1, 3))
    if o.shape != d.shape:
        raise ValueError(f"origins {o.shape} and directions {d.shape} differ in shape")
    return o, d


def nearest_hits(mesh: TriangleMesh, origins, directions):
    """Batched :func:`nearest_hit`.

    Returns ``(triangle_index, t, u, v)`` arrays; misses have index -1 and
    ``t = inf``. Directions are used as given (callers normalize).
    """
    bvh = _require_bvh(mesh)
    o, d = _ray_arrays(origins, directions)
    v0, v1, v2 = mesh.corners
    return _bvh_query_batch(
        o, d, bvh.lo, bvh.hi, bvh.left, bvh.right, bvh.start, bvh.count, bvh.order, v0, v1, v2
    )


def scan_hits(mesh: TriangleMesh, origins, directions):
    """Exhaustive all-triangle version of :func:`nearest_hits` (no index needed)."""
    o, d = _ray_arrays(origins, directions)
    v0, v1, v2 = mesh.corners
    return _scan_query_batch(o, d, v0, v1, v2)
