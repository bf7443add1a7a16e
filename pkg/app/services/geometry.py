"""
Point clouds on implicit surfaces and flat domains, fill-distance estimates,
and boundary quadratures for surface decompositions (planar split and
Euclidean Voronoi cells).
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from app.config import get_settings
from app.exceptions import (
    ComponentError, DegenerateCellError, DegeneratePointError, ProjectionError, SamplingError,
)
from app.services.surfaces import FlatDisk, LevelSetSurface

logger = logging.getLogger(__name__)

Domain = Union[LevelSetSurface, FlatDisk]


class SamplingMode(str, Enum):
    FARTHEST_POINT = "farthest_point"
    RANDOM = "random"
    IRREGULAR = "irregular"


@dataclass(frozen=True)
class SurfacePoint:
    position: np.ndarray
    normal: Optional[np.ndarray] = None
    curvature_sum: Optional[float] = None


@dataclass(frozen=True)
class PointCloud:
    positions: np.ndarray
    normals: Optional[np.ndarray] = None
    kappa: Optional[np.ndarray] = None
    n_interior: int = 0
    n_boundary: int = 0
    seed: int = 0

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def points(self) -> list[SurfacePoint]:
        return [self[i] for i in range(len(self))]

    def __getitem__(self, i: int) -> SurfacePoint:
        return SurfacePoint(
            position=self.positions[i],
            normal=None if self.normals is None else self.normals[i],
            curvature_sum=None if self.kappa is None else float(self.kappa[i]),
        )

    def subset(self, mask) -> "PointCloud":
        idx = np.flatnonzero(np.asarray(mask)) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return PointCloud(
            positions=self.positions[idx],
            normals=None if self.normals is None else self.normals[idx],
            kappa=None if self.kappa is None else self.kappa[idx],
            n_interior=len(idx),
            n_boundary=0,
            seed=self.seed,
        )


@dataclass(frozen=True)
class BoundaryQuadrature:
    nodes: np.ndarray
    conormals: np.ndarray
    weights: np.ndarray
    piece_ids: np.ndarray
    # surface normals at the nodes; None on flat domains
    normals: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def flipped(self) -> "BoundaryQuadrature":
        """Same curve seen from the subdomain on the other side."""
        return replace(self, conormals=-self.conormals)

    @classmethod
    def empty(cls, dim: int = 3) -> "BoundaryQuadrature":
        z = np.zeros((0, dim))
        return cls(nodes=z, conormals=z.copy(), weights=np.zeros(0), piece_ids=np.zeros(0, dtype=int),
                   normals=z.copy())

    @classmethod
    def concatenate(cls, parts: list["BoundaryQuadrature"], dim: int = 3) -> "BoundaryQuadrature":
        if not parts:
            return cls.empty(dim)
        return cls(
            nodes=np.concatenate([q.nodes for q in parts]),
            conormals=np.concatenate([q.conormals for q in parts]),
            weights=np.concatenate([q.weights for q in parts]),
            piece_ids=np.concatenate([q.piece_ids for q in parts]),
            normals=None if any(q.normals is None for q in parts) else np.concatenate([q.normals for q in parts]),
        )


# Projection and differential geometry

def _newton(surface: LevelSetSurface, X: np.ndarray, tol: float, max_iter: int):
    X = np.array(X, dtype=float, copy=True)
    phi = surface.value(X)
    active = np.abs(phi) > tol
    for _ in range(max_iter):
        if not active.any():
            break
        xa = X[active]
        g = surface.gradient(xa)
        gg = np.einsum("ij,ij->i", g, g)
        bad = ~(gg > 0.0)
        gg[bad] = np.nan
        X[active] = xa - (phi[active] / gg)[:, None] * g
        phi[active] = surface.value(X[active])
        active = np.abs(phi) > tol
        active &= np.isfinite(phi)
    ok = np.abs(phi) <= tol
    return X, phi, ok


def project_points(X, surface: LevelSetSurface, tol: float | None = None, max_iter: int | None = None):
    """Vectorised Newton projection. Returns (points, converged mask); failures are left unprojected."""
    s = get_settings()
    X, _, ok = _newton(surface, np.atleast_2d(X), tol or s.PROJECTION_TOL, max_iter or s.PROJECTION_MAX_ITER)
    return X, ok


def project_to_surface(x, surface: LevelSetSurface, tol: float | None = None, max_iter: int | None = None) -> np.ndarray:
    s = get_settings()
    X, phi, ok = _newton(surface, np.atleast_2d(np.asarray(x, dtype=float)), tol or s.PROJECTION_TOL,
                         max_iter or s.PROJECTION_MAX_ITER)
    if not ok[0]:
        raise ProjectionError(X[0], abs(phi[0]))
    return X[0]


def project_to_curve(X, surface: LevelSetSurface, p, c: float, tol: float | None = None,
                     max_iter: int | None = None):
    """
    Minimum-norm Newton onto S ∩ {p·x = c}. Returns (points, converged mask).
    """
    s = get_settings()
    tol = tol or s.PROJECTION_TOL
    max_iter = max_iter or s.PROJECTION_MAX_ITER
    p = np.asarray(p, dtype=float)
    X = np.array(np.atleast_2d(X), dtype=float, copy=True)
    for _ in range(max_iter):
        r0 = surface.value(X)
        r1 = X @ p - c
        done = (np.abs(r0) <= tol) & (np.abs(r1) <= tol)
        if done.all():
            return X, done
        g = surface.gradient(X)
        gg = np.einsum("ij,ij->i", g, g)
        gp = g @ p
        det = gg - gp ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            lam0 = (r0 - gp * r1) / det
            lam1 = (gg * r1 - gp * r0) / det
        step = lam0[:, None] * g + lam1[:, None] * p
        step[done] = 0.0
        X = X - step
    r0 = surface.value(X)
    r1 = X @ p - c
    ok = (np.abs(r0) <= tol) & (np.abs(r1) <= tol) & np.isfinite(r0)
    return X, ok


def normal_and_curvature(surface: LevelSetSurface, x):
    """
    Unit normal grad(phi)/|grad(phi)| and curvature sum
    kappa = (lap(phi) - n^T D2phi n) / |grad(phi)|. Accepts one point or an (n, 3) array.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    g = surface.gradient(X)
    gn = np.linalg.norm(g, axis=1)
    if not np.all(gn > 1e-300):
        raise DegeneratePointError(f"vanishing level-set gradient at {X[~(gn > 1e-300)][0].tolist()}")
    n = g / gn[:, None]
    H = surface.hessian(X)
    kappa = (np.trace(H, axis1=1, axis2=2) - np.einsum("ni,nij,nj->n", n, H, n)) / gn
    if single:
        return n[0], float(kappa[0])
    return n, kappa


def tangent_conormal(normal, plane_normal):
    """t ∝ n_S × n_P and conormal ∝ t × n_S (= plane normal projected on the tangent plane)."""
    n = np.atleast_2d(normal)
    p = np.asarray(plane_normal, dtype=float)
    t = np.cross(n, p)
    t /= np.linalg.norm(t, axis=1)[:, None]
    c = np.cross(t, n)
    c /= np.linalg.norm(c, axis=1)[:, None]
    return t, c


# Sampling

class _CandidatePool:
    """Buffered stream of valid candidates drawn with a single generator."""

    def __init__(self, draw: Callable[[np.random.Generator, int], np.ndarray], rng: np.random.Generator,
                 batch: int, retry_budget: int):
        self.draw = draw
        self.rng = rng
        self.batch = max(batch, 64)
        self.retry_budget = retry_budget
        self._buf = np.zeros((0, 0))

    def take(self, k: int) -> np.ndarray:
        empty = 0
        while len(self._buf) < k:
            new = self.draw(self.rng, self.batch)
            if len(new) == 0:
                empty += 1
                if empty >= self.retry_budget:
                    raise SamplingError(f"no valid candidates after {empty} consecutive batches")
                continue
            empty = 0
            self._buf = new if self._buf.size == 0 else np.concatenate([self._buf, new])
        out, self._buf = self._buf[:k], self._buf[k:]
        return out


def _surface_draw(surface: LevelSetSurface, lo, hi, keep=None):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)

    def draw(rng, count):
        X = lo + (hi - lo) * rng.random((count, 3))
        X, ok = project_points(X, surface)
        X = X[ok]
        X = X[surface.in_region(X)]
        if keep is not None:
            X = X[keep(X)]
        return X
    return draw


def _disk_draw(disk: FlatDisk, lo=None, hi=None, keep=None):
    lo = disk.sample_lo if lo is None else np.asarray(lo, dtype=float)
    hi = disk.sample_hi if hi is None else np.asarray(hi, dtype=float)

    def draw(rng, count):
        X = lo + (hi - lo) * rng.random((count, 2))
        X = X[disk.contains(X)]
        if keep is not None:
            X = X[keep(X)]
        return X
    return draw


def _farthest_insertion(pool: _CandidatePool, n: int, k: int, first: Optional[np.ndarray] = None) -> np.ndarray:
    start = pool.take(1) if first is None else np.atleast_2d(first)
    out = np.empty((n, start.shape[1]))
    m = len(start)
    out[:m] = start
    while m < n:
        cand = pool.take(k)
        d = cdist(cand, out[:m]).min(axis=1)
        out[m] = cand[int(np.argmax(d))]
        m += 1
    return out


def _sample_positions(domain: Domain, n: int, mode: SamplingMode, k: int, rng) -> np.ndarray:
    s = get_settings()
    if isinstance(domain, FlatDisk):
        make = lambda lo=None, hi=None, keep=None: _disk_draw(domain, lo, hi, keep)
    else:
        make = lambda lo=None, hi=None, keep=None: _surface_draw(
            domain, domain.sample_lo if lo is None else lo, domain.sample_hi if hi is None else hi, keep)

    pool = _CandidatePool(make(), rng, batch=4 * k, retry_budget=s.SAMPLING_RETRY_BUDGET)
    if mode == SamplingMode.RANDOM:
        return pool.take(n)
    if mode == SamplingMode.FARTHEST_POINT:
        return _farthest_insertion(pool, n, k)
    # irregular: half the budget with |x| < 1, the rest anywhere
    lo = np.array(domain.sample_lo, dtype=float)
    hi = np.array(domain.sample_hi, dtype=float)
    lo[0], hi[0] = max(lo[0], -1.0), min(hi[0], 1.0)
    inner = _CandidatePool(make(lo, hi, keep=lambda X: np.abs(X[:, 0]) < 1.0), rng, batch=4 * k,
                           retry_budget=s.SAMPLING_RETRY_BUDGET)
    n_inner = n // 2
    return np.concatenate([inner.take(n_inner), pool.take(n - n_inner)])


def sample_surface(surface: Domain, n: int, mode: SamplingMode | str = SamplingMode.FARTHEST_POINT,
                   candidates_per_point: int | None = None, seed: int = 0) -> PointCloud:
    """
    Draw `n` points on a level-set surface (projected box samples) or inside a
    flat disk. farthest_point keeps, per accepted point, the candidate of a
    fresh pool that maximises the distance to the points accepted so far.
    """
    if n < 1:
        raise SamplingError("n must be >= 1")
    mode = SamplingMode(mode)
    k = candidates_per_point or get_settings().CANDIDATES_PER_POINT
    rng = np.random.default_rng(seed)
    X = _sample_positions(surface, n, mode, k, rng)
    if isinstance(surface, FlatDisk):
        return PointCloud(positions=X, n_interior=n, seed=seed)
    normals, kappa = normal_and_curvature(surface, X)
    logger.info("sampled %d points on %s (%s, seed=%d)", n, surface.name, mode.value, seed)
    return PointCloud(positions=X, normals=normals, kappa=kappa, n_interior=n, seed=seed)


def fill_distance_estimate(cloud: PointCloud, surface: Domain, probe_count: int | None = None,
                           seed: int = 0) -> float:
    """
    max over random probes of the distance to the nearest cloud point; a lower
    bound on the true fill distance.
    """
    probe_count = probe_count or get_settings().PROBE_FACTOR * len(cloud)
    probes = sample_surface(surface, probe_count, SamplingMode.RANDOM, seed=seed).positions
    d, _ = cKDTree(cloud.positions).query(probes)
    return float(d.max())


# Trio quadrature

def _lagrange_integrals(t: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Integrals over [lo, hi] of the quadratic Lagrange basis on nodes t."""
    w = np.empty(3)
    m1 = hi - lo
    m2 = (hi ** 2 - lo ** 2) / 2.0
    m3 = (hi ** 3 - lo ** 3) / 3.0
    for i in range(3):
        a, b = t[(i + 1) % 3], t[(i + 2) % 3]
        w[i] = (m3 - (a + b) * m2 + a * b * m1) / ((t[i] - a) * (t[i] - b))
    return w


def trio_geometry(a, b, c):
    """
    Fit the circle (or line) through a trio centred at b. Returns the arc
    parameters of a and c (angle about the circle centre, or signed distance
    along the line), the length metric (radius, or 1) and the radius (inf for lines).
    """
    a, b, c = (np.asarray(v, dtype=float) for v in (a, b, c))
    if a.shape[0] == 2:
        a, b, c = (np.append(v, 0.0) for v in (a, b, c))
    u, v = a - b, c - b
    w = np.cross(u, v)
    nw = np.linalg.norm(w)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nw <= 1e-10 * nu * nv:
        e = u / nu
        return nu, float(v @ e), 1.0, math.inf
    offset = (u @ u * np.cross(v, w) + v @ v * np.cross(w, u)) / (2.0 * nw ** 2)
    R = float(np.linalg.norm(offset))
    axis = w / nw
    rb = -offset

    def angle(x):
        rx = x - (b + offset)
        return math.atan2(float(np.cross(rb, rx) @ axis), float(rb @ rx))
    return angle(a), angle(c), R, R


def trio_weights(a, b, c):
    """
    Weights on (a, b, c) exact for quadratics in the arc parameter, split into
    the sub-arc a..b and the sub-arc b..c. Returns (left, right, radius).
    """
    ta, tc, metric, radius = trio_geometry(a, b, c)
    t = np.array([ta, 0.0, tc])
    left = metric * _lagrange_integrals(t, min(ta, 0.0), max(ta, 0.0))
    right = metric * _lagrange_integrals(t, min(tc, 0.0), max(tc, 0.0))
    return left, right, radius


def ordered_arc_weights(nodes: np.ndarray, closed: bool) -> np.ndarray:
    """
    Trio rule on nodes ordered along one curve. Every interval receives the
    average of the sub-arc weights from the trios that cover it; on a closed
    loop that is half of each of the two covering trios.
    """
    M = len(nodes)
    if M < 3:
        raise ComponentError(f"curve piece with {M} nodes; at least 3 are needed")
    n_int = M if closed else M - 1
    contrib = np.zeros((n_int, M))
    count = np.zeros(n_int)
    centres = range(M) if closed else range(1, M - 1)
    for i in centres:
        prev, nxt = (i - 1) % M, (i + 1) % M
        left, right, _ = trio_weights(nodes[prev], nodes[i], nodes[nxt])
        idx = [prev, i, nxt]
        li, ri = (i - 1) % M, i
        np.add.at(contrib[li], idx, left)
        np.add.at(contrib[ri], idx, right)
        count[li] += 1
        count[ri] += 1
    return (contrib / count[:, None]).sum(axis=0)


def _opposite_neighbours(nodes: np.ndarray):
    M = len(nodes)
    tree = cKDTree(nodes)
    k = min(M, 16)
    _, idx = tree.query(nodes, k=k)
    first = idx[:, 1]
    second = np.full(M, -1)
    for j in range(M):
        d1 = nodes[j] - nodes[first[j]]
        row = idx[j, 2:]
        side = (nodes[j] - nodes[row]) @ d1 < 0.0
        if side.any():
            second[j] = row[np.argmax(side)]
            continue
        order = np.argsort(np.linalg.norm(nodes - nodes[j], axis=1))[2:]
        side = (nodes[j] - nodes[order]) @ d1 < 0.0
        if not side.any():
            raise ComponentError(f"boundary node {j} has no neighbour on its far side")
        second[j] = order[np.argmax(side)]
    return first, second


def planar_trio_weights(nodes: np.ndarray):
    """
    Trio rule on an unordered sample of one or more closed planar curves.
    Returns (weights, piece_ids).
    """
    M = len(nodes)
    if M < 3:
        raise ComponentError(f"{M} boundary nodes; at least 3 are needed")
    first, second = _opposite_neighbours(nodes)
    weights = np.zeros(M)
    nn = np.linalg.norm(nodes - nodes[first], axis=1)
    sparse = 0
    for j in range(M):
        left, right, radius = trio_weights(nodes[first[j]], nodes[j], nodes[second[j]])
        weights[[first[j], j, second[j]]] += 0.5 * (left + right)
        if nn[j] > 0.25 * radius:
            sparse += 1
    if sparse:
        logger.warning("%d of %d trios are sparse relative to the local curve radius; "
                       "trios may hop between curve components", sparse, M)
    rows = np.concatenate([np.arange(M), np.arange(M)])
    cols = np.concatenate([first, second])
    graph = coo_matrix((np.ones(2 * M), (rows, cols)), shape=(M, M))
    _, piece_ids = connected_components(graph, directed=False)
    sizes = np.bincount(piece_ids)
    if (sizes < 3).any():
        raise ComponentError(f"curve component with {sizes.min()} nodes (tangent plane intersection?)")
    return weights, piece_ids


def planar_split_boundary(surface: LevelSetSurface, plane, n_boundary: int, seed: int = 0, side: int = 1,
                          candidates_per_point: int | None = None) -> BoundaryQuadrature:
    """
    Boundary rule for S_± = {x in S: ±(p·x - c) > 0}. Conormals point out of
    the side selected by `side`.
    """
    p, c = plane
    p = np.asarray(p, dtype=float)
    p = p / np.linalg.norm(p)
    s = get_settings()
    k = candidates_per_point or s.CANDIDATES_PER_POINT
    rng = np.random.default_rng(seed)
    lo, hi = surface.sample_lo, surface.sample_hi

    def draw(rng_, count):
        X = lo + (hi - lo) * rng_.random((count, 3))
        X = X - (X @ p - c)[:, None] * p
        X, ok = project_to_curve(X, surface, p, c)
        X = X[ok]
        return X[surface.in_region(X)]

    pool = _CandidatePool(draw, rng, batch=4 * k, retry_budget=s.SAMPLING_RETRY_BUDGET)
    nodes = _farthest_insertion(pool, n_boundary, k)
    weights, piece_ids = planar_trio_weights(nodes)
    normals, _ = normal_and_curvature(surface, nodes)
    _, conormals = tangent_conormal(normals, p)
    if side > 0:
        conormals = -conormals
    logger.info("planar boundary on %s: %d nodes, %d pieces, length %.6f",
                surface.name, n_boundary, piece_ids.max() + 1, weights.sum())
    return BoundaryQuadrature(nodes=nodes, conormals=conormals, weights=weights, piece_ids=piece_ids,
                              normals=normals)


def circle_boundary_rule(center, radius: float, n_nodes: int | None = None,
                         surface: LevelSetSurface | None = None) -> BoundaryQuadrature:
    """
    Evenly spaced nodes on a circle with equal (trapezoid) weights. Planar when
    `center` has two entries; on a surface the conormal is the outward radial
    direction projected on the tangent plane.
    """
    n_nodes = n_nodes or get_settings().CIRCLE_NODES
    center = np.asarray(center, dtype=float)
    theta = 2.0 * np.pi * np.arange(n_nodes) / n_nodes
    radial = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    weights = np.full(n_nodes, 2.0 * np.pi * radius / n_nodes)
    ids = np.zeros(n_nodes, dtype=int)
    if center.shape[0] == 2:
        return BoundaryQuadrature(nodes=center + radius * radial, conormals=radial, weights=weights, piece_ids=ids)
    radial3 = np.column_stack([radial, np.zeros(n_nodes)])
    nodes = center + radius * radial3
    if surface is None:
        return BoundaryQuadrature(nodes=nodes, conormals=radial3, weights=weights, piece_ids=ids,
                                  normals=np.tile([0.0, 0.0, 1.0], (n_nodes, 1)))
    normals, _ = normal_and_curvature(surface, nodes)
    conormals = radial3 - np.einsum("ij,ij->i", radial3, normals)[:, None] * normals
    conormals /= np.linalg.norm(conormals, axis=1)[:, None]
    return BoundaryQuadrature(nodes=nodes, conormals=conormals, weights=weights, piece_ids=ids, normals=normals)


# Voronoi decomposition

@dataclass
class VoronoiPartition:
    seeds: np.ndarray
    labels: np.ndarray
    boundaries: dict[int, BoundaryQuadrature]
    degenerate_cells: list[int] = field(default_factory=list)

    def cell_cloud(self, cloud: PointCloud, j: int) -> PointCloud:
        return cloud.subset(self.labels == j)


def assign_cells(positions: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    _, labels = cKDTree(seeds).query(positions)
    return labels


class _PairTracer:
    """Traces S ∩ P_jk inside the region where seeds j and k are the two nearest."""

    def __init__(self, surface: LevelSetSurface, seeds: np.ndarray, j: int, k: int, step: float):
        self.surface = surface
        self.seeds = seeds
        self.j, self.k = j, k
        d = seeds[k] - seeds[j]
        self.p = d / np.linalg.norm(d)
        self.c = float(self.p @ (seeds[j] + seeds[k]) / 2.0)
        self.others = np.delete(seeds, [j, k], axis=0)
        self.step = step

    def margin(self, x) -> float:
        if len(self.others) == 0:
            return math.inf
        dj = np.linalg.norm(x - self.seeds[self.j])
        return float(np.min(np.linalg.norm(self.others - x, axis=1)) - dj)

    def project(self, x):
        X, ok = project_to_curve(x, self.surface, self.p, self.c)
        if not ok[0]:
            raise ProjectionError(X[0], abs(float(self.surface.value(X[0]))))
        return X[0]

    def tangent(self, x):
        n, _ = normal_and_curvature(self.surface, x)
        t = np.cross(n, self.p)
        return t / np.linalg.norm(t)

    def corner(self, inside, outside):
        lo, hi = 0.0, 1.0
        z = inside
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            z = self.project(inside + mid * (outside - inside))
            if self.margin(z) >= 0.0:
                lo = mid
            else:
                hi = mid
            if (hi - lo) * np.linalg.norm(outside - inside) < 1e-15:
                break
        return self.project(inside + lo * (outside - inside))

    def march(self, x0, sign: float, max_steps: int):
        pts = [x0]
        x, t_prev = x0, sign * self.tangent(x0)
        left_start = False
        for _ in range(max_steps):
            t = self.tangent(x)
            if t @ t_prev < 0.0:
                t = -t
            y = self.project(x + self.step * t)
            if self.margin(y) < 0.0:
                pts.append(self.corner(x, y))
                return np.array(pts), False
            dist0 = np.linalg.norm(y - x0)
            if left_start and dist0 < 1.5 * self.step:
                return np.array(pts), True
            left_start = left_start or dist0 > 3.0 * self.step
            pts.append(y)
            x, t_prev = y, t
        raise ComponentError(f"boundary trace between cells {self.j} and {self.k} did not terminate")

    def trace(self, x0, max_steps: int):
        fwd, closed = self.march(x0, 1.0, max_steps)
        if closed:
            return fwd, True
        bwd, closed = self.march(x0, -1.0, max_steps)
        if closed:
            raise ComponentError(f"inconsistent closed trace between cells {self.j} and {self.k}")
        return np.concatenate([bwd[::-1], fwd[1:]]), False


def _place_nodes(tracer: _PairTracer, poly: np.ndarray, closed: bool, density: float) -> np.ndarray:
    pts = np.vstack([poly, poly[:1]]) if closed else poly
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    L = s[-1]
    if closed:
        M = max(8, int(math.ceil(L * density)))
        targets = L * np.arange(M) / M
    else:
        M = max(5, int(math.ceil(L * density)) + 1)
        targets = L * np.arange(M) / (M - 1)
    guess = np.column_stack([np.interp(targets, s, pts[:, a]) for a in range(3)])
    nodes, ok = project_to_curve(guess, tracer.surface, tracer.p, tracer.c)
    if not ok.all():
        bad = np.flatnonzero(~ok)[0]
        raise ProjectionError(nodes[bad], abs(float(tracer.surface.value(nodes[bad]))))
    if not closed:
        nodes[0], nodes[-1] = poly[0], poly[-1]
    return nodes


def _has_end(arcs: list[tuple[np.ndarray, bool]], z: np.ndarray, tol: float) -> bool:
    return any(not closed and min(np.linalg.norm(poly[0] - z), np.linalg.norm(poly[-1] - z)) < tol
               for poly, closed in arcs)


def _leave_corner(tracer: _PairTracer, z: np.ndarray) -> np.ndarray:
    """A point of S ∩ P_jk just inside the (j, k) region next to the corner z."""
    x = tracer.project(z)
    t = tracer.tangent(x)
    h = tracer.step
    for _ in range(30):
        for sign in (1.0, -1.0):
            y = tracer.project(x + sign * h * t)
            if tracer.margin(y) > 0.0:
                return y
        h *= 0.5
    raise DegenerateCellError(f"no boundary between cells {tracer.j} and {tracer.k} leaves corner {z}")


def _close_corners(arcs: dict[tuple[int, int], list[tuple[np.ndarray, bool]]], surface: LevelSetSurface,
                   seeds: np.ndarray, step: float, max_steps: int, tol: float) -> int:
    """
    Every open arc ends at a corner shared with a third cell l, where the pairs
    (j, l) and (k, l) must also end. Trace those arcs from the corner until no
    open end is left unmatched. Returns the number of arcs added.
    """
    n_cells = len(seeds)
    if n_cells < 3:
        return 0
    tree = cKDTree(seeds)
    queue = [(pair, end) for pair, polys in arcs.items() for poly, closed in polys if not closed
             for end in (poly[0], poly[-1])]
    added, max_arcs = 0, 10 * n_cells * n_cells
    while queue:
        (j, k), z = queue.pop()
        _, near = tree.query(z, k=3)
        l = next(int(i) for i in near if i not in (j, k))
        for pair in (tuple(sorted((j, l))), tuple(sorted((k, l)))):
            polys = arcs.setdefault(pair, [])
            if _has_end(polys, z, tol):
                continue
            if added >= max_arcs:
                raise DegenerateCellError(f"Voronoi corner closure exceeded {max_arcs} arcs")
            tracer = _PairTracer(surface, seeds, pair[0], pair[1], step)
            poly, closed = tracer.trace(_leave_corner(tracer, z), max_steps)
            polys.append((poly, closed))
            added += 1
            if not closed:
                queue.extend([(pair, poly[0]), (pair, poly[-1])])
    return added


def _check_closed(arcs: dict[tuple[int, int], list[tuple[np.ndarray, bool]]], n_cells: int,
                  degenerate: list[int], tol: float) -> None:
    """Each open end of a cell's boundary must meet an end of another of its arcs."""
    ends: dict[int, list[tuple[int, np.ndarray]]] = {c: [] for c in range(n_cells)}
    has_arc = np.zeros(n_cells, dtype=bool)
    arc_id = 0
    for (j, k), polys in arcs.items():
        for poly, closed in polys:
            has_arc[[j, k]] = True
            if not closed:
                for cell in (j, k):
                    ends[cell].extend([(arc_id, poly[0]), (arc_id, poly[-1])])
            arc_id += 1
    for cell in range(n_cells):
        if not has_arc[cell] and cell not in degenerate:
            raise DegenerateCellError(f"Voronoi cell {cell} has no boundary")
        pts = ends[cell]
        for a, (_, z) in enumerate(pts):
            if not any(b != a and np.linalg.norm(w - z) < tol for b, (_, w) in enumerate(pts)):
                raise DegenerateCellError(f"Voronoi cell {cell} boundary is open at {z}")


def voronoi_partition(cloud: PointCloud, seeds, surface: LevelSetSurface, boundary_density: float = 40.0,
                      probe_count: int | None = None, seed: int = 0) -> VoronoiPartition:
    """
    Euclidean Voronoi cells of `seeds` restricted to S. Cell boundaries are the
    pieces of S ∩ (bisector plane) between shared corners; each piece gets
    nodes evenly spaced in arclength (`boundary_density` per unit length) and
    trio weights. Conormals point away from the cell's own seed.

    Arcs are first traced from points near each bisector, then from every
    corner whose neighbouring arcs are still missing, so each cell boundary
    closes; an open boundary raises DegenerateCellError.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    n_cells = len(seeds)
    if len(np.unique(seeds, axis=0)) != n_cells:
        raise DegenerateCellError("Voronoi seeds must be pairwise distinct")
    labels = assign_cells(cloud.positions, seeds)
    degenerate = [j for j in range(n_cells) if not np.any(labels == j)]
    for j in degenerate:
        logger.warning("Voronoi cell %d holds no cloud points", j)
    if n_cells == 1:
        return VoronoiPartition(seeds, labels, {0: BoundaryQuadrature.empty()}, degenerate)

    probe_count = probe_count or 50 * n_cells
    probes = np.concatenate([cloud.positions,
                             sample_surface(surface, probe_count, SamplingMode.RANDOM, seed=seed).positions])
    d, idx = cKDTree(seeds).query(probes, k=2)
    order = np.argsort(d[:, 1] - d[:, 0])
    starts: dict[tuple[int, int], list[np.ndarray]] = {}
    for i in order:
        key = (int(min(idx[i])), int(max(idx[i])))
        bucket = starts.setdefault(key, [])
        if len(bucket) < 24:
            bucket.append(probes[i])

    step = 1.0 / (4.0 * boundary_density)
    tol = 0.5 * step
    diameter = float(np.linalg.norm(surface.sample_hi - surface.sample_lo))
    max_steps = int(20.0 * diameter / step) + 100
    arcs: dict[tuple[int, int], list[tuple[np.ndarray, bool]]] = {}
    for (j, k) in sorted(starts):
        tracer = _PairTracer(surface, seeds, j, k, step)
        polys = arcs.setdefault((j, k), [])
        for x in starts[(j, k)]:
            X, ok = project_to_curve(x, surface, tracer.p, tracer.c)
            if not ok[0] or not surface.in_region(X)[0]:
                continue
            x0 = X[0]
            if tracer.margin(x0) <= 0.0:
                continue
            if any(np.min(np.linalg.norm(a - x0, axis=1)) < 2.0 * step for a, _ in polys):
                continue
            polys.append(tracer.trace(x0, max_steps))
    added = _close_corners(arcs, surface, seeds, step, max_steps, tol)
    _check_closed(arcs, n_cells, degenerate, tol)

    pieces: dict[int, list[BoundaryQuadrature]] = {j: [] for j in range(n_cells)}
    piece_counter = np.zeros(n_cells, dtype=int)
    for (j, k) in sorted(arcs):
        tracer = _PairTracer(surface, seeds, j, k, step)
        for poly, closed in arcs[(j, k)]:
            nodes = _place_nodes(tracer, poly, closed, boundary_density)
            weights = ordered_arc_weights(nodes, closed)
            normals, _ = normal_and_curvature(surface, nodes)
            _, conormals = tangent_conormal(normals, tracer.p)
            for cell, sign in ((j, 1.0), (k, -1.0)):
                ids = np.full(len(nodes), piece_counter[cell])
                piece_counter[cell] += 1
                pieces[cell].append(BoundaryQuadrature(nodes=nodes, conormals=sign * conormals,
                                                       weights=weights, piece_ids=ids, normals=normals))
    boundaries = {j: BoundaryQuadrature.concatenate(pieces[j]) for j in range(n_cells)}
    logger.info("Voronoi partition on %s: %d cells, %d boundary pieces (%d traced from corners)",
                surface.name, n_cells, int(piece_counter.sum()) // 2, added)
    return VoronoiPartition(seeds, labels, boundaries, degenerate)


# Patch frames

@dataclass(frozen=True)
class PatchFrame:
    """x' = scale * (x - center)."""
    center: np.ndarray
    scale: float

    @classmethod
    def fit(cls, points: np.ndarray, half_width: float) -> "PatchFrame":
        lo, hi = points.min(axis=0), points.max(axis=0)
        center = 0.5 * (lo + hi)
        extent = float(np.max(hi - lo)) / 2.0
        return cls(center=center, scale=half_width / extent if extent > 0 else 1.0)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.scale * (np.asarray(x, dtype=float) - self.center)

    def cloud(self, cloud: PointCloud) -> PointCloud:
        return replace(cloud, positions=self.apply(cloud.positions),
                       kappa=None if cloud.kappa is None else cloud.kappa / self.scale)

    def quadrature(self, quad: BoundaryQuadrature) -> BoundaryQuadrature:
        return replace(quad, nodes=self.apply(quad.nodes), weights=quad.weights * self.scale)
