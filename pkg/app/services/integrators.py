"""
Surface integrals from collocation solves.

method1_ratio       int f / int g from the solvability of Delta_S u = f - c g
method2_integral    int f as the conormal flux of a solution of Delta_S u = f
line_integral       u(b) - u(a) for t . grad u = f along a curve
singular_integral   flux integral with the trial space augmented by s v
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from app.config import get_settings
from app.exceptions import (
    ConditioningError, EndpointError, MeshfreeError, NonUniformSpacingError, SubdomainSolveError,
)
from app.services.fourier_model import FourierBasis, assemble_system
from app.services.geometry import BoundaryQuadrature, PatchFrame, PointCloud
from app.services.linsolve import (
    SolverPath, cholesky_solve, evaluate_solution, lstsq_min_norm, min_norm_solve,
)
from app.services.operators import (
    Functional, LBVariant, SingularAugmentation, directional_functional, evaluation,
    gradient_functionals, lb_functional,
)

logger = logging.getLogger(__name__)


@dataclass
class Method1Result:
    ratio: float
    weights: Optional[np.ndarray]
    solution_norms: tuple[float, float]
    path: SolverPath = SolverPath.PHI_PATH


@dataclass
class Method2Result:
    integral: float
    per_subdomain: list[tuple[int, float]]
    solution_norm: float


@dataclass
class Subdomain:
    id: int
    cloud: PointCloud
    boundary: BoundaryQuadrature
    f_values: np.ndarray


@dataclass(frozen=True)
class CurveCloud:
    nodes: np.ndarray
    tangents: np.ndarray
    endpoints: tuple[np.ndarray, np.ndarray]


def collocation_rows(cloud: PointCloud, values, variant: LBVariant | str):
    """
    Laplace-Beltrami rows at every cloud point. Returns (functionals, targets,
    mask of rows carrying `values`); auxiliary Neumann rows target 0.
    """
    variant = LBVariant(variant)
    functionals: list[Functional] = []
    targets: list[float] = []
    primary: list[bool] = []
    values = np.asarray(values, dtype=float)
    for i, point in enumerate(cloud.points):
        rows = lb_functional(point, variant)
        functionals.extend(rows)
        targets.append(values[i])
        primary.append(True)
        for _ in rows[1:]:
            targets.append(0.0)
            primary.append(False)
    return functionals, np.array(targets), np.array(primary)


def boundary_neumann_rows(boundary: BoundaryQuadrature) -> list[Functional]:
    return [directional_functional(x, c) for x, c in zip(boundary.nodes, boundary.conormals)]


def default_boundary_count(n_interior: int, perimeter: float, area: float) -> int:
    return int(math.ceil(math.sqrt(n_interior) * perimeter / math.sqrt(area)))


def method1_ratio(cloud: PointCloud, f_values, g_values, basis: FourierBasis,
                  lb_variant: LBVariant | str = LBVariant.NEUMANN_PAIR, integral_of_g: float | None = None,
                  solver: SolverPath | str = SolverPath.PHI_PATH,
                  boundary: BoundaryQuadrature | None = None) -> Method1Result:
    """
    c = g^T Phi^-1 f / g^T Phi^-1 g, the c minimising the norm of the
    interpolant of Delta_S u = f - c g. With int g known, w = int g Phi^-1 g / (g^T Phi^-1 g)
    restricted to the Laplace-Beltrami rows gives w . f ~ int f.
    On the V path the same quantities come from two minimum-norm solves.
    """
    solver = SolverPath(solver)
    functionals, F, primary = collocation_rows(cloud, f_values, lb_variant)
    _, G, _ = collocation_rows(cloud, g_values, lb_variant)
    if boundary is not None and len(boundary):
        extra = boundary_neumann_rows(boundary)
        functionals += extra
        F = np.concatenate([F, np.zeros(len(extra))])
        G = np.concatenate([G, np.zeros(len(extra))])
        primary = np.concatenate([primary, np.zeros(len(extra), dtype=bool)])

    if solver == SolverPath.PHI_PATH:
        system = assemble_system(functionals, F, basis, materialize=False)
        phi = system.phi()
        sol, _ = cholesky_solve(phi, np.column_stack([F, G]))
        pf, pg = sol[:, 0], sol[:, 1]
        gg = float(G @ pg)
        gf = float(G @ pf)
        ff = float(F @ pf)
    else:
        system = assemble_system(functionals, F, basis)
        a_f, _ = lstsq_min_norm(system.V, F)
        a_g, _ = lstsq_min_norm(system.V, G)
        gg = float(np.real(np.vdot(a_g, a_g)))
        gf = float(np.real(np.vdot(a_g, a_f)))
        ff = float(np.real(np.vdot(a_f, a_f)))
        pg = None
    if not gg > 0.0:
        raise ConditioningError(f"g^T Phi^-1 g = {gg:.3e} is not positive")
    ratio = gf / gg

    weights = None
    if integral_of_g is not None:
        if pg is None:
            pg, _ = lstsq_min_norm(system.V.conj().T, a_g)
            pg = np.real(pg)
        # w . g equals int g up to rounding
        pg = pg[primary]
        weights = integral_of_g * pg / float(pg @ G[primary])
    logger.info("method 1 (%s, %s): %d points, %d rows, ratio %.12g",
                solver.value, LBVariant(lb_variant).value, len(cloud), len(functionals), ratio)
    return Method1Result(ratio, weights, (math.sqrt(gg), math.sqrt(max(ff, 0.0))), solver)


def boundary_flux(solution, boundary: BoundaryQuadrature) -> float:
    """sum_k w_k grad_S u(y_k) . conormal_k using axis-directional probes."""
    if len(boundary) == 0:
        return 0.0
    m = boundary.dim
    probes = [F for y in boundary.nodes for F in gradient_functionals(y)]
    grad = np.real(evaluate_solution(solution, probes)).reshape(len(boundary), m)
    if boundary.normals is not None and m == boundary.normals.shape[1]:
        n = boundary.normals
        grad = grad - np.einsum("ij,ij->i", grad, n)[:, None] * n
    return float(boundary.weights @ np.einsum("ij,ij->i", grad, boundary.conormals))


def _solve_subdomain(sub: Subdomain, basis: FourierBasis, lb_variant, patch_half_width):
    cloud, boundary, rhs = sub.cloud, sub.boundary, np.asarray(sub.f_values, dtype=float)
    if patch_half_width is not None:
        frame = PatchFrame.fit(np.vstack([cloud.positions, boundary.nodes]), patch_half_width)
        cloud, boundary = frame.cloud(cloud), frame.quadrature(boundary)
        rhs = rhs / frame.scale ** 2
    functionals, targets, _ = collocation_rows(cloud, rhs, lb_variant)
    system = assemble_system(functionals, targets, basis)
    solution = min_norm_solve(system)
    return boundary_flux(solution, boundary), solution.solution_norm


def method2_integral(subdomains: Sequence[Subdomain], basis: FourierBasis,
                     lb_variant: LBVariant | str = LBVariant.WITH_CURVATURE, threads: int | None = None,
                     patch_half_width: float | None = None) -> Method2Result:
    """
    int_S f = sum_j int_{dS_j} grad_S u_j . conormal, with u_j a minimum-norm
    solution of Delta_S u_j = f on subdomain j. No boundary conditions are imposed.
    """
    threads = threads or get_settings().THREADS
    ordered = sorted(subdomains, key=lambda s: s.id)

    def run(sub: Subdomain):
        try:
            return _solve_subdomain(sub, basis, lb_variant, patch_half_width)
        except MeshfreeError as exc:
            raise SubdomainSolveError(sub.id, exc) from exc
        except np.linalg.LinAlgError as exc:
            raise SubdomainSolveError(sub.id, exc) from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, ordered))
    else:
        results = [run(s) for s in ordered]
    per = [(s.id, flux) for s, (flux, _) in zip(ordered, results)]
    total = float(sum(flux for _, flux in per))
    norm = float(math.sqrt(sum(n ** 2 for _, n in results)))
    logger.info("method 2: %d subdomains, integral %.12g", len(per), total)
    return Method2Result(total, per, norm)


def _node_index(nodes: np.ndarray, point) -> int:
    d = np.linalg.norm(nodes - np.asarray(point, dtype=float), axis=1)
    i = int(np.argmin(d))
    if d[i] > 1e-12 * (1.0 + np.linalg.norm(point)):
        raise EndpointError(f"curve endpoint {np.asarray(point).tolist()} is not a node")
    return i


def line_integral_meshfree(curve: CurveCloud, f_values, basis: FourierBasis) -> float:
    """Solve t . grad u = f on the curve nodes and return u(b) - u(a)."""
    ia = _node_index(curve.nodes, curve.endpoints[0])
    ib = _node_index(curve.nodes, curve.endpoints[1])
    rows = [directional_functional(x, t) for x, t in zip(curve.nodes, curve.tangents)]
    solution = min_norm_solve(assemble_system(rows, f_values, basis))
    ua, ub = np.real(evaluate_solution(solution, [evaluation(curve.nodes[ia]), evaluation(curve.nodes[ib])]))
    return float(ub - ua)


def trapezoid_circle(values, radius: float = 1.0, angles=None) -> float:
    """Trapezoid rule on a circle: mean of the samples times the circumference."""
    values = np.asarray(values, dtype=float)
    if angles is not None:
        angles = np.asarray(angles, dtype=float)
        gaps = np.diff(np.append(angles, angles[0] + 2.0 * np.pi))
        if np.max(np.abs(gaps - 2.0 * np.pi / len(values))) > 1e-10:
            raise NonUniformSpacingError("circle nodes are not evenly spaced in angle")
    return float(values.mean() * 2.0 * np.pi * radius)


def singular_integral(cloud: PointCloud, x0, rhs_values, basis: FourierBasis, boundary: BoundaryQuadrature,
                      augmentation: SingularAugmentation | None = None,
                      lb_variant: LBVariant | str = LBVariant.FLAT, exclusion_radius: float = 1e-8) -> float:
    """
    int f for a right-hand side singular at x0: collocate Delta(u + s v) = f
    (or Delta_S on a surface) and integrate the flux of u + s v over the
    boundary rule. Without `augmentation` this is the plain solve. The
    augmentation must carry the singularity type of f.
    """
    x0 = np.asarray(x0, dtype=float)
    rhs_values = np.asarray(rhs_values, dtype=float)
    keep = np.linalg.norm(cloud.positions - x0, axis=1) > exclusion_radius
    if not keep.all():
        logger.warning("dropped %d collocation points within %g of the singular point",
                       int((~keep).sum()), exclusion_radius)
        cloud, rhs_values = cloud.subset(keep), rhs_values[keep]
    functionals, targets, _ = collocation_rows(cloud, rhs_values, lb_variant)
    system = assemble_system(functionals, targets, basis, augmentation=augmentation)
    solution = min_norm_solve(system)
    probes = [directional_functional(y, c) for y, c in zip(boundary.nodes, boundary.conormals)]
    flux = np.real(evaluate_solution(solution, probes))
    return float(boundary.weights @ flux)
