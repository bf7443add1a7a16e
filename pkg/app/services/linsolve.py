import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as spla

from app.config import get_settings
from app.exceptions import EmptySystemError, IllConditionedError, NonFiniteSystemError
from app.services.fourier_model import ConstraintSystem, dump_matrix
from app.services.operators import Functional

logger = logging.getLogger(__name__)


class SolverPath(str, Enum):
    V_PATH = "v_path"
    PHI_PATH = "phi_path"


@dataclass
class MinNormSolution:
    system: ConstraintSystem
    coefficients: Optional[np.ndarray]
    residual_norm: float
    solution_norm: float
    rank_estimate: int
    path: SolverPath
    # Phi-path multipliers, a = V^* beta
    beta: Optional[np.ndarray] = None


def _check(matrix: np.ndarray, rhs: np.ndarray) -> None:
    if matrix.shape[0] == 0:
        raise EmptySystemError("constraint system has no rows")
    if not (np.all(np.isfinite(matrix)) and np.all(np.isfinite(rhs))):
        raise NonFiniteSystemError("constraint matrix or targets contain non-finite entries")


def lstsq_min_norm(V: np.ndarray, f: np.ndarray, rank_tolerance: float | None = None,
                   driver: str | None = None):
    """Rank-revealing minimum-norm least squares. Returns (a, rank)."""
    s = get_settings()
    rank_tolerance = rank_tolerance or s.RANK_TOL
    driver = driver or s.SOLVER_DRIVER
    _check(V, f)
    a, _, rank, _ = spla.lstsq(V, f, cond=rank_tolerance, lapack_driver=driver, check_finite=False)
    return a, int(rank)


def min_norm_solve(system: ConstraintSystem, rank_tolerance: float | None = None,
                   driver: str | None = None, targets: np.ndarray | None = None) -> MinNormSolution:
    """
    Minimum ||a||_2 among least-squares solutions of V a = f, via a complete
    orthogonal decomposition (gelsy) or an SVD (gelsd).
    """
    f = system.targets if targets is None else np.asarray(targets)
    V = system.V
    a, rank = lstsq_min_norm(V, f, rank_tolerance, driver)
    residual = float(np.linalg.norm(V @ a - f))
    norm = float(np.linalg.norm(a))
    logger.info("v_path solve: %d x %d, rank %d, residual %.3e, norm %.6e", *V.shape, rank, residual, norm)
    return MinNormSolution(system, a, residual, norm, rank, SolverPath.V_PATH)


def cholesky_solve(phi: np.ndarray, rhs: np.ndarray, jitter: Sequence[float] | None = None):
    """
    Solve phi x = rhs by Cholesky, scaling the diagonal by (1 + eps) along the
    jitter ladder until the factorisation succeeds. Returns (x, eps).
    """
    jitter = get_settings().PHI_JITTER if jitter is None else jitter
    phi = np.asarray(phi)
    _check(phi, np.asarray(rhs))
    diag = np.diag(phi).copy()
    for eps in jitter:
        A = phi.copy()
        A[np.diag_indices_from(A)] = diag * (1.0 + eps)
        try:
            factor = spla.cho_factor(A, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        if eps > 0:
            logger.warning("Phi factorised only after diagonal jitter eps=%g", eps)
        return spla.cho_solve(factor, rhs, check_finite=False), eps
    raise IllConditionedError(f"Cholesky factorisation of Phi ({phi.shape[0]} rows) failed up to jitter {max(jitter):g}")


def phi_solve(system: ConstraintSystem, jitter: Sequence[float] | None = None,
              targets: np.ndarray | None = None) -> MinNormSolution:
    """Kernel-side solve Phi beta = f with Phi = V V^*; a = V^* beta only when V already exists."""
    f = system.targets if targets is None else np.asarray(targets)
    phi = system.phi()
    dump_matrix("Phi", phi)
    beta, _ = cholesky_solve(phi, f, jitter)
    residual = float(np.linalg.norm(phi @ beta - f))
    norm = float(np.sqrt(max(float(np.real(np.vdot(beta, phi @ beta))), 0.0)))
    a = system.V.conj().T @ beta if system.materialized else None
    logger.info("phi_path solve: %d rows, residual %.3e, norm %.6e", len(f), residual, norm)
    return MinNormSolution(system, a, residual, norm, len(f), SolverPath.PHI_PATH, beta=beta)


def evaluate_solution(solution: MinNormSolution, probes: Sequence[Functional]) -> np.ndarray:
    """F_probe(u) for each probe, including the s-weighted block when augmented."""
    probes = list(probes)
    if not probes:
        return np.zeros(0)
    system = solution.system
    if solution.path == SolverPath.PHI_PATH:
        return system.phi(right=probes) @ solution.beta
    return system.design(probes) @ solution.coefficients
