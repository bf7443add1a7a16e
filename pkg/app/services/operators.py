"""
Linear differential functionals of order <= 2 anchored at a point, the
Laplace-Beltrami rows built from them, and the product-rule expansion used
when the trial space is augmented by a fixed singular factor s.

A multi-index alpha = (a_1, .., a_m) stands for d^|alpha| / dx_1^a_1 .. dx_m^a_m.
Mixed second derivatives appear once: the Hessian quadratic form n^T D2 n
contributes 2 n_i n_j to the coefficient of e_i + e_j.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from itertools import combinations_with_replacement
from math import comb
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from app.exceptions import MissingCurvatureError, SingularAnchorError, ZeroDirectionError

logger = logging.getLogger(__name__)

MultiIndex = tuple[int, ...]


def multi_indices(dim: int, max_degree: int = 2) -> list[MultiIndex]:
    """All multi-indices of total degree <= max_degree, ordered by degree."""
    out: list[MultiIndex] = []
    for degree in range(max_degree + 1):
        for axes in combinations_with_replacement(range(dim), degree):
            alpha = [0] * dim
            for a in axes:
                alpha[a] += 1
            out.append(tuple(alpha))
    return out


def unit_index(dim: int, *axes: int) -> MultiIndex:
    alpha = [0] * dim
    for a in axes:
        alpha[a] += 1
    return tuple(alpha)


@dataclass(frozen=True)
class Functional:
    anchor: np.ndarray
    terms: tuple[tuple[float, MultiIndex], ...]

    @property
    def dim(self) -> int:
        return len(self.anchor)

    @property
    def order(self) -> int:
        return max((sum(alpha) for _, alpha in self.terms), default=0)

    def coefficient(self, alpha: MultiIndex) -> float:
        for c, a in self.terms:
            if a == tuple(alpha):
                return c
        return 0.0

    def apply(self, derivative: Callable[[MultiIndex, np.ndarray], Any]) -> Any:
        """F(u) = sum_alpha c_alpha D^alpha u(anchor), given `derivative(alpha, x)`."""
        total = 0.0
        for c, alpha in self.terms:
            total = total + c * derivative(alpha, self.anchor)
        return total

    def second_order_form(self) -> np.ndarray:
        """Symmetric matrix M with sum_{|alpha|=2} c_alpha D^alpha u = tr(M D2u)."""
        M = np.zeros((self.dim, self.dim))
        for c, alpha in self.terms:
            if sum(alpha) != 2:
                continue
            axes = [a for a, k in enumerate(alpha) for _ in range(k)]
            i, j = axes
            if i == j:
                M[i, i] += c
            else:
                M[i, j] += c / 2.0
                M[j, i] += c / 2.0
        return M


def make_functional(anchor, terms: Iterable[tuple[float, Sequence[int]]]) -> Functional:
    anchor = np.asarray(anchor, dtype=float)
    merged: dict[MultiIndex, float] = {}
    for c, alpha in terms:
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != len(anchor) or min(alpha) < 0 or sum(alpha) > 2:
            raise ValueError(f"invalid multi-index {alpha} for a {len(anchor)}-dimensional anchor")
        merged[alpha] = merged.get(alpha, 0.0) + float(c)
    kept = tuple((c, a) for a, c in sorted(merged.items(), key=lambda kv: (sum(kv[0]), kv[0][::-1])) if c != 0.0)
    return Functional(anchor=anchor, terms=kept)


def evaluation(anchor) -> Functional:
    anchor = np.asarray(anchor, dtype=float)
    return make_functional(anchor, [(1.0, (0,) * len(anchor))])


def laplacian(anchor) -> Functional:
    anchor = np.asarray(anchor, dtype=float)
    m = len(anchor)
    return make_functional(anchor, [(1.0, unit_index(m, i, i)) for i in range(m)])


def directional_functional(anchor, direction) -> Functional:
    anchor = np.asarray(anchor, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if not np.linalg.norm(direction) > 0.0:
        raise ZeroDirectionError(f"zero direction at anchor {anchor.tolist()}")
    m = len(anchor)
    return make_functional(anchor, [(direction[i], unit_index(m, i)) for i in range(m)])


def gradient_functionals(anchor) -> list[Functional]:
    m = len(anchor)
    return [directional_functional(anchor, np.eye(m)[i]) for i in range(m)]


class LBVariant(str, Enum):
    WITH_CURVATURE = "with_curvature"
    NEUMANN_PAIR = "neumann_pair"
    FLAT = "flat"


def _tangential_second_order(n: np.ndarray) -> list[tuple[float, MultiIndex]]:
    m = len(n)
    terms = [(1.0 - n[i] ** 2, unit_index(m, i, i)) for i in range(m)]
    for i in range(m):
        for j in range(i + 1, m):
            terms.append((-2.0 * n[i] * n[j], unit_index(m, i, j)))
    return terms


def lb_functional(point, variant: LBVariant | str = LBVariant.WITH_CURVATURE) -> list[Functional]:
    """
    Laplace-Beltrami rows at a surface point, Delta_S u = Delta u - kappa n.grad u - n^T D2u n.

    with_curvature -> [Delta_S]
    neumann_pair   -> [Delta - n^T D2 n, n.grad]; the caller constrains the second row to 0
    flat           -> [Delta]
    """
    variant = LBVariant(variant)
    x = np.asarray(point.position, dtype=float)
    m = len(x)
    if variant == LBVariant.FLAT:
        return [laplacian(x)]
    n = np.asarray(point.normal, dtype=float)
    second = _tangential_second_order(n)
    if variant == LBVariant.WITH_CURVATURE:
        if point.curvature_sum is None:
            raise MissingCurvatureError(f"curvature sum missing at {x.tolist()}")
        first = [(-point.curvature_sum * n[i], unit_index(m, i)) for i in range(m)]
        return [make_functional(x, second + first)]
    return [make_functional(x, second), directional_functional(x, n)]


@dataclass(frozen=True)
class SingularAugmentation:
    """
    Fixed factor s, singular at `singular_point`, with analytic derivatives.
    `gradient` and `hessian` are vectorised over a leading axis like the surfaces.
    Custom factors must keep Delta s and the first derivatives of s nonzero away
    from the singular point.
    """
    name: str
    singular_point: np.ndarray
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]

    @property
    def dim(self) -> int:
        return len(self.singular_point)

    def derivative(self, alpha: MultiIndex, x) -> float:
        """D^alpha s(x) for |alpha| <= 2."""
        x = np.asarray(x, dtype=float)
        degree = sum(alpha)
        if degree == 0:
            return float(self.value(x))
        axes = [a for a, k in enumerate(alpha) for _ in range(k)]
        if degree == 1:
            return float(self.gradient(x)[axes[0]])
        return float(self.hessian(x)[axes[0], axes[1]])

    def laplacian(self, x) -> np.ndarray:
        return np.trace(self.hessian(x), axis1=-2, axis2=-1)


def _offsets(x, x0):
    d = np.asarray(x, dtype=float) - x0
    r2 = np.einsum("...i,...i->...", d, d)
    return d, r2


def log2d(x0=(0.0, 0.0)) -> SingularAugmentation:
    """s = r^2 ln r^2 with r = |x - x0|."""
    x0 = np.asarray(x0, dtype=float)
    m = len(x0)

    def value(x):
        _, r2 = _offsets(x, x0)
        return r2 * np.log(r2)

    def gradient(x):
        d, r2 = _offsets(x, x0)
        return 2.0 * d * (np.log(r2) + 1.0)[..., None]

    def hessian(x):
        d, r2 = _offsets(x, x0)
        eye = np.eye(m)
        return (2.0 * (np.log(r2) + 1.0))[..., None, None] * eye + 4.0 * np.einsum("...i,...j->...ij", d, d) / r2[..., None, None]

    return SingularAugmentation("log2d", x0, value, gradient, hessian)


def inv_r(x0=(0.0, 0.0, 1.0)) -> SingularAugmentation:
    """s = r = |x - x0|; Delta s = 2/r in three dimensions."""
    x0 = np.asarray(x0, dtype=float)
    m = len(x0)

    def value(x):
        _, r2 = _offsets(x, x0)
        return np.sqrt(r2)

    def gradient(x):
        d, r2 = _offsets(x, x0)
        return d / np.sqrt(r2)[..., None]

    def hessian(x):
        d, r2 = _offsets(x, x0)
        r = np.sqrt(r2)
        return np.eye(m) / r[..., None, None] - np.einsum("...i,...j->...ij", d, d) / (r ** 3)[..., None, None]

    return SingularAugmentation("inv_r", x0, value, gradient, hessian)


def _sub_indices(alpha: MultiIndex):
    ranges = [range(a + 1) for a in alpha]
    for beta in np.ndindex(*[len(r) for r in ranges]):
        yield tuple(int(b) for b in beta)


def augment_rows(functional: Functional, aug: SingularAugmentation) -> tuple[Functional, Functional]:
    """
    Split F(u + s v) into F(u) and the product row F(s .) via Leibniz:
    F(s v) = sum_alpha c_alpha sum_{beta <= alpha} binom(alpha, beta) D^beta s D^(alpha-beta) v.
    """
    x = functional.anchor
    if np.linalg.norm(x - aug.singular_point) <= 1e-14 * (1.0 + np.linalg.norm(aug.singular_point)):
        raise SingularAnchorError(f"collocation anchor {x.tolist()} coincides with the singular point")
    terms = []
    for c, alpha in functional.terms:
        for beta in _sub_indices(alpha):
            gamma = tuple(a - b for a, b in zip(alpha, beta))
            binom = 1
            for a, b in zip(alpha, beta):
                binom *= comb(a, b)
            terms.append((c * binom * aug.derivative(beta, x), gamma))
    return functional, make_functional(x, terms)


def coefficient_matrix(functionals: Sequence[Functional], indices: Sequence[MultiIndex]) -> np.ndarray:
    """(rows, len(indices)) matrix of term coefficients."""
    lookup = {alpha: i for i, alpha in enumerate(indices)}
    C = np.zeros((len(functionals), len(indices)))
    for r, F in enumerate(functionals):
        for c, alpha in F.terms:
            C[r, lookup[alpha]] = c
    return C


def anchors_of(functionals: Sequence[Functional]) -> np.ndarray:
    return np.array([F.anchor for F in functionals], dtype=float)
