"""
Weighted truncated Fourier series on a box and the constraint matrices built
from it.

Basis functions are e_n(x) = d_n^{-1/2} exp(i w_n . x) with w_n = 2 pi k / L per
axis, k = -N..N. The weights d_n are positive and symmetric under w -> -w,
either a product of per-axis factors (separable) or a function of |w| (joint).

V has one row per functional F_j with V[j, n] = F_j(e_n). In the real form the
columns are [sqrt(2) Re V_half, sqrt(2) Im V_half, V_0], where V_half holds the
modes whose first nonzero k is positive; VV^T then equals the complex VV^*.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from app.config import get_settings
from app.exceptions import AnchorOutsideBoxError
from app.services.operators import (
    Functional, SingularAugmentation, anchors_of, augment_rows, coefficient_matrix, multi_indices,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoxDomain:
    center: np.ndarray
    side_lengths: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "side_lengths", np.asarray(self.side_lengths, dtype=float))
        if self.center.shape != self.side_lengths.shape or not np.all(self.side_lengths > 0):
            raise ValueError("box needs matching center/side_lengths with positive sides")

    @classmethod
    def cube(cls, half_width: float, dim: int = 3) -> "BoxDomain":
        return cls(np.zeros(dim), np.full(dim, 2.0 * half_width))

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.side_lengths / 2.0

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.side_lengths / 2.0

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.all((x > self.lo) & (x < self.hi), axis=1)


class WeightMode(str, Enum):
    SEPARABLE = "separable"
    JOINT = "joint"


@dataclass(frozen=True)
class FourierBasis:
    box: BoxDomain
    modes_per_axis: int
    q: float
    T: float
    weight_mode: WeightMode = WeightMode.SEPARABLE

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def n_modes(self) -> int:
        return (2 * self.modes_per_axis + 1) ** self.dim

    @property
    def _floor(self) -> float:
        return float(np.exp(self.q * np.sqrt(2.0 * np.pi / self.T)))

    def axis_integers(self) -> np.ndarray:
        return np.arange(-self.modes_per_axis, self.modes_per_axis + 1)

    def axis_frequencies(self, axis: int) -> np.ndarray:
        return 2.0 * np.pi * self.axis_integers() / self.box.side_lengths[axis]

    def axis_weights(self, axis: int) -> np.ndarray:
        w = self.axis_frequencies(axis)
        return (self._floor + np.exp(self.q * np.sqrt(np.abs(w)))) ** 2

    @cached_property
    def integer_modes(self) -> np.ndarray:
        k = self.axis_integers()
        grids = np.meshgrid(*([k] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @cached_property
    def frequencies(self) -> np.ndarray:
        return 2.0 * np.pi * self.integer_modes / self.box.side_lengths

    @cached_property
    def weights(self) -> np.ndarray:
        if self.weight_mode == WeightMode.SEPARABLE:
            d = np.ones(self.n_modes)
            idx = self.integer_modes + self.modes_per_axis
            for a in range(self.dim):
                d *= self.axis_weights(a)[idx[:, a]]
            return d
        norm = np.linalg.norm(self.frequencies, axis=1)
        return (self._floor + np.exp(self.q * np.sqrt(norm))) ** 2

    @cached_property
    def half_mask(self) -> np.ndarray:
        """Modes whose first nonzero integer component is positive."""
        k = self.integer_modes
        nz = k != 0
        first = np.argmax(nz, axis=1)
        lead = k[np.arange(len(k)), first]
        return nz.any(axis=1) & (lead > 0)

    @cached_property
    def zero_index(self) -> int:
        return int(np.flatnonzero(~np.any(self.integer_modes != 0, axis=1))[0])

    def synthesize(self, coefficients: np.ndarray, x: np.ndarray) -> np.ndarray:
        """u(x) = sum_n a_n d_n^{-1/2} exp(i w_n . x) for complex-form coefficients."""
        E = np.exp(1j * np.atleast_2d(x) @ self.frequencies.T)
        return E @ (coefficients / np.sqrt(self.weights))


def kernel_1d(omega: np.ndarray, d: np.ndarray, orders: tuple[int, int], delta, right=None):
    """
    sum_k d_k^{-1} (i w_k)^p (-i w_k)^q exp(i w_k delta). With `right` given,
    `delta` holds left positions and the result is the (left, right) matrix
    at delta = x_l - y_r, formed as one product of exponential factors.
    """
    p, q = orders
    omega = np.asarray(omega, dtype=float)
    factor = (1j * omega) ** p * (-1j * omega) ** q / np.asarray(d, dtype=float)
    if right is None:
        delta = np.asarray(delta, dtype=float)
        return np.exp(1j * np.multiply.outer(delta, omega)) @ factor
    EL = np.exp(1j * np.outer(np.asarray(delta, dtype=float), omega))
    ER = np.exp(-1j * np.outer(np.asarray(right, dtype=float), omega))
    return (EL * factor) @ ER.T


def check_anchors(functionals: Sequence[Functional], box: BoxDomain) -> None:
    if not functionals:
        return
    X = anchors_of(functionals)
    inside = box.contains(X)
    if not inside.all():
        bad = X[np.flatnonzero(~inside)[0]]
        raise AnchorOutsideBoxError(f"anchor {bad.tolist()} lies outside the basis box")


def _symbols(basis: FourierBasis, indices, freqs: np.ndarray) -> np.ndarray:
    """(len(indices), modes) matrix of (i w)^alpha."""
    out = np.ones((len(indices), len(freqs)), dtype=complex)
    for r, alpha in enumerate(indices):
        for a, k in enumerate(alpha):
            if k:
                out[r] *= (1j * freqs[:, a]) ** k
    return out


def design_matrix(functionals: Sequence[Functional], basis: FourierBasis, real_form: bool | None = None,
                  block_rows: int | None = None) -> np.ndarray:
    """Rows F_j(e_n) over all modes, assembled in row blocks."""
    s = get_settings()
    real_form = s.REAL_FORM if real_form is None else real_form
    block_rows = block_rows or s.BLOCK_ROWS
    check_anchors(functionals, basis.box)
    indices = multi_indices(basis.dim)
    C = coefficient_matrix(functionals, indices)
    X = anchors_of(functionals).reshape(len(functionals), basis.dim)

    if real_form:
        half = np.flatnonzero(basis.half_mask)
        cols = np.concatenate([half, [basis.zero_index]])
    else:
        cols = np.arange(basis.n_modes)
    freqs = basis.frequencies[cols]
    scale = 1.0 / np.sqrt(basis.weights[cols])
    sym = _symbols(basis, indices, freqs)

    n_half = len(cols) - 1
    out = np.empty((len(functionals), 2 * n_half + 1 if real_form else len(cols)),
                   dtype=float if real_form else complex)
    for start in range(0, len(functionals), block_rows):
        stop = min(start + block_rows, len(functionals))
        block = np.exp(1j * X[start:stop] @ freqs.T) * (C[start:stop] @ sym) * scale
        if real_form:
            out[start:stop, :n_half] = np.sqrt(2.0) * block[:, :n_half].real
            out[start:stop, n_half:2 * n_half] = np.sqrt(2.0) * block[:, :n_half].imag
            out[start:stop, -1] = block[:, -1].real
        else:
            out[start:stop] = block
    return out


def real_to_complex(coefficients: np.ndarray, basis: FourierBasis) -> np.ndarray:
    """Map real-form coefficients to the equivalent complex-form vector."""
    half = np.flatnonzero(basis.half_mask)
    n_half = len(half)
    k = basis.integer_modes
    lookup = {tuple(row): i for i, row in enumerate(k)}
    mirror = np.array([lookup[tuple(-k[i])] for i in half])
    a = np.zeros(basis.n_modes, dtype=complex)
    re, im = coefficients[:n_half], coefficients[n_half:2 * n_half]
    a[half] = (re - 1j * im) / np.sqrt(2.0)
    a[mirror] = (re + 1j * im) / np.sqrt(2.0)
    a[basis.zero_index] = coefficients[-1]
    return a


@dataclass
class PhiStats:
    """Counts per-axis kernel terms touched while forming Phi."""
    kernel_terms: int = 0
    blocks: int = 0


def _cross_design(left, right, basis, real_form, block_rows):
    DL = design_matrix(left, basis, real_form, block_rows)
    DR = DL if right is None else design_matrix(right, basis, real_form, block_rows)
    return DL @ DR.conj().T


def assemble_phi(left: Sequence[Functional], basis: FourierBasis, right: Optional[Sequence[Functional]] = None,
                 stats: PhiStats | None = None, block_rows: int | None = None) -> np.ndarray:
    """
    Phi[j, l] = sum_n F_j(e_n) conj(G_l(e_n)). With separable weights
    this factorises into per-axis kernels; (i w)^p (-i w)^q = (-1)^q (i w)^(p+q),
    so five kernels of orders (r, 0), r <= 4, cover every term pair.
    """
    block_rows = block_rows or get_settings().BLOCK_ROWS
    check_anchors(left, basis.box)
    if right is not None:
        check_anchors(right, basis.box)
    if basis.weight_mode != WeightMode.SEPARABLE:
        phi = _cross_design(left, right, basis, False, block_rows)
        return _finish(phi, right is None)

    symmetric = right is None
    right = left if right is None else right
    indices = multi_indices(basis.dim)
    CL = coefficient_matrix(left, indices)
    CR = coefficient_matrix(right, indices)
    used_l = np.flatnonzero(np.any(CL != 0, axis=0))
    used_r = np.flatnonzero(np.any(CR != 0, axis=0))
    XL = anchors_of(left).reshape(len(left), basis.dim)
    XR = anchors_of(right).reshape(len(right), basis.dim)

    axes = [(basis.axis_frequencies(a), basis.axis_weights(a)) for a in range(basis.dim)]

    phi = np.zeros((len(left), len(right)), dtype=complex)
    for start in range(0, len(left), block_rows):
        stop = min(start + block_rows, len(left))
        B = stop - start
        S = []
        for a, (w, d) in enumerate(axes):
            S.append([kernel_1d(w, d, (r, 0), XL[start:stop, a], XR[:, a]) for r in range(5)])
            if stats is not None:
                stats.kernel_terms += 5 * B * len(right) * len(w)
        for ia in used_l:
            alpha = indices[ia]
            acc = np.zeros((B, len(right)), dtype=complex)
            for ib in used_r:
                beta = indices[ib]
                term = np.ones((B, len(right)), dtype=complex)
                for a in range(basis.dim):
                    p, q = alpha[a], beta[a]
                    term *= (-1) ** q * S[a][p + q]
                acc += CR[:, ib] * term
            phi[start:stop] += CL[start:stop, ia][:, None] * acc
        if stats is not None:
            stats.blocks += 1
    return _finish(phi, symmetric)


def _finish(phi: np.ndarray, symmetric: bool) -> np.ndarray:
    if symmetric:
        phi = 0.5 * (phi + phi.conj().T)
    if np.iscomplexobj(phi):
        return phi.real.copy()
    return phi


@dataclass
class ConstraintSystem:
    functionals: list[Functional]
    targets: np.ndarray
    basis: FourierBasis
    augmentation: Optional[SingularAugmentation] = None
    real_form: bool = True
    _V: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.functionals)

    @property
    def materialized(self) -> bool:
        return self._V is not None

    @property
    def V(self) -> np.ndarray:
        if self._V is None:
            self._V = self.design(self.functionals)
        return self._V

    def design(self, functionals: Sequence[Functional]) -> np.ndarray:
        """Rows of any functionals in this system's parametrisation (augmented block included)."""
        plain = design_matrix(functionals, self.basis, self.real_form)
        if self.augmentation is None:
            return plain
        products = [augment_rows(F, self.augmentation)[1] for F in functionals]
        return np.hstack([plain, design_matrix(products, self.basis, self.real_form)])

    def phi(self, right: Optional[Sequence[Functional]] = None, stats: PhiStats | None = None) -> np.ndarray:
        """Kernel matrix of the constraint rows, or cross kernel against `right` probes."""
        if self.augmentation is None:
            if right is None:
                return assemble_phi(self.functionals, self.basis, stats=stats)
            return assemble_phi(right, self.basis, right=self.functionals, stats=stats)
        if right is None:
            return _finish(self.V @ self.V.conj().T, True)
        return _finish(self.design(right) @ self.V.conj().T, False)


def assemble_system(functionals: Sequence[Functional], targets, basis: FourierBasis,
                    augmentation: Optional[SingularAugmentation] = None, real_form: bool | None = None,
                    materialize: bool = True) -> ConstraintSystem:
    real_form = get_settings().REAL_FORM if real_form is None else real_form
    functionals = list(functionals)
    targets = np.asarray(targets, dtype=float)
    if len(targets) != len(functionals):
        raise ValueError(f"{len(functionals)} functionals but {len(targets)} targets")
    check_anchors(functionals, basis.box)
    if augmentation is not None:
        for F in functionals:
            augment_rows(F, augmentation)
    system = ConstraintSystem(functionals, targets, basis, augmentation, real_form)
    if materialize:
        _ = system.V
        logger.info("assembled V: %d rows x %d columns (%s form%s)", *system.V.shape,
                    "real" if real_form else "complex", ", augmented" if augmentation else "")
        dump_matrix("V", system.V)
    return system


def dump_matrix(name: str, matrix: np.ndarray) -> Optional[Path]:
    """Write `matrix` to DUMP_DIR/<name>.npy when DUMP_DIR is configured."""
    target = get_settings().DUMP_DIR
    if not target:
        return None
    path = Path(target)
    path.mkdir(parents=True, exist_ok=True)
    out = path / f"{name}.npy"
    np.save(out, np.ascontiguousarray(matrix))
    logger.debug("dumped %s %s to %s", name, matrix.shape, out)
    return out
