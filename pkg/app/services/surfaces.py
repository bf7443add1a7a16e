"""
Built-in implicit surfaces and flat domains.

Every callable is vectorised over a trailing axis of length 3, so `value`
maps (..., 3) -> (...), `gradient` (..., 3) -> (..., 3) and `hessian`
(..., 3) -> (..., 3, 3).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional
import numpy as np

Field3 = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LevelSetSurface:
    name: str
    value: Field3
    gradient: Field3
    hessian: Field3
    # axis-aligned box that contains the surface piece, used for candidate draws
    sample_lo: np.ndarray = field(repr=False)
    sample_hi: np.ndarray = field(repr=False)
    # restricts the zero set to the piece of interest (e.g. z >= 0)
    region: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    dim: int = 3

    def in_region(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.region is None:
            return np.ones(x.shape[:-1], dtype=bool)
        return np.asarray(self.region(x), dtype=bool)


@dataclass(frozen=True)
class FlatDisk:
    center: np.ndarray
    radius: float = 1.0
    name: str = "disk"
    dim: int = 2

    @property
    def sample_lo(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float) - self.radius

    @property
    def sample_hi(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float) + self.radius

    def contains(self, x: np.ndarray) -> np.ndarray:
        d = np.asarray(x, dtype=float) - np.asarray(self.center, dtype=float)
        return np.einsum("...i,...i->...", d, d) < self.radius ** 2

    @property
    def area(self) -> float:
        return float(np.pi * self.radius ** 2)

    @property
    def perimeter(self) -> float:
        return float(2.0 * np.pi * self.radius)


def _split(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0], x[..., 1], x[..., 2]


def _stack_hessian(hxx, hyy, hzz, hxy, hxz, hyz):
    row0 = np.stack([hxx, hxy, hxz], axis=-1)
    row1 = np.stack([hxy, hyy, hyz], axis=-1)
    row2 = np.stack([hxz, hyz, hzz], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def sphere(radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> LevelSetSurface:
    c = np.asarray(center, dtype=float)

    def value(x):
        d = np.asarray(x, dtype=float) - c
        return np.einsum("...i,...i->...", d, d) - radius ** 2

    def gradient(x):
        return 2.0 * (np.asarray(x, dtype=float) - c)

    def hessian(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(2.0 * np.eye(3), x.shape[:-1] + (3, 3)).copy()

    pad = 1.05 * radius
    return LevelSetSurface(
        name="sphere", value=value, gradient=gradient, hessian=hessian,
        sample_lo=c - pad, sample_hi=c + pad,
    )


def plane_z(half_width: float = 1.0) -> LevelSetSurface:
    """phi = z, sampled over the square |x|, |y| <= half_width."""
    def value(x):
        return np.asarray(x, dtype=float)[..., 2].copy()

    def gradient(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        g[..., 2] = 1.0
        return g

    def hessian(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (3, 3))

    return LevelSetSurface(
        name="plane", value=value, gradient=gradient, hessian=hessian,
        sample_lo=np.array([-half_width, -half_width, -0.5]),
        sample_hi=np.array([half_width, half_width, 0.5]),
    )


def genus_two() -> LevelSetSurface:
    """
    phi = 1/(4((x-1)^2+y^2)) + 1/(4((x+1)^2+y^2)) + x^2/10 + y^2/4 + z^2 - 1
    """
    def value(x):
        X, Y, Z = _split(x)
        r1 = (X - 1.0) ** 2 + Y ** 2
        r2 = (X + 1.0) ** 2 + Y ** 2
        return 0.25 / r1 + 0.25 / r2 + X ** 2 / 10.0 + Y ** 2 / 4.0 + Z ** 2 - 1.0

    def gradient(x):
        X, Y, Z = _split(x)
        r1 = (X - 1.0) ** 2 + Y ** 2
        r2 = (X + 1.0) ** 2 + Y ** 2
        gx = -(X - 1.0) / (2.0 * r1 ** 2) - (X + 1.0) / (2.0 * r2 ** 2) + X / 5.0
        gy = -Y / (2.0 * r1 ** 2) - Y / (2.0 * r2 ** 2) + Y / 2.0
        gz = 2.0 * Z
        return np.stack([gx, gy, gz], axis=-1)

    def hessian(x):
        X, Y, Z = _split(x)
        hxx = np.full_like(X, 0.2)
        hyy = np.full_like(X, 0.5)
        hxy = np.zeros_like(X)
        for a in (1.0, -1.0):
            dx = X - a
            r = dx ** 2 + Y ** 2
            hxx = hxx - 0.5 / r ** 2 + 2.0 * dx ** 2 / r ** 3
            hyy = hyy - 0.5 / r ** 2 + 2.0 * Y ** 2 / r ** 3
            hxy = hxy + 2.0 * dx * Y / r ** 3
        zero = np.zeros_like(X)
        return _stack_hessian(hxx, hyy, np.full_like(X, 2.0), hxy, zero, zero)

    return LevelSetSurface(
        name="genus_two", value=value, gradient=gradient, hessian=hessian,
        sample_lo=np.array([-3.4, -2.1, -1.05]),
        sample_hi=np.array([3.4, 2.1, 1.05]),
    )


def paraboloid() -> LevelSetSurface:
    """phi = z + x^2 + y^2 - 1 restricted to z >= 0; its boundary is the unit circle."""
    def value(x):
        X, Y, Z = _split(x)
        return Z + X ** 2 + Y ** 2 - 1.0

    def gradient(x):
        X, Y, Z = _split(x)
        return np.stack([2.0 * X, 2.0 * Y, np.ones_like(Z)], axis=-1)

    def hessian(x):
        X, _, _ = _split(x)
        zero = np.zeros_like(X)
        two = np.full_like(X, 2.0)
        return _stack_hessian(two, two, zero, zero, zero, zero)

    return LevelSetSurface(
        name="paraboloid", value=value, gradient=gradient, hessian=hessian,
        sample_lo=np.array([-1.05, -1.05, -0.05]),
        sample_hi=np.array([1.05, 1.05, 1.05]),
        region=lambda x: np.asarray(x)[..., 2] >= 0.0,
    )


SURFACES: dict[str, Callable[[], LevelSetSurface]] = {
    "sphere": sphere,
    "plane": plane_z,
    "genus_two": genus_two,
    "paraboloid": paraboloid,
}

# basis box (center, side lengths) used by the `weights` command per surface
DEFAULT_BOXES: dict[str, tuple[tuple[float, ...], tuple[float, ...]]] = {
    "sphere": ((0.0, 0.0, 0.0), (4.0, 4.0, 4.0)),
    "plane": ((0.0, 0.0, 0.0), (4.0, 4.0, 4.0)),
    "genus_two": ((0.0, 0.0, 0.0), (10.0, 10.0, 10.0)),
    "paraboloid": ((0.0, 0.0, 0.0), (4.0, 4.0, 4.0)),
    "disk": ((0.0, 0.0), (4.0, 4.0)),
}


def get_surface(name: str) -> LevelSetSurface:
    from app.exceptions import ConfigError
    try:
        return SURFACES[name]()
    except KeyError:
        raise ConfigError(f"unknown surface '{name}' (known: {sorted(SURFACES)})") from None


def get_domain(name: str) -> "LevelSetSurface | FlatDisk":
    """A built-in surface, or the unit disk for "disk"."""
    if name == "disk":
        return FlatDisk(center=np.zeros(2), radius=1.0)
    return get_surface(name)
