"""
Convergence studies: one registered experiment per reproduced configuration,
run over a sequence of cloud sizes with per-row error capture.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.config import get_settings
from app.exceptions import ConfigError, DegenerateCellError
from app.services.fourier_model import BoxDomain, FourierBasis, WeightMode
from app.services.geometry import (
    PointCloud, SamplingMode, circle_boundary_rule, fill_distance_estimate, planar_split_boundary,
    sample_surface, voronoi_partition,
)
from app.services.integrators import Subdomain, method1_ratio, method2_integral, singular_integral
from app.services.linsolve import SolverPath
from app.services.operators import LBVariant, inv_r, log2d
from app.services.surfaces import FlatDisk, get_surface

logger = logging.getLogger(__name__)

AREA_REFERENCE = 46.6189676876957
AVG_X2_REFERENCE = 2.45884
PARABOLOID_REFERENCE = -0.634060518


class BoxConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    center: list[float]
    side_lengths: list[float]

    @model_validator(mode="after")
    def _shape(self):
        if len(self.center) != len(self.side_lengths) or len(self.center) not in (2, 3):
            raise ValueError("box center and side_lengths must both have length 2 or 3")
        if min(self.side_lengths) <= 0:
            raise ValueError("box side lengths must be positive")
        return self

    def domain(self) -> BoxDomain:
        return BoxDomain(np.array(self.center), np.array(self.side_lengths))


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    experiment: str
    surface: str = "genus_two"
    n_points: list[int]
    q: float = Field(gt=0)
    T: float = Field(gt=0)
    box: BoxConfig
    modes_per_axis: int = Field(ge=0)
    weight_mode: WeightMode = WeightMode.JOINT
    solver: SolverPath = SolverPath.V_PATH
    seed: int = 0
    sampling: SamplingMode = SamplingMode.FARTHEST_POINT
    output_path: Optional[str] = None

    x0: Optional[list[float]] = None
    augmented: bool = True
    n_seeds: int = Field(100, ge=1)
    boundary_nodes: int = Field(2000, ge=3)
    boundary_density: float = Field(40.0, gt=0)
    decomposition: Literal["planar", "voronoi"] = "planar"
    patch_half_width: Optional[float] = Field(None, gt=0)
    probe_factor: Optional[int] = Field(None, ge=1)
    lb_variant: Optional[LBVariant] = None

    @field_validator("n_points")
    @classmethod
    def _increasing(cls, v: list[int]):
        if not v or min(v) < 1:
            raise ValueError("n_points must be a non-empty list of positive counts")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("n_points must be strictly increasing")
        return v

    @field_validator("experiment")
    @classmethod
    def _registered(cls, v: str):
        if v not in EXPERIMENTS:
            raise ValueError(f"unknown experiment '{v}' (known: {sorted(EXPERIMENTS)})")
        return v

    def basis(self) -> FourierBasis:
        return FourierBasis(self.box.domain(), self.modes_per_axis, self.q, self.T, self.weight_mode)

    def results_path(self) -> Path:
        if self.output_path:
            return Path(self.output_path)
        return Path(get_settings().RESULTS_DIR) / f"{self.experiment}.csv"


class ConvergenceRow(BaseModel):
    experiment: str
    n_points: int
    seed: int
    estimate: float
    reference: float
    rel_error: float
    h_max: float
    order_est: Optional[float] = None
    wall_ms: int = 0
    baseline: Optional[float] = None
    error: Optional[str] = None


@dataclass
class Outcome:
    estimate: float
    reference: float
    h_max: float
    baseline: Optional[float] = None


Experiment = Callable[[ExperimentConfig, int], Outcome]
EXPERIMENTS: dict[str, Experiment] = {}


def register(name: str):
    def deco(fn: Experiment) -> Experiment:
        EXPERIMENTS[name] = fn
        return fn
    return deco


def _cloud(config: ExperimentConfig, domain, n: int) -> PointCloud:
    return sample_surface(domain, n, config.sampling, seed=config.seed)


def _h_max(config: ExperimentConfig, cloud: PointCloud, domain) -> float:
    factor = config.probe_factor or get_settings().PROBE_FACTOR
    return fill_distance_estimate(cloud, domain, probe_count=factor * len(cloud), seed=config.seed + 7919)


def _planar_subdomains(config: ExperimentConfig, surface, cloud: PointCloud, f) -> list[Subdomain]:
    p, c = np.array([0.0, 0.0, 1.0]), 0.0
    upper = planar_split_boundary(surface, (p, c), config.boundary_nodes, seed=config.seed, side=1)
    side = cloud.positions @ p - c > 0.0
    out = []
    for sid, (mask, quad) in enumerate(((side, upper), (~side, upper.flipped()))):
        part = cloud.subset(mask)
        out.append(Subdomain(sid, part, quad, f(part.positions)))
    return out


def _voronoi_subdomains(config: ExperimentConfig, surface, cloud: PointCloud, f) -> list[Subdomain]:
    seeds = sample_surface(surface, config.n_seeds, SamplingMode.FARTHEST_POINT, seed=config.seed + 1).positions
    partition = voronoi_partition(cloud, seeds, surface, boundary_density=config.boundary_density,
                                  seed=config.seed + 2)
    if partition.degenerate_cells:
        raise DegenerateCellError(f"Voronoi cells without cloud points: {partition.degenerate_cells}")
    out = []
    for j in range(len(seeds)):
        part = partition.cell_cloud(cloud, j)
        out.append(Subdomain(j, part, partition.boundaries[j], f(part.positions)))
    return out


def _area(config: ExperimentConfig, n: int, reference: float, default_variant: LBVariant) -> Outcome:
    surface = get_surface(config.surface)
    cloud = _cloud(config, surface, n)
    ones = lambda X: np.ones(len(X))
    if config.decomposition == "voronoi":
        subdomains = _voronoi_subdomains(config, surface, cloud, ones)
    else:
        subdomains = _planar_subdomains(config, surface, cloud, ones)
    result = method2_integral(subdomains, config.basis(), config.lb_variant or default_variant,
                              patch_half_width=config.patch_half_width)
    return Outcome(result.integral, reference, _h_max(config, cloud, surface))


@register("avg_x2")
def avg_x2(config: ExperimentConfig, n: int) -> Outcome:
    surface = get_surface(config.surface)
    cloud = _cloud(config, surface, n)
    x2 = cloud.positions[:, 0] ** 2
    result = method1_ratio(cloud, x2, np.ones(n), config.basis(), config.lb_variant or LBVariant.NEUMANN_PAIR,
                           solver=config.solver)
    return Outcome(result.ratio, AVG_X2_REFERENCE, _h_max(config, cloud, surface), baseline=float(x2.mean()))


@register("planar_area")
def planar_area(config: ExperimentConfig, n: int) -> Outcome:
    return _area(config.model_copy(update={"decomposition": "planar"}), n, AREA_REFERENCE,
                 LBVariant.WITH_CURVATURE)


@register("voronoi_area")
def voronoi_area(config: ExperimentConfig, n: int) -> Outcome:
    return _area(config.model_copy(update={"decomposition": "voronoi"}), n, AREA_REFERENCE,
                 LBVariant.NEUMANN_PAIR)


@register("sphere_sanity")
def sphere_sanity(config: ExperimentConfig, n: int) -> Outcome:
    return _area(config.model_copy(update={"surface": "sphere"}), n, 4.0 * math.pi, LBVariant.WITH_CURVATURE)


@register("disk_log")
def disk_log(config: ExperimentConfig, n: int) -> Outcome:
    x0 = np.array(config.x0 or [0.0, 0.0], dtype=float)
    disk = FlatDisk(center=np.zeros(2), radius=1.0)
    cloud = _cloud(config, disk, n)
    r = np.linalg.norm(cloud.positions - x0, axis=1)
    rhs = -np.log(r) / (2.0 * np.pi)
    boundary = circle_boundary_rule(np.zeros(2), 1.0)
    estimate = singular_integral(cloud, x0, rhs, config.basis(), boundary,
                                 augmentation=log2d(x0) if config.augmented else None, lb_variant=LBVariant.FLAT)
    return Outcome(estimate, 0.25 - float(x0 @ x0) / 4.0, _h_max(config, cloud, disk))


@register("paraboloid_singular")
def paraboloid_singular(config: ExperimentConfig, n: int) -> Outcome:
    surface = get_surface("paraboloid")
    x0 = np.array(config.x0 or [0.0, 0.0, 1.0], dtype=float)
    cloud = _cloud(config, surface, n)
    r = np.linalg.norm(cloud.positions - x0, axis=1)
    rhs = -1.0 / (4.0 * np.pi * r)
    boundary = circle_boundary_rule(np.zeros(3), 1.0, surface=surface)
    estimate = singular_integral(cloud, x0, rhs, config.basis(), boundary,
                                 augmentation=inv_r(x0) if config.augmented else None,
                                 lb_variant=config.lb_variant or LBVariant.WITH_CURVATURE)
    return Outcome(estimate, PARABOLOID_REFERENCE, _h_max(config, cloud, surface))


DEFAULT_CONFIGS: dict[str, dict] = {
    "avg_x2": dict(experiment="avg_x2", surface="genus_two", n_points=[400, 800, 1600], q=10.0 / 3.0, T=12.0,
                   box=dict(center=[0, 0, 0], side_lengths=[10, 10, 10]), modes_per_axis=81,
                   weight_mode="separable", solver="phi_path"),
    "voronoi_area": dict(experiment="voronoi_area", surface="genus_two", n_points=[2560, 5120], q=5.0, T=5.0,
                         box=dict(center=[0, 0, 0], side_lengths=[1, 1, 1]), modes_per_axis=11,
                         weight_mode="joint", n_seeds=100, patch_half_width=0.25, lb_variant="neumann_pair"),
    "planar_area": dict(experiment="planar_area", surface="genus_two", n_points=[640, 1280, 2560, 5120], q=5.0,
                        T=10.0, box=dict(center=[0, 0, 0], side_lengths=[10, 6, 2]), modes_per_axis=13,
                        weight_mode="joint", boundary_nodes=2000),
    "disk_log": dict(experiment="disk_log", surface="disk", n_points=[250, 500, 1000, 2000], q=4.0, T=10.0,
                     box=dict(center=[0, 0], side_lengths=[4, 4]), modes_per_axis=30, weight_mode="joint",
                     x0=[0.0, 0.0]),
    "paraboloid_singular": dict(experiment="paraboloid_singular", surface="paraboloid", n_points=[320, 640, 1280],
                                q=4.0, T=10.0, box=dict(center=[0, 0, 0], side_lengths=[4, 4, 4]),
                                modes_per_axis=11, weight_mode="joint", x0=[0.0, 0.0, 1.0]),
    "sphere_sanity": dict(experiment="sphere_sanity", surface="sphere", n_points=[500, 1000], q=5.0, T=10.0,
                          box=dict(center=[0, 0, 0], side_lengths=[4, 4, 4]), modes_per_axis=13,
                          weight_mode="joint", boundary_nodes=400, n_seeds=10),
}


def default_config(name: str, **overrides) -> ExperimentConfig:
    if name not in DEFAULT_CONFIGS:
        raise ConfigError(f"unknown experiment '{name}' (known: {sorted(DEFAULT_CONFIGS)})")
    return ExperimentConfig(**{**DEFAULT_CONFIGS[name], **overrides})


def estimate_order(errors, h_values) -> list[Optional[float]]:
    """p_k = ln(e_{k-1}/e_k) / ln(h_{k-1}/h_k); None for the first entry and non-positive errors."""
    if len(errors) != len(h_values):
        raise ValueError("errors and h_values must have equal length")
    out: list[Optional[float]] = [None] * len(errors)
    for k in range(1, len(errors)):
        e0, e1, h0, h1 = errors[k - 1], errors[k], h_values[k - 1], h_values[k]
        vals = (e0, e1, h0, h1)
        if any(v is None or not np.isfinite(v) or v <= 0 for v in vals) or h0 == h1:
            continue
        out[k] = math.log(e0 / e1) / math.log(h0 / h1)
    return out


def _run_row(config: ExperimentConfig, n: int) -> ConvergenceRow:
    fn = EXPERIMENTS[config.experiment]
    start = time.perf_counter()
    try:
        out = fn(config, n)
    except Exception as exc:
        logger.exception("%s failed at n=%d", config.experiment, n)
        return ConvergenceRow(experiment=config.experiment, n_points=n, seed=config.seed, estimate=math.nan,
                              reference=math.nan, rel_error=math.nan, h_max=math.nan,
                              wall_ms=int(1000 * (time.perf_counter() - start)),
                              error=f"{type(exc).__name__}: {exc}")
    rel = abs(out.estimate - out.reference) / abs(out.reference)
    row = ConvergenceRow(experiment=config.experiment, n_points=n, seed=config.seed, estimate=out.estimate,
                         reference=out.reference, rel_error=rel, h_max=out.h_max,
                         wall_ms=int(1000 * (time.perf_counter() - start)), baseline=out.baseline)
    logger.info("%s n=%d estimate=%.12g rel_error=%.3e h_max=%.4g", config.experiment, n, out.estimate, rel,
                out.h_max)
    return row


def run_convergence(config: ExperimentConfig, threads: int | None = None, out_dir: str | Path | None = None,
                    write: bool = True) -> list[ConvergenceRow]:
    """One row per cloud size; failures are recorded on their row and the rest still run."""
    threads = threads or get_settings().THREADS
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda n: _run_row(config, n), config.n_points))
    else:
        rows = [_run_row(config, n) for n in config.n_points]

    orders = estimate_order([r.rel_error if r.error is None else math.nan for r in rows],
                            [r.h_max for r in rows])
    for row, p in zip(rows, orders):
        row.order_est = p
    if write:
        from app.utils.io import write_results
        path = config.results_path()
        if out_dir is not None:
            path = Path(out_dir) / path.name
        write_results(rows, path, config)
    return rows
