"""
Command line entry points:

  python -m app run --config exp.json [--out DIR] [--threads N]
  python -m app weights --surface genus_two --cloud cloud.csv --g-integral 46.6 --out w.csv
  python -m app sample --surface sphere --n 400 --mode farthest_point --seed 0 --out cloud.csv

Exit codes: 0 success, 1 a convergence row failed, 2 configuration error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from app.config import get_settings
from app.exceptions import ConfigError, MeshfreeError
from app.logging import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_ROW_FAILURE, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m app", description="Meshfree surface quadrature")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a convergence study from a JSON config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", type=Path, default=None, help="directory for the results CSV")
    run.add_argument("--threads", type=int, default=None)

    weights = sub.add_parser("weights", help="Method 1 quadrature weights for a point cloud")
    weights.add_argument("--surface", required=True)
    weights.add_argument("--cloud", required=True, type=Path)
    weights.add_argument("--g-integral", required=True, type=float, dest="g_integral")
    weights.add_argument("--out", required=True, type=Path)

    sample = sub.add_parser("sample", help="sample a point cloud on a built-in surface")
    sample.add_argument("--surface", required=True)
    sample.add_argument("--n", required=True, type=int)
    sample.add_argument("--mode", default="farthest_point", choices=["farthest_point", "random", "irregular"])
    sample.add_argument("--seed", type=int, default=0)
    sample.add_argument("--out", required=True, type=Path)
    return parser


def load_config(path: Path):
    from app.services.harness import ExperimentConfig
    try:
        return ExperimentConfig.model_validate(json.loads(path.read_text()))
    except (OSError, json.JSONDecodeError, ValidationError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def cmd_run(args) -> int:
    from app.services.harness import run_convergence
    config = load_config(args.config)
    rows = run_convergence(config, threads=args.threads, out_dir=args.out)
    failed = [r for r in rows if r.error]
    for r in rows:
        print(f"{r.experiment} n={r.n_points} estimate={r.estimate:.12g} rel_error={r.rel_error:.3e} "
              f"order={r.order_est if r.order_est is not None else '-'}" + (f" ERROR {r.error}" if r.error else ""))
    return EXIT_ROW_FAILURE if failed else EXIT_OK


def compute_weights(surface_name: str, cloud, g_integral: float):
    """
    Method 1 weights with g = 1 on the configured separable basis around the
    domain. Flat disks add Neumann rows on a circle with the default boundary count.
    """
    from app.services.fourier_model import BoxDomain, FourierBasis, WeightMode
    from app.services.geometry import circle_boundary_rule, normal_and_curvature
    from app.services.integrators import default_boundary_count, method1_ratio
    from app.services.operators import LBVariant
    from app.services.surfaces import DEFAULT_BOXES, FlatDisk, get_domain

    domain = get_domain(surface_name)
    s = get_settings()
    center, sides = DEFAULT_BOXES[surface_name]
    basis = FourierBasis(BoxDomain(np.array(center), np.array(sides)), s.WEIGHTS_MODES, s.WEIGHTS_Q, s.WEIGHTS_T,
                         WeightMode.SEPARABLE)
    ones = np.ones(len(cloud))
    if isinstance(domain, FlatDisk):
        if cloud.dim != 2:
            raise ConfigError("disk clouds carry two coordinates (x, y)")
        n_boundary = default_boundary_count(len(cloud), domain.perimeter, domain.area)
        boundary = circle_boundary_rule(domain.center, domain.radius, n_boundary)
        return method1_ratio(cloud, ones, ones, basis, LBVariant.FLAT, integral_of_g=g_integral,
                             boundary=boundary).weights
    if cloud.dim != 3:
        raise ConfigError(f"{surface_name} clouds carry three coordinates (x, y, z)")
    if cloud.normals is None:
        normals, kappa = normal_and_curvature(domain, cloud.positions)
        cloud = type(cloud)(positions=cloud.positions, normals=normals, kappa=kappa, n_interior=len(cloud))
    return method1_ratio(cloud, ones, ones, basis, integral_of_g=g_integral).weights


def cmd_weights(args) -> int:
    from app.utils.io import read_cloud_csv, write_weights_csv
    try:
        cloud = read_cloud_csv(args.cloud)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read cloud {args.cloud}: {exc}") from exc
    weights = compute_weights(args.surface, cloud, args.g_integral)
    write_weights_csv(cloud.positions, weights, args.out)
    print(f"wrote {len(weights)} weights to {args.out} (sum {weights.sum():.12g})")
    return EXIT_OK


def cmd_sample(args) -> int:
    from app.services.geometry import sample_surface
    from app.services.surfaces import get_domain
    from app.utils.io import write_cloud_csv
    cloud = sample_surface(get_domain(args.surface), args.n, args.mode, seed=args.seed)
    write_cloud_csv(cloud, args.out)
    print(f"wrote {len(cloud)} points to {args.out}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "weights": cmd_weights, "sample": cmd_sample}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except MeshfreeError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ROW_FAILURE


if __name__ == "__main__":
    sys.exit(main())
