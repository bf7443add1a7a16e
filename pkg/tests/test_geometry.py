import numpy as np
import pytest
from app.exceptions import ComponentError, ProjectionError, SamplingError
from app.services.geometry import (
    BoundaryQuadrature, PatchFrame, SamplingMode, circle_boundary_rule, fill_distance_estimate, normal_and_curvature,
    planar_split_boundary, planar_trio_weights, project_to_surface, sample_surface, trio_weights, voronoi_partition,
)
from app.services.surfaces import FlatDisk, LevelSetSurface, genus_two, paraboloid, plane_z, sphere


def test_project_sphere_radial():
    y = project_to_surface(np.array([2.0, 0.0, 0.0]), sphere())
    assert np.allclose(y, [1.0, 0.0, 0.0], atol=1e-12)

def test_project_fixed_point():
    x = np.array([0.0, 0.0, 1.0])
    assert np.array_equal(project_to_surface(x, sphere()), x)

def test_project_genus_two_residual():
    s = genus_two()
    y = project_to_surface(np.array([0.0, 0.0, 2.0]), s)
    assert abs(s.value(y)) <= 1e-12

def test_project_without_root_fails():
    s = LevelSetSurface(
        name="no_root",
        value=lambda x: np.einsum("...i,...i->...", x, x) + 1.0,
        gradient=lambda x: 2.0 * np.asarray(x),
        hessian=lambda x: np.broadcast_to(2.0 * np.eye(3), np.shape(x)[:-1] + (3, 3)),
        sample_lo=-np.ones(3), sample_hi=np.ones(3),
    )
    with pytest.raises(ProjectionError) as info:
        project_to_surface(np.array([0.3, 0.2, 0.1]), s)
    assert info.value.last_iterate.shape == (3,)

def test_sphere_curvature(unit_sphere):
    R = 2.0
    s = sphere(R)
    cloud = sample_surface(s, 100, SamplingMode.RANDOM, seed=4)
    n, kappa = normal_and_curvature(s, cloud.positions)
    assert np.allclose(kappa, 2.0 / R, atol=1e-10)
    assert np.allclose(n, cloud.positions / R, atol=1e-10)

def test_plane_curvature():
    n, kappa = normal_and_curvature(plane_z(), np.array([0.3, -0.2, 0.0]))
    assert kappa == 0.0
    assert np.array_equal(n, [0.0, 0.0, 1.0])

def test_genus_two_curvature_matches_normal_divergence():
    s = genus_two()
    cloud = sample_surface(s, 5, SamplingMode.RANDOM, seed=2)
    h = 1e-5

    def unit_normal(x):
        g = s.gradient(x)
        return g / np.linalg.norm(g)

    for x in cloud.positions:
        div = sum((unit_normal(x + h * e)[i] - unit_normal(x - h * e)[i]) / (2 * h) for i, e in enumerate(np.eye(3)))
        _, kappa = normal_and_curvature(s, x)
        assert abs(kappa - div) < 1e-6

def test_sample_single_point(unit_sphere):
    cloud = sample_surface(unit_sphere, 1, seed=0)
    assert len(cloud) == 1
    assert abs(unit_sphere.value(cloud.positions[0])) <= 1e-12

def test_sample_rejects_empty_request(unit_sphere):
    with pytest.raises(SamplingError):
        sample_surface(unit_sphere, 0)

@pytest.mark.parametrize("mode", list(SamplingMode))
def test_sample_deterministic(mode):
    s = genus_two()
    a = sample_surface(s, 50, mode, seed=5)
    b = sample_surface(s, 50, mode, seed=5)
    assert np.array_equal(a.positions, b.positions)
    assert np.all(np.abs(s.value(a.positions)) <= 1e-10)
    assert np.allclose(np.linalg.norm(a.normals, axis=1), 1.0, atol=1e-12)

def test_irregular_oversamples_small_x():
    cloud = sample_surface(genus_two(), 200, SamplingMode.IRREGULAR, seed=1)
    assert np.sum(np.abs(cloud.positions[:, 0]) < 1.0) >= 100

def test_disk_sampling_inside():
    disk = FlatDisk(center=np.zeros(2), radius=1.0)
    cloud = sample_surface(disk, 100, seed=3)
    assert cloud.positions.shape == (100, 2)
    assert np.all(np.linalg.norm(cloud.positions, axis=1) < 1.0)
    assert cloud.normals is None

@pytest.mark.parametrize("seed", range(10))
def test_farthest_point_covers_better_than_random(unit_sphere, seed):
    fp = sample_surface(unit_sphere, 400, SamplingMode.FARTHEST_POINT, seed=seed)
    rnd = sample_surface(unit_sphere, 400, SamplingMode.RANDOM, seed=seed)
    h_fp = fill_distance_estimate(fp, unit_sphere, probe_count=20000, seed=99)
    h_rnd = fill_distance_estimate(rnd, unit_sphere, probe_count=20000, seed=99)
    assert h_fp < h_rnd

def test_fill_distance_self_cover(unit_sphere):
    cloud = sample_surface(unit_sphere, 500, SamplingMode.RANDOM, seed=3)
    assert fill_distance_estimate(cloud, unit_sphere, probe_count=500, seed=3) == 0.0

def test_fill_distance_octahedron(unit_sphere):
    from app.services.geometry import PointCloud
    pts = np.vstack([np.eye(3), -np.eye(3)])
    h = fill_distance_estimate(PointCloud(positions=pts, n_interior=6), unit_sphere, probe_count=100000, seed=0)
    exact = np.sqrt(2.0 - 2.0 / np.sqrt(3.0))
    assert h <= exact + 1e-12
    assert abs(h - 0.9194) < 5e-3

def test_fill_distance_non_increasing_under_insertion(unit_sphere):
    cloud = sample_surface(unit_sphere, 400, seed=8)
    first_half = cloud.subset(np.arange(200))
    h_small = fill_distance_estimate(first_half, unit_sphere, probe_count=20000, seed=1)
    h_full = fill_distance_estimate(cloud, unit_sphere, probe_count=20000, seed=1)
    assert h_full <= h_small


# trio rule

def _circle(center, R, theta):
    return np.array([center[0] + R * np.cos(theta), center[1] + R * np.sin(theta), center[2]])

@pytest.mark.parametrize("coeffs", [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (1.0, 2.0, 3.0)])
def test_trio_exact_for_quadratics_in_angle(coeffs):
    center, R = np.array([1.0, -1.0, 0.5]), 2.0
    thetas = np.array([-0.3, 0.1, 0.5])
    pts = [_circle(center, R, t) for t in thetas]
    left, right, radius = trio_weights(*pts)
    assert abs(radius - R) < 1e-12
    c0, c1, c2 = coeffs
    f = c0 + c1 * thetas + c2 * thetas ** 2
    lo, hi = thetas[0], thetas[2]
    exact = R * (c0 * (hi - lo) + c1 * (hi ** 2 - lo ** 2) / 2 + c2 * (hi ** 3 - lo ** 3) / 3)
    assert abs((left + right) @ f - exact) <= 1e-12
    mid = thetas[1]
    exact_left = R * (c0 * (mid - lo) + c1 * (mid ** 2 - lo ** 2) / 2 + c2 * (mid ** 3 - lo ** 3) / 3)
    assert abs(left @ f - exact_left) <= 1e-12

def test_trio_line_branch():
    a, b, c = np.array([0.0, 0, 0]), np.array([1.0, 0, 0]), np.array([2.5, 0, 0])
    left, right, radius = trio_weights(a, b, c)
    assert radius == np.inf
    assert abs(left.sum() - 1.0) < 1e-12
    assert abs(right.sum() - 1.5) < 1e-12
    # f = x^2 along the segment
    xs = np.array([0.0, 1.0, 2.5])
    assert abs((left + right) @ xs ** 2 - 2.5 ** 3 / 3) < 1e-12

def test_too_few_boundary_nodes():
    with pytest.raises(ComponentError):
        planar_trio_weights(np.array([[0.0, 0, 0], [1.0, 0, 0]]))

def test_planar_split_sphere_circumference(unit_sphere):
    quad = planar_split_boundary(unit_sphere, (np.array([0.0, 0, 1]), 0.0), 200, seed=0)
    assert abs(quad.weights.sum() - 2 * np.pi) < 1e-4
    assert np.all(np.abs(quad.nodes[:, 2]) <= 1e-10)
    assert np.all(np.abs(unit_sphere.value(quad.nodes)) <= 1e-10)
    assert np.all(np.abs(np.einsum("ij,ij->i", quad.conormals, quad.normals)) < 1e-8)
    # outward from the upper half points down
    assert np.allclose(quad.conormals[:, 2], -1.0, atol=1e-8)
    assert np.allclose(quad.flipped().conormals[:, 2], 1.0, atol=1e-8)
    assert set(quad.piece_ids) == {0}

def test_planar_split_genus_two_components():
    quad = planar_split_boundary(genus_two(), (np.array([0.0, 0, 1]), 0.0), 600, seed=0)
    ids = quad.piece_ids
    assert len(set(ids)) == 3
    lengths = sorted(quad.weights[ids == k].sum() for k in set(ids))
    # the two hole loops mirror each other under x -> -x
    assert abs(lengths[0] - lengths[1]) / lengths[1] < 1e-3
    assert lengths[2] > lengths[1]

def test_circle_rule_on_paraboloid():
    quad = circle_boundary_rule(np.zeros(3), 1.0, 100, surface=paraboloid())
    theta = 2 * np.pi * np.arange(100) / 100
    expected = np.column_stack([np.cos(theta), np.sin(theta), -2.0 * np.ones(100)]) / np.sqrt(5.0)
    assert np.allclose(quad.conormals, expected, atol=1e-12)
    assert abs(quad.weights.sum() - 2 * np.pi) < 1e-12


# Voronoi

def test_voronoi_single_seed(unit_sphere, sphere_cloud):
    part = voronoi_partition(sphere_cloud, [[0.0, 0.0, 1.0]], unit_sphere)
    assert np.all(part.labels == 0)
    assert len(part.boundaries[0]) == 0

def test_voronoi_two_seeds_great_circle(unit_sphere):
    cloud = sample_surface(unit_sphere, 200, seed=1)
    part = voronoi_partition(cloud, [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]], unit_sphere, probe_count=200)
    assert np.array_equal(part.labels, (cloud.positions[:, 2] < 0).astype(int))
    top = part.boundaries[0]
    assert np.all(np.abs(top.nodes[:, 2]) <= 1e-10)
    assert abs(top.weights.sum() - 2 * np.pi) < 1e-8
    assert np.allclose(top.conormals[:, 2], -1.0, atol=1e-8)
    assert np.allclose(part.boundaries[1].conormals, -top.conormals)

def test_voronoi_octahedral_cells(unit_sphere):
    cloud = sample_surface(unit_sphere, 300, seed=2)
    seeds = np.vstack([np.eye(3), -np.eye(3)])
    part = voronoi_partition(cloud, seeds, unit_sphere, boundary_density=30.0, probe_count=600)
    assert not part.degenerate_cells
    edge = np.arccos(1.0 / 3.0)
    for j in range(6):
        quad = part.boundaries[j]
        assert abs(quad.weights.sum() - 4 * edge) < 1e-6
        assert np.all(np.abs(np.einsum("ij,ij->i", quad.conormals, quad.normals)) < 1e-8)
        # conormals point away from the cell's own seed
        assert np.all(quad.conormals @ seeds[j] < 0)
    again = voronoi_partition(cloud, seeds, unit_sphere, boundary_density=30.0, probe_count=600)
    assert np.array_equal(part.labels, again.labels)
    assert np.bincount(part.labels).sum() == len(cloud)

def assert_cell_closed(quad: BoundaryQuadrature, tol: float = 1e-6):
    arcs = [quad.nodes[quad.piece_ids == pid] for pid in np.unique(quad.piece_ids)]
    for i, nodes in enumerate(arcs):
        others = np.array([end for m, other in enumerate(arcs) if m != i for end in (other[0], other[-1])])
        matched = [len(others) > 0 and np.min(np.linalg.norm(others - z, axis=1)) < tol
                   for z in (nodes[0], nodes[-1])]
        if all(matched):
            continue
        # a loop with no corners
        gap = np.linalg.norm(np.diff(nodes, axis=0), axis=1).max()
        assert not any(matched)
        assert np.linalg.norm(nodes[-1] - nodes[0]) <= 1.5 * gap

def test_voronoi_cells_close_on_genus_two():
    s = genus_two()
    cloud = sample_surface(s, 500, seed=0)
    seeds = sample_surface(s, 100, seed=1).positions
    part = voronoi_partition(cloud, seeds, s, boundary_density=10.0)
    for j in range(len(seeds)):
        quad = part.boundaries[j]
        if j not in part.degenerate_cells:
            assert len(quad) > 0
        assert_cell_closed(quad)

def test_voronoi_random_sphere_cells_close(unit_sphere):
    cloud = sample_surface(unit_sphere, 400, seed=4)
    seeds = sample_surface(unit_sphere, 10, seed=5).positions
    part = voronoi_partition(cloud, seeds, unit_sphere, boundary_density=20.0)
    for quad in part.boundaries.values():
        assert_cell_closed(quad)
        assert np.all(np.abs(np.linalg.norm(quad.nodes, axis=1) - 1.0) < 1e-10)
    # each arc bounds two cells; Euler on the sphere gives 3 * (cells - 2) arcs
    arcs = sum(len(np.unique(q.piece_ids)) for q in part.boundaries.values()) // 2
    assert arcs == 3 * (len(seeds) - 2)

@pytest.mark.slow
def test_voronoi_genus_two_conormal_audit():
    s = genus_two()
    cloud = sample_surface(s, 2000, seed=0)
    seeds = sample_surface(s, 100, seed=1).positions
    part = voronoi_partition(cloud, seeds, s)
    for j, quad in part.boundaries.items():
        if not len(quad):
            continue
        d = np.linalg.norm(quad.nodes[:, None, :] - seeds[None, :, :], axis=2)
        gap = np.abs(d - d[:, [j]])
        gap[:, j] = np.inf
        k = np.argmin(gap, axis=1)
        p = seeds[k] - seeds[j]
        t = np.cross(quad.normals, p)
        t /= np.linalg.norm(t, axis=1)[:, None]
        assert np.all(np.abs(np.einsum("ij,ij->i", quad.conormals, quad.normals)) < 1e-8)
        assert np.all(np.abs(np.einsum("ij,ij->i", quad.conormals, t)) < 1e-8)
        assert np.all(np.einsum("ij,ij->i", quad.conormals, p) > 0)


def test_patch_frame_fits_half_width(unit_sphere, sphere_cloud):
    upper = sphere_cloud.subset(sphere_cloud.positions[:, 2] > 0.5)
    frame = PatchFrame.fit(upper.positions, 0.25)
    moved = frame.cloud(upper)
    assert np.abs(moved.positions).max() == pytest.approx(0.25)
    assert np.allclose(moved.kappa, 2.0 / frame.scale)
    quad = circle_boundary_rule(np.zeros(3), 1.0, 40, surface=paraboloid())
    scaled = frame.quadrature(quad)
    assert scaled.weights.sum() == pytest.approx(2 * np.pi * frame.scale)
    assert np.array_equal(scaled.conormals, quad.conormals)

def test_concatenate_quadratures():
    a = circle_boundary_rule(np.zeros(2), 1.0, 10)
    b = circle_boundary_rule(np.array([3.0, 0.0]), 0.5, 6)
    both = BoundaryQuadrature.concatenate([a, b], dim=2)
    assert len(both) == 16
    assert both.normals is None
    assert both.weights.sum() == pytest.approx(3 * np.pi)
    assert len(BoundaryQuadrature.concatenate([], dim=2)) == 0
