import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camlab.errors import DegenerateGeometry, DimensionMismatch, EmptyPointSet
from camlab.geom3d import (
    NOISE,
    NONE_ID,
    Box,
    CameraModel,
    Cylinder,
    Pose,
    angle_between,
    dbscan,
    fit_line,
    fit_plane,
    look_at,
    project,
    quat_from_axis_angle,
    quat_rotate,
    raycast_depth,
    surface_distance,
    unproject,
    vec3,
    voxelize,
)


def cam_identity(w=8, h=6, f=10.0):
    return CameraModel(fx=f, fy=f, cx=w / 2, cy=h / 2, width=w, height=h)


# ---------------------------------------------------------------------------
# angle_between


def test_angle_identity():
    assert angle_between(vec3(0, 0, 1), vec3(0, 0, 1)) == 0.0


def test_angle_orthogonal():
    assert angle_between(vec3(1, 0, 0), vec3(0, 1, 0)) == pytest.approx(math.pi / 2)


def test_angle_45deg():
    # hand trig: (1,0,1).(0,0,1) = 1, norms sqrt(2) and 1 -> acos(1/sqrt(2))
    assert angle_between(vec3(1, 0, 1), vec3(0, 0, 1)) == pytest.approx(math.pi / 4)


def test_angle_zero_vector_rejected():
    with pytest.raises(DegenerateGeometry):
        angle_between(vec3(0, 0, 0), vec3(1, 0, 0))


@given(
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.floats(0.01, 100),
    st.floats(0.01, 100),
)
def test_angle_symmetry_and_scale(u, v, a, b):
    u = np.array(u)
    v = np.array(v)
    if np.linalg.norm(u) < 1e-6 or np.linalg.norm(v) < 1e-6:
        return
    ang = angle_between(u, v)
    if not 1e-6 < ang < math.pi - 1e-6:
        return  # acos is ill-conditioned at the parallel/antiparallel boundary
    assert ang == pytest.approx(angle_between(v, u), abs=1e-12)
    assert angle_between(a * u, b * v) == pytest.approx(ang, abs=1e-9)


# ---------------------------------------------------------------------------
# plane / line fits


def test_fit_plane_coordinate_plane():
    normal, centroid, rms = fit_plane([(0, 0, 0), (1, 0, 0), (0, 1, 0)])
    assert np.allclose(normal, [0, 0, 1])
    assert rms == pytest.approx(0.0, abs=1e-12)


def test_fit_plane_analytic_normal():
    # z = 0.2 x + 0.1 y  ->  normal proportional to (-0.2, -0.1, 1)
    rng = np.random.default_rng(0)
    xy = rng.uniform(-1, 1, size=(50, 2))
    pts = np.column_stack([xy, 0.2 * xy[:, 0] + 0.1 * xy[:, 1]])
    normal, _, rms = fit_plane(pts)
    expected = np.array([-0.2, -0.1, 1.0])
    expected /= np.linalg.norm(expected)
    assert angle_between(normal, expected) < 1e-6
    assert rms < 1e-9


def test_fit_plane_two_points_degenerate():
    with pytest.raises(DegenerateGeometry):
        fit_plane([(0, 0, 0), (1, 1, 1)])


def test_fit_plane_collinear_degenerate():
    pts = np.outer(np.linspace(0, 1, 10), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateGeometry):
        fit_plane(pts)


def test_fit_plane_rotation_invariance():
    rng = np.random.default_rng(3)
    xy = rng.uniform(-1, 1, size=(40, 2))
    pts = np.column_stack([xy, 0.3 * xy[:, 0] - 0.2 * xy[:, 1]])
    q = quat_from_axis_angle([1, 2, 3], 0.7)
    n0, _, _ = fit_plane(pts)
    n1, _, _ = fit_plane(quat_rotate(q, pts))
    n0r = quat_rotate(q, n0)
    # up to the sign convention the rotated fit equals the fit of rotated pts
    ang = min(angle_between(n0r, n1), angle_between(-n0r, n1))
    assert ang < 1e-9


def test_fit_line_axis():
    direction, _, rms = fit_line([(0, 0, 0), (0, 0, 2)])
    assert np.allclose(direction, [0, 0, 1])
    assert rms == pytest.approx(0.0, abs=1e-12)


def test_fit_line_diagonal_segment():
    t = np.linspace(0, 1, 20)[:, None]
    pts = t * np.array([1.0, 1.0, 0.0])
    direction, _, _ = fit_line(pts)
    expected = np.array([math.sqrt(2) / 2, math.sqrt(2) / 2, 0.0])
    # z = 0 tie broken toward +x
    assert np.linalg.norm(direction - expected) < 1e-9


def test_fit_line_identical_points_degenerate():
    with pytest.raises(DegenerateGeometry):
        fit_line([(1, 2, 3), (1, 2, 3), (1, 2, 3)])


# ---------------------------------------------------------------------------
# voxelize


def test_voxelize_single_point_single_cell():
    grid = voxelize([(0.5, 0.5, 0.5)], (1, 1, 1))
    assert list(grid.cells) == [(0, 0, 0)]
    assert len(grid.cells[(0, 0, 0)]) == 1


def test_voxelize_square_corners():
    pts = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0)]
    grid = voxelize(pts, (2, 2, 1))
    # hand assignment: each corner in its own quadrant
    assert sorted(grid.cells) == [(0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0)]
    for members in grid.cells.values():
        assert len(members) == 1


def test_voxelize_membership_and_partition():
    rng = np.random.default_rng(7)
    pts = rng.uniform(0, 1, size=(100, 3))
    grid = voxelize(pts, (2, 2, 1))
    seen = np.concatenate([idx for idx in grid.cells.values()])
    assert sorted(seen) == list(range(100))
    for key, idx in grid.cells.items():
        lo = grid.origin + np.array(key) * grid.cell_size
        hi = lo + grid.cell_size
        member = grid.points[idx]
        assert np.all(member >= lo - 1e-12) and np.all(member < hi + 1e-12)


def test_voxelize_empty_rejected():
    with pytest.raises(EmptyPointSet):
        voxelize(np.zeros((0, 3)), (1, 1, 1))


# ---------------------------------------------------------------------------
# dbscan vs brute-force density-connectivity oracle


def oracle_dbscan(pts: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Independent oracle: transitive closure over the eps-neighbor graph
    restricted to core points; border joins the lowest-id cluster with a core
    neighbor (clusters ordered by minimum core index)."""
    n = len(pts)
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    nb = d <= eps
    core = nb.sum(axis=1) >= min_pts
    labels = np.full(n, NOISE, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        # BFS over core-core edges
        comp = {i}
        frontier = [i]
        while frontier:
            j = frontier.pop()
            for k in np.nonzero(nb[j] & core)[0]:
                if k not in comp:
                    comp.add(int(k))
                    frontier.append(int(k))
        for j in sorted(comp):
            labels[j] = cluster
        cluster += 1
    for i in range(n):
        if labels[i] != NOISE or core[i]:
            continue
        reach = [labels[j] for j in np.nonzero(nb[i])[0] if core[j]]
        if reach:
            labels[i] = min(reach)
    return labels


def test_dbscan_two_pairs():
    pts = np.array([(0, 0, 0), (1, 0, 0), (10, 0, 0), (11, 0, 0)], dtype=float)
    lab = dbscan(pts, eps=1.0, min_pts=2)
    assert lab.n_clusters == 2
    assert np.array_equal(lab.labels, oracle_dbscan(pts, 1.0, 2))


def test_dbscan_all_close_one_cluster():
    pts = np.random.default_rng(1).normal(0, 0.01, size=(12, 3))
    lab = dbscan(pts, eps=1.0, min_pts=5)
    assert lab.n_clusters == 1
    assert np.all(lab.labels == 0)


def test_dbscan_isolated_point_noise():
    lab = dbscan(np.array([[0.0, 0.0, 0.0]]), eps=0.5, min_pts=2)
    assert lab.labels[0] == NOISE


def test_dbscan_matches_oracle_randomized():
    rng = np.random.default_rng(42)
    for _ in range(500):
        n = int(rng.integers(1, 65))
        pts = rng.uniform(0, 1, size=(n, 3)) * rng.uniform(0.5, 2.0)
        eps = float(rng.uniform(0.05, 0.5))
        min_pts = int(rng.integers(1, 6))
        got = dbscan(pts, eps, min_pts).labels
        want = oracle_dbscan(pts, eps, min_pts)
        assert np.array_equal(got, want), (n, eps, min_pts)


# ---------------------------------------------------------------------------
# raycast + unproject


def test_raycast_empty_scene():
    depth, inst, part = raycast_depth([], cam_identity())
    assert np.all(depth == 0.0)
    assert np.all(inst == NONE_ID)
    assert np.all(part == NONE_ID)


def test_raycast_unit_box_principal_pixel():
    # unit box centered 1 m ahead: near face at z = 0.5 by hand
    cam = CameraModel(fx=10, fy=10, cx=4, cy=3, width=8, height=6)
    box = Box(Pose(t=vec3(0, 0, 1)), extents=vec3(1, 1, 1), instance_id=5, part_id=2)
    depth, inst, part = raycast_depth([box], cam)
    assert depth[3, 4] == pytest.approx(0.5)
    assert inst[3, 4] == 5
    assert part[3, 4] == 2


def test_raycast_occlusion_z_order():
    cam = cam_identity(w=16, h=12, f=20.0)
    near = Box(Pose(t=vec3(0, 0, 0.8)), extents=vec3(0.5, 0.5, 0.1), instance_id=1)
    far = Box(Pose(t=vec3(0, 0, 1.5)), extents=vec3(2.0, 2.0, 0.1), instance_id=2)
    depth, inst, _ = raycast_depth([far, near], cam)
    h, w = depth.shape
    assert inst[h // 2, w // 2] == 1  # nearer box wins where they overlap
    assert inst[0, 0] == 2
    assert depth[h // 2, w // 2] == pytest.approx(0.75)


def test_raycast_cylinder_side_depth():
    cam = CameraModel(fx=50, fy=50, cx=8, cy=6, width=16, height=12)
    cyl = Cylinder(Pose(t=vec3(0, 0, 2.0)), radius=0.5, height=1.0, instance_id=3)
    depth, inst, _ = raycast_depth([cyl], cam)
    # principal ray hits the near wall at z = 2 - 0.5
    assert depth[6, 8] == pytest.approx(1.5)
    assert inst[6, 8] == 3


def test_unproject_principal_point():
    cam = cam_identity()
    depth = np.zeros((6, 8))
    mask = np.zeros((6, 8), dtype=bool)
    depth[3, 4] = 1.0
    mask[3, 4] = True
    pts = unproject(depth, mask, cam)
    assert pts.shape == (1, 3)
    assert np.allclose(pts[0], [0, 0, 1.0])


def test_unproject_empty_mask():
    cam = cam_identity()
    pts = unproject(np.ones((6, 8)), np.zeros((6, 8), dtype=bool), cam)
    assert pts.shape == (0, 3)


def test_unproject_dimension_mismatch():
    cam = cam_identity()
    with pytest.raises(DimensionMismatch):
        unproject(np.ones((5, 8)), np.zeros((5, 8), dtype=bool), cam)


def test_unproject_skips_nonpositive_depth():
    cam = cam_identity()
    depth = np.zeros((6, 8))
    mask = np.ones((6, 8), dtype=bool)
    depth[3, 4] = 1.0
    depth[2, 2] = -1.0
    pts = unproject(depth, mask, cam)
    assert pts.shape == (1, 3)


def test_unproject_raycast_box_face_residual():
    # render a box face, unproject, and measure the plane residual
    cam = CameraModel(fx=40, fy=40, cx=8, cy=6, width=16, height=12)
    box = Box(Pose(t=vec3(0, 0, 1)), extents=vec3(1, 1, 1), instance_id=1)
    depth, inst, _ = raycast_depth([box], cam)
    pts = unproject(depth, inst == 1, cam)
    assert len(pts) >= 4
    # all hits land on the near face plane z = 0.5
    assert np.max(np.abs(pts[:, 2] - 0.5)) < 1e-6


def random_scene(rng):
    prims = []
    for i in range(int(rng.integers(1, 4))):
        center = rng.uniform([-0.3, -0.3, 0.8], [0.3, 0.3, 1.6])
        q = quat_from_axis_angle(rng.normal(size=3) + 1e-3, float(rng.uniform(0, math.pi)))
        pose = Pose(q, center)
        if rng.random() < 0.5:
            prims.append(Box(pose, extents=rng.uniform(0.1, 0.4, size=3), instance_id=i))
        else:
            prims.append(
                Cylinder(
                    pose,
                    radius=float(rng.uniform(0.05, 0.2)),
                    height=float(rng.uniform(0.1, 0.4)),
                    instance_id=i,
                )
            )
    return prims


def test_unproject_raycast_consistency_random_scenes():
    # P2: every unprojected masked pixel lies on its primitive's surface
    rng = np.random.default_rng(11)
    cam = CameraModel(fx=30, fy=30, cx=10, cy=8, width=20, height=16)
    for _ in range(100):
        prims = random_scene(rng)
        depth, inst, _ = raycast_depth(prims, cam)
        for prim in prims:
            pts = unproject(depth, inst == prim.instance_id, cam)
            for p in pts:
                assert surface_distance(p, prim) < 1e-5


def test_project_round_trip():
    cam = CameraModel(fx=35, fy=35, cx=10, cy=8, width=20, height=16, pose=look_at(vec3(0.3, -0.6, 0.5), vec3(0, 0, 0)))
    world = np.array([[0.05, 0.02, 0.01], [-0.1, 0.1, 0.0]])
    px, front = project(world, cam)
    assert front.all()
    depth = np.zeros((16, 20))
    # verify projection is consistent with the camera's local z
    local = cam.pose.inverse().apply(world)
    for (u, v), lp in zip(px, local):
        x = (u - cam.cx) / cam.fx * lp[2]
        y = (v - cam.cy) / cam.fy * lp[2]
        assert np.allclose([x, y], lp[:2], atol=1e-9)
    assert depth.shape == (16, 20)


def test_project_behind_camera_flagged():
    cam = cam_identity()
    _, front = project(np.array([[0.0, 0.0, -1.0]]), cam)
    assert not front[0]


@settings(max_examples=60)
@given(st.integers(0, 2**31 - 1))
def test_voxelize_partition_property(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(0, 1, size=(int(rng.integers(1, 40)), 3))
    n = tuple(int(x) for x in rng.integers(1, 4, size=3))
    grid = voxelize(pts, n)
    all_idx = np.concatenate([v for v in grid.cells.values()])
    assert sorted(all_idx.tolist()) == list(range(len(pts)))


def test_image_serialization_round_trip():
    from camlab.geom3d import deserialize_image, serialize_image

    cam = cam_identity()
    box = Box(Pose(t=vec3(0, 0, 1)), extents=vec3(1, 1, 1), instance_id=1)
    depth, inst, _ = raycast_depth([box], cam)
    flat = serialize_image(depth)
    assert flat["width"] == cam.width and flat["height"] == cam.height
    assert np.array_equal(deserialize_image(flat), depth)
    assert np.array_equal(deserialize_image(serialize_image(inst)), inst)
