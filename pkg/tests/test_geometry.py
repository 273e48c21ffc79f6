import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isomesh.fixtures import fixture_truth
from isomesh.geometry import (
    LocalRegion,
    TriangleMesh,
    build_icosphere,
    central_angles,
    fibonacci_sample,
    lloyd_sample,
    partition_coarse,
    patches_within,
    random_surface_points,
    select_anchors,
    vertex_normals,
)

PHI = (1 + 5 ** 0.5) / 2


def test_icosahedron_itself():
    m = build_icosphere(1)
    assert m.n_vertices == 12 and m.n_patches == 20
    assert m.euler_characteristic() == 2


@pytest.mark.parametrize("n,expected", [(16, 2562), (60, 36002)])
def test_published_vertex_counts(n, expected):
    assert build_icosphere(n).n_vertices == expected


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.floats(0.1, 100.0))
def test_counts_and_radius(n, r):
    m = build_icosphere(n, r)
    assert m.n_vertices == 10 * n * n + 2
    assert m.n_patches == 20 * n * n
    np.testing.assert_allclose(np.linalg.norm(m.vertices, axis=1), r, rtol=1e-9)


def test_counts_at_64():
    m = build_icosphere(64)
    assert (m.n_vertices, m.n_patches) == (40962, 81920)


def test_base_vertices_first():
    # the 12 corners of an icosahedron: cyclic permutations of (0, +-1, +-phi), normalized
    m = build_icosphere(5)
    corners = []
    for a in (-1, 1):
        for b in (-PHI, PHI):
            corners += [(0, a, b), (a, b, 0), (b, 0, a)]
    corners = np.array(corners) / np.sqrt(1 + PHI ** 2)
    d = np.linalg.norm(m.vertices[:12, None] - corners[None], axis=2)
    assert np.allclose(d.min(axis=1), 0, atol=1e-12)
    assert np.allclose(d.min(axis=0), 0, atol=1e-12)


def test_manifold_closed():
    m = build_icosphere(7)
    e = np.sort(np.concatenate([m.patches[:, [0, 1]], m.patches[:, [1, 2]], m.patches[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    assert np.all(counts == 2)


def test_mesh_arrays_read_only():
    m = build_icosphere(2)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0


def test_mesh_rejects_bad_index():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))


# --- anchors ----------------------------------------------------------------


def test_anchors_frequency_one():
    m = build_icosphere(1)
    a = select_anchors(m)
    assert len(a) == 32
    assert list(a[:12]) == list(range(12))


def _ray_nearest_bruteforce(m):
    out = []
    for face in m.base_faces:
        d = m.vertices[face].mean(axis=0)
        d /= np.linalg.norm(d)
        dists = []
        for v in m.vertices:
            t = max(float(v @ d), 0.0)
            dists.append(float(np.linalg.norm(v - t * d)))
        best = min(dists)
        out.append(next(i for i, x in enumerate(dists) if x <= best + 1e-9))
    return out


def test_anchors_frequency_16_against_scan():
    m = build_icosphere(16)
    a = select_anchors(m)
    assert len(set(a.tolist())) == 32
    assert a[12:].tolist() == _ray_nearest_bruteforce(m)
    e = m.edges()
    arc = np.arccos(np.clip((m.vertices[e[:, 0]] * m.vertices[e[:, 1]]).sum(1), -1, 1))
    for face, idx in zip(m.base_faces, a[12:]):
        d = m.vertices[face].mean(axis=0)
        local = arc[(e == idx).any(axis=1)].max()
        # 16 is not a multiple of 3: the ray passes through the middle of a small
        # lattice triangle, edge / sqrt(3) away from each of its corners
        assert central_angles(m.vertices[[idx]], d)[0] < 1.01 * local / np.sqrt(3)


def test_anchors_scale_invariant():
    assert np.array_equal(select_anchors(build_icosphere(9)), select_anchors(build_icosphere(9, 37.5)))


def test_anchors_need_icosphere():
    with pytest.raises(ValueError):
        select_anchors(fixture_truth("box", frequency=3))


# --- partition --------------------------------------------------------------


def test_anchor_vertex_has_weight_one():
    m = build_icosphere(16)
    for reg in partition_coarse(m, select_anchors(m)):
        k = np.flatnonzero(reg.vertex_indices == reg.anchor_index)
        assert reg.weights[k[0]] == pytest.approx(1.0)


def test_partition_boundary_rule():
    m = build_icosphere(16)
    a = select_anchors(m)
    ang = central_angles(m.vertices, m.vertices[a[0]])
    # a threshold landing exactly on a vertex's angle (large enough for coverage)
    target = int(np.flatnonzero((ang > 0.6) & (ang < 0.7))[0])
    tau = float(ang[target])
    reg = partition_coarse(m, a, tau)[0]
    assert target not in reg.vertex_indices
    inside = ang[reg.vertex_indices]
    k = int(np.argmax(inside))
    assert reg.weights[k] == pytest.approx((tau - inside[k]) / tau, abs=1e-12)
    assert reg.weights.min() > 0


def test_partition_weights_formula():
    m = build_icosphere(16)
    a = select_anchors(m)
    regions = partition_coarse(m, a, 0.55)
    for reg in regions[:5]:
        ang = central_angles(m.vertices[reg.vertex_indices], m.vertices[reg.anchor_index])
        np.testing.assert_allclose(reg.weights, 1 - ang / 0.55, atol=1e-12)
        assert np.all(ang < 0.55)
        # monotone decrease in angle
        order = np.argsort(ang)
        assert np.all(np.diff(reg.weights[order]) <= 1e-15)


def test_partition_covers_and_overlaps():
    m = build_icosphere(16)
    regions = partition_coarse(m, select_anchors(m), 0.55)
    count = np.zeros(m.n_vertices, dtype=int)
    best = np.zeros(m.n_vertices)
    for reg in regions:
        count[reg.vertex_indices] += 1
        np.maximum.at(best, reg.vertex_indices, reg.weights)
    assert np.all(count >= 1)
    assert np.any(count >= 2)
    assert np.all(best > 0)
    # patches: exactly those with all three vertices inside
    for reg in regions[:4]:
        mask = np.zeros(m.n_vertices, bool)
        mask[reg.vertex_indices] = True
        assert np.array_equal(reg.patch_indices, np.flatnonzero(mask[m.patches].all(1)))


def test_partition_coverage_failure():
    m = build_icosphere(16)
    with pytest.raises(ValueError, match="tau_a"):
        partition_coarse(m, select_anchors(m), 0.05)


def test_region_weights_validated():
    with pytest.raises(ValueError):
        LocalRegion(np.array([0, 1]), np.array([], dtype=int), np.array([0.5, 1.5]))


# --- sampling ---------------------------------------------------------------


def test_fibonacci_single_point():
    p = fibonacci_sample(2.5, 1)
    assert p.shape == (1, 3)
    assert np.linalg.norm(p[0]) == pytest.approx(2.5)


def test_fibonacci_uniformity():
    from scipy.spatial import cKDTree

    p = fibonacci_sample(1.0, 1000)
    np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0, atol=1e-9)
    d, _ = cKDTree(p).query(p, k=2)
    nn = d[:, 1]
    assert nn.std() / nn.mean() < 0.5


def test_fibonacci_count_rule():
    assert len(fibonacci_sample(1.2, 2500)) == 2500


def _single_triangle():
    v = np.array([[0.0, 0, 0], [2.0, 0, 0], [0.0, 1.0, 0]])
    return TriangleMesh(v, np.array([[0, 1, 2]])), LocalRegion(np.arange(3), np.array([0]), np.ones(3))


def test_lloyd_single_point_is_centroid():
    m, reg = _single_triangle()
    p = lloyd_sample(m, reg, 1, iterations=3, seed=4)
    np.testing.assert_allclose(p[0], m.vertices.mean(axis=0), atol=1e-9)


def test_lloyd_planar_region_stays_planar():
    m = fixture_truth("box", frequency=4)
    on_top = np.flatnonzero(np.isclose(m.vertices[:, 2], m.vertices[:, 2].max()))
    mask = np.zeros(m.n_vertices, bool)
    mask[on_top] = True
    reg = LocalRegion(on_top, patches_within(m, mask), np.ones(len(on_top)))
    p = lloyd_sample(m, reg, 100, iterations=5, seed=1)
    np.testing.assert_allclose(p[:, 2], m.vertices[:, 2].max(), atol=1e-12)


def _hemisphere():
    m = build_icosphere(12)
    mask = m.vertices[:, 2] >= -1e-12
    idx = np.flatnonzero(mask)
    return m, LocalRegion(idx, patches_within(m, mask), np.ones(len(idx)))


def test_lloyd_spreads_better_than_random():
    from scipy.spatial.distance import pdist

    m, reg = _hemisphere()
    relaxed = lloyd_sample(m, reg, 200, iterations=10, seed=3)
    random = random_surface_points(m.vertices[m.patches[reg.patch_indices]], 200, np.random.default_rng(3))
    assert pdist(relaxed).min() > pdist(random).min()


def test_lloyd_points_on_region_surface():
    from isomesh.spatial import brute_force_distances

    m, reg = _hemisphere()
    p = lloyd_sample(m, reg, 150, iterations=4, seed=0)
    d = brute_force_distances(p, m.vertices[m.patches[reg.patch_indices]])
    assert d.max() < 1e-12


def test_lloyd_scale_and_center():
    m, reg = _hemisphere()
    c = np.array([0.1, -0.2, 0.3])
    a = lloyd_sample(m, reg, 50, iterations=2, seed=5)
    b = lloyd_sample(m, reg, 50, iterations=2, seed=5, scale=2.0, center=c)
    np.testing.assert_allclose(b, 2.0 * (a - c), atol=1e-12)


def test_lloyd_zero_area():
    v = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    m = TriangleMesh(v, np.array([[0, 1, 2]]))
    with pytest.raises(ValueError, match="zero"):
        lloyd_sample(m, LocalRegion(np.arange(3), np.array([0]), np.ones(3)), 3)


# --- normals ----------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2])
def test_sphere_normals_radial_exact(n):
    m = build_icosphere(n)
    np.testing.assert_allclose(vertex_normals(m), m.vertices, atol=1e-6)


def test_sphere_normals_radial_and_outward():
    m = build_icosphere(16)
    nrm = vertex_normals(m)
    assert np.all(np.einsum("ij,ij->i", nrm, m.vertices) > 0)
    # area weighting on a non-uniform geodesic lattice leaves a small tilt
    assert np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", nrm, m.vertices), -1, 1))).max() < 0.5


def test_flipped_winding_negates_normals():
    m = build_icosphere(4)
    flipped = TriangleMesh(m.vertices, m.patches[:, ::-1])
    np.testing.assert_allclose(vertex_normals(flipped), -vertex_normals(m), atol=1e-15)


def test_ellipsoid_normals_match_gradient():
    axes = np.array([1.0, 0.75, 0.5])
    m = fixture_truth("ellipsoid", frequency=32)
    grad = m.vertices / axes ** 2
    grad /= np.linalg.norm(grad, axis=1, keepdims=True)
    ang = np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", vertex_normals(m), grad), -1, 1)))
    assert ang.max() < 2.0


def test_degenerate_normals_are_nan():
    v = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [0, 1.0, 0]])
    m = TriangleMesh(v, np.array([[0, 1, 2]]))
    assert np.isnan(vertex_normals(m)).all(axis=1)[:3].all()
