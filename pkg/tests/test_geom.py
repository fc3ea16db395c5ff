import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridnbv import geom
from hybridnbv.geom import GeometryError, Planarity

from oracles import brute_hausdorff, mc_voronoi_measures, min_feasible_clusters


# ---------------------------------------------------------------------------
# Hausdorff
# ---------------------------------------------------------------------------

class TestHausdorff:
    def test_identical_sets(self):
        assert geom.hausdorff([[0, 0], [1, 1]], [[0, 0], [1, 1]]) == 0.0

    def test_single_pair(self):
        assert geom.hausdorff([[0, 0]], [[3, 4]]) == 5.0

    def test_asymmetry_resolved_by_max(self):
        a, b = [[0, 0], [10, 0]], [[0, 0]]
        assert geom.directed_hausdorff(a, b) == 10.0
        assert geom.directed_hausdorff(b, a) == 0.0
        assert geom.hausdorff(a, b) == 10.0

    def test_empty_set_rejected(self):
        with pytest.raises(GeometryError):
            geom.hausdorff(np.zeros((0, 2)), [[0, 0]])

    def test_dimension_mismatch(self):
        with pytest.raises(GeometryError):
            geom.hausdorff([[0, 0]], [[0, 0, 0]])

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        dim = 2 + seed % 2
        a = rng.normal(size=(rng.integers(1, 30), dim))
        b = rng.normal(size=(rng.integers(1, 30), dim))
        assert geom.hausdorff(a, b) == pytest.approx(brute_hausdorff(a, b), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_symmetric_and_bounded_below(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-5, 5, size=(rng.integers(1, 12), 3))
        b = rng.uniform(-5, 5, size=(rng.integers(1, 12), 3))
        h = geom.hausdorff(a, b)
        assert h == geom.hausdorff(b, a)
        assert h >= geom.directed_hausdorff(a, b)
        assert geom.hausdorff(a, a) == 0.0


# ---------------------------------------------------------------------------
# Plane fit / classification
# ---------------------------------------------------------------------------

def _normal_grid_search(pts, n=400):
    """Residual-minimising unit normal by exhaustive search over the hemisphere."""
    centred = pts - pts.mean(axis=0)
    best, best_n = np.inf, None
    for th in np.linspace(0, math.pi / 2, n):
        for ph in np.linspace(0, 2 * math.pi, 2 * n, endpoint=False):
            nv = np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])
            r = np.sum((centred @ nv) ** 2)
            if r < best:
                best, best_n = r, nv
    return best_n


class TestFitPlane:
    def test_z0(self):
        rng = np.random.default_rng(0)
        pts = np.c_[rng.uniform(size=(20, 2)), np.zeros(20)]
        p = geom.fit_plane(pts)
        assert abs(abs(p.normal[2]) - 1) < 1e-12
        assert abs(p.offset) < 1e-12

    def test_z5(self):
        rng = np.random.default_rng(1)
        pts = np.c_[rng.uniform(size=(20, 2)), np.full(20, 5.0)]
        p = geom.fit_plane(pts)
        assert abs(abs(p.normal[2]) - 1) < 1e-12
        assert p.offset * p.normal[2] == pytest.approx(5.0)

    def test_noisy_plane_matches_grid_search(self):
        rng = np.random.default_rng(2)
        true_n = np.array([0.3, -0.2, 1.0])
        true_n /= np.linalg.norm(true_n)
        u = np.cross(true_n, [1, 0, 0])
        u /= np.linalg.norm(u)
        v = np.cross(true_n, u)
        pts = (rng.uniform(-1, 1, (60, 1)) * u + rng.uniform(-1, 1, (60, 1)) * v
               + rng.normal(0, 0.01, (60, 1)) * true_n)
        fit = geom.fit_plane(pts).normal
        oracle = _normal_grid_search(pts)
        angle = math.acos(min(1.0, abs(float(fit @ oracle))))
        # grid spacing is ~0.004 rad, so agreement is bounded by the grid
        assert angle < 1e-3 + math.pi / 2 / 400

    def test_collinear_rejected(self):
        with pytest.raises(GeometryError):
            geom.fit_plane([[0, 0, 0], [1, 1, 1], [2, 2, 2], [3, 3, 3]])

    def test_too_few_points(self):
        with pytest.raises(GeometryError):
            geom.fit_plane([[0, 0, 0], [1, 0, 0]])


def _lawnmower(n=5, alt=3.0):
    xs, ys = np.meshgrid(np.linspace(-2, 2, n), np.linspace(-2, 2, n))
    return np.c_[xs.ravel(), ys.ravel(), np.full(n * n, alt)]


def _helix(n=60, r=2.0, sweep=4.0, turns=3):
    t = np.linspace(0, 2 * math.pi * turns, n)
    return np.c_[r * np.cos(t), r * np.sin(t), np.linspace(0, sweep, n)]


class TestClassifyTrajectory:
    def test_lawnmower_planar(self):
        c = geom.classify_trajectory(_lawnmower(), 0.05)
        assert c.label is Planarity.PLANAR
        assert c.hausdorff_value < 1e-9

    def test_helix_nonplanar(self):
        pts = _helix()
        c = geom.classify_trajectory(pts, 0.05)
        plane = geom.fit_plane(pts)
        # independent: the hausdorff op on the same two sets exceeds 5% of the diagonal
        h = geom.hausdorff(pts, plane.project(pts))
        diag = np.linalg.norm(pts.max(0) - pts.min(0))
        assert h > 0.05 * diag
        assert c.label is Planarity.NONPLANAR

    def test_single_outlier(self):
        pts = _lawnmower()
        c0 = geom.classify_trajectory(pts, 0.05)
        pts[7, 2] += 10 * c0.threshold_used
        assert geom.classify_trajectory(pts, 0.05).label is Planarity.NONPLANAR

    def test_label_iff_below_threshold(self):
        for pts in (_lawnmower(), _helix()):
            c = geom.classify_trajectory(pts)
            assert (c.label is Planarity.PLANAR) == (c.hausdorff_value < c.threshold_used)

    def test_degenerate_is_flagged(self):
        pts = np.c_[np.arange(5.0), np.arange(5.0), np.arange(5.0)]
        c = geom.classify_trajectory(pts)
        assert c.label is Planarity.NONPLANAR and c.degenerate

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_rigid_invariance(self, seed):
        rng = np.random.default_rng(seed)
        pts = _helix(sweep=rng.uniform(0, 3)) if seed % 2 else _lawnmower()
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        moved = pts @ q.T + rng.normal(size=3) * 5
        a, b = geom.classify_trajectory(pts), geom.classify_trajectory(moved)
        assert a.label == b.label
        assert a.hausdorff_value == pytest.approx(b.hausdorff_value, abs=1e-9)


# ---------------------------------------------------------------------------
# Weighted Voronoi
# ---------------------------------------------------------------------------

class TestWeightedVoronoi:
    def test_single_site(self):
        d = geom.weighted_voronoi([[0.3, 0.6]], [1.0], [0, 0], [1, 1], 64)
        assert d.measures[0] == pytest.approx(1.0)

    def test_two_equal_sites(self):
        d = geom.weighted_voronoi([[0.25, 0.5], [0.75, 0.5]], [1, 1], [0, 0], [1, 1], 128)
        assert np.all(np.abs(d.measures - 0.5) <= 128 * d.cell_measure)

    def test_weighted_pair_matches_monte_carlo(self):
        sites = np.array([[0.25, 0.5], [0.75, 0.5]])
        w = np.array([2.0, 1.0])
        d = geom.weighted_voronoi(sites, w, [0, 0], [1, 1], 512)
        mc = mc_voronoi_measures(sites, w, [0, 0], [1, 1], 10_000_000, seed=0)
        np.testing.assert_allclose(d.measures, mc, rtol=0.01)

    def test_partition_exact(self):
        rng = np.random.default_rng(3)
        d = geom.weighted_voronoi(rng.uniform(size=(9, 2)), rng.uniform(0.5, 2, 9),
                                  [0, 0], [1, 1], 100)
        assert d.ownership.min() >= 0 and d.ownership.max() < 9
        assert d.measures.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(d.measures >= 0)

    def test_weight_scaling_invariance(self):
        rng = np.random.default_rng(4)
        sites, w = rng.uniform(size=(7, 2)), rng.uniform(0.5, 2, 7)
        a = geom.weighted_voronoi(sites, w, [0, 0], [1, 1], 128)
        b = geom.weighted_voronoi(sites, w * 3.7, [0, 0], [1, 1], 128)
        np.testing.assert_array_equal(a.ownership, b.ownership)

    def test_lowest_index_wins_ties(self):
        # coincident sites tie everywhere
        d = geom.weighted_voronoi([[0.5, 0.5], [0.5, 0.5]], [1, 1], [0, 0], [1, 1], 32)
        assert d.measures[1] == 0.0

    @pytest.mark.parametrize("seed", range(3))
    def test_resolution_convergence(self, seed):
        rng = np.random.default_rng(seed)
        sites, w = rng.uniform(0.1, 0.9, (6, 2)), rng.uniform(0.7, 1.5, 6)
        a = geom.weighted_voronoi(sites, w, [0, 0], [1, 1], 128)
        b = geom.weighted_voronoi(sites, w, [0, 0], [1, 1], 256)
        # perimeter quantum: boundary cells at the coarse resolution
        quantum = 4 * 128 * a.cell_measure
        assert np.all(np.abs(a.measures - b.measures) < 4 * quantum)

    def test_site_outside_bounds(self):
        with pytest.raises(GeometryError):
            geom.weighted_voronoi([[1.5, 0.5]], [1], [0, 0], [1, 1], 32)

    def test_low_resolution_rejected(self):
        with pytest.raises(GeometryError):
            geom.weighted_voronoi([[0.5, 0.5]], [1], [0, 0], [1, 1], 8)

    def test_csv_export(self, tmp_path):
        d = geom.weighted_voronoi([[0.25, 0.5], [0.75, 0.5]], [1, 1], [0, 0], [1, 1], 16)
        d.to_csv(tmp_path / "v.csv")
        lines = (tmp_path / "v.csv").read_text().splitlines()
        assert lines[0] == "cell_x,cell_y,site_index"
        assert len(lines) == 1 + 16 * 16

    def test_incremental_matches_full(self):
        rng = np.random.default_rng(5)
        sites, w = rng.uniform(size=(6, 2)), rng.uniform(0.5, 2, 6)
        full = geom.weighted_voronoi(sites, w, [0, 0], [1, 1], 64)
        inc = geom.WeightedRaster(sites[:5], w[:5], [0, 0], [1, 1], 64).with_site(sites[5], w[5])
        np.testing.assert_array_equal(full.ownership, inc.ownership)


class TestVoronoiVolumes:
    def test_single_site(self):
        d = geom.voronoi_volumes([[0.5, 0.5, 0.5]], [1], [0, 0, 0], [1, 1, 1], 32)
        assert d.measures[0] == pytest.approx(1.0)

    def test_cube_corners(self):
        corners = np.array(list(itertools.product([0.0, 1.0], repeat=3)))
        d = geom.voronoi_volumes(corners, None, [0, 0, 0], [1, 1, 1], 32)
        np.testing.assert_allclose(d.measures, 0.125, atol=1e-12)

    def test_random_sites_match_monte_carlo(self):
        rng = np.random.default_rng(6)
        sites, w = rng.uniform(size=(10, 3)), rng.uniform(0.8, 1.25, 10)
        d = geom.voronoi_volumes(sites, w, [0, 0, 0], [1, 1, 1], 128)
        mc = mc_voronoi_measures(sites, w, [0, 0, 0], [1, 1, 1], 4_000_000, seed=1)
        np.testing.assert_allclose(d.measures, mc, rtol=0.02)


# ---------------------------------------------------------------------------
# Clustering
# ---------------------------------------------------------------------------

class TestVoronoiCluster:
    @pytest.fixture
    def diagram(self):
        rng = np.random.default_rng(7)
        return geom.voronoi_volumes(rng.uniform(size=(8, 3)), None, [0, 0, 0], [1, 1, 1], 32)

    def test_tiny_max_volume_gives_singletons(self, diagram):
        labels = geom.voronoi_cluster(diagram, 0.5 * diagram.measures.min())
        assert sorted(labels) == list(range(8))

    def test_unbounded_merges_everything(self, diagram):
        labels = geom.voronoi_cluster(diagram, diagram.bounds_measure)
        assert set(labels) == {0}

    def test_two_triplets(self):
        # slab cells; the triplets meet only across the x = 0.5 midplane
        left = [[0.05, 0.5, 0.5], [0.1, 0.5, 0.5], [0.15, 0.5, 0.5]]
        sites = np.array(left + [[1 - x, y, z] for x, y, z in left])
        d = geom.voronoi_volumes(sites, None, [0, 0, 0], [1, 1, 1], 64)
        labels = geom.voronoi_cluster(d, 0.5)
        assert len(set(labels)) == 2
        assert len(set(labels[:3])) == 1 and len(set(labels[3:])) == 1
        assert len(set(labels)) == min_feasible_clusters(d, 0.5)

    def test_labels_are_consecutive(self, diagram):
        labels = geom.voronoi_cluster(diagram, 0.3)
        assert set(labels) == set(range(labels.max() + 1))
        assert labels[0] == 0

    def test_cluster_volumes_respect_bound(self, diagram):
        cap = 0.3
        labels = geom.voronoi_cluster(diagram, cap)
        for lab in set(labels):
            members = labels == lab
            if members.sum() > 1:
                assert diagram.measures[members].sum() <= cap + 1e-12

    def test_nonpositive_max_volume(self, diagram):
        with pytest.raises(GeometryError):
            geom.voronoi_cluster(diagram, 0.0)
