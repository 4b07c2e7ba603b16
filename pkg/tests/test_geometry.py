import math

import numpy as np
import pytest
from scipy.interpolate import RBFInterpolator
from scipy.spatial.distance import cdist

from sgwarp.errors import RankDeficiencyError, SgwarpError, ShapeMismatchError, SingularSystemError
from sgwarp.geometry import (
    AffineParams,
    PartCorrespondence,
    TpsParams,
    WarpGrid,
    affine_grid,
    compose_grids,
    estimate_affine,
    estimate_part_transform,
    fit_tps,
    from_normalized,
    make_control_grid,
    mask_boundary,
    match_parts,
    part_stats,
    pixel_scale,
    to_normalized,
    tps_grid,
    transform_grid,
    transforms_from_dict,
    transforms_to_dict,
)
from sgwarp.tensor_core import SegmentationMap


def random_affine(rng, spread=0.5, shift=5.0):
    lin = np.eye(2) + rng.uniform(-spread, spread, (2, 2))
    return AffineParams.from_matrix(lin, rng.uniform(-shift, shift, 2))


def normal_equations_affine(src, dst):
    x = np.column_stack([src, np.ones(len(src))])
    coef = np.linalg.solve(x.T @ x, x.T @ dst)
    return np.array([coef[0, 0], coef[1, 0], coef[2, 0], coef[0, 1], coef[1, 1], coef[2, 1]])


def tps_oracle(src, dst, lam, probes):
    # independent thin-plate system with kernel r^2 log r^2
    n = len(src)
    r2 = cdist(src, src, "sqeuclidean")
    k = np.where(r2 > 0, r2 * np.log(np.where(r2 > 0, r2, 1.0)), 0.0) + lam * np.eye(n)
    p = np.column_stack([np.ones(n), src])
    a = np.zeros((n + 3, n + 3))
    a[:n, :n], a[:n, n:], a[n:, :n] = k, p, p.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = dst
    sol = np.linalg.solve(a, rhs)
    q2 = cdist(probes, src, "sqeuclidean")
    kq = np.where(q2 > 0, q2 * np.log(np.where(q2 > 0, q2, 1.0)), 0.0)
    return kq @ sol[:n] + np.column_stack([np.ones(len(probes)), probes]) @ sol[n:]


class TestAffineParams:
    def test_apply_and_inverse(self):
        rng = np.random.default_rng(0)
        a = random_affine(rng)
        pts = rng.uniform(-10, 10, (20, 2))
        assert np.allclose(a.inverse().apply(a.apply(pts)), pts, atol=1e-12)

    def test_then_order(self):
        shift = AffineParams(tx=1.0)
        scale = AffineParams.from_matrix(2 * np.eye(2))
        assert np.allclose(shift.then(scale).apply([[0.0, 0.0]]), [[2.0, 0.0]])
        assert np.allclose(scale.then(shift).apply([[0.0, 0.0]]), [[1.0, 0.0]])

    def test_rotation_about_center(self):
        r = AffineParams.rotation(90.0, center=(1.0, 1.0))
        assert np.allclose(r.apply([[2.0, 1.0]]), [[1.0, 2.0]], atol=1e-12)
        assert r.rotation_degrees == pytest.approx(90.0)

    def test_list_round_trip(self):
        a = random_affine(np.random.default_rng(1))
        assert AffineParams.from_list(a.to_list()) == a
        with pytest.raises(SgwarpError):
            AffineParams.from_list([1, 2, 3])

    def test_rejects_non_finite(self):
        with pytest.raises(SgwarpError):
            AffineParams(a11=math.nan)


class TestEstimateAffine:
    def test_pure_translation(self):
        a = estimate_affine(np.array([[[0, 0], [1, 2]], [[1, 0], [2, 2]], [[0, 1], [1, 3]]], float))
        assert np.allclose(a.linear, np.eye(2), atol=1e-12)
        assert np.allclose(a.translation, [1, 2], atol=1e-12)

    def test_identity(self):
        pts = np.random.default_rng(2).uniform(0, 10, (5, 2))
        a = estimate_affine(pts, pts)
        assert np.allclose(a.to_list(), AffineParams().to_list(), atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_normal_equations(self, seed):
        rng = np.random.default_rng(seed)
        truth = random_affine(rng)
        src = rng.uniform(-20, 20, (6, 2))
        dst = truth.apply(src)
        got = np.array(estimate_affine(src, dst).to_list())
        assert np.max(np.abs(got - normal_equations_affine(src, dst))) <= 1e-9
        assert np.max(np.abs(got - np.array(truth.to_list()))) <= 1e-9

    def test_least_squares_with_noise(self):
        rng = np.random.default_rng(9)
        src = rng.uniform(-20, 20, (30, 2))
        dst = random_affine(rng).apply(src) + rng.normal(0, 0.3, (30, 2))
        got = np.array(estimate_affine(src, dst).to_list())
        assert np.allclose(got, normal_equations_affine(src, dst), atol=1e-9)

    @pytest.mark.parametrize("src", [
        [[0, 0], [1, 1], [2, 2], [3, 3]],
        [[1, 1], [1, 1], [1, 1]],
        [[0, 0], [1, 0]],
    ])
    def test_degenerate(self, src):
        with pytest.raises(RankDeficiencyError):
            estimate_affine(np.array(src, float), np.array(src, float))

    def test_mismatched_counts(self):
        with pytest.raises(ShapeMismatchError):
            estimate_affine(np.zeros((4, 2)), np.zeros((3, 2)))


class TestTps:
    def test_identity_fit(self):
        pts = make_control_grid(3, 3)
        t = fit_tps(pts, pts)
        assert not np.any(t.weights)
        assert t.affine_part == [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]

    def test_reproduces_affine(self):
        rng = np.random.default_rng(3)
        a = random_affine(rng, shift=0.3)
        pts = make_control_grid(3, 3)
        t = fit_tps(pts, a.apply(pts))
        probes = rng.uniform(-1.5, 1.5, (100, 2))
        assert np.max(np.abs(t(probes) - a.apply(probes))) <= 1e-8

    def test_single_displaced_point(self):
        pts = make_control_grid(3, 3)
        dst = pts.copy()
        dst[4] += (0.1, 0.0)
        t = fit_tps(pts, dst, grid_shape=(3, 3))
        assert np.max(np.abs(t(pts) - dst)) <= 1e-9

    @pytest.mark.parametrize("lam", [0.0, 1e-3, 0.5])
    def test_matches_independent_solver(self, lam):
        rng = np.random.default_rng(4)
        src = make_control_grid(4, 4)
        dst = src + rng.normal(0, 0.1, src.shape)
        probes = rng.uniform(-1.2, 1.2, (50, 2))
        t = fit_tps(src, dst, lam)
        assert np.allclose(t(probes), tps_oracle(src, dst, lam, probes), atol=1e-10)

    def test_matches_scipy_thin_plate_interpolant(self):
        # scipy uses r^2 log r, a constant multiple of this kernel: same interpolant
        rng = np.random.default_rng(5)
        src = rng.uniform(-1, 1, (12, 2))
        dst = src + rng.normal(0, 0.1, src.shape)
        probes = rng.uniform(-1, 1, (40, 2))
        ref = RBFInterpolator(src, dst, kernel="thin_plate_spline", degree=1)(probes)
        assert np.allclose(fit_tps(src, dst)(probes), ref, atol=1e-9)

    def test_side_conditions(self):
        rng = np.random.default_rng(6)
        src = make_control_grid(3, 4)
        t = fit_tps(src, src + rng.normal(0, 0.1, src.shape), 1e-3)
        assert t.side_condition_residual() <= 1e-9

    def test_regularization_smooths(self):
        src = make_control_grid(3, 3)
        dst = src.copy()
        dst[4] += (0.2, 0.0)
        exact = fit_tps(src, dst)(src[4:5])[0, 0] - src[4, 0]
        smooth = fit_tps(src, dst, 10.0)(src[4:5])[0, 0] - src[4, 0]
        assert exact == pytest.approx(0.2, abs=1e-9)
        assert 0.0 < smooth < exact

    def test_coincident_points(self):
        src = np.array([[0, 0], [1, 0], [0, 1], [0, 0]], float)
        with pytest.raises(SingularSystemError):
            fit_tps(src, src)

    def test_collinear_points(self):
        src = np.array([[0, 0], [1, 1], [2, 2], [3, 3]], float)
        with pytest.raises(SgwarpError):
            fit_tps(src, src)

    def test_dict_round_trip(self):
        rng = np.random.default_rng(7)
        t = TpsParams.from_grid(3, 3, rng.normal(0, 0.05, (9, 2)), 1e-3)
        back = TpsParams.from_dict(t.to_dict())
        probes = rng.uniform(-1, 1, (10, 2))
        assert np.array_equal(back(probes), t(probes))
        assert "source_points" not in t.to_dict()

    def test_scattered_dict_round_trip(self):
        rng = np.random.default_rng(8)
        src = rng.uniform(-1, 1, (6, 2))
        t = fit_tps(src, src + 0.01)
        back = TpsParams.from_dict(t.to_dict())
        assert np.array_equal(back.source_points, src)


class TestGrids:
    def test_identity_affine_grid(self):
        g = affine_grid(AffineParams(), 4, 5)
        ys, xs = np.mgrid[0:4, 0:5]
        assert np.array_equal(g.coords[..., 0], xs) and np.array_equal(g.coords[..., 1], ys)
        assert g == WarpGrid.identity(4, 5) and g.is_identity()

    def test_translation_grid(self):
        g = affine_grid(AffineParams(tx=2.0), 3, 3)
        assert np.array_equal(g.coords[..., 0], np.mgrid[0:3, 0:3][1] + 2.0)

    def test_quarter_turn_maps_corner_to_corner(self):
        n = 9
        c = (n - 1) / 2
        g = affine_grid(AffineParams.rotation(90.0, center=(c, c)), n, n)
        corners = {(0, 0), (n - 1, 0), (0, n - 1), (n - 1, n - 1)}
        for x, y in corners:
            sx, sy = g.coords[y, x]
            assert (round(sx), round(sy)) in corners - {(x, y)}
            assert abs(sx - round(sx)) < 1e-12 and abs(sy - round(sy)) < 1e-12

    def test_identity_tps_grid(self):
        assert np.max(np.abs(tps_grid(TpsParams.identity(), 7, 9).coords - WarpGrid.identity(7, 9).coords)) <= 1e-9

    def test_tps_grid_at_control_pixels(self):
        h, w = 9, 11
        rng = np.random.default_rng(10)
        t = TpsParams.from_grid(3, 3, rng.normal(0, 0.1, (9, 2)))
        g = tps_grid(t, h, w)
        ctrl_px = np.rint(from_normalized(t.source_points, h, w)).astype(int)
        targets = from_normalized(t.source_points + t.target_displacements, h, w)
        for (x, y), want in zip(ctrl_px, targets):
            assert np.max(np.abs(g.coords[y, x] - want)) <= 1e-9

    def test_tps_fitted_to_affine_equals_affine_grid(self):
        h, w = 12, 15
        a = AffineParams.rotation(10.0, center=(7, 5), translation=(1.5, -0.5))
        ctrl = make_control_grid(3, 3)
        dst = to_normalized(a.apply(from_normalized(ctrl, h, w)), h, w)
        g = tps_grid(fit_tps(ctrl, dst), h, w)
        assert np.max(np.abs(g.coords - affine_grid(a, h, w).coords)) <= 1e-6

    def test_normalization_round_trip(self):
        pts = np.random.default_rng(11).uniform(0, 30, (10, 2))
        assert np.allclose(from_normalized(to_normalized(pts, 20, 31), 20, 31), pts, atol=1e-12)
        assert np.array_equal(pixel_scale(5, 9), [4.0, 2.0])


class TestCompose:
    def setup_method(self):
        self.g = affine_grid(AffineParams.rotation(17.0, center=(4, 3), translation=(0.7, 0.2)), 8, 10)
        self.ident = WarpGrid.identity(8, 10)

    def test_identity_left(self):
        assert compose_grids(self.ident, self.g) == self.g

    def test_identity_right(self):
        assert compose_grids(self.g, self.ident) == self.g

    def test_translations_add(self):
        a = affine_grid(AffineParams(tx=1.0), 6, 6)
        b = affine_grid(AffineParams(ty=1.0), 6, 6)
        want = affine_grid(AffineParams(tx=1.0, ty=1.0), 6, 6)
        assert np.max(np.abs(compose_grids(a, b).coords - want.coords)) <= 1e-12

    def test_affine_composition_closed_form(self):
        a = AffineParams.rotation(20.0, center=(5, 5))
        b = AffineParams(a11=1.1, tx=0.5, ty=-0.25)
        got = compose_grids(affine_grid(a, 11, 11), affine_grid(b, 11, 11))
        assert np.max(np.abs(got.coords - affine_grid(b.then(a), 11, 11).coords)) <= 1e-9

    def test_associative_on_affine_grids(self):
        rng = np.random.default_rng(12)
        a, b, c = (affine_grid(random_affine(rng, 0.2, 2.0), 9, 9) for _ in range(3))
        left = compose_grids(compose_grids(a, b), c)
        right = compose_grids(a, compose_grids(b, c))
        assert np.max(np.abs(left.coords - right.coords)) <= 1e-9

    def test_transform_grid_is_affine_then_tps(self):
        h, w = 10, 12
        aff = AffineParams(tx=1.0)
        tps = TpsParams.from_grid(3, 3, np.full((9, 2), [0.2, 0.0]))  # uniform normalized shift
        g = transform_grid(aff, tps, h, w)
        shift_px = 0.2 * pixel_scale(h, w)[0]
        assert np.allclose(g.coords[..., 0], np.mgrid[0:h, 0:w][1] + 1.0 + shift_px, atol=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            compose_grids(WarpGrid.identity(3, 3), WarpGrid.identity(3, 4))


class TestWarpGridContainer:
    def test_bytes_round_trip(self, tmp_path):
        g = affine_grid(AffineParams.rotation(5.0), 4, 6)
        stored = WarpGrid(g.coords.astype(np.float32).astype(np.float64))  # 32-bit on disk
        assert WarpGrid.from_bytes(g.to_bytes()) == stored
        g.save(tmp_path / "g.bin")
        assert WarpGrid.load(tmp_path / "g.bin") == stored
        blob = g.to_bytes()
        assert blob.startswith(b"SWGRID1\n4 6\n") and len(blob) == len(b"SWGRID1\n4 6\n") + 4 * 4 * 6 * 2

    def test_integer_grid_round_trips_exactly(self):
        g = affine_grid(AffineParams(tx=2.0), 5, 7)
        assert WarpGrid.from_bytes(g.to_bytes()) == g

    def test_rejects_bad_header(self):
        blob = WarpGrid.identity(2, 2).to_bytes()
        with pytest.raises(SgwarpError):
            WarpGrid.from_bytes(b"XXGRID1\n" + blob[8:])

    def test_rejects_bad_shape(self):
        with pytest.raises(SgwarpError):
            WarpGrid(np.zeros((3, 3, 3)))

    def test_transforms_dict_round_trip(self):
        a = random_affine(np.random.default_rng(13))
        t = TpsParams.from_grid(3, 3, np.random.default_rng(14).normal(0, 0.05, (9, 2)))
        a2, t2 = transforms_from_dict(transforms_to_dict(a, t))
        assert a2 == a and np.array_equal(t2.weights, t.weights)


def rect_map(h, w, boxes):
    labels = np.zeros((h, w), int)
    for label, (y0, y1, x0, x1) in boxes.items():
        labels[y0:y1, x0:x1] = label
    return SegmentationMap(labels)


class TestMatchParts:
    def test_identical_maps(self):
        seg = rect_map(30, 30, {3: (5, 15, 5, 12), 7: (18, 25, 10, 28)})
        res = match_parts(seg, seg)
        assert [c.label for c in res.correspondences] == [3, 7] and res.omitted == []
        for c in res.correspondences:
            assert np.array_equal(c.source_centroid, c.target_centroid)
            assert np.array_equal(c.source_moments, c.target_moments)
            assert np.array_equal(c.landmark_pairs[:, 0], c.landmark_pairs[:, 1])

    def test_shift_moves_centroids_by_three(self):
        a = rect_map(30, 30, {3: (5, 15, 5, 12), 7: (18, 25, 10, 20)})
        b = rect_map(30, 30, {3: (5, 15, 8, 15), 7: (18, 25, 13, 23)})
        for c in match_parts(a, b).correspondences:
            assert np.allclose(c.target_centroid - c.source_centroid, [3.0, 0.0], rtol=0, atol=1e-12)
            assert np.allclose(c.target_moments, c.source_moments, rtol=0, atol=1e-12)

    def test_absent_part_is_omitted(self):
        a = rect_map(20, 20, {3: (2, 8, 2, 8), 5: (10, 15, 10, 15)})
        b = rect_map(20, 20, {3: (2, 8, 2, 8)})
        res = match_parts(a, b)
        assert [c.label for c in res.correspondences] == [3] and res.omitted == [5]

    def test_background_excluded_by_default(self):
        seg = rect_map(10, 10, {2: (2, 6, 2, 6)})
        assert 0 not in [c.label for c in match_parts(seg, seg).correspondences]
        assert 0 in [c.label for c in match_parts(seg, seg, include_background=True).correspondences]

    def test_swapping_inputs_swaps_roles(self):
        a = rect_map(30, 30, {3: (5, 15, 5, 12)})
        b = rect_map(30, 30, {3: (7, 20, 9, 14)})
        ab = match_parts(a, b).correspondences[0]
        ba = match_parts(b, a).correspondences[0]
        assert np.array_equal(ab.swapped().landmark_pairs, ba.landmark_pairs)
        assert np.array_equal(ab.source_moments, ba.target_moments)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            match_parts(SegmentationMap(np.zeros((3, 3), int)), SegmentationMap(np.zeros((3, 4), int)))


class TestPartStats:
    def test_rectangle_moments(self):
        mask = np.zeros((20, 20), bool)
        mask[2:8, 3:13] = True  # 10 wide, 6 tall
        s = part_stats(mask)
        assert s.area == 60
        assert np.allclose(s.centroid, [7.5, 4.5])
        # unit-square pixels: variance of a uniform interval of length L is L^2 / 12
        assert np.allclose(s.moments, np.diag([100 / 12, 36 / 12]), atol=1e-12)

    def test_boundary_encloses_pixels(self):
        mask = np.zeros((10, 10), bool)
        mask[3:6, 4:7] = True
        (outline,) = mask_boundary(mask)
        assert outline[:, 0].min() == pytest.approx(3.5) and outline[:, 0].max() == pytest.approx(6.5)

    def test_empty(self):
        assert part_stats(np.zeros((5, 5), bool)).area == 0


def ellipse_correspondence(scale, a=12.0, b=5.0, center=(50.0, 40.0), n=400):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    c = np.array(center)
    src = np.column_stack([a * np.cos(t), b * np.sin(t)])
    ring = lambda p: np.vstack([p, p[:1]])
    mom = np.diag([a * a / 4, b * b / 4])  # solid ellipse second moments
    idx = np.arange(0, n, n // 16)
    return PartCorrespondence(
        label=4,
        source_centroid=c, target_centroid=c,
        source_moments=mom, target_moments=scale * scale * mom,
        landmark_pairs=np.stack([src[idx] + c, scale * src[idx] + c], axis=1),
        source_boundary=(ring(src + c),), target_boundary=(ring(scale * src + c),),
        source_area=100, target_area=400, height=100, width=120,
    )


class TestEstimatePartTransform:
    def test_identical_part(self):
        seg = rect_map(40, 40, {5: (5, 30, 10, 18)})
        c = match_parts(seg, seg).correspondences[0]
        t = estimate_part_transform(c)
        assert t.affine.is_identity() and t.tps.is_identity() and t.warning is None

    def test_scaled_ellipse(self):
        t = estimate_part_transform(ellipse_correspondence(2.0))
        assert np.max(np.abs(t.affine.linear - 2 * np.eye(2))) <= 1e-6
        assert np.allclose(t.affine.apply([[50.0, 40.0]]), [[50.0, 40.0]], atol=1e-9)

    def test_pure_translation(self):
        a = rect_map(60, 60, {5: (10, 35, 10, 20)})
        b = rect_map(60, 60, {5: (14, 39, 17, 27)})
        t = estimate_part_transform(match_parts(a, b).correspondences[0])
        assert np.max(np.abs(t.affine.linear - np.eye(2))) <= 1e-6
        assert np.allclose(t.affine.translation, [7.0, 4.0], atol=1e-6)
        assert np.max(np.abs(t.tps.target_displacements)) <= 1e-6

    @pytest.mark.parametrize("deg", [-150.0, -70.0, -25.0, 15.0, 40.0, 120.0, 175.0])
    def test_rotated_knobbed_capsule(self, deg):
        from sgwarp.pipeline.raster import segment_distance

        ys, xs = np.mgrid[0:120, 0:120].astype(float)
        base = np.array([[60.0, 30.0], [60.0, 90.0]])
        moved = AffineParams.rotation(deg, center=(60.0, 60.0)).apply(base)
        # a knob at one end breaks the half-turn symmetry of a plain capsule
        shape = lambda p: (segment_distance(xs, ys, *p) <= 8.0) | (np.hypot(xs - p[0, 0], ys - p[0, 1]) <= 14.0)
        a = np.where(shape(base), 6, 0)
        b = np.where(shape(moved), 6, 0)
        c = match_parts(SegmentationMap(a), SegmentationMap(b)).correspondences[0]
        t = estimate_part_transform(c)
        assert abs(math.remainder(t.affine.rotation_degrees - deg, 360.0)) <= 2.0

    def test_symmetric_capsule_prefers_smaller_rotation(self):
        from sgwarp.pipeline.raster import segment_distance

        ys, xs = np.mgrid[0:120, 0:120].astype(float)
        base = np.array([[60.0, 30.0], [60.0, 90.0]])
        moved = AffineParams.rotation(120.0, center=(60.0, 60.0)).apply(base)
        a = np.where(segment_distance(xs, ys, *base) <= 8.0, 6, 0)
        b = np.where(segment_distance(xs, ys, *moved) <= 8.0, 6, 0)
        t = estimate_part_transform(match_parts(SegmentationMap(a), SegmentationMap(b)).correspondences[0])
        assert abs(t.affine.rotation_degrees - (-60.0)) <= 2.0

    def test_zero_area_warns(self):
        c = ellipse_correspondence(1.5)
        c = PartCorrespondence(**{**c.__dict__, "source_area": 0})
        t = estimate_part_transform(c)
        assert t.affine.is_identity() and t.warning
