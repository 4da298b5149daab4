import numpy as np
import pytest

from splatloc.errors import InvalidInputError
from splatloc.geometry import Intrinsics, Pose, pose_compose, pose_inverse
from splatloc.warp import relative_transform, warp_image, warp_image_grad_depth

K = Intrinsics(fx=50, fy=50, cx=31.5, cy=23.5, width=64, height=48)


def plane_scene(rng, depth=5.0):
    img = rng.uniform(0, 1, (K.height, K.width, 3))
    d = np.full((K.height, K.width), depth)
    return img, d


class TestWarpForward:
    def test_identity_transform_is_identity(self):
        rng = np.random.default_rng(0)
        img, d = plane_scene(rng)
        warped, mask = warp_image(img, d, Pose.identity(), K)
        assert mask.all()
        assert np.array_equal(warped, img)

    def test_integer_x_shift_of_frontoparallel_plane(self):
        # camera moves +x by delta => image content shifts by -fx*delta/d px
        rng = np.random.default_rng(1)
        img, d = plane_scene(rng, depth=5.0)
        shift_px = 3
        delta = shift_px * 5.0 / K.fx
        T = Pose(np.array([1.0, 0, 0, 0]), np.array([-delta, 0.0, 0.0]))
        warped, mask = warp_image(img, d, T, K)
        # pixel (y, x) in the target sees source pixel (y, x + shift)
        assert np.array_equal(warped[:, :-shift_px][mask[:, :-shift_px]],
                              img[:, shift_px:][mask[:, :-shift_px]])
        assert not mask[:, -shift_px:].any()

    def test_axial_translation_scales_about_principal_point(self):
        # plane at depth d, camera advances by dz: magnification d/(d - dz)
        d0, dz = 8.0, 2.0
        img = np.zeros((K.height, K.width, 3))
        img[23, 47] = 1.0  # 16 px right of cx -> lands 16*d0/(d0-dz) px right
        depth = np.full((K.height, K.width), d0)
        T = Pose(np.array([1.0, 0, 0, 0]), np.array([0.0, 0.0, -dz]))
        warped, mask = warp_image(img, depth, T, K)
        ys, xs = np.nonzero(warped[:, :, 0] > 0.2)
        expect_x = K.cx + (47 - K.cx) * d0 / (d0 - dz)
        expect_y = K.cy + (23 - K.cy) * d0 / (d0 - dz)
        assert len(xs) > 0
        assert np.all(np.abs(xs - expect_x) <= 1.0)
        assert np.all(np.abs(ys - expect_y) <= 1.0)

    def test_occlusion_prefers_nearer_surface(self):
        # two source pixels land on the same target; nearer depth must win
        img = np.zeros((K.height, K.width, 3))
        depth = np.zeros((K.height, K.width))
        img[10, 10] = (1.0, 0.0, 0.0)
        depth[10, 10] = 4.0
        img[10, 30] = (0.0, 1.0, 0.0)
        depth[10, 30] = 8.0
        # camera-space shift tx=-3.2 moves (10,30,z=8) by -20px onto pixel
        # (10,10); the near pixel (10,10,z=4) moves -40px and leaves the frame
        T = Pose(np.array([1.0, 0, 0, 0]), np.array([-3.2, 0.0, 0.0]))
        warped, mask = warp_image(img, depth, T, K, valid=depth > 0)
        assert mask[10, 10]
        assert warped[10, 10, 1] > 0.9  # far-but-arriving green pixel
        # red pixel went to x = 10 - 40 = -30: off screen
        assert warped[10, 10, 0] < 0.1

    def test_fully_occluded_gives_empty_mask(self):
        img = np.zeros((K.height, K.width, 3))
        depth = np.zeros((K.height, K.width))
        warped, mask = warp_image(img, depth, Pose.identity(), K, valid=depth > 0)
        assert not mask.any()

    def test_shape_validation(self):
        with pytest.raises(InvalidInputError):
            warp_image(np.zeros((4, 4)), np.zeros((4, 4)), Pose.identity(), K)


class TestRelativeTransform:
    def test_roundtrip(self):
        rng = np.random.default_rng(2)
        a = Pose(rng.standard_normal(4), rng.uniform(-2, 2, 3))
        b = Pose(rng.standard_normal(4), rng.uniform(-2, 2, 3))
        T = relative_transform(a, b)
        assert np.allclose(pose_compose(T, a).matrix(), b.matrix(), atol=1e-12)
        back = relative_transform(b, a)
        assert np.allclose(pose_compose(back, T).matrix(), np.eye(4), atol=1e-12)


class TestWarpDepthGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(0.1, 0.9, (K.height, K.width, 3))
        # smooth surface: samples from one surface blend in the z-window,
        # which is where the weight gradient is non-degenerate
        yy, xx = np.mgrid[0:K.height, 0:K.width]
        depth = 5.0 + 0.8 * np.sin(xx / 9.0) + 0.6 * np.cos(yy / 7.0)
        T = Pose(np.array([0.999, 0.02, -0.03, 0.01]), np.array([0.15, -0.08, 0.1]))
        gw = rng.standard_normal((K.height, K.width, 3))
        grad = warp_image_grad_depth(img, depth, T, K, gw)

        def objective(d):
            w, m = warp_image(img, d, T, K)
            return float(np.sum(gw * w))

        h = 1e-5
        checked = 0
        for _ in range(60):
            y = int(rng.integers(2, K.height - 2))
            x = int(rng.integers(2, K.width - 2))
            if abs(grad[y, x]) < 1e-9:
                continue
            dp = depth.copy()
            dp[y, x] += h
            dm = depth.copy()
            dm[y, x] -= h
            fd = (objective(dp) - objective(dm)) / (2 * h)
            assert abs(fd - grad[y, x]) <= 2e-4 * max(1.0, abs(fd)), (y, x, fd, grad[y, x])
            checked += 1
        assert checked > 20
