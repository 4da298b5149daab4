import numpy as np
import pytest

from helpers import jittered_pose, random_scene, small_intrinsics
from splatloc.errors import InvalidInputError
from splatloc.gaussians import Gaussian3D, GaussianSet, logit
from splatloc.geometry import Intrinsics, Pose
from splatloc.rasterizer import (
    RasterSettings,
    compute_cov3d,
    project_gaussian,
    render,
    render_backward,
    render_reference,
)


def isotropic(mu, sigma, color=(1.0, 0.0, 0.0), opacity=0.5, quat=(1, 0, 0, 0)):
    return Gaussian3D.create(mu, [sigma] * 3, quat, color, opacity)


class TestProjectGaussian:
    K = Intrinsics(fx=100, fy=100, cx=31.5, cy=31.5, width=64, height=64)

    def test_isotropic_on_axis_closed_form(self):
        # axis-aligned case of the covariance projection: cov2d = ((f*sigma/z)^2 + eps) I
        sigma, z, f = 0.3, 5.0, 100.0
        s = project_gaussian(isotropic([0, 0, z], sigma), Pose.identity(), self.K)
        expect = (f * sigma / z) ** 2
        assert np.allclose(s.cov2d, np.diag([expect + 0.3, expect + 0.3]), atol=1e-9)
        assert np.allclose(s.center2d, [31.5, 31.5])
        assert s.depth == z

    def test_behind_camera_culled(self):
        assert project_gaussian(isotropic([0, 0, -3], 0.3), Pose.identity(), self.K) is None
        assert project_gaussian(isotropic([0, 0, 0.01], 0.3), Pose.identity(), self.K) is None

    def test_far_offscreen_culled(self):
        assert project_gaussian(isotropic([500, 0, 5], 0.1), Pose.identity(), self.K) is None

    def test_matches_dense_matrix_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            g = Gaussian3D.create(
                mu=np.append(rng.uniform(-1, 1, 2), rng.uniform(3, 10)),
                scale=rng.uniform(0.05, 0.5, 3),
                quat=rng.standard_normal(4),
                color=rng.uniform(0, 1, 3),
                opacity=rng.uniform(0.1, 0.9),
            )
            pose = jittered_pose(rng, angle=0.1, trans=0.3)
            s = project_gaussian(g, pose, self.K)
            if s is None:
                continue
            # independent dense computation: J W Sigma W^T J^T + eps I
            q = g.quat / np.linalg.norm(g.quat)
            w, x, y, z = q
            R = np.array([
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ])
            S = np.diag(np.exp(g.log_scale))
            Sigma = R @ S @ S.T @ R.T
            W = pose.rotation
            pc = pose.apply(g.mu)
            px, py, pz = pc
            J = np.array([[self.K.fx / pz, 0, -self.K.fx * px / pz ** 2],
                          [0, self.K.fy / pz, -self.K.fy * py / pz ** 2]])
            oracle = J @ W @ Sigma @ W.T @ J.T + 0.3 * np.eye(2)
            assert np.allclose(s.cov2d, oracle, atol=1e-6)


class TestRenderForward:
    K = small_intrinsics(32, 32, f=30.0)

    def test_empty_scene(self):
        frame = render(GaussianSet.empty(), Pose.identity(), self.K)
        assert not frame.color.any()
        assert not frame.depth.any()
        assert not frame.alpha.any()
        assert np.all(frame.transmittance == 1.0)

    def test_background_fill(self):
        frame = render(GaussianSet.empty(), Pose.identity(), self.K, background=(0.2, 0.4, 0.6))
        assert np.allclose(frame.color, [0.2, 0.4, 0.6])

    def test_single_opaque_splat_closed_form(self):
        # opacity -> 1 gets clamped to 0.99 at the center pixel
        g = Gaussian3D(mu=np.array([0.0, 0.0, 4.0]), log_scale=np.log([0.5] * 3),
                       quat=np.array([1.0, 0, 0, 0]), color=np.array([0.8, 0.1, 0.3]),
                       opacity_logit=25.0)
        bg = np.array([0.1, 0.2, 0.9])
        K = small_intrinsics(33, 33)  # odd size: principal point on the pixel grid
        frame = render(GaussianSet.from_gaussians([g]), Pose.identity(), K, background=bg)
        cy, cx = int(K.cy), int(K.cx)
        px = frame.color[cy, cx]
        assert np.allclose(px, 0.99 * g.color + 0.01 * bg, atol=1e-9)
        assert np.isclose(frame.depth[cy, cx], 0.99 * 4.0, atol=1e-9)
        assert np.isclose(frame.alpha[cy, cx], 0.99, atol=1e-9)

    def test_two_splat_compositing_oracle(self):
        # both centered on the pixel with q=0.5: front contributes 0.5, back 0.25
        red = isotropic([0, 0, 4.0], 1.0, color=(1, 0, 0), opacity=0.5)
        blue = isotropic([0, 0, 8.0], 2.0, color=(0, 0, 1), opacity=0.5)
        bg = np.array([1.0, 1.0, 1.0])
        K = small_intrinsics(33, 33, f=30.0)  # odd size: integer center pixel
        frame = render(GaussianSet.from_gaussians([red, blue]), Pose.identity(), K,
                       background=bg)
        px = frame.color[16, 16]
        assert np.allclose(px, 0.5 * np.array([1, 0, 0]) + 0.25 * np.array([0, 0, 1]) + 0.25 * bg,
                           atol=1e-12)
        assert np.isclose(frame.depth[16, 16], 0.5 * 4.0 + 0.25 * 8.0, atol=1e-12)

    def test_compositing_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            gs = random_scene(rng, 40)
            frame = render(gs, jittered_pose(rng), self.K)
            total = frame.alpha.astype(np.float32) + frame.transmittance.astype(np.float32)
            assert np.abs(total - 1.0).max() <= 1e-6

    def test_alpha_monotone_in_opacity(self):
        alphas = []
        for op in (0.1, 0.3, 0.5, 0.7, 0.9):
            g = isotropic([0, 0, 5.0], 0.6, opacity=op)
            frame = render(GaussianSet.from_gaussians([g]), Pose.identity(), self.K)
            alphas.append(frame.alpha.sum())
        assert all(b > a for a, b in zip(alphas, alphas[1:]))

    def test_depth_zero_where_alpha_zero(self):
        rng = np.random.default_rng(4)
        gs = random_scene(rng, 10)
        frame = render(gs, Pose.identity(), self.K)
        assert not frame.depth[frame.alpha == 0].any()

    def test_input_permutation_invariance(self):
        rng = np.random.default_rng(5)
        gs = random_scene(rng, 60)
        pose = jittered_pose(rng)
        a = render(gs, pose, self.K)
        perm = rng.permutation(len(gs))
        b = render(gs[perm], pose, self.K)
        assert np.array_equal(a.color, b.color)
        assert np.array_equal(a.depth, b.depth)

    def test_exact_depth_ties_use_insertion_order(self):
        red = isotropic([0, 0, 5.0], 1.0, color=(1, 0, 0), opacity=0.5)
        green = isotropic([0, 0, 5.0], 1.0, color=(0, 1, 0), opacity=0.5)
        K = small_intrinsics(33, 33)
        f_rg = render(GaussianSet.from_gaussians([red, green]), Pose.identity(), K)
        f_gr = render(GaussianSet.from_gaussians([green, red]), Pose.identity(), K)
        assert f_rg.color[16, 16, 0] > f_rg.color[16, 16, 1]
        assert f_gr.color[16, 16, 1] > f_gr.color[16, 16, 0]

    def test_ewa_normalization_flag(self):
        # footprint carries |det J2x2| = fx*fy/z^2; pick opacity so nothing clamps
        z = 30.0
        K = small_intrinsics(33, 33, f=30.0)
        norm = K.fx * K.fy / z ** 2
        g = Gaussian3D.create([0, 0, z], [1.0] * 3, (1, 0, 0, 0), (1, 1, 1), 0.2)
        on = render(GaussianSet.from_gaussians([g]), Pose.identity(), K,
                    settings=RasterSettings(ewa_normalization=True))
        off = render(GaussianSet.from_gaussians([g]), Pose.identity(), K)
        assert np.isclose(on.alpha[16, 16], 0.2 * norm, atol=1e-9)
        assert np.isclose(off.alpha[16, 16], 0.2, atol=1e-9)


class TestTiledMatchesReference:
    def test_bit_identical_on_random_scenes(self):
        rng = np.random.default_rng(11)
        K = small_intrinsics(64, 64, f=55.0)
        for _ in range(50):
            gs = random_scene(rng, int(rng.integers(1, 101)), span=3.0)
            pose = jittered_pose(rng)
            bg = rng.uniform(0, 1, 3)
            a = render(gs, pose, K, background=bg)
            b = render_reference(gs, pose, K, background=bg)
            for fa, fb in ((a.color, b.color), (a.depth, b.depth), (a.alpha, b.alpha),
                           (a.transmittance, b.transmittance)):
                assert np.array_equal(fa.astype(np.float32), fb.astype(np.float32))

    def test_non_tile_aligned_image(self):
        rng = np.random.default_rng(12)
        K = Intrinsics(fx=40, fy=40, cx=24.5, cy=18.5, width=50, height=38)
        gs = random_scene(rng, 64, span=3.0)
        a = render(gs, Pose.identity(), K)
        b = render_reference(gs, Pose.identity(), K)
        assert np.array_equal(a.color, b.color)


class TestRenderBackward:
    K = small_intrinsics(32, 32, f=30.0)

    def test_zero_grad_images(self):
        rng = np.random.default_rng(20)
        gs = random_scene(rng, 8)
        g = render_backward(gs, Pose.identity(), self.K,
                            np.zeros((32, 32, 3)), np.zeros((32, 32)))
        for f in ("mu", "log_scale", "quat", "color", "opacity_logit"):
            assert not getattr(g, f).any()

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(21)
        gs = random_scene(rng, 4)
        with pytest.raises(InvalidInputError):
            render_backward(gs, Pose.identity(), self.K,
                            np.zeros((16, 16, 3)), np.zeros((16, 16)))

    def test_single_splat_color_grad_closed_form(self):
        g = isotropic([0, 0, 5.0], 0.8, color=(0.3, 0.3, 0.3), opacity=0.6)
        K = small_intrinsics(33, 33)
        gs = GaussianSet.from_gaussians([g])
        grad_color = np.zeros((33, 33, 3))
        grad_color[16, 16, 0] = 1.0
        out = render_backward(gs, Pose.identity(), K, grad_color, np.zeros((33, 33)))
        frame = render(gs, Pose.identity(), K)
        q = frame.alpha[16, 16]  # single splat: weight == q*1
        assert np.allclose(out.color[0], [q, 0.0, 0.0], atol=1e-12)

    def test_culled_gaussians_get_zero_grads(self):
        g_front = isotropic([0, 0, 5.0], 0.5)
        g_behind = isotropic([0, 0, -5.0], 0.5)
        gs = GaussianSet.from_gaussians([g_front, g_behind])
        rng = np.random.default_rng(22)
        out = render_backward(gs, Pose.identity(), self.K,
                              rng.standard_normal((32, 32, 3)),
                              rng.standard_normal((32, 32)))
        assert not out.mu[1].any()
        assert out.mu[0].any()
