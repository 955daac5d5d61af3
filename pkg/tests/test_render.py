import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avatarlab.avatar import WorldGaussians
from avatarlab.headmodel import CameraPose
from avatarlab.render import render, render_backward, render_reference, render_with_cache

from conftest import random_camera, random_world

CAM = CameraPose(distance=9.0, fovy=55.0, elevation=0.0, azimuth=90.0)


def _single_gaussian(color=(1.0, 0.0, 0.0), opacity_logit=4.0, scale=0.3):
    return WorldGaussians(
        means=np.zeros((1, 3)),
        quats=np.array([[1.0, 0.0, 0.0, 0.0]]),
        log_scales=np.full((1, 3), np.log(scale)),
        opacity_logits=np.array([opacity_logit]),
        colors=np.array([color], dtype=np.float64),
    )


class TestForward:
    def test_empty_world_renders_background(self):
        empty = WorldGaussians(
            np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)),
            np.zeros(0), np.zeros((0, 3)),
        )
        img = render(empty, CAM, 32, 32, background=(0.1, 0.2, 0.3))
        np.testing.assert_array_equal(img.rgb, np.tile([0.1, 0.2, 0.3], (32, 32, 1)))
        np.testing.assert_array_equal(img.alpha, 0.0)

    def test_centered_gaussian_peaks_at_image_center(self):
        img = render(_single_gaussian(), CAM, 64, 64, background=(0.0, 0.0, 0.0))
        peak = np.unravel_index(np.argmax(img.rgb[..., 0]), (64, 64))
        assert peak in {(31, 31), (31, 32), (32, 31), (32, 32)}
        assert img.rgb[..., 1:].max() == 0.0  # red gaussian on black background

    def test_output_ranges(self):
        rng = np.random.default_rng(0)
        world = random_world(rng, 40)
        img = render(world, random_camera(rng), 48, 48)
        assert img.rgb.min() >= 0.0 and img.rgb.max() <= 1.0
        assert img.alpha.min() >= 0.0 and img.alpha.max() <= 1.0

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        world = random_world(rng, 25)
        cam = random_camera(rng)
        a = render(world, cam, 40, 40)
        b = render(world, cam, 40, 40)
        np.testing.assert_array_equal(a.rgb, b.rgb)
        np.testing.assert_array_equal(a.alpha, b.alpha)

    def test_occlusion_front_gaussian_wins(self):
        # a red gaussian 1 unit closer to the camera than a green one
        cam = CameraPose(distance=9.0, fovy=55.0, elevation=0.0, azimuth=90.0)
        world = WorldGaussians(
            means=np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]),
            quats=np.tile([1.0, 0.0, 0.0, 0.0], (2, 1)),
            log_scales=np.full((2, 3), np.log(0.3)),
            opacity_logits=np.array([6.0, 6.0]),
            colors=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        )
        img = render(world, cam, 64, 64, background=(0.0, 0.0, 0.0))
        center = img.rgb[31, 31]
        assert center[0] > 10 * max(center[1], 1e-9)

    def test_rejects_tiny_resolution(self):
        with pytest.raises(ValueError):
            render(_single_gaussian(), CAM, 8, 8)

    def test_singular_covariance_regularized_with_warning(self, caplog):
        world = _single_gaussian(scale=1e-9)
        with caplog.at_level(logging.WARNING):
            img = render(world, CAM, 32, 32)
        assert "singular" in caplog.text
        assert np.isfinite(img.rgb).all()

    def test_behind_camera_gaussian_invisible(self):
        world = _single_gaussian()
        world.means[0] = np.array([0.0, 0.0, 100.0])  # beyond the camera
        img = render(world, CAM, 32, 32, background=(0.0, 0.0, 0.0))
        np.testing.assert_array_equal(img.rgb, 0.0)


class TestReferenceEquivalence:
    @pytest.mark.parametrize("seed", range(8))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        world = random_world(rng, 30)
        cam = random_camera(rng)
        fast = render(world, cam, 32, 32)
        ref = render_reference(world, cam, 32, 32)
        assert np.abs(fast.rgb - ref.rgb).max() < 1e-5
        assert np.abs(fast.alpha - ref.alpha).max() < 1e-5


class TestBackward:
    def test_zero_image_grad_gives_zero_param_grads(self):
        rng = np.random.default_rng(3)
        world = random_world(rng, 20)
        cam = random_camera(rng)
        grads = render_backward(world, cam, np.zeros((32, 32, 3)))
        for arr in grads.as_dict().values():
            np.testing.assert_array_equal(arr, 0.0)

    def test_rejects_non_finite_image_grad(self):
        grad = np.zeros((32, 32, 3))
        grad[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            render_backward(_single_gaussian(), CAM, grad)

    def test_rejects_mismatched_grad_resolution(self):
        world = _single_gaussian()
        _, cache = render_with_cache(world, CAM, 32, 32)
        with pytest.raises(ValueError):
            render_backward(world, CAM, np.zeros((16, 16, 3)), cache=cache)

    def test_single_gaussian_color_gradient_finite_difference(self):
        world = _single_gaussian(color=(0.6, 0.2, 0.2))
        grad_rgb = np.ones((32, 32, 3)) / (32 * 32 * 3)
        grads = render_backward(world, CAM, grad_rgb)

        def scalar(c):
            w = _single_gaussian(color=(c, 0.2, 0.2))
            return float((render(w, CAM, 32, 32).rgb * grad_rgb).sum())

        eps = 1e-4
        fd = (scalar(0.6 + eps) - scalar(0.6 - eps)) / (2 * eps)
        np.testing.assert_allclose(grads.colors[0, 0], fd, rtol=1e-4)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=15, deadline=None)
    def test_backward_always_finite(self, seed):
        rng = np.random.default_rng(seed)
        world = random_world(rng, 15)
        cam = random_camera(rng)
        grad_rgb = rng.normal(size=(32, 32, 3))
        grads = render_backward(world, cam, grad_rgb)
        for arr in grads.as_dict().values():
            assert np.isfinite(arr).all()
