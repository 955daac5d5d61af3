import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avatarlab.headmodel import (
    N_BLENDSHAPES,
    N_LANDMARKS,
    CameraPose,
    Expression,
    deform_mesh,
    landmark_colors,
    landmark_map,
    project,
)

FRONTAL = CameraPose(distance=9.0, fovy=55.0, elevation=0.0, azimuth=90.0)


class TestHeadConstruction:
    def test_default_subdivision_gives_1280_triangles(self, head):
        assert head.n_triangles == 1280

    def test_triangles_index_valid_vertices(self, head):
        assert head.triangles.min() >= 0
        assert head.triangles.max() < head.n_vertices

    def test_one_blendshape_delta_per_vertex(self, head):
        assert head.blendshapes.shape == (N_BLENDSHAPES, head.n_vertices, 3)

    def test_landmark_indices_distinct(self, head):
        assert len(set(head.landmark_indices.tolist())) == N_LANDMARKS

    def test_mesh_is_watertight(self, head):
        # every edge is shared by exactly two triangles
        edges = {}
        for tri in head.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                edges[key] = edges.get(key, 0) + 1
        assert all(count == 2 for count in edges.values())

    def test_neutral_mesh_is_bilaterally_symmetric(self, head):
        mirrored = head.base_vertices * np.array([-1.0, 1.0, 1.0])
        # every mirrored vertex coincides with some original vertex
        d2 = ((mirrored[:, None, :] - head.base_vertices[None, :, :]) ** 2).sum(axis=2)
        assert np.sqrt(d2.min(axis=1)).max() < 1e-6

    def test_eyelid_mask_marks_eye_close_support(self, head):
        support = np.abs(head.blendshapes[2]).sum(axis=1) + np.abs(head.blendshapes[3]).sum(axis=1)
        assert np.array_equal(head.eyelid_vertex_mask, support > 1e-9)


class TestDeformMesh:
    def test_zero_coefficients_identity_pose_is_base(self, head):
        mesh = deform_mesh(head, Expression())
        np.testing.assert_array_equal(mesh.vertices, head.base_vertices)

    def test_single_unit_displaces_by_its_delta(self, head):
        mesh = deform_mesh(head, Expression.unit(0, 1.0))
        np.testing.assert_allclose(
            mesh.vertices, head.base_vertices + head.blendshapes[0], atol=1e-12
        )

    def test_linearity_superposition(self, head):
        rng = np.random.default_rng(0)
        for _ in range(10):
            a = rng.uniform(0, 0.5, N_BLENDSHAPES)
            b = rng.uniform(0, 0.5, N_BLENDSHAPES)
            da = deform_mesh(head, Expression(a)).vertices - head.base_vertices
            db = deform_mesh(head, Expression(b)).vertices - head.base_vertices
            dab = deform_mesh(head, Expression(a + b)).vertices - head.base_vertices
            np.testing.assert_allclose(dab, da + db, atol=1e-9)

    def test_coefficients_clamped_to_unit_interval(self):
        e = Expression(np.full(N_BLENDSHAPES, 3.0))
        assert e.coefficients.max() == 1.0
        e = Expression(np.full(N_BLENDSHAPES, -3.0))
        assert e.coefficients.min() == 0.0

    def test_pose_rotation_applied_after_blendshapes(self, head):
        expr = Expression.unit(0, 1.0, pose=(0.0, 90.0, 0.0))
        unposed = deform_mesh(head, Expression.unit(0, 1.0))
        posed = deform_mesh(head, expr)
        norms_a = np.linalg.norm(unposed.vertices, axis=1)
        norms_b = np.linalg.norm(posed.vertices, axis=1)
        np.testing.assert_allclose(norms_a, norms_b, atol=1e-9)
        assert not np.allclose(unposed.vertices, posed.vertices)


class TestProjection:
    def test_head_center_maps_to_image_center(self):
        uv, depth, visible = project(FRONTAL, np.zeros((1, 3)), 64, 64)
        np.testing.assert_allclose(uv[0], [31.5, 31.5], atol=1e-9)
        np.testing.assert_allclose(depth[0], FRONTAL.distance)
        assert visible[0]

    def test_camera_right_offset_moves_pixel_x_only(self):
        right = FRONTAL.rotation_w2c()[0]
        uv0, _, _ = project(FRONTAL, np.zeros((1, 3)), 64, 64)
        uv1, _, _ = project(FRONTAL, right[None, :] * 0.5, 64, 64)
        assert uv1[0, 0] > uv0[0, 0]
        np.testing.assert_allclose(uv1[0, 1], uv0[0, 1], atol=1e-9)

    def test_halving_fovy_tangent_doubles_offset(self):
        fovy = 60.0
        half_tan = np.tan(np.radians(fovy) / 2) / 2
        narrow = 2 * np.degrees(np.arctan(half_tan))
        cam_wide = CameraPose(9.0, fovy, 0.0, 90.0)
        cam_narrow = CameraPose(9.0, narrow, 0.0, 90.0)
        point = cam_wide.rotation_w2c()[0][None, :] * 0.7
        off_wide = project(cam_wide, point, 128, 128)[0][0, 0] - 63.5
        off_narrow = project(cam_narrow, point, 128, 128)[0][0, 0] - 63.5
        np.testing.assert_allclose(off_narrow, 2 * off_wide, rtol=1e-9)

    def test_point_behind_camera_not_visible(self):
        behind = FRONTAL.position * 2.0
        _, _, visible = project(FRONTAL, behind[None, :], 64, 64)
        assert not visible[0]

    @given(az=st.floats(0.0, 180.0), el=st.floats(-45.0, 45.0))
    @settings(max_examples=25, deadline=None)
    def test_camera_always_looks_at_origin(self, az, el):
        cam = CameraPose(distance=9.0, fovy=55.0, elevation=el, azimuth=az)
        uv, depth, visible = project(cam, np.zeros((1, 3)), 64, 64)
        assert visible[0]
        np.testing.assert_allclose(uv[0], [31.5, 31.5], atol=1e-6)


class TestLandmarkMap:
    def test_frontal_neutral_symmetric_within_one_pixel(self, head):
        img = landmark_map(head, Expression(), FRONTAL, 128, 128)
        xs = []
        for color in landmark_colors():
            mask = np.all(np.abs(img - color) < 1e-9, axis=2)
            if mask.any():
                xs.append(np.argwhere(mask)[:, 1].mean())
        assert len(xs) >= 8  # most landmarks visible from the front
        xs = np.array(xs)
        mirrored = 127.0 - xs
        for m in mirrored:
            assert np.abs(xs - m).min() <= 1.0

    def test_jaw_open_moves_jaw_discs_down(self, head):
        closed = landmark_map(head, Expression(), FRONTAL, 128, 128)
        opened = landmark_map(head, Expression.unit(0, 1.0), FRONTAL, 128, 128)
        colors = landmark_colors()
        moved = 0
        for i in (13, 14, 15):  # jaw landmark ids
            m0 = np.all(np.abs(closed - colors[i]) < 1e-9, axis=2)
            m1 = np.all(np.abs(opened - colors[i]) < 1e-9, axis=2)
            if m0.any() and m1.any():
                y0 = np.argwhere(m0)[:, 0].mean()
                y1 = np.argwhere(m1)[:, 0].mean()
                assert y1 > y0
                moved += 1
        assert moved >= 1

    def test_deterministic(self, head):
        a = landmark_map(head, Expression.unit(1, 0.5), FRONTAL, 64, 64)
        b = landmark_map(head, Expression.unit(1, 0.5), FRONTAL, 64, 64)
        np.testing.assert_array_equal(a, b)

    def test_nonzero_pixels_only_inside_disc_radii(self, head):
        size = 128
        img = landmark_map(head, Expression(), FRONTAL, size, size)
        mesh = deform_mesh(head, Expression())
        uv, _, visible = project(FRONTAL, mesh.vertices[head.landmark_indices], size, size)
        radius = max(2.0 * size / 512.0, 0.75)
        nz = np.argwhere(img.any(axis=2))
        centers = uv[visible]
        for y, x in nz:
            d = np.sqrt(((centers - [x, y]) ** 2).sum(axis=1)).min()
            assert d <= radius + 1e-9

    def test_camera_inside_head_still_renders_valid_image(self, head):
        # landmarks behind the camera plane are simply absent, never an error
        inside = CameraPose(distance=0.001, fovy=55.0, elevation=0.0, azimuth=270.0)
        img = landmark_map(head, Expression(), inside, 64, 64)
        assert img.shape == (64, 64, 3)
        assert np.isfinite(img).all()

    def test_small_resolution_rejected(self, head):
        with pytest.raises(ValueError):
            landmark_map(head, Expression(), FRONTAL, 8, 8)
