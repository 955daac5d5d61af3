import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avatarlab.avatar import (
    WorldGaussians,
    deform_backward,
    deform_gaussians,
    export_ply,
    frame_quantities,
    import_ply,
    init_avatar,
    opacities,
    renormalize_quaternions,
    triangle_frames,
)
from avatarlab.headmodel import Expression, Mesh, deform_mesh
from avatarlab.mathutil import euler_deg_to_rotmat


def _neutral_mesh(head):
    return Mesh(head.base_vertices.copy(), head.triangles)


class TestInit:
    def test_paper_density_count(self, head):
        avatar = init_avatar(head, gaussians_per_triangle=10)
        assert head.n_triangles == 1280
        assert avatar.mu_local.shape[0] == 12800

    def test_mu_local_lies_in_triangle_plane(self, head, avatar):
        # local frame z is the triangle normal, so in-plane means mu_z == 0
        np.testing.assert_allclose(avatar.mu_local[:, 2], 0.0, atol=1e-12)

    def test_initial_position_is_inside_its_triangle(self, head, avatar):
        mesh = _neutral_mesh(head)
        world, _ = deform_gaussians(avatar, mesh)
        v = mesh.vertices[mesh.triangles][avatar.triangle_id]  # (N, 3, 3)
        # solve barycentric coordinates of each world mean in its triangle
        for i in range(0, world.n_gaussians, 257):
            A = np.column_stack([v[i, 1] - v[i, 0], v[i, 2] - v[i, 0]])
            rhs = world.means[i] - v[i, 0]
            bc, *_ = np.linalg.lstsq(A, rhs, rcond=None)
            assert -1e-9 <= bc[0] and -1e-9 <= bc[1] and bc.sum() <= 1 + 1e-9
            np.testing.assert_allclose(A @ bc, rhs, atol=1e-9)

    def test_eyelid_opacity_rule(self, head, avatar):
        eyelid_tri = head.eyelid_vertex_mask[head.triangles].any(axis=1)
        per_gaussian = eyelid_tri[avatar.triangle_id]
        op = opacities(avatar)
        np.testing.assert_allclose(op[per_gaussian], 0.9, atol=1e-9)
        np.testing.assert_allclose(op[~per_gaussian], 0.1, atol=1e-9)

    def test_initial_color_mid_gray_and_identity_rotation(self, avatar):
        np.testing.assert_array_equal(avatar.color, 0.5)
        np.testing.assert_array_equal(avatar.rot_local[:, 0], 1.0)
        np.testing.assert_array_equal(avatar.rot_local[:, 1:], 0.0)

    def test_rejects_zero_density(self, head):
        with pytest.raises(ValueError):
            init_avatar(head, gaussians_per_triangle=0)


class TestTriangleFrames:
    def test_frames_orthonormal_positive_scale(self, head):
        mesh = _neutral_mesh(head)
        origins, R, scale = triangle_frames(mesh)
        eye = np.einsum("nij,nkj->nik", R, R)
        np.testing.assert_allclose(eye, np.broadcast_to(np.eye(3), eye.shape), atol=1e-9)
        np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-9)
        assert (scale > 0).all()

    def test_degenerate_triangle_falls_back_to_previous(self, head, caplog):
        mesh = _neutral_mesh(head)
        previous = triangle_frames(mesh)
        bad = Mesh(mesh.vertices.copy(), mesh.triangles)
        tri = bad.triangles[0]
        bad.vertices[tri[1]] = bad.vertices[tri[0]]
        bad.vertices[tri[2]] = bad.vertices[tri[0]]
        with caplog.at_level(logging.WARNING):
            origins, R, scale = triangle_frames(bad, previous=previous)
        assert "degenerate" in caplog.text
        np.testing.assert_array_equal(R[0], previous[1][0])
        np.testing.assert_array_equal(scale[0], previous[2][0])

    def test_degenerate_triangle_without_fallback_rejected(self, head):
        mesh = _neutral_mesh(head)
        bad = Mesh(mesh.vertices.copy(), mesh.triangles)
        tri = bad.triangles[0]
        bad.vertices[tri[1]] = bad.vertices[tri[0]]
        bad.vertices[tri[2]] = bad.vertices[tri[0]]
        with pytest.raises(ValueError):
            triangle_frames(bad)


class TestDeform:
    def test_translation_equivariance(self, head, avatar):
        mesh = _neutral_mesh(head)
        t = np.array([0.3, -1.2, 0.8])
        w0, _ = deform_gaussians(avatar, mesh)
        w1, _ = deform_gaussians(avatar, mesh.translated(t))
        np.testing.assert_allclose(w1.means, w0.means + t, atol=1e-9)
        np.testing.assert_allclose(w1.covariances(), w0.covariances(), atol=1e-9)

    @given(
        angles=st.tuples(
            st.floats(-180, 180), st.floats(-90, 90), st.floats(-180, 180)
        )
    )
    @settings(max_examples=10, deadline=None)
    def test_rigid_rotation_equivariance(self, small_head, angles):
        avatar = init_avatar(small_head, 1)
        mesh = _neutral_mesh(small_head)
        R = euler_deg_to_rotmat(np.asarray(angles))
        rotated = Mesh(mesh.vertices @ R.T, mesh.triangles)
        w0, _ = deform_gaussians(avatar, mesh)
        w1, _ = deform_gaussians(avatar, rotated)
        np.testing.assert_allclose(w1.means, w0.means @ R.T, atol=1e-7)
        np.testing.assert_allclose(
            w1.covariances(), R @ w0.covariances() @ R.T, atol=1e-7
        )

    def test_zero_offset_gaussian_sits_at_centroid(self, head):
        avatar = init_avatar(head, 1)
        avatar.mu_local[:] = 0.0
        mesh = deform_mesh(head, Expression.unit(0, 0.7))
        world, frames = deform_gaussians(avatar, mesh)
        centroids = mesh.vertices[mesh.triangles].mean(axis=1)
        np.testing.assert_allclose(world.means, centroids[avatar.triangle_id], atol=1e-9)

    def test_deterministic_and_side_effect_free(self, head, avatar):
        mesh = deform_mesh(head, Expression.unit(1, 0.4))
        before = avatar.mu_local.copy()
        w0, _ = deform_gaussians(avatar, mesh)
        w1, _ = deform_gaussians(avatar, mesh)
        np.testing.assert_array_equal(w0.means, w1.means)
        np.testing.assert_array_equal(w0.quats, w1.quats)
        np.testing.assert_array_equal(avatar.mu_local, before)

    def test_precomputed_frames_match_direct_path(self, head, avatar):
        mesh = deform_mesh(head, Expression.unit(2, 0.9))
        w0, _ = deform_gaussians(avatar, mesh)
        frames = frame_quantities(mesh)
        w1, _ = deform_gaussians(avatar, frames=frames)
        np.testing.assert_array_equal(w0.means, w1.means)
        np.testing.assert_array_equal(w0.log_scales, w1.log_scales)

    def test_backward_maps_world_grads_to_local_groups(self, small_head):
        avatar = init_avatar(small_head, 1)
        mesh = _neutral_mesh(small_head)
        world, frames = deform_gaussians(avatar, mesh)
        rng = np.random.default_rng(5)
        world_grads = {
            "means": rng.normal(size=world.means.shape),
            "quats": rng.normal(size=world.quats.shape),
            "log_scales": rng.normal(size=world.log_scales.shape),
            "opacity_logits": rng.normal(size=world.opacity_logits.shape),
            "colors": rng.normal(size=world.colors.shape),
        }
        local = deform_backward(avatar, frames, world_grads)
        # finite-difference check on mu_local through the deform chain
        def scalar(av):
            w, _ = deform_gaussians(av, mesh)
            return float(
                (w.means * world_grads["means"]).sum()
                + (w.quats * world_grads["quats"]).sum()
                + (w.log_scales * world_grads["log_scales"]).sum()
            )

        eps = 1e-6
        idx = [(0, 0), (3, 1), (7, 2)]
        for i, j in idx:
            av = avatar.copy()
            av.mu_local[i, j] += eps
            up = scalar(av)
            av.mu_local[i, j] -= 2 * eps
            down = scalar(av)
            fd = (up - down) / (2 * eps)
            np.testing.assert_allclose(local["mu_local"][i, j], fd, rtol=1e-6)


class TestPly:
    def test_round_trip_bit_exact(self, head, avatar, tmp_path):
        world, _ = deform_gaussians(avatar, _neutral_mesh(head))
        path = tmp_path / "avatar.ply"
        export_ply(world, path)
        back = import_ply(path)
        np.testing.assert_array_equal(back.means, world.means)
        np.testing.assert_array_equal(back.quats, world.quats)
        np.testing.assert_array_equal(back.log_scales, world.log_scales)
        np.testing.assert_array_equal(back.opacity_logits, world.opacity_logits)
        np.testing.assert_allclose(back.colors, world.colors, atol=1e-12)

    def test_header_vertex_count_matches(self, head, avatar, tmp_path):
        world, _ = deform_gaussians(avatar, _neutral_mesh(head))
        path = tmp_path / "avatar.ply"
        export_ply(world, path)
        header = path.read_bytes().split(b"end_header")[0].decode()
        assert f"element vertex {world.n_gaussians}" in header

    def test_empty_avatar_valid_ply(self, tmp_path):
        empty = WorldGaussians(
            means=np.zeros((0, 3)), quats=np.zeros((0, 4)),
            log_scales=np.zeros((0, 3)), opacity_logits=np.zeros(0),
            colors=np.zeros((0, 3)),
        )
        path = tmp_path / "empty.ply"
        export_ply(empty, path)
        back = import_ply(path)
        assert back.n_gaussians == 0

    def test_write_failure_reports_path(self, head, avatar):
        world, _ = deform_gaussians(avatar, _neutral_mesh(head))
        with pytest.raises(OSError, match="no/such/dir"):
            export_ply(world, "/no/such/dir/avatar.ply")

    def test_f4_export_close_but_compact(self, head, avatar, tmp_path):
        world, _ = deform_gaussians(avatar, _neutral_mesh(head))
        p8 = tmp_path / "a8.ply"
        p4 = tmp_path / "a4.ply"
        export_ply(world, p8)
        export_ply(world, p4, dtype="f4")
        assert p4.stat().st_size < p8.stat().st_size
        back = import_ply(p4)
        np.testing.assert_allclose(back.means, world.means, atol=1e-4)


def test_renormalize_restores_unit_quaternions(head):
    avatar = init_avatar(head, 1)
    rng = np.random.default_rng(2)
    avatar.rot_local = rng.normal(size=avatar.rot_local.shape) * 3.0
    renormalize_quaternions(avatar)
    np.testing.assert_allclose(np.linalg.norm(avatar.rot_local, axis=1), 1.0, atol=1e-12)
