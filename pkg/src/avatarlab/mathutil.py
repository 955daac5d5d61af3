"""Small vectorized geometry helpers: quaternions, rotations, Euler angles.

Quaternions use (w, x, y, z) ordering throughout.
"""

import numpy as np


def normalize(v, axis=-1, eps=1e-12):
    """Unit-normalize vectors along `axis`."""
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    return v / np.maximum(n, eps)


def quat_normalize(q):
    return normalize(np.asarray(q, dtype=np.float64))


def quat_multiply(a, b):
    """Hamilton product a ⊗ b, broadcasting over leading dims."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_left_matrix(q):
    """4x4 matrix L with L @ p == q ⊗ p (single quaternion q)."""
    w, x, y, z = q
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ],
        dtype=np.float64,
    )


def quat_to_rotmat(q):
    """Rotation matrices from (possibly unnormalized) quaternions, (..., 4) -> (..., 3, 3)."""
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_to_quat(R):
    """Quaternion (w,x,y,z) from a single proper rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
            q = np.array(
                [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
            )
        elif i == 1:
            s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
            q = np.array(
                [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
            q = np.array(
                [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
            )
    return quat_normalize(q)


def quat_conjugate(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def rotmats_to_quats(Rs):
    """Batched rotation-matrix -> quaternion conversion, (N, 3, 3) -> (N, 4).

    Vectorized Shepperd's method: evaluate all four branch candidates and pick
    the numerically stable one per matrix.
    """
    Rs = np.asarray(Rs, dtype=np.float64)
    r00, r01, r02 = Rs[:, 0, 0], Rs[:, 0, 1], Rs[:, 0, 2]
    r10, r11, r12 = Rs[:, 1, 0], Rs[:, 1, 1], Rs[:, 1, 2]
    r20, r21, r22 = Rs[:, 2, 0], Rs[:, 2, 1], Rs[:, 2, 2]
    tr = r00 + r11 + r22
    cand = np.empty((4, Rs.shape[0], 4))
    s0 = np.sqrt(np.maximum(tr + 1.0, 1e-18)) * 2
    cand[0] = np.stack([0.25 * s0, (r21 - r12) / s0, (r02 - r20) / s0, (r10 - r01) / s0], axis=1)
    s1 = np.sqrt(np.maximum(1.0 + r00 - r11 - r22, 1e-18)) * 2
    cand[1] = np.stack([(r21 - r12) / s1, 0.25 * s1, (r01 + r10) / s1, (r02 + r20) / s1], axis=1)
    s2 = np.sqrt(np.maximum(1.0 + r11 - r00 - r22, 1e-18)) * 2
    cand[2] = np.stack([(r02 - r20) / s2, (r01 + r10) / s2, 0.25 * s2, (r12 + r21) / s2], axis=1)
    s3 = np.sqrt(np.maximum(1.0 + r22 - r00 - r11, 1e-18)) * 2
    cand[3] = np.stack([(r10 - r01) / s3, (r02 + r20) / s3, (r12 + r21) / s3, 0.25 * s3], axis=1)
    diag_arg = 1 + np.argmax(np.stack([r00, r11, r22], axis=1), axis=1)
    pick = np.where(tr > 0, 0, diag_arg)
    q = cand[pick, np.arange(Rs.shape[0])]
    return quat_normalize(q)


def euler_deg_to_rotmat(angles_deg):
    """Intrinsic z-y-x rotation from (rx, ry, rz) in degrees: R = Rz @ Ry @ Rx."""
    rx, ry, rz = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def rotmat_grad_to_quat_grad(q_raw, grad_R):
    """Backprop through quat_to_rotmat, including the internal normalization.

    q_raw: (N, 4) raw quaternions as fed to quat_to_rotmat.
    grad_R: (N, 3, 3) upstream gradients w.r.t. the rotation matrices.
    Returns (N, 4) gradients w.r.t. q_raw.
    """
    q_raw = np.asarray(q_raw, dtype=np.float64)
    norms = np.linalg.norm(q_raw, axis=-1, keepdims=True)
    qh = q_raw / np.maximum(norms, 1e-12)
    w, x, y, z = qh[..., 0], qh[..., 1], qh[..., 2], qh[..., 3]
    g = grad_R

    def e(i, j):
        return g[..., i, j]

    # dL/dq_hat[k] = sum_ij grad_R[i,j] * dR[i,j]/dq_hat[k]
    gw = 2 * (
        -z * e(0, 1) + y * e(0, 2) + z * e(1, 0) - x * e(1, 2) - y * e(2, 0) + x * e(2, 1)
    )
    gx = 2 * (
        y * e(0, 1) + z * e(0, 2) + y * e(1, 0) - 2 * x * e(1, 1) - w * e(1, 2)
        + z * e(2, 0) + w * e(2, 1) - 2 * x * e(2, 2)
    )
    gy = 2 * (
        -2 * y * e(0, 0) + x * e(0, 1) + w * e(0, 2) + x * e(1, 0) + z * e(1, 2)
        - w * e(2, 0) + z * e(2, 1) - 2 * y * e(2, 2)
    )
    gz = 2 * (
        -2 * z * e(0, 0) - w * e(0, 1) + x * e(0, 2) + w * e(1, 0) - 2 * z * e(1, 1)
        + y * e(1, 2) + x * e(2, 0) + y * e(2, 1)
    )
    grad_qh = np.stack([gw, gx, gy, gz], axis=-1)
    # project through normalization: d(q/|q|) = (I - qh qh^T)/|q|
    dot = np.sum(grad_qh * qh, axis=-1, keepdims=True)
    return (grad_qh - qh * dot) / np.maximum(norms, 1e-12)


def sigmoid(x):
    out = np.empty_like(np.asarray(x, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    out = np.where(pos, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return out


def inverse_sigmoid(y):
    y = np.asarray(y, dtype=np.float64)
    return np.log(y / (1.0 - y))
