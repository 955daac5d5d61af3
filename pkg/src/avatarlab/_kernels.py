"""Numba-compiled compositing kernels for the splat renderer.

Gaussians are processed in global front-to-back depth order; each one only
touches its screen-space bounding box. No early transmittance cutoff is
applied so the backward pass can reconstruct the forward state exactly.
"""

import numpy as np
from numba import njit

ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.999
SUPPORT_CUT = 9.0  # (3 sigma)^2 in conic units
T_CUTOFF = 1e-6  # stop compositing a pixel once this little light remains


@njit(cache=True)
def project_forward(means, quats, log_scales, opac, cam_pos, Wr, f, cx, cy,
                    width, height, z_near, det_eps, reg_px2):
    """Per-Gaussian screen-space quantities plus intermediates for backward.

    Returns (t, tz, depth, u, v, M, M3, B, R, conic, bbox, valid, n_singular);
    M = J @ Wr with J the perspective Jacobian, M3 = R diag(s), Sigma2 = B B^T
    with B = M M3. Bounding boxes use the exact support cut: q > 9 or
    alpha = op exp(-q/2) < 1/255, whichever is tighter.
    """
    N = means.shape[0]
    t = np.empty((N, 3))
    tz = np.empty(N)
    depth = np.empty(N)
    u = np.empty(N)
    v = np.empty(N)
    M = np.empty((N, 2, 3))
    M3 = np.empty((N, 3, 3))
    B = np.empty((N, 2, 3))
    R = np.empty((N, 3, 3))
    conic = np.empty((N, 3))
    bbox = np.zeros((N, 4), dtype=np.int64)
    valid = np.empty(N, dtype=np.bool_)
    n_singular = 0
    for i in range(N):
        for k in range(3):
            t[i, k] = (
                Wr[k, 0] * (means[i, 0] - cam_pos[0])
                + Wr[k, 1] * (means[i, 1] - cam_pos[1])
                + Wr[k, 2] * (means[i, 2] - cam_pos[2])
            )
        depth[i] = t[i, 2]
        ok = depth[i] > z_near
        tzi = depth[i] if ok else 1.0
        tz[i] = tzi
        u[i] = cx + f * t[i, 0] / tzi
        v[i] = cy - f * t[i, 1] / tzi

        ftz = f / tzi
        for k in range(3):
            M[i, 0, k] = ftz * Wr[0, k] - (ftz * t[i, 0] / tzi) * Wr[2, k]
            M[i, 1, k] = -ftz * Wr[1, k] + (ftz * t[i, 1] / tzi) * Wr[2, k]

        qn = np.sqrt(
            quats[i, 0] ** 2 + quats[i, 1] ** 2 + quats[i, 2] ** 2 + quats[i, 3] ** 2
        )
        qw, qx, qy, qz = quats[i, 0] / qn, quats[i, 1] / qn, quats[i, 2] / qn, quats[i, 3] / qn
        R[i, 0, 0] = 1.0 - 2.0 * (qy * qy + qz * qz)
        R[i, 0, 1] = 2.0 * (qx * qy - qw * qz)
        R[i, 0, 2] = 2.0 * (qx * qz + qw * qy)
        R[i, 1, 0] = 2.0 * (qx * qy + qw * qz)
        R[i, 1, 1] = 1.0 - 2.0 * (qx * qx + qz * qz)
        R[i, 1, 2] = 2.0 * (qy * qz - qw * qx)
        R[i, 2, 0] = 2.0 * (qx * qz - qw * qy)
        R[i, 2, 1] = 2.0 * (qy * qz + qw * qx)
        R[i, 2, 2] = 1.0 - 2.0 * (qx * qx + qy * qy)

        for k in range(3):
            sk = np.exp(log_scales[i, k])
            for j in range(3):
                M3[i, j, k] = R[i, j, k] * sk
        for r in range(2):
            for k in range(3):
                B[i, r, k] = (
                    M[i, r, 0] * M3[i, 0, k]
                    + M[i, r, 1] * M3[i, 1, k]
                    + M[i, r, 2] * M3[i, 2, k]
                )
        a = B[i, 0, 0] ** 2 + B[i, 0, 1] ** 2 + B[i, 0, 2] ** 2
        b = B[i, 0, 0] * B[i, 1, 0] + B[i, 0, 1] * B[i, 1, 1] + B[i, 0, 2] * B[i, 1, 2]
        c = B[i, 1, 0] ** 2 + B[i, 1, 1] ** 2 + B[i, 1, 2] ** 2
        det = a * c - b * b
        if ok and (det < det_eps or a <= 0.0 or c <= 0.0):
            a += reg_px2
            c += reg_px2
            det = a * c - b * b
            n_singular += 1
        if not ok:
            det = 1.0
        conic[i, 0] = c / det
        conic[i, 1] = -b / det
        conic[i, 2] = a / det

        mid = 0.5 * (a + c)
        disc = mid * mid - det
        lam_max = mid + np.sqrt(disc if disc > 0.0 else 0.0)
        if opac[i] <= ALPHA_MIN:
            ok = False
            q_cut = 0.0
        else:
            q_cut = 2.0 * np.log(opac[i] / ALPHA_MIN)
            if q_cut > SUPPORT_CUT:
                q_cut = SUPPORT_CUT
        radius = np.sqrt(q_cut * (lam_max if lam_max > 0.0 else 0.0))

        x0 = np.floor(u[i] - radius)
        x1 = np.ceil(u[i] + radius)
        y0 = np.floor(v[i] - radius)
        y1 = np.ceil(v[i] + radius)
        if x0 < 0.0:
            x0 = 0.0
        if x1 > width - 1:
            x1 = float(width - 1)
        if y0 < 0.0:
            y0 = 0.0
        if y1 > height - 1:
            y1 = float(height - 1)
        ok = ok and (x0 <= x1) and (y0 <= y1)
        valid[i] = ok
        if ok:
            bbox[i, 0] = np.int64(x0)
            bbox[i, 1] = np.int64(x1)
            bbox[i, 2] = np.int64(y0)
            bbox[i, 3] = np.int64(y1)
    return t, tz, depth, u, v, M, M3, B, R, conic, bbox, valid, n_singular


@njit(cache=True)
def project_backward(gu, gv, gcon, conic, M, M3, B, R, log_scales, t, tz,
                     f, Wr, valid):
    """Chain screen-space gradients back to world means/rotations/log-scales.

    Inverts the projection chain of `project_forward`: conic -> Sigma2 ->
    (M, M3) -> (camera point, rotation, scales). Returns (gmeans, gR,
    glog_scales); the caller maps gR onto quaternion gradients.
    """
    N = gu.shape[0]
    gmeans = np.zeros((N, 3))
    gR = np.zeros((N, 3, 3))
    glog_scales = np.zeros((N, 3))
    gS2 = np.empty((2, 2))
    P = np.empty((2, 3))
    gM = np.empty((2, 3))
    gM3 = np.empty((3, 3))
    gJ = np.empty((2, 3))
    J = np.empty((2, 3))
    gt = np.empty(3)
    for i in range(N):
        if not valid[i]:
            continue
        c0, c1, c2 = conic[i, 0], conic[i, 1], conic[i, 2]
        g0, gh, g2 = gcon[i, 0], 0.5 * gcon[i, 1], gcon[i, 2]
        # gSigma2 = -con @ Gcon @ con with con symmetric
        m00 = c0 * g0 + c1 * gh
        m01 = c0 * gh + c1 * g2
        m10 = c1 * g0 + c2 * gh
        m11 = c1 * gh + c2 * g2
        gS2[0, 0] = -(m00 * c0 + m01 * c1)
        gS2[0, 1] = -(m00 * c1 + m01 * c2)
        gS2[1, 0] = -(m10 * c0 + m11 * c1)
        gS2[1, 1] = -(m10 * c1 + m11 * c2)

        for r in range(2):
            for k in range(3):
                P[r, k] = gS2[r, 0] * B[i, 0, k] + gS2[r, 1] * B[i, 1, k]
        # gM = 2 P M3^T, gM3 = 2 M^T P
        for r in range(2):
            for j in range(3):
                gM[r, j] = 2.0 * (
                    P[r, 0] * M3[i, j, 0] + P[r, 1] * M3[i, j, 1] + P[r, 2] * M3[i, j, 2]
                )
        for j in range(3):
            for k in range(3):
                gM3[j, k] = 2.0 * (M[i, 0, j] * P[0, k] + M[i, 1, j] * P[1, k])

        for r in range(2):
            for c in range(3):
                gJ[r, c] = gM[r, 0] * Wr[c, 0] + gM[r, 1] * Wr[c, 1] + gM[r, 2] * Wr[c, 2]
                J[r, c] = M[i, r, 0] * Wr[c, 0] + M[i, r, 1] * Wr[c, 1] + M[i, r, 2] * Wr[c, 2]

        tzi = tz[i]
        for k in range(3):
            gt[k] = gu[i] * J[0, k] + gv[i] * J[1, k]
        gt[0] += gJ[0, 2] * (-f / tzi**2)
        gt[1] += gJ[1, 2] * (f / tzi**2)
        gt[2] += (
            gJ[0, 0] * (-f / tzi**2)
            + gJ[0, 2] * (2.0 * f * t[i, 0] / tzi**3)
            + gJ[1, 1] * (f / tzi**2)
            + gJ[1, 2] * (-2.0 * f * t[i, 1] / tzi**3)
        )
        for j in range(3):
            gmeans[i, j] = gt[0] * Wr[0, j] + gt[1] * Wr[1, j] + gt[2] * Wr[2, j]

        for k in range(3):
            sk = np.exp(log_scales[i, k])
            gs = gM3[0, k] * R[i, 0, k] + gM3[1, k] * R[i, 1, k] + gM3[2, k] * R[i, 2, k]
            glog_scales[i, k] = gs * sk
            for j in range(3):
                gR[i, j, k] = gM3[j, k] * sk
    return gmeans, gR, glog_scales


@njit(cache=True, fastmath=True)
def composite_forward(order, u, v, conic, opac, colors, bbox, H, W, bg):
    """Front-to-back compositing; pixels are closed once T < T_CUTOFF.

    `mark[y, x]` records the order position of the last splat composited at
    that pixel so the backward pass can replay exactly the same truncation.
    """
    rgb = np.zeros((H, W, 3))
    T = np.ones((H, W))
    mark = np.full((H, W), -1, dtype=np.int64)
    for oi in range(order.shape[0]):
        i = order[oi]
        ca, cb, cc = conic[i, 0], conic[i, 1], conic[i, 2]
        for y in range(bbox[i, 2], bbox[i, 3] + 1):
            dy = y - v[i]
            for x in range(bbox[i, 0], bbox[i, 1] + 1):
                t = T[y, x]
                if t < T_CUTOFF:
                    continue
                dx = x - u[i]
                q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                if q > SUPPORT_CUT:
                    continue
                alpha = opac[i] * np.exp(-0.5 * q)
                if alpha < ALPHA_MIN:
                    continue
                if alpha > ALPHA_MAX:
                    alpha = ALPHA_MAX
                w = t * alpha
                rgb[y, x, 0] += w * colors[i, 0]
                rgb[y, x, 1] += w * colors[i, 1]
                rgb[y, x, 2] += w * colors[i, 2]
                T[y, x] = t * (1.0 - alpha)
                mark[y, x] = oi
    for y in range(H):
        for x in range(W):
            rgb[y, x, 0] += T[y, x] * bg[0]
            rgb[y, x, 1] += T[y, x] * bg[1]
            rgb[y, x, 2] += T[y, x] * bg[2]
    return rgb, T, mark


@njit(cache=True, fastmath=True)
def composite_backward(
    order, u, v, conic, opac, colors, bbox, T_final, mark, grad_rgb, grad_alpha, bg, H, W
):
    N = u.shape[0]
    gu = np.zeros(N)
    gv = np.zeros(N)
    gcon = np.zeros((N, 3))
    gop = np.zeros(N)
    gcol = np.zeros((N, 3))
    S = np.zeros((H, W, 3))  # suffix color sum: contributions of splats behind i
    Trun = T_final.copy()
    for oi in range(order.shape[0] - 1, -1, -1):
        i = order[oi]
        ca, cb, cc = conic[i, 0], conic[i, 1], conic[i, 2]
        for y in range(bbox[i, 2], bbox[i, 3] + 1):
            dy = y - v[i]
            for x in range(bbox[i, 0], bbox[i, 1] + 1):
                if oi > mark[y, x]:  # forward closed this pixel earlier
                    continue
                dx = x - u[i]
                q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                if q > SUPPORT_CUT:
                    continue
                G = np.exp(-0.5 * q)
                alpha_raw = opac[i] * G
                if alpha_raw < ALPHA_MIN:
                    continue
                clipped = alpha_raw > ALPHA_MAX
                alpha = ALPHA_MAX if clipped else alpha_raw
                one_m = 1.0 - alpha
                Ti = Trun[y, x] / one_m
                w = Ti * alpha
                ga = 0.0
                for ch in range(3):
                    gcol[i, ch] += grad_rgb[y, x, ch] * w
                    ga += grad_rgb[y, x, ch] * (
                        Ti * colors[i, ch]
                        - (S[y, x, ch] + T_final[y, x] * bg[ch]) / one_m
                    )
                ga += grad_alpha[y, x] * T_final[y, x] / one_m
                if not clipped:
                    gop[i] += ga * G
                    gq = ga * opac[i] * (-0.5) * G
                    gu[i] -= gq * (2.0 * ca * dx + 2.0 * cb * dy)
                    gv[i] -= gq * (2.0 * cb * dx + 2.0 * cc * dy)
                    gcon[i, 0] += gq * dx * dx
                    gcon[i, 1] += gq * 2.0 * dx * dy
                    gcon[i, 2] += gq * dy * dy
                for ch in range(3):
                    S[y, x, ch] += w * colors[i, ch]
                Trun[y, x] = Ti
    return gu, gv, gcon, gop, gcol
