"""Evaluation: PSNR against hidden ground truth, an identity-consistency proxy,
a motion-stability score from block-matched displacement spectra, and a
rendering throughput measurement."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 100.0
MIN_STABILITY_FRAMES = 8


@dataclass
class MetricReport:
    psnr_db: float
    id_consistency: float
    motion_stability: float
    render_fps: float

    def as_dict(self):
        return {
            "psnr_db": self.psnr_db,
            "id_consistency": self.id_consistency,
            "motion_stability": self.motion_stability,
            "render_fps": self.render_fps,
        }


def psnr(image, reference):
    """10 * log10(1 / MSE) for [0, 1] images; capped at 100 dB when identical."""
    image = np.asarray(image, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if image.shape != reference.shape:
        raise ValueError("psnr: image shapes differ")
    mse = float(np.mean((image - reference) ** 2))
    if mse <= 10 ** (-PSNR_CAP_DB / 10):
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def _embed(frame):
    """Identity proxy: 8x8 downsampled RGB + joint 4x4x4 color histogram."""
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[:2]
    ys = (np.arange(8) * h // 8)
    xs = (np.arange(8) * w // 8)
    hb = max(h // 8, 1)
    wb = max(w // 8, 1)
    small = np.empty((8, 8, 3))
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            small[i, j] = frame[y : y + hb, x : x + wb].reshape(-1, 3).mean(axis=0)
    bins = np.clip((frame.reshape(-1, 3) * 4).astype(int), 0, 3)
    flat = bins[:, 0] * 16 + bins[:, 1] * 4 + bins[:, 2]
    hist = np.bincount(flat, minlength=64).astype(np.float64)
    hist /= hist.sum()
    emb = np.concatenate([small.ravel(), hist])
    return emb - emb.mean()


def id_consistency(frames, reference_frame):
    """Mean cosine similarity between frame embeddings and the reference's."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[0] < 1:
        raise ValueError("id_consistency needs at least one frame")
    ref = _embed(reference_frame)
    ref_n = np.linalg.norm(ref)
    scores = []
    for f in frames:
        e = _embed(f)
        denom = np.linalg.norm(e) * ref_n
        scores.append(float(e @ ref) / max(denom, 1e-12))
    return float(np.mean(scores))


def _block_match(prev, cur, cy, cx, patch, search):
    """Sub-pixel displacement of the patch at (cy, cx) via SAD + parabola fit.

    Patches are mean-removed, making the estimate invariant to global
    brightness shifts.
    """
    ref = prev[cy : cy + patch, cx : cx + patch]
    ref = ref - ref.mean()
    costs = np.empty((2 * search + 1, 2 * search + 1))
    for dy in range(-search, search + 1):
        for dx in range(-search, search + 1):
            win = cur[cy + dy : cy + dy + patch, cx + dx : cx + dx + patch]
            costs[dy + search, dx + search] = np.abs((win - win.mean()) - ref).sum()
    iy, ix = np.unravel_index(np.argmin(costs), costs.shape)

    def refine(c_m, c_0, c_p):
        denom = c_m - 2 * c_0 + c_p
        if abs(denom) < 1e-12:
            return 0.0
        return float(np.clip(0.5 * (c_m - c_p) / denom, -0.5, 0.5))

    dy = iy - search
    dx = ix - search
    if 0 < iy < 2 * search:
        dy += refine(costs[iy - 1, ix], costs[iy, ix], costs[iy + 1, ix])
    if 0 < ix < 2 * search:
        dx += refine(costs[iy, ix - 1], costs[iy, ix], costs[iy, ix + 1])
    return dy, dx


def motion_stability(frames, grid=4, patch=8, search=3):
    """Low-frequency fraction of the block-matched motion spectrum, in [0, 1].

    Displacements are estimated frame-to-frame on a coarse grid, mean-centered
    per grid point, and scored by the energy in the lowest quarter of the
    temporal frequency band over the total. All-zero motion scores 1.0.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[0] < MIN_STABILITY_FRAMES:
        raise ValueError(f"motion_stability needs >= {MIN_STABILITY_FRAMES} frames")
    F, H, W = frames.shape[:3]
    gray = frames.mean(axis=3)
    margin = search + 1
    ys = np.linspace(margin, H - patch - margin, grid).astype(int)
    xs = np.linspace(margin, W - patch - margin, grid).astype(int)

    signals = np.zeros((grid * grid * 2, F - 1))
    for t in range(F - 1):
        for gi, cy in enumerate(ys):
            for gj, cx in enumerate(xs):
                dy, dx = _block_match(gray[t], gray[t + 1], cy, cx, patch, search)
                base = (gi * grid + gj) * 2
                signals[base, t] = dy
                signals[base + 1, t] = dx

    scores = []
    n = signals.shape[1]
    n_low = max(1, (n - 1) // 4)  # lowest quarter of non-DC rfft bins
    for sig in signals:
        sig = sig - sig.mean()
        spec = np.abs(np.fft.rfft(sig)) ** 2
        total = spec[1:].sum()
        if total < 1e-18:
            scores.append(1.0)
        else:
            scores.append(float(spec[1 : 1 + n_low].sum() / total))
    return float(np.mean(scores))


def render_fps(avatar, head, camera, resolution, n_trials=10):
    """Median frames/second of the forward render, after one warm-up call."""
    from .avatar import deform_gaussians
    from .headmodel import Expression, deform_mesh
    from .render import render

    if n_trials < 10:
        raise ValueError("n_trials must be >= 10")
    mesh = deform_mesh(head, Expression())
    world, _ = deform_gaussians(avatar, mesh)
    render(world, camera, resolution, resolution)  # warm-up (JIT, caches)
    times = []
    for _ in range(n_trials):
        t0 = time.perf_counter()
        render(world, camera, resolution, resolution)
        times.append(time.perf_counter() - t0)
    return float(1.0 / np.median(times))


def video_report(frames, reference_frame, gt_frames=None, fps=float("nan")):
    """Assemble a MetricReport for a frame stack."""
    p = PSNR_CAP_DB
    if gt_frames is not None:
        p = float(np.mean([psnr(f, g) for f, g in zip(frames, gt_frames)]))
    return MetricReport(
        psnr_db=p,
        id_consistency=id_consistency(frames, reference_frame),
        motion_stability=motion_stability(frames),
        render_fps=fps,
    )
