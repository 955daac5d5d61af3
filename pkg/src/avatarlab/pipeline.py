"""Alternating dataset refresh and avatar reconstruction.

The dataset holds pseudo ground-truth videos produced by the generator oracle.
Every `update_interval` iterations one active sample is re-generated under
guidance from the current avatar; every iteration the avatar takes one
reconstruction step on a randomly selected active sample. The avatar is
supervised only by these pseudo ground-truth videos; hidden ground truth is
reached exclusively through the oracle for evaluation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .avatar import (
    GaussianAvatar,
    deform_backward,
    deform_gaussians,
    frame_quantities,
    init_avatar,
)
from .curriculum import (
    SUBSET_SPATIAL,
    SUBSET_TEMPORAL_REAL,
    SUBSET_TEMPORAL_SYN,
    CurriculumConfig,
    clamp_trajectory,
    sample_camera,
    spatial_expression,
    spatial_trajectory,
    stage,
    temporal_expressions,
)
from .headmodel import (
    N_BLENDSHAPES,
    CameraPose,
    Expression,
    ParametricHead,
    build_head,
    deform_mesh,
    landmark_map,
)
from .metrics import psnr
from .optimize import (
    AdamState,
    LossWeights,
    learning_rates_at,
    loss_total,
    optimizer_step,
)
from .oracle import GuidedRequest, OracleWorld, generate, gt_render
from .render import DEFAULT_BACKGROUND, render_backward, render_with_cache

log = logging.getLogger(__name__)

MODES = ("progressive", "random", "one-time", "no-spatial", "no-temporal")
SUBSET_RANDOM = "random"  # diverse uncurated samples used by random/one-time modes


class NumericalAbort(RuntimeError):
    """Raised when the training loss turns non-finite."""


@dataclass
class TrainLoopConfig:
    update_interval: int = 30
    total_iters: int = 2000
    resolution: int = 64
    gaussians_per_triangle: int = 2
    mode: str = "progressive"
    eval_interval: int = 100
    checkpoint_interval: int = 500
    head_subdiv: int = 3
    head_proportions: tuple = (1.0, 1.3, 1.1)
    learning_rates: Optional[dict] = None

    def __post_init__(self):
        if self.update_interval < 1:
            raise ValueError("update_interval must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class DatasetSample:
    cameras: list
    expressions: list
    subset: str
    sample_seed: int
    unit_id: Optional[int] = None
    trajectory: Optional[list] = None  # full pre-defined path (spatial samples)
    video: Optional[np.ndarray] = None
    last_refreshed_iter: int = -1

    def __post_init__(self):
        if len(self.cameras) != len(self.expressions):
            raise ValueError("sample cameras/expressions length mismatch")


def should_update(iteration, config: TrainLoopConfig):
    """Dataset refresh cadence; iteration 0 performs the initial generation."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    return iteration % config.update_interval == 0


def select_sample(samples, active_subsets, rng):
    """Uniform draw over samples whose subset is currently active."""
    idxs = [i for i, s in enumerate(samples) if s.subset in active_subsets]
    if not idxs:
        raise ValueError("no active samples to select from")
    return idxs[int(rng.integers(len(idxs)))]


class DeformCache:
    """Memoizes expression -> (deformed mesh, triangle-frame tensors).

    Both depend only on the head and the expression, never on avatar
    parameters, so they are safely reused across training iterations.
    """

    def __init__(self, head: ParametricHead):
        self.head = head
        self._memo = {}

    def get(self, expression: Expression):
        key = expression.coefficients.tobytes() + expression.pose.tobytes()
        hit = self._memo.get(key)
        if hit is None:
            mesh = deform_mesh(self.head, expression)
            hit = (mesh, frame_quantities(mesh))
            self._memo[key] = hit
        return hit


def render_avatar_video(avatar, head, cameras, expressions, resolution,
                        background=None, with_caches=False, deform_cache=None):
    """Render the avatar over a (P, E) sequence; (F, H, W, 3) rgb stack."""
    frames = np.empty((len(cameras), resolution, resolution, 3))
    caches = []
    for i, (cam, expr) in enumerate(zip(cameras, expressions)):
        if deform_cache is not None:
            mesh, tri_frames = deform_cache.get(expr)
        else:
            mesh, tri_frames = deform_mesh(head, expr), None
        world, tri_frames = deform_gaussians(avatar, mesh, frames=tri_frames)
        img, cache = render_with_cache(world, cam, resolution, resolution, background)
        frames[i] = img.rgb
        caches.append((world, tri_frames, cache))
    if with_caches:
        return frames, caches
    return frames


def _landmark_video(head, cameras, expressions, resolution):
    return np.stack(
        [landmark_map(head, e, c, resolution, resolution) for c, e in zip(cameras, expressions)]
    )


def update_sample(sample: DatasetSample, avatar: GaussianAvatar, head: ParametricHead,
                  world: OracleWorld, iteration, curriculum: CurriculumConfig,
                  resolution, background=None, deform_cache=None):
    """Refresh one sample's pseudo ground-truth video under avatar guidance.

    Spatial samples are re-clamped to the current iteration first, so stored
    frames and supervision cameras always agree.
    """
    if sample.subset == SUBSET_SPATIAL:
        sample.cameras = clamp_trajectory(sample.trajectory, iteration, curriculum)
    guidance = render_avatar_video(avatar, head, sample.cameras, sample.expressions,
                                   resolution, background, deform_cache=deform_cache)
    landmarks = _landmark_video(head, sample.cameras, sample.expressions, resolution)
    request = GuidedRequest(
        cameras=sample.cameras,
        expressions=sample.expressions,
        guidance_frames=guidance,
        landmark_frames=landmarks,
        sample_seed=sample.sample_seed,
    )
    try:
        sample.video = generate(world, request, resolution, resolution, background=background)
    except ValueError as exc:
        raise ValueError(f"oracle rejected refresh of sample seed={sample.sample_seed}: {exc}") from exc
    sample.last_refreshed_iter = iteration
    return sample


def _random_sequence(rng, curriculum: CurriculumConfig):
    """Uncurated (P, E): per-frame uniform cameras and multi-unit expressions."""
    cams = [sample_camera(SUBSET_SPATIAL, rng, curriculum) for _ in range(curriculum.n_frames)]
    exprs = []
    for _ in range(curriculum.n_frames):
        c = np.zeros(N_BLENDSHAPES)
        units = rng.choice(N_BLENDSHAPES, size=int(rng.integers(1, 4)), replace=False)
        c[units] = rng.uniform(0.0, 1.0, size=len(units))
        exprs.append(Expression(c))
    return cams, exprs


def _seed_int(rng):
    return int(rng.integers(0, 2**31 - 1))


def build_initial_dataset(mode, curriculum: CurriculumConfig, rng):
    """Samples present at iteration 0 (videos filled in by the first refreshes)."""
    samples = []
    if mode in ("progressive", "no-temporal"):
        samples += _make_spatial_samples(curriculum, rng)
    elif mode == "no-spatial":
        samples += make_temporal_samples(SUBSET_TEMPORAL_SYN, curriculum, rng)
    elif mode in ("random", "one-time"):
        n = curriculum.n_spatial + curriculum.n_temporal_syn + curriculum.n_temporal_real
        for _ in range(n):
            cams, exprs = _random_sequence(rng, curriculum)
            samples.append(DatasetSample(cams, exprs, SUBSET_RANDOM, _seed_int(rng)))
    return samples


def _make_spatial_samples(curriculum, rng):
    samples = []
    for i in range(curriculum.n_spatial):
        traj = spatial_trajectory(rng, curriculum)
        expr = spatial_expression(i, curriculum)
        samples.append(
            DatasetSample(
                cameras=clamp_trajectory(traj, 0, curriculum),
                expressions=[expr] * curriculum.n_frames,
                subset=SUBSET_SPATIAL,
                sample_seed=_seed_int(rng),
                unit_id=i % N_BLENDSHAPES,
                trajectory=traj,
            )
        )
    return samples


def make_temporal_samples(subset, curriculum, rng):
    n = curriculum.n_temporal_syn if subset == SUBSET_TEMPORAL_SYN else curriculum.n_temporal_real
    samples = []
    for _ in range(n):
        cam = sample_camera(subset, rng, curriculum)
        exprs = temporal_expressions(subset, rng, curriculum)
        samples.append(
            DatasetSample(
                cameras=[cam] * curriculum.n_frames,
                expressions=exprs,
                subset=subset,
                sample_seed=_seed_int(rng),
            )
        )
    return samples


def _active_subsets(mode, k, curriculum):
    if mode in ("random", "one-time"):
        return {SUBSET_RANDOM}
    if mode == "no-temporal":
        return {SUBSET_SPATIAL}
    if mode == "no-spatial":
        active = {SUBSET_TEMPORAL_SYN}
        if k >= curriculum.k_temporal_real:
            active.add(SUBSET_TEMPORAL_REAL)
        return active
    return stage(k, curriculum)


def heldout_protocol():
    """Fixed evaluation grid: frontal + side cameras, neutral to exaggerated faces."""
    cams = [CameraPose(9.25, 55.0, 0.0, az) for az in (90.0, 160.0, 20.0, 135.0, 45.0)]
    multi = np.zeros(N_BLENDSHAPES)
    multi[[0, 1, 4, 5]] = (0.5, 1.0, 0.8, 0.8)
    exprs = [Expression(), Expression.unit(0, 1.0), Expression(multi)]
    return cams, exprs


def evaluate_heldout(avatar, head, world: OracleWorld, resolution, background=None,
                     deform_cache=None, gt_cache=None):
    """Mean held-out PSNR vs hidden GT, plus the frontal/neutral PSNR.

    `gt_cache` optionally memoizes the hidden GT renders, which are fixed for
    a given oracle world and protocol.
    """
    cams, exprs = heldout_protocol()
    scores = []
    frontal = None
    for ci, cam in enumerate(cams):
        for ei, expr in enumerate(exprs):
            if deform_cache is not None:
                mesh, tri_frames = deform_cache.get(expr)
            else:
                mesh, tri_frames = deform_mesh(head, expr), None
            wg, _ = deform_gaussians(avatar, mesh, frames=tri_frames)
            img, _ = render_with_cache(wg, cam, resolution, resolution, background)
            if gt_cache is not None and (ci, ei) in gt_cache:
                ref = gt_cache[(ci, ei)]
            else:
                ref = gt_render(world, cam, expr, resolution, resolution, background)
                if gt_cache is not None:
                    gt_cache[(ci, ei)] = ref
            p = psnr(img.rgb, ref)
            scores.append(p)
            if ci == 0 and ei == 0:
                frontal = p
    return float(np.mean(scores)), float(frontal)


def train(config: TrainLoopConfig, curriculum: CurriculumConfig, world: OracleWorld,
          seed, weights: Optional[LossWeights] = None, on_metrics=None, on_checkpoint=None):
    """Run the full loop; returns (avatar, metrics log list)."""
    weights = weights or LossWeights()
    curriculum = curriculum.rescaled(config.total_iters)
    head = build_head(config.head_subdiv, config.head_proportions)
    avatar = init_avatar(head, config.gaussians_per_triangle)
    state = AdamState()
    background = DEFAULT_BACKGROUND

    rng_dataset = np.random.default_rng([abs(seed), 1])
    rng_select = np.random.default_rng([abs(seed), 2])
    deform_cache = DeformCache(head)
    gt_cache = {}

    samples = build_initial_dataset(config.mode, curriculum, rng_dataset)
    for s in samples:
        update_sample(s, avatar, head, world, 0, curriculum, config.resolution,
                      background, deform_cache)

    logs = []
    refresh_ptr = 0
    added_syn = added_real = config.mode not in ("progressive", "no-spatial")
    for k in range(config.total_iters):
        active = _active_subsets(config.mode, k, curriculum)

        if not added_syn and SUBSET_TEMPORAL_SYN in active:
            new = make_temporal_samples(SUBSET_TEMPORAL_SYN, curriculum, rng_dataset)
            for s in new:
                update_sample(s, avatar, head, world, k, curriculum, config.resolution,
                              background, deform_cache)
            samples += new
            added_syn = True
        if not added_real and SUBSET_TEMPORAL_REAL in active:
            new = make_temporal_samples(SUBSET_TEMPORAL_REAL, curriculum, rng_dataset)
            for s in new:
                update_sample(s, avatar, head, world, k, curriculum, config.resolution,
                              background, deform_cache)
            samples += new
            added_real = True

        if config.mode != "one-time" and k > 0 and should_update(k, config):
            active_idx = [i for i, s in enumerate(samples) if s.subset in active]
            pick = active_idx[refresh_ptr % len(active_idx)]
            refresh_ptr += 1
            update_sample(samples[pick], avatar, head, world, k, curriculum,
                          config.resolution, background, deform_cache)

        sample = samples[select_sample(samples, active, rng_select)]
        rendered, caches = render_avatar_video(
            avatar, head, sample.cameras, sample.expressions, config.resolution,
            background, with_caches=True, deform_cache=deform_cache,
        )
        breakdown, grad_pixels, reg_grads = loss_total(rendered, sample.video, avatar, weights)
        if not np.isfinite(breakdown.total):
            raise NumericalAbort(
                f"non-finite loss at iteration {k}: {breakdown.as_dict()}"
            )

        grads = None
        for f, (wg, tri_frames, cache) in enumerate(caches):
            rg = render_backward(wg, sample.cameras[f], grad_pixels[f], cache=cache)
            local = deform_backward(avatar, tri_frames, rg.as_dict())
            if grads is None:
                grads = local
            else:
                for key in grads:
                    grads[key] += local[key]
        grads["mu_local"] += reg_grads["mu_local"]
        grads["log_scale_local"] += reg_grads["log_scale_local"]

        lrs = learning_rates_at(k, config.total_iters, config.learning_rates)
        optimizer_step(avatar, grads, state, lrs)

        entry = {"iter": k, "n_samples": len(samples), **breakdown.as_dict()}
        if config.eval_interval and (k % config.eval_interval == 0 or k == config.total_iters - 1):
            heldout, frontal = evaluate_heldout(avatar, head, world, config.resolution,
                                                background, deform_cache, gt_cache)
            entry["psnr_heldout"] = heldout
            entry["psnr_frontal"] = frontal
        logs.append(entry)
        if on_metrics:
            on_metrics(entry)
        if on_checkpoint and config.checkpoint_interval and k > 0 and k % config.checkpoint_interval == 0:
            on_checkpoint(k, avatar, state)

    return avatar, logs
