"""Simple-to-complex training schedule.

Spatial stage: fixed expressions, camera trajectories clamped from the front
view outward as training advances. Temporal stages: fixed near-frontal camera,
expressions going from gentle single-unit ramps to exaggerated multi-unit
oscillations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .headmodel import N_BLENDSHAPES, CameraPose, Expression

SUBSET_SPATIAL = "spatial"
SUBSET_TEMPORAL_SYN = "temporal-syn"
SUBSET_TEMPORAL_REAL = "temporal-real"

REFERENCE_TOTAL_ITERS = 10_000  # schedule constants below are calibrated to this


@dataclass
class CameraRanges:
    distance: tuple = (8.0, 11.0)
    fovy: tuple = (40.0, 70.0)
    elevation: tuple = (-10.0, 10.0)
    azimuth: tuple = (20.0, 160.0)

    def __post_init__(self):
        for lo, hi in (self.distance, self.fovy, self.elevation, self.azimuth):
            if hi < lo:
                raise ValueError("camera range is empty")


@dataclass
class CurriculumConfig:
    n_spatial: int = 20
    clamp_interval: int = 1000  # iterations between trajectory-clamp advances
    k_temporal_syn: int = 5000  # iteration adding the synthetic temporal subset
    k_temporal_real: int = 8000  # iteration adding the exaggerated temporal subset
    n_temporal_syn: int = 10
    n_temporal_real: int = 10
    n_frames: int = 8
    spatial_amplitude: float = 0.5  # action-unit strength of the fixed spatial-sample expressions
    spatial_ranges: CameraRanges = field(default_factory=CameraRanges)
    temporal_ranges: CameraRanges = field(
        default_factory=lambda: CameraRanges(
            distance=(8.5, 9.5), fovy=(50.0, 60.0), elevation=(-10.0, 10.0), azimuth=(60.0, 120.0)
        )
    )

    def __post_init__(self):
        if not 0 < self.k_temporal_syn < self.k_temporal_real:
            raise ValueError("stage boundaries must satisfy 0 < k_s < k_t")
        if self.n_frames < 2:
            raise ValueError("need at least 2 frames per sample")

    def rescaled(self, total_iters):
        """Scale (k_s, k_t, d_s) proportionally for reduced iteration budgets."""
        f = total_iters / REFERENCE_TOTAL_ITERS
        if f == 1.0:
            return self
        out = CurriculumConfig(
            n_spatial=self.n_spatial,
            clamp_interval=max(1, round(self.clamp_interval * f)),
            k_temporal_syn=max(1, round(self.k_temporal_syn * f)),
            k_temporal_real=max(2, round(self.k_temporal_real * f)),
            n_temporal_syn=self.n_temporal_syn,
            n_temporal_real=self.n_temporal_real,
            n_frames=self.n_frames,
            spatial_amplitude=self.spatial_amplitude,
            spatial_ranges=self.spatial_ranges,
            temporal_ranges=self.temporal_ranges,
        )
        return out


def stage(k, config: CurriculumConfig):
    """Active subsets at iteration k; subsets are only ever added."""
    if k < 0:
        raise ValueError("iteration must be non-negative")
    active = {SUBSET_SPATIAL}
    if k >= config.k_temporal_syn:
        active.add(SUBSET_TEMPORAL_SYN)
    if k >= config.k_temporal_real:
        active.add(SUBSET_TEMPORAL_REAL)
    return active


def _uniform(rng, lo_hi):
    return float(rng.uniform(lo_hi[0], lo_hi[1]))


def sample_camera(subset, rng, config: CurriculumConfig):
    """Uniform per-parameter camera draw from the subset's configured ranges."""
    r = config.spatial_ranges if subset == SUBSET_SPATIAL else config.temporal_ranges
    return CameraPose(
        distance=_uniform(rng, r.distance),
        fovy=_uniform(rng, r.fovy),
        elevation=_uniform(rng, r.elevation),
        azimuth=_uniform(rng, r.azimuth),
    )


def spatial_trajectory(rng, config: CurriculumConfig):
    """Front view to a random side view, interpolated over n_frames poses."""
    r = config.spatial_ranges
    start = CameraPose(
        distance=(r.distance[0] + r.distance[1]) / 2,
        fovy=(r.fovy[0] + r.fovy[1]) / 2,
        elevation=0.0,
        azimuth=90.0,
    )
    end = sample_camera(SUBSET_SPATIAL, rng, config)
    n = config.n_frames
    poses = []
    for i in range(n):
        t = i / (n - 1)
        poses.append(
            CameraPose(
                distance=(1 - t) * start.distance + t * end.distance,
                fovy=(1 - t) * start.fovy + t * end.fovy,
                elevation=(1 - t) * start.elevation + t * end.elevation,
                azimuth=(1 - t) * start.azimuth + t * end.azimuth,
            )
        )
    return poses


def clamp_trajectory(trajectory, k, config: CurriculumConfig):
    """Limit a pre-defined trajectory to its first j poses: p_i = p̂_min(i, j).

    j = min(floor(k / clamp_interval) + 1, n_frames); frames beyond j repeat
    the j-th pose (1-based indices).
    """
    n = len(trajectory)
    if n != config.n_frames:
        raise ValueError("trajectory length must equal n_frames")
    if k < 0:
        raise ValueError("iteration must be non-negative")
    j = min(k // config.clamp_interval + 1, n)
    return [trajectory[min(i, j) - 1] for i in range(1, n + 1)]


def temporal_expressions(subset, rng, config: CurriculumConfig):
    """Expression sequence for a temporal sample.

    temporal-syn: one action unit ramping 0 -> 0.5 with a cosine ease.
    temporal-real: 2-3 simultaneous units, amplitudes up to 1.0, oscillating
    over 1-2 periods (exaggerated stand-in for captured sequences).
    """
    n = config.n_frames
    t = np.arange(n) / (n - 1)
    if subset == SUBSET_TEMPORAL_SYN:
        unit = int(rng.integers(N_BLENDSHAPES))
        ramp = 0.5 * 0.5 * (1.0 - np.cos(np.pi * t))  # 0 -> 0.5
        return [Expression.unit(unit, float(a)) for a in ramp]
    if subset == SUBSET_TEMPORAL_REAL:
        n_units = int(rng.integers(2, 4))
        units = rng.choice(N_BLENDSHAPES, size=n_units, replace=False)
        amps = rng.uniform(0.6, 1.0, size=n_units)
        periods = rng.uniform(1.0, 2.0, size=n_units)
        phases = rng.uniform(0, 2 * np.pi, size=n_units)
        coeffs = np.zeros((n, N_BLENDSHAPES))
        for u, a, p, ph in zip(units, amps, periods, phases):
            wave = 0.5 * (1.0 - np.cos(2 * np.pi * p * t + ph))
            coeffs[:, u] = a * wave / wave.max()  # peak amplitude hits a exactly
        return [Expression(np.clip(c, 0.0, 1.0)) for c in coeffs]
    raise ValueError(f"not a temporal subset: {subset!r}")


def spatial_expression(sample_index, config: CurriculumConfig):
    """Fixed single-action-unit expression for a spatial sample (units cycled)."""
    return Expression.unit(sample_index % N_BLENDSHAPES, config.spatial_amplitude)
