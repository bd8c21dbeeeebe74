"""Stochastic sampling: per-step churn, second-order correction, and the
two-stage cascade orchestrator.

One step goes from noise level t_i down to t_next: churn temporarily raises
the level to t_hat = (gamma + 1) t_i by injecting fresh noise, an Euler step
follows the local slope d = (x - D(x; t)) / t, and (except into t = 0) a
second denoiser evaluation at the destination averages the two slopes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .denoiser import ConditionedDenoiser, denoise
from .errors import ArgumentError, DivergenceError, NumericDomainError
from .numerics import SeededRng, Tensor
from .schedule import NoiseSchedule, sigma_steps

__all__ = [
    "SamplerParams",
    "CascadeSpec",
    "churn_gamma",
    "sample_step",
    "generate",
    "cascade_generate",
    "upsample",
]


@dataclass(frozen=True)
class SamplerParams:
    """Knobs of the stochastic sampler.

    s_churn > 0 re-injects noise inside the (s_tmin, s_tmax) level window;
    s_noise scales the injected noise's standard deviation.
    """

    n_steps: int = 40
    s_churn: float = 0.0
    s_tmin: float = 0.05
    s_tmax: float = 50.0
    s_noise: float = 1.003

    def __post_init__(self):
        if self.n_steps < 1:
            raise ArgumentError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.s_churn < 0:
            raise ArgumentError(f"s_churn must be >= 0, got {self.s_churn}")
        if not self.s_tmin < self.s_tmax:
            raise ArgumentError(f"need s_tmin < s_tmax, got {self.s_tmin}, {self.s_tmax}")
        if self.s_noise <= 0:
            raise ArgumentError(f"s_noise must be > 0, got {self.s_noise}")


def churn_gamma(t_i: float, params: SamplerParams) -> float:
    """Noise-increase factor for one step: min(s_churn/N, sqrt(2)-1) inside
    the open window (s_tmin, s_tmax), else 0."""
    if params.s_tmin < t_i < params.s_tmax:
        return min(params.s_churn / params.n_steps, math.sqrt(2.0) - 1.0)
    return 0.0


def churn_state(x_i: Tensor, t_i: float, params: SamplerParams,
                rng: SeededRng) -> tuple[Tensor, float]:
    """Raise the state's noise level to t_hat = (gamma + 1) t_i by adding
    fresh noise; the RNG is consulted only when gamma > 0."""
    gamma = churn_gamma(t_i, params)
    t_hat = (gamma + 1.0) * t_i
    if gamma > 0:
        eps = rng.gaussian(x_i.shape, params.s_noise)
        return Tensor(x_i.data + math.sqrt(t_hat * t_hat - t_i * t_i) * eps), t_hat
    return x_i, t_hat


def sample_step(
    x_i: Tensor,
    t_i: float,
    t_next: float,
    model,
    cond,
    params: SamplerParams,
    rng: SeededRng,
) -> Tensor:
    """One churn + Euler + (second-order correction) step from t_i to t_next.

    The RNG is consulted only when churn actually raises the noise level,
    so a fully deterministic run never touches it.
    """
    if not t_i > t_next >= 0:
        raise ArgumentError(f"need t_i > t_next >= 0, got {t_i}, {t_next}")
    x_hat, t_hat = churn_state(x_i, t_i, params, rng)
    d_i = (x_hat.data - denoise(model, x_hat, t_hat, cond).data) / t_hat
    x_euler = x_hat.data + (t_next - t_hat) * d_i
    if t_next == 0:
        return Tensor(x_euler)
    d_prime = (x_euler - denoise(model, Tensor(x_euler), t_next, cond).data) / t_next
    return Tensor(x_hat.data + (t_next - t_hat) * 0.5 * (d_i + d_prime))


def generate(
    model,
    cond,
    shape,
    params: SamplerParams,
    rng: SeededRng,
    schedule: NoiseSchedule | None = None,
) -> Tensor:
    """Run the full grid from sigma_max down to 0 and return the sample.

    The start point is drawn with std t_0 = sigma_max. Non-finite
    intermediate states raise :class:`DivergenceError` naming the step.
    """
    if schedule is None:
        schedule = NoiseSchedule(n_steps=params.n_steps)
    grid = sigma_steps(schedule)
    x = Tensor(rng.gaussian(shape, grid[0]))
    for i in range(len(grid) - 1):
        try:
            x = sample_step(x, float(grid[i]), float(grid[i + 1]), model, cond, params, rng)
        except NumericDomainError as exc:
            raise DivergenceError(f"sampler state became non-finite: {exc}", step=i) from exc
        if not np.all(np.isfinite(x.data)):
            raise DivergenceError("sampler state became non-finite", step=i)
    return x


def upsample(frames: np.ndarray, height: int, width: int, method: str = "nearest") -> np.ndarray:
    """Spatially upsample (F, H, W) frames to (F, height, width)."""
    f, h, w = frames.shape
    if method == "nearest":
        rows = (np.arange(height) * h // height).clip(0, h - 1)
        cols = (np.arange(width) * w // width).clip(0, w - 1)
        return frames[:, rows][:, :, cols]
    if method == "bilinear":
        ry = np.linspace(0, h - 1, height)
        rx = np.linspace(0, w - 1, width)
        y0 = np.floor(ry).astype(int).clip(0, h - 2)
        x0 = np.floor(rx).astype(int).clip(0, w - 2)
        wy = (ry - y0)[None, :, None]
        wx = (rx - x0)[None, None, :]
        tl = frames[:, y0][:, :, x0]
        tr = frames[:, y0][:, :, x0 + 1]
        bl = frames[:, y0 + 1][:, :, x0]
        br = frames[:, y0 + 1][:, :, x0 + 1]
        top = tl * (1 - wx) + tr * wx
        bot = bl * (1 - wx) + br * wx
        return top * (1 - wy) + bot * wy
    raise ArgumentError(f"unknown upsampler {method!r}")


@dataclass(frozen=True)
class CascadeSpec:
    """Ordered generation stages; each later stage conditions on the
    previous stage's output through an extra input channel."""

    stages: tuple  # of (model, (height, width))
    upsampler: str = "nearest"

    def __post_init__(self):
        if not self.stages:
            raise ArgumentError("cascade needs at least one stage")
        res = [s[1] for s in self.stages]
        for a, b in zip(res, res[1:]):
            if b[0] < a[0] or b[1] < a[1]:
                raise ArgumentError(f"stage resolutions must be non-decreasing, got {res}")
        if self.upsampler not in ("nearest", "bilinear"):
            raise ArgumentError(f"upsampler must be nearest|bilinear, got {self.upsampler!r}")


def cascade_generate(
    cascade: CascadeSpec,
    cond,
    n_frames: int,
    params: SamplerParams,
    rng: SeededRng,
    keep_intermediate: bool = False,
):
    """Generate through every stage; returns the final sample, or the whole
    list of per-stage samples when ``keep_intermediate`` is set.

    Each stage uses an independent RNG stream derived from ``rng``'s seed,
    so stage outputs are reproducible regardless of earlier stages' draw
    counts.
    """
    outputs: list[Tensor] = []
    prev: Tensor | None = None
    for s, (model, (height, width)) in enumerate(cascade.stages):
        stage_rng = rng.derive("cascade-stage", s)
        schedule = getattr(model, "schedule", None)
        if s == 0:
            bound = model
        else:
            vc = Tensor(upsample(prev.data, height, width, cascade.upsampler))
            bound = ConditionedDenoiser(model=model, cond=cond, video_cond=vc)
        x = generate(bound, cond, (n_frames, height, width), params, stage_rng,
                     schedule=schedule)
        outputs.append(x)
        prev = x
    return outputs if keep_intermediate else outputs[-1]
