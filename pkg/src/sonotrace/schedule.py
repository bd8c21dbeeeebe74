"""Noise levels: the sigma grid, denoiser preconditioning coefficients, and
the training-time sigma distribution.

The time/noise identification is sigma(t) = t everywhere, so grid points
double as integration times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .numerics import SeededRng

__all__ = [
    "NoiseSchedule",
    "SigmaDistribution",
    "precondition_coeffs",
    "sigma_steps",
    "sample_training_sigma",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Noise-level range and grid shape.

    sigma_data is the standard deviation of the clean-data distribution in
    the model's value domain; rho warps the grid toward low noise levels.
    """

    sigma_min: float = 0.002
    sigma_max: float = 160.0
    sigma_data: float = 0.25
    rho: float = 7.0
    n_steps: int = 40

    def __post_init__(self):
        if not (0 < self.sigma_min < self.sigma_max):
            raise ArgumentError(
                f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )
        if self.sigma_data <= 0:
            raise ArgumentError(f"sigma_data must be positive, got {self.sigma_data}")
        if self.n_steps < 1:
            raise ArgumentError(f"n_steps must be >= 1, got {self.n_steps}")


def precondition_coeffs(sigma: float, sigma_data: float):
    """(c_skip, c_out, c_in, c_noise) for a noise level.

    c_skip = sd^2/(s^2+sd^2); c_out = s*sd/sqrt(s^2+sd^2);
    c_in = 1/sqrt(s^2+sd^2); c_noise = ln(s)/4 (natural log).
    """
    if sigma <= 0:
        raise ArgumentError(f"sigma must be positive, got {sigma}")
    if sigma_data <= 0:
        raise ArgumentError(f"sigma_data must be positive, got {sigma_data}")
    s2 = sigma * sigma + sigma_data * sigma_data
    c_skip = sigma_data * sigma_data / s2
    c_out = sigma * sigma_data / math.sqrt(s2)
    c_in = 1.0 / math.sqrt(s2)
    c_noise = math.log(sigma) / 4.0
    return c_skip, c_out, c_in, c_noise


def sigma_steps(schedule: NoiseSchedule) -> np.ndarray:
    """The decreasing grid sigma_0 > ... > sigma_N with sigma_N = 0.

    Interior points follow the rho-warped interpolation between
    sigma_max^(1/rho) and sigma_min^(1/rho); the final entry is exactly 0.
    Returns N+1 floats.
    """
    n = schedule.n_steps
    if n == 1:
        return np.array([schedule.sigma_max, 0.0])
    inv_rho = 1.0 / schedule.rho
    lo = schedule.sigma_min ** inv_rho
    hi = schedule.sigma_max ** inv_rho
    ramp = np.arange(n) / (n - 1)
    grid = (hi + ramp * (lo - hi)) ** schedule.rho
    grid[0] = schedule.sigma_max   # ramp endpoints are exact; undo the
    grid[-1] = schedule.sigma_min  # power round trip's last-ulp error
    return np.append(grid, 0.0)


@dataclass(frozen=True)
class SigmaDistribution:
    """Log-normal location/scale (in ln-space) for training noise levels."""

    location: float = -1.2
    scale: float = 1.2


def sample_training_sigma(
    rng: SeededRng, schedule: NoiseSchedule, dist: SigmaDistribution = SigmaDistribution()
) -> float:
    """One training sigma: log-normal draw clamped to [sigma_min, sigma_max]."""
    z = float(rng.gaussian((), 1.0))
    sigma = math.exp(dist.location + dist.scale * z)
    return min(max(sigma, schedule.sigma_min), schedule.sigma_max)
