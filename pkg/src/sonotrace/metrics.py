"""Evaluation metrics: pixel-level RMSE/PSNR and a Fréchet distance over a
pluggable feature embedding.

PSNR uses the 8-bit peak convention, 20*log10(255/rmse), computed per clip
and then averaged. The Fréchet distance is the 2-Wasserstein distance
between Gaussians fitted to feature vectors of each clip set; the built-in
toy extractor is deterministic so reports are reproducible, and externally
computed features can be injected from CSV instead.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Clip
from .errors import ArgumentError, NumericDomainError, ProtocolError
from .numerics import SeededRng, derive_seed, svdvals_jacobi, sym_sqrtm

__all__ = [
    "MetricsReport",
    "ToyFeatureExtractor",
    "rmse",
    "psnr",
    "extract_features",
    "frechet_distance",
    "fit_gaussian",
    "evaluate",
    "load_external_features",
]

_COV_REG = 1e-8
_NEG_FLOOR = -1e-8


@dataclass(frozen=True)
class MetricsReport:
    """Aggregated evaluation results for one generated-vs-reference run."""

    rmse: float
    psnr_db: float
    frechet: float
    n_generated: int
    n_reference: int
    extractor_id: str
    config_digest: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "rmse": self.rmse,
                "psnr_db": self.psnr_db,
                "frechet": self.frechet,
                "n_generated": self.n_generated,
                "n_reference": self.n_reference,
                "extractor_id": self.extractor_id,
                "config_digest": self.config_digest,
            },
            indent=2,
            sort_keys=True,
        )


def rmse(a: Clip, b: Clip) -> float:
    """Root mean squared pixel difference, in 8-bit gray levels."""
    if a.shape != b.shape:
        raise ArgumentError(f"clip shapes differ: {a.shape} vs {b.shape}")
    diff = a.frames.astype(np.float64) - b.frames.astype(np.float64)
    return float(np.sqrt(np.mean(diff * diff)))


def psnr(a: Clip, b: Clip) -> float:
    """20*log10(255/rmse); +inf for identical clips (the caller's sentinel)."""
    r = rmse(a, b)
    if r == 0.0:
        return float("inf")
    return 20.0 * math.log10(255.0 / r)


@dataclass(frozen=True)
class ToyFeatureExtractor:
    """Deterministic 64-d clip embedding.

    Frames are box-averaged to 16x16, pooled over time by mean and std
    (512 values), then projected by a fixed seeded orthonormal matrix.
    """

    extractor_id: str = "toy-box16-orth64-v1"
    seed: int = 20240917
    out_dim: int = 64

    def projection(self) -> np.ndarray:
        rng = SeededRng(derive_seed(self.seed, "feature-projection"))
        g = rng.gaussian((512, self.out_dim), 1.0)
        q, r = np.linalg.qr(g)
        return q * np.sign(np.diag(r))[None, :]


def extract_features(clip: Clip, extractor: ToyFeatureExtractor = ToyFeatureExtractor()) -> np.ndarray:
    f, h, w = clip.shape
    if h % 16 != 0 or w % 16 != 0:
        raise ArgumentError(f"clip resolution {h}x{w} is not divisible by 16")
    frames = clip.frames.astype(np.float64) / 255.0
    small = frames.reshape(f, 16, h // 16, 16, w // 16).mean(axis=(2, 4))  # (F, 16, 16)
    flat = small.reshape(f, 256)
    pooled = np.concatenate([flat.mean(axis=0), flat.std(axis=0)])  # (512,)
    return pooled @ extractor.projection()


def fit_gaussian(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and (regularized) covariance of row-stacked feature vectors."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ArgumentError("need at least 2 feature vectors to fit a Gaussian")
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False) + _COV_REG * np.eye(feats.shape[1])
    return mu, cov


def frechet_distance(mu1, cov1, mu2, cov2) -> float:
    """||mu1-mu2||^2 + Tr(C1 + C2 - 2 (C1^1/2 C2 C1^1/2)^1/2).

    The cross trace is evaluated as the sum of singular values of
    C1^1/2 C2^1/2 (the same quantity), which stays accurate when the
    covariances are rank deficient; values inside the -1e-8 numeric floor
    clamp to zero.
    """
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape:
        raise ArgumentError("moment shapes do not match")
    root1 = sym_sqrtm(cov1)
    root2 = sym_sqrtm(cov2)
    cross = float(np.sum(svdvals_jacobi(root1 @ root2)))
    value = float(np.sum((mu1 - mu2) ** 2) + np.trace(cov1) + np.trace(cov2) - 2.0 * cross)
    if value < _NEG_FLOOR:
        raise NumericDomainError(f"Fréchet distance {value:.3e} below the numeric floor")
    return max(value, 0.0)


def load_external_features(csv_path) -> dict[str, np.ndarray]:
    """Per-clip feature vectors from CSV rows of: clip_id, v0, v1, ..."""
    out: dict[str, np.ndarray] = {}
    with open(csv_path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            out[row[0]] = np.array([float(x) for x in row[1:]], dtype=np.float64)
    return out


def evaluate(
    generated: list[tuple[str, Clip]],
    reference: list[tuple[str, Clip]],
    extractor: ToyFeatureExtractor = ToyFeatureExtractor(),
    require_pairs: bool = True,
    config_digest: str = "",
    external_features: dict[str, np.ndarray] | None = None,
) -> MetricsReport:
    """Compare a generated clip set against a reference set.

    RMSE/PSNR are computed over id-paired clips and averaged per clip;
    the Fréchet distance is computed between Gaussians fitted to the pooled
    features of each full set. With ``require_pairs`` the id sets must match
    exactly, otherwise a :class:`ProtocolError` lists the unmatched ids.
    """
    gen_ids = {cid for cid, _ in generated}
    ref_ids = {cid for cid, _ in reference}
    unmatched = sorted(gen_ids ^ ref_ids)
    if require_pairs and unmatched:
        raise ProtocolError(
            f"{len(unmatched)} clip id(s) lack a pair: {', '.join(unmatched[:8])}",
            unmatched=unmatched,
        )

    ref_by_id = dict(reference)
    rmses, psnrs = [], []
    n_inf = 0
    for cid, clip in generated:
        if cid not in ref_by_id:
            continue
        rmses.append(rmse(clip, ref_by_id[cid]))
        p = psnr(clip, ref_by_id[cid])
        if math.isinf(p):
            n_inf += 1
        else:
            psnrs.append(p)
    if n_inf:
        warnings.warn(f"{n_inf} identical clip pair(s) excluded from the PSNR average")

    def feats_of(items):
        rows = []
        for cid, clip in items:
            if external_features is not None and cid in external_features:
                rows.append(external_features[cid])
            else:
                rows.append(extract_features(clip, extractor))
        return np.stack(rows)

    mu_g, cov_g = fit_gaussian(feats_of(generated))
    mu_r, cov_r = fit_gaussian(feats_of(reference))
    fd = frechet_distance(mu_g, cov_g, mu_r, cov_r)

    return MetricsReport(
        rmse=float(np.mean(rmses)) if rmses else float("nan"),
        psnr_db=float(np.mean(psnrs)) if psnrs else float("nan"),
        frechet=fd,
        n_generated=len(generated),
        n_reference=len(reference),
        extractor_id=extractor.extractor_id,
        config_digest=config_digest,
    )
