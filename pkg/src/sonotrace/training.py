"""Denoising objective, Adam updates, and the training loop.

The loss is the plain L2 denoising error: for each batch element a noise
level is drawn, Gaussian noise of that level is added to the clean window,
and the squared distance between the denoised result and the clean window
is summed over all values (then averaged over the batch). No weighting
across noise levels is applied.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .conditioning import ConditionBundle, ConditionSpec, build_bundle
from .dataset import Manifest, Normalization, clip_to_model, read_clip
from .denoiser import (
    CallableDenoiser,
    DenoiserArch,
    GaussianOracle,
    GmmOracle,
    LearnedDenoiser,
    denoise,
    load_checkpoint,
    network_graph,
    save_checkpoint,
)
from .errors import ArgumentError, DivergenceError
from .numerics import SeededRng, Tensor, derive_seed
from .schedule import NoiseSchedule, SigmaDistribution, precondition_coeffs, sample_training_sigma
from .sampler import SamplerParams, generate, upsample

__all__ = [
    "TrainConfig",
    "TrainResult",
    "AdamState",
    "denoising_loss",
    "update_params",
    "train",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization and model-shape settings for one training run."""

    out_dir: str
    iterations: int = 2000
    learning_rate: float = 5e-4
    batch_size: int = 4
    checkpoint_every: int = 1000
    eval_every: int = 250
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    condition_mode: str = "A"  # "A" | "A+T"
    seed: int = 0
    # model shape
    channels: int = 8
    blocks: int = 1
    groups: int = 4
    noise_emb_dim: int = 16
    window_frames: int = 8
    # schedule / sigma distribution
    sigma_min: float = 0.002
    sigma_max: float = 160.0
    sigma_data: float = 0.25
    rho: float = 7.0
    sample_steps: int = 40
    sigma_location: float = -1.2
    sigma_scale: float = 1.2
    # validation
    val_windows: int = 16
    # cascade
    stage: int = 0
    stage0_checkpoint: str | None = None
    cascade_cond_source: str = "stage0_samples"  # or "downsample"
    stage0_sample_steps: int = 10

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.iterations < 0:
            raise ArgumentError("learning_rate/batch_size/iterations must be positive")
        if self.checkpoint_every < 1:
            raise ArgumentError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if self.condition_mode not in ("A", "A+T"):
            raise ArgumentError(f"condition_mode must be A or A+T, got {self.condition_mode!r}")
        if self.stage not in (0, 1):
            raise ArgumentError(f"stage must be 0 or 1, got {self.stage}")

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(sigma_min=self.sigma_min, sigma_max=self.sigma_max,
                             sigma_data=self.sigma_data, rho=self.rho,
                             n_steps=self.sample_steps)

    def sigma_dist(self) -> SigmaDistribution:
        return SigmaDistribution(location=self.sigma_location, scale=self.sigma_scale)

    def arch(self) -> DenoiserArch:
        return DenoiserArch(
            in_channels=2 if self.stage == 1 else 1,
            channels=self.channels,
            blocks=self.blocks,
            groups=self.groups,
            cond_dim=0,  # patched by train() from the manifest's embed dim
            noise_emb_dim=self.noise_emb_dim,
        )


def _batch_graph(model: LearnedDenoiser, params, ys: np.ndarray, xs: np.ndarray,
                 sigmas, conds, video_conds) -> ad.Var:
    """Denoised outputs D(x_b, sigma_b) as one batched graph, (B, F, H, W)."""
    b = ys.shape[0]
    coeffs = [precondition_coeffs(s, model.schedule.sigma_data) for s in sigmas]
    c_skip = np.array([c[0] for c in coeffs])[:, None, None, None]
    c_out = np.array([c[1] for c in coeffs])[:, None, None, None]
    c_in = np.array([c[2] for c in coeffs])[:, None, None, None]
    c_noise = np.array([c[3] for c in coeffs])

    if model.mode == "A":
        tokens = ad.Var(np.stack([c.audio_seq.data for c in conds]))
    else:
        for c in conds:
            if c.text_seq is None:
                raise ArgumentError("mode A+T requires text streams in every bundle")
        audio = ad.Var(np.stack([c.audio_seq.data for c in conds]))
        text = ad.Var(np.stack([c.text_seq.data for c in conds]))
        from .conditioning import cross_attention_fuse

        tokens = cross_attention_fuse(audio, text, model.fusion_weights(params))

    x_scaled = c_in * xs
    if model.arch.in_channels == 2:
        if video_conds is None:
            raise ArgumentError("stage-1 training requires conditioning clips")
        net_in = np.stack([x_scaled, video_conds], axis=-1)  # (B, F, H, W, 2)
    else:
        net_in = x_scaled[..., None]
    f_out = network_graph(params, model.arch, ad.Var(net_in), c_noise, tokens)
    f_out = ad.reshape(f_out, ys.shape)
    return ad.add(ad.Var(c_skip * xs), ad.mul(f_out, ad.Var(c_out)))


def denoising_loss(model, batch, sigmas, rng: SeededRng, compute_grads: bool = True):
    """Mean over the batch of the summed squared denoising error.

    ``batch`` holds (y, cond) or (y, cond, video_cond) tuples with y a
    model-domain Tensor. Returns (loss, grads); grads is None for oracle
    models (or when compute_grads is off), otherwise a dict keyed like the
    model's parameters.
    """
    if len(batch) != len(sigmas):
        raise ArgumentError("need exactly one sigma per batch element")
    ys = np.stack([item[0].data for item in batch])
    noise = np.stack([rng.gaussian(ys.shape[1:], float(s)) for s in sigmas])
    xs = ys + noise

    if isinstance(model, (GaussianOracle, GmmOracle, CallableDenoiser)):
        total = 0.0
        for i, item in enumerate(batch):
            d = denoise(model, Tensor(xs[i]), float(sigmas[i]))
            total += float(np.sum((d.data - ys[i]) ** 2))
        return total / len(batch), None

    conds = [item[1] for item in batch]
    video = None
    if model.arch.in_channels == 2:
        video = np.stack([item[2].data for item in batch])
    params = {k: ad.Var(v, requires_grad=compute_grads) for k, v in model.params.items()}
    if compute_grads:
        d = _batch_graph(model, params, ys, xs, sigmas, conds, video)
    else:
        with ad.no_grad():
            d = _batch_graph(model, params, ys, xs, sigmas, conds, video)
    err = ad.add(d, ad.Var(-ys))
    loss = ad.vmean(ad.vsum(ad.mul(err, err), axis=(1, 2, 3)))
    value = loss.item()
    if not np.isfinite(value):
        raise DivergenceError("denoising loss became non-finite")
    if not compute_grads:
        return value, None
    loss.backward()
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.value))
             for k, p in params.items()}
    return value, grads


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def update_params(theta: dict, grads: dict, state: AdamState, config: TrainConfig):
    """One Adam step with bias correction; returns (theta', state')."""
    t = state.t + 1
    b1, b2, eps, lr = config.beta1, config.beta2, config.adam_eps, config.learning_rate
    new_theta, new_m, new_v = {}, {}, {}
    for name, value in theta.items():
        g = grads[name]
        if g.shape != value.shape:
            raise ArgumentError(f"gradient shape mismatch for {name}")
        m = b1 * state.m.get(name, np.zeros_like(value)) + (1 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(value)) + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_theta[name] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_theta, AdamState(m=new_m, v=new_v, t=t)


@dataclass(frozen=True)
class TrainResult:
    checkpoint_path: str
    curve_path: str
    initial_val_loss: float
    final_val_loss: float


def _load_split(manifest: Manifest, root: Path, split: str):
    items = []
    for e in manifest.split_entries(split):
        clip = read_clip(root / e.clip_path)
        spec = ConditionSpec.from_json((root / e.sidecar_path).read_text())
        items.append((clip, spec))
    return items


def _window_item(clip, spec, start: int, window: int, norm: Normalization,
                 with_text: bool, encoder):
    y = clip_to_model(clip.frames[start:start + window], norm)
    cond = build_bundle(spec, with_text, encoder, frame_slice=slice(start, start + window))
    return y, cond


def _stage0_conditioning(items, config: TrainConfig, manifest: Manifest,
                         stage0_model: LearnedDenoiser, encoder):
    """Frozen stage-0 samples (or plain downsampling), upsampled back to the
    target resolution, one conditioning volume per clip."""
    res = manifest.resolution
    half = res // 2
    cond_clips = []
    for idx, (clip, spec) in enumerate(items):
        if config.cascade_cond_source == "downsample":
            frames = clip.frames.astype(np.float64)
            small = frames.reshape(frames.shape[0], half, 2, half, 2).mean(axis=(2, 4))
            coarse = clip_to_model(np.clip(np.rint(small), 0, 255).astype(np.uint8),
                                   manifest.normalization)
            cond_clips.append(Tensor(upsample(coarse.data, res, res)))
            continue
        rng = SeededRng(derive_seed(config.seed, "stage0-cond", idx))
        bundle = build_bundle(spec, stage0_model.mode == "A+T", encoder)
        params = SamplerParams(n_steps=config.stage0_sample_steps)
        sched = replace(stage0_model.schedule, n_steps=config.stage0_sample_steps)
        x = generate(stage0_model, bundle, (clip.frames.shape[0], half, half),
                     params, rng, schedule=sched)
        cond_clips.append(Tensor(upsample(x.data, res, res)))
    return cond_clips


def train(config: TrainConfig, dataset_manifest) -> TrainResult:
    """Train a denoiser on a dataset manifest; writes checkpoints and a
    loss-curve CSV under config.out_dir."""
    if isinstance(dataset_manifest, (str, Path)):
        manifest_path = Path(dataset_manifest)
        manifest = Manifest.load(manifest_path)
        root = manifest_path.parent
    else:
        manifest, root = dataset_manifest
        root = Path(root)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    encoder = manifest.encoder_params()
    with_text = config.condition_mode == "A+T"
    window = config.window_frames
    norm = manifest.normalization

    train_items = _load_split(manifest, root, "train")
    val_items = _load_split(manifest, root, "test")
    if not train_items:
        raise ArgumentError("manifest has no training clips")
    for clip, _ in train_items + val_items:
        if clip.frames.shape[0] < window:
            raise ArgumentError(
                f"clip has {clip.frames.shape[0]} frames, need >= {window}"
            )

    arch = replace(config.arch(), cond_dim=manifest.embed_dim)
    model = LearnedDenoiser.init(arch, config.schedule(), config.condition_mode,
                                 derive_seed(config.seed, "init"))

    stage_cond_train = stage_cond_val = None
    if config.stage == 1:
        if config.cascade_cond_source == "stage0_samples":
            if not config.stage0_checkpoint:
                raise ArgumentError("stage-1 training needs stage0_checkpoint")
            stage0_model, _ = load_checkpoint(config.stage0_checkpoint)
        else:
            stage0_model = None
        stage_cond_train = _stage0_conditioning(train_items, config, manifest,
                                                stage0_model, encoder)
        stage_cond_val = _stage0_conditioning(val_items, config, manifest,
                                              stage0_model, encoder)

    # Fixed validation set: (clip index, window start, sigma, noise seed)
    val_rng = SeededRng(derive_seed(config.seed, "validation"))
    val_set = []
    if val_items:
        for k in range(config.val_windows):
            ci = int(val_rng.integers(0, len(val_items)))
            clip, spec = val_items[ci]
            start = int(val_rng.integers(0, clip.frames.shape[0] - window + 1))
            sigma = sample_training_sigma(val_rng, config.schedule(), config.sigma_dist())
            y, cond = _window_item(clip, spec, start, window, norm, with_text, encoder)
            noise = val_rng.gaussian(y.shape, sigma)
            vc = None
            if stage_cond_val is not None:
                vc = Tensor(stage_cond_val[ci].data[start:start + window])
            val_set.append((y, cond, sigma, noise, vc))

    def val_loss(current: LearnedDenoiser) -> float:
        if not val_set:
            return float("nan")
        total = 0.0
        with ad.no_grad():
            for y, cond, sigma, noise, vc in val_set:
                d = denoise(current, Tensor(y.data + noise), sigma, cond, video_cond=vc)
                total += float(np.sum((d.data - y.data) ** 2))
        return total / len(val_set)

    loop_rng = SeededRng(derive_seed(config.seed, "train-loop"))
    state = AdamState()
    curve_path = out_dir / "loss_curve.csv"
    initial_val = val_loss(model)
    last_val = initial_val
    meta = {"condition_mode": config.condition_mode, "stage": config.stage,
            "normalization": {"mean": norm.mean, "scale": norm.scale},
            "embed_dim": manifest.embed_dim, "vocab_size": manifest.vocab_size,
            "codebook_seed": manifest.codebook_seed, "window_frames": window}

    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "val_loss"])
        writer.writerow([0, "", f"{initial_val:.10g}"])
        for it in range(1, config.iterations + 1):
            batch, sigmas = [], []
            for _ in range(config.batch_size):
                ci = int(loop_rng.integers(0, len(train_items)))
                clip, spec = train_items[ci]
                start = int(loop_rng.integers(0, clip.frames.shape[0] - window + 1))
                y, cond = _window_item(clip, spec, start, window, norm, with_text, encoder)
                sigmas.append(sample_training_sigma(loop_rng, config.schedule(),
                                                    config.sigma_dist()))
                if stage_cond_train is not None:
                    vc = Tensor(stage_cond_train[ci].data[start:start + window])
                    batch.append((y, cond, vc))
                else:
                    batch.append((y, cond))
            loss, grads = denoising_loss(model, batch, sigmas, loop_rng)
            new_params, state = update_params(model.params, grads, state, config)
            if not all(np.all(np.isfinite(v)) for v in new_params.values()):
                raise DivergenceError("parameters became non-finite", step=it)
            model = LearnedDenoiser(arch=model.arch, schedule=model.schedule,
                                    mode=model.mode, params=new_params)
            if it % config.eval_every == 0 or it == config.iterations:
                last_val = val_loss(model)
            writer.writerow([it, f"{loss:.10g}", f"{last_val:.10g}"])
            if it % config.checkpoint_every == 0:
                save_checkpoint(model, out_dir / f"ckpt_iter{it:06d}.sdnz", meta=meta)

    final_path = save_checkpoint(model, out_dir / "model.sdnz", meta=meta)
    final_val = val_loss(model)
    return TrainResult(
        checkpoint_path=str(final_path),
        curve_path=str(curve_path),
        initial_val_loss=initial_val,
        final_val_loss=final_val,
    )
