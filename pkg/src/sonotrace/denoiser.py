"""Denoising functions D(x, sigma).

Two families live here. Analytic oracles return the exact posterior mean
for known Gaussian / Gaussian-mixture data distributions, which makes every
sampler and training property checkable in closed form. The learned family
wraps a small 3-D convolutional network in the standard preconditioning
(c_skip * x + c_out * F(c_in * x; c_noise, tokens)); oracles bypass the
preconditioning entirely because they already *are* exact denoisers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .conditioning import ConditionBundle, FusionWeights, cross_attention_fuse
from .errors import ArgumentError, ConditionError, FormatError
from .numerics import SeededRng, Tensor
from .schedule import NoiseSchedule, precondition_coeffs

__all__ = [
    "GaussianOracle",
    "GmmOracle",
    "DenoiserArch",
    "LearnedDenoiser",
    "ConditionedDenoiser",
    "oracle_gaussian_denoise",
    "oracle_gmm_denoise",
    "gmm_responsibilities",
    "network_forward",
    "denoise",
    "save_checkpoint",
    "load_checkpoint",
]

MODES = ("A", "A+T")


@dataclass(frozen=True)
class GaussianOracle:
    """Exact denoiser for data ~ N(mean, data_std^2 I)."""

    mean: Tensor
    data_std: float

    def __post_init__(self):
        if self.data_std <= 0:
            raise ArgumentError(f"data_std must be positive, got {self.data_std}")


@dataclass(frozen=True)
class GmmOracle:
    """Exact denoiser for an isotropic Gaussian mixture.

    components: list of (weight, mean Tensor, std). Weights must be positive
    and sum to 1 within 1e-12.
    """

    components: tuple

    def __post_init__(self):
        ws = [w for w, _, _ in self.components]
        if any(w <= 0 for w in ws):
            raise ArgumentError("mixture weights must be positive")
        if abs(sum(ws) - 1.0) > 1e-12:
            raise ArgumentError(f"mixture weights sum to {sum(ws)}, expected 1")
        for _, _, std in self.components:
            if std <= 0:
                raise ArgumentError("component std must be positive")


def oracle_gaussian_denoise(x: Tensor, sigma: float, oracle: GaussianOracle) -> Tensor:
    """Posterior mean (sd^2 x + sigma^2 mu) / (sd^2 + sigma^2)."""
    if x.shape != oracle.mean.shape:
        raise ArgumentError(f"shape mismatch: x {x.shape} vs mean {oracle.mean.shape}")
    if sigma < 0:
        raise ArgumentError(f"sigma must be >= 0, got {sigma}")
    sd2 = oracle.data_std**2
    s2 = sigma * sigma
    return Tensor((sd2 * x.data + s2 * oracle.mean.data) / (sd2 + s2))


def gmm_responsibilities(x: Tensor, sigma: float, gmm: GmmOracle) -> np.ndarray:
    """Posterior component weights at x, via log-sum-exp."""
    dim = x.size
    logs = np.empty(len(gmm.components))
    for i, (w, mu, std) in enumerate(gmm.components):
        v = std * std + sigma * sigma
        sq = float(np.sum((x.data - mu.data) ** 2))
        logs[i] = np.log(w) - 0.5 * sq / v - 0.5 * dim * np.log(2.0 * np.pi * v)
    logs -= logs.max()
    r = np.exp(logs)
    return r / r.sum()


def oracle_gmm_denoise(x: Tensor, sigma: float, gmm: GmmOracle) -> Tensor:
    """Responsibility-weighted combination of per-component posterior means."""
    if sigma < 0:
        raise ArgumentError(f"sigma must be >= 0, got {sigma}")
    r = gmm_responsibilities(x, sigma, gmm)
    out = np.zeros_like(x.data)
    s2 = sigma * sigma
    for rk, (_, mu, std) in zip(r, gmm.components):
        v = std * std + s2
        out += rk * (std * std * x.data + s2 * mu.data) / v
    return Tensor(out)


@dataclass(frozen=True)
class DenoiserArch:
    """Shape of the denoising network F.

    One lifting conv, ``blocks`` residual blocks (conv -> group norm ->
    smooth gate -> feature-wise affine conditioning -> conv), one
    cross-attention read over condition tokens, and a zero-initialized
    projection back to one channel.
    """

    in_channels: int = 1
    channels: int = 32
    blocks: int = 4
    groups: int = 8
    cond_dim: int = 32
    noise_emb_dim: int = 16

    def __post_init__(self):
        if self.channels % self.groups != 0:
            raise ArgumentError(
                f"groups ({self.groups}) must divide channels ({self.channels})"
            )
        if self.noise_emb_dim % 2 != 0:
            raise ArgumentError("noise_emb_dim must be even")


def param_layout(arch: DenoiserArch, mode: str) -> list[tuple[str, tuple[int, ...]]]:
    """Declared (name, shape) order of all trainable parameters."""
    c, d, e = arch.channels, arch.cond_dim, arch.noise_emb_dim
    layout = [("lift.w", (c, arch.in_channels, 3, 3, 3)), ("lift.b", (c,))]
    for i in range(arch.blocks):
        layout += [
            (f"block{i}.conv1.w", (c, c, 3, 3, 3)),
            (f"block{i}.conv1.b", (c,)),
            (f"block{i}.gn.gamma", (c,)),
            (f"block{i}.gn.beta", (c,)),
            (f"block{i}.film.wg", (e + d, c)),
            (f"block{i}.film.bg", (c,)),
            (f"block{i}.film.wb", (e + d, c)),
            (f"block{i}.film.bb", (c,)),
            (f"block{i}.conv2.w", (c, c, 3, 3, 3)),
            (f"block{i}.conv2.b", (c,)),
        ]
    layout += [
        ("attn.wq", (c, c)),
        ("attn.wk", (d, c)),
        ("attn.wv", (d, c)),
        ("attn.wo", (c, c)),
        ("proj.w", (1, c, 3, 3, 3)),
        ("proj.b", (1,)),
    ]
    if mode == "A+T":
        layout += [(f"fuse.{n}", (d, d)) for n in ("wq", "wk", "wv", "wo")]
    return layout


@dataclass
class LearnedDenoiser:
    """A preconditioned network denoiser with its parameters."""

    arch: DenoiserArch
    schedule: NoiseSchedule
    mode: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")
        expected = param_layout(self.arch, self.mode)
        if list(self.params) != [n for n, _ in expected]:
            raise ArgumentError("parameter names do not match the declared layout")
        for name, shape in expected:
            got = self.params[name].shape
            if got != shape:
                raise ArgumentError(f"parameter {name} has shape {got}, expected {shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise ArgumentError(f"parameter {name} contains non-finite values")

    @staticmethod
    def init(
        arch: DenoiserArch,
        schedule: NoiseSchedule,
        mode: str,
        seed: int,
    ) -> "LearnedDenoiser":
        """Seeded initialization.

        Residual-branch outputs start at zero: the final projection (so an
        untrained denoiser reduces to c_skip * x) and the fusion read-out
        (so an untrained audio-textual model matches the audio-only one).
        """
        rng = SeededRng(seed)
        params: dict[str, np.ndarray] = {}
        for name, shape in param_layout(arch, mode):
            if name.startswith("proj.") or name == "fuse.wo" or name.endswith((".bg", ".bb", ".b")):
                params[name] = np.zeros(shape)
            elif name.endswith(".gamma"):
                params[name] = np.ones(shape)
            elif name.endswith(".beta"):
                params[name] = np.zeros(shape)
            else:
                fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[1:]))
                params[name] = rng.gaussian(shape, 1.0 / np.sqrt(fan_in))
        return LearnedDenoiser(arch=arch, schedule=schedule, mode=mode, params=params)

    def fusion_weights(self, params=None) -> FusionWeights:
        p = params if params is not None else self.params
        return FusionWeights(w_q=p["fuse.wq"], w_k=p["fuse.wk"], w_v=p["fuse.wv"], w_o=p["fuse.wo"])

    def n_params(self) -> int:
        return sum(int(v.size) for v in self.params.values())


def _noise_embedding(c_noise: np.ndarray, dim: int) -> np.ndarray:
    """Fixed Fourier features of the scalar noise conditioner, (B, dim)."""
    freqs = 2.0 ** np.arange(dim // 2)
    ang = np.asarray(c_noise, dtype=np.float64).reshape(-1, 1) * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _group_norm(x: ad.Var, groups: int, gamma, beta, eps: float = 1e-5) -> ad.Var:
    b, f, h, w, c = x.value.shape
    xg = ad.reshape(x, (b, f, h, w, groups, c // groups))
    m = ad.vmean(xg, axis=(1, 2, 3, 5), keepdims=True)
    centered = ad.add(xg, ad.mul(m, -1.0))
    var = ad.vmean(ad.mul(centered, centered), axis=(1, 2, 3, 5), keepdims=True)
    y = ad.reshape(ad.div(centered, ad.sqrt(ad.add(var, eps))), (b, f, h, w, c))
    return ad.add(ad.mul(y, gamma), beta)


def network_graph(params: dict, arch: DenoiserArch, x: ad.Var,
                  c_noise: np.ndarray, tokens: ad.Var) -> ad.Var:
    """The raw network F as an autodiff graph, channels last.

    x: (B, F, H, W, in_channels); c_noise: (B,); tokens: (B, T, cond_dim).
    Returns (B, F, H, W, 1).
    """
    b = x.value.shape[0]
    emb = _noise_embedding(c_noise, arch.noise_emb_dim)  # (B, E)
    pooled = ad.vmean(tokens, axis=1)  # (B, d)
    cond_vec = ad.concat([ad.Var(emb), pooled], axis=1)  # (B, E+d)

    h = ad.conv3d(x, params["lift.w"], params["lift.b"])
    for i in range(arch.blocks):
        y = ad.conv3d(h, params[f"block{i}.conv1.w"], params[f"block{i}.conv1.b"])
        y = _group_norm(y, arch.groups, params[f"block{i}.gn.gamma"], params[f"block{i}.gn.beta"])
        y = ad.silu(y)
        scale = ad.add(ad.matmul(cond_vec, params[f"block{i}.film.wg"]), params[f"block{i}.film.bg"])
        shift = ad.add(ad.matmul(cond_vec, params[f"block{i}.film.wb"]), params[f"block{i}.film.bb"])
        y = ad.add(ad.mul(y, ad.reshape(ad.add(scale, 1.0), (b, 1, 1, 1, arch.channels))),
                   ad.reshape(shift, (b, 1, 1, 1, arch.channels)))
        y = ad.conv3d(y, params[f"block{i}.conv2.w"], params[f"block{i}.conv2.b"])
        h = ad.add(h, y)

    # per-frame attention read over condition tokens
    frame_vecs = ad.vmean(h, axis=(2, 3))  # (B, F, C)
    q = ad.matmul(frame_vecs, params["attn.wq"])  # (B, F, C)
    k = ad.matmul(tokens, params["attn.wk"])  # (B, T, C)
    v = ad.matmul(tokens, params["attn.wv"])
    logits = ad.mul(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(arch.channels))
    read = ad.matmul(ad.matmul(ad.softmax(logits, axis=-1), v), params["attn.wo"])  # (B, F, C)
    fr, c = read.value.shape[1], read.value.shape[2]
    h = ad.add(h, ad.reshape(read, (b, fr, 1, 1, c)))

    return ad.conv3d(h, params["proj.w"], params["proj.b"])


def resolve_tokens(model: LearnedDenoiser, cond: ConditionBundle, params=None):
    """Condition tokens per mode: raw audio for A, fused audio+text for A+T.

    Works on plain arrays (inference) or Vars (training, grads reach the
    fusion weights).
    """
    if model.mode == "A":
        return cond.audio_seq.data
    if cond.text_seq is None:
        raise ConditionError("model mode is A+T but the bundle has no text stream")
    return cross_attention_fuse(cond.audio_seq, cond.text_seq, model.fusion_weights(params))


def network_forward(model: LearnedDenoiser, x_in: Tensor, c_noise: float,
                    cond: ConditionBundle) -> Tensor:
    """One inference pass of the raw network F (no preconditioning).

    x_in: (F, H, W) single-channel, or (F, H, W, in_channels).
    """
    x = x_in.data
    if x.ndim == 3:
        x = x[:, :, :, None]
    if x.ndim != 4 or x.shape[-1] != model.arch.in_channels:
        raise ArgumentError(
            f"x_in must have {model.arch.in_channels} channel(s), got shape {x_in.shape}"
        )
    if cond.dim != model.arch.cond_dim:
        raise ArgumentError(f"condition dim {cond.dim} != arch cond_dim {model.arch.cond_dim}")
    with ad.no_grad():
        tokens = resolve_tokens(model, cond)
        if isinstance(tokens, Tensor):
            tokens = tokens.data
        elif isinstance(tokens, ad.Var):
            tokens = tokens.value
        out = network_graph(model.params, model.arch, ad.Var(x[None]),
                            np.array([c_noise]), ad.Var(tokens[None]))
    return Tensor(out.value[0, :, :, :, 0])


def denoise(model, x: Tensor, sigma: float, cond: ConditionBundle | None = None,
            video_cond: Tensor | None = None) -> Tensor:
    """Evaluate D(x, sigma) for any denoiser family.

    Oracles accept sigma = 0; the learned model requires sigma > 0 (its
    noise conditioner is log sigma). ``video_cond`` supplies the extra
    input channel of cascade stages.
    """
    if isinstance(model, GaussianOracle):
        return oracle_gaussian_denoise(x, sigma, model)
    if isinstance(model, GmmOracle):
        return oracle_gmm_denoise(x, sigma, model)
    if isinstance(model, CallableDenoiser):
        return model.fn(x, sigma)
    if isinstance(model, ConditionedDenoiser):
        return denoise(model.model, x, sigma, cond=model.cond, video_cond=model.video_cond)
    if not isinstance(model, LearnedDenoiser):
        raise ArgumentError(f"unknown denoiser type {type(model).__name__}")
    if sigma <= 0:
        raise ArgumentError(f"learned denoiser requires sigma > 0, got {sigma}")
    if cond is None:
        raise ArgumentError("learned denoiser requires a condition bundle")
    c_skip, c_out, c_in, c_noise = precondition_coeffs(sigma, model.schedule.sigma_data)
    x_scaled = c_in * x.data
    if model.arch.in_channels == 2:
        if video_cond is None:
            raise ConditionError("cascade-stage denoiser requires a conditioning clip")
        if video_cond.shape != x.shape:
            raise ArgumentError(
                f"conditioning clip shape {video_cond.shape} != x shape {x.shape}"
            )
        net_in = Tensor(np.stack([x_scaled, video_cond.data], axis=-1))
    else:
        net_in = Tensor(x_scaled)
    f = network_forward(model, net_in, c_noise, cond)
    return Tensor(c_skip * x.data + c_out * f.data)


@dataclass(frozen=True)
class ConditionedDenoiser:
    """A denoiser bound to fixed conditions, for samplers that only see
    (x, sigma)."""

    model: LearnedDenoiser
    cond: ConditionBundle
    video_cond: Tensor | None = None


@dataclass(frozen=True)
class CallableDenoiser:
    """Wrap any (x, sigma) -> Tensor function as a denoiser (test stubs,
    perturbed oracles)."""

    fn: object


# --- checkpoint format -------------------------------------------------------
# "SDNZ" magic, u32 version, seven u32 architecture fields, u64 parameter
# count, then all parameters as little-endian float64 in declared order.
# A JSON sidecar (<path>.json) carries schedule and condition-mode metadata.

_MAGIC = b"SDNZ"
_VERSION = 1


def save_checkpoint(model: LearnedDenoiser, path, meta: dict | None = None) -> Path:
    path = Path(path)
    arch = model.arch
    header = struct.pack(
        "<4sIIIIIIIIQ",
        _MAGIC,
        _VERSION,
        arch.in_channels,
        arch.channels,
        arch.blocks,
        arch.groups,
        arch.cond_dim,
        arch.noise_emb_dim,
        MODES.index(model.mode),
        model.n_params(),
    )
    blob = b"".join(
        np.ascontiguousarray(v, dtype="<f8").tobytes() for v in model.params.values()
    )
    path.write_bytes(header + blob)
    sidecar = {
        "schedule": {
            "sigma_min": model.schedule.sigma_min,
            "sigma_max": model.schedule.sigma_max,
            "sigma_data": model.schedule.sigma_data,
            "rho": model.schedule.rho,
            "n_steps": model.schedule.n_steps,
        },
        "condition_mode": model.mode,
        "meta": meta or {},
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def load_checkpoint(path) -> tuple[LearnedDenoiser, dict]:
    """Read a checkpoint; returns (model, sidecar metadata dict)."""
    path = Path(path)
    raw = path.read_bytes()
    head_size = struct.calcsize("<4sIIIIIIIIQ")
    if len(raw) < head_size:
        raise FormatError("checkpoint truncated before header end", offset=len(raw))
    magic, version, in_ch, ch, blocks, groups, cond_dim, emb, mode_idx, n_params = (
        struct.unpack("<4sIIIIIIIIQ", raw[:head_size])
    )
    if magic != _MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", offset=0)
    if version != _VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    if mode_idx >= len(MODES):
        raise FormatError(f"unknown condition-mode index {mode_idx}")
    arch = DenoiserArch(in_channels=in_ch, channels=ch, blocks=blocks, groups=groups,
                        cond_dim=cond_dim, noise_emb_dim=emb)
    mode = MODES[mode_idx]
    layout = param_layout(arch, mode)
    expected = sum(int(np.prod(s)) for _, s in layout)
    if n_params != expected:
        raise FormatError(f"parameter count {n_params} does not match layout ({expected})")
    need = head_size + 8 * expected
    if len(raw) != need:
        raise FormatError(f"checkpoint size {len(raw)} != expected {need}", offset=len(raw))
    flat = np.frombuffer(raw, dtype="<f8", offset=head_size).astype(np.float64)
    params = {}
    pos = 0
    for name, shape in layout:
        n = int(np.prod(shape))
        params[name] = flat[pos:pos + n].reshape(shape).copy()
        pos += n
    sidecar_path = Path(str(path) + ".json")
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    sched = sidecar.get("schedule", {})
    schedule = NoiseSchedule(
        sigma_min=sched.get("sigma_min", 0.002),
        sigma_max=sched.get("sigma_max", 160.0),
        sigma_data=sched.get("sigma_data", 0.25),
        rho=sched.get("rho", 7.0),
        n_steps=int(sched.get("n_steps", 40)),
    )
    model = LearnedDenoiser(arch=arch, schedule=schedule, mode=mode, params=params)
    return model, sidecar
