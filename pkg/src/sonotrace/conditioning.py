"""Synthetic condition streams and their fusion.

Two deterministic encoders stand in for pretrained audio/text models behind
the same interface: the audio-like encoder is speaker-entangled (its output
mixes symbol identity with speaker traits plus per-clip jitter), while the
text-like encoder is a pure embedding lookup that carries no speaker
information at all. A residual cross-attention block fuses the two, with the
audio stream as the query side so the fused sequence stays aligned to video
frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError
from .numerics import SeededRng, Tensor, derive_seed

__all__ = [
    "SpeakerParams",
    "EncoderParams",
    "ConditionSpec",
    "ConditionBundle",
    "FusionWeights",
    "encode_audio_like",
    "encode_text_like",
    "cross_attention_fuse",
    "build_bundle",
]

DEFAULT_CODEBOOK_SEED = 1592705246


@dataclass(frozen=True)
class SpeakerParams:
    """The synthetic 'individual' factors of one speaker."""

    vertical_offset: float
    amplitude_gain: float
    brightness: float
    speaker_id: int

    def __post_init__(self):
        if not -0.1 <= self.vertical_offset <= 0.1:
            raise ArgumentError(f"vertical_offset out of [-0.1, 0.1]: {self.vertical_offset}")
        if not 0.8 <= self.amplitude_gain <= 1.2:
            raise ArgumentError(f"amplitude_gain out of [0.8, 1.2]: {self.amplitude_gain}")
        if not 0.7 <= self.brightness <= 1.0:
            raise ArgumentError(f"brightness out of [0.7, 1.0]: {self.brightness}")

    def as_vector(self) -> np.ndarray:
        return np.array([self.vertical_offset, self.amplitude_gain, self.brightness])


@dataclass(frozen=True)
class EncoderParams:
    """Shared encoder configuration: vocabulary, width, codebook seed."""

    vocab_size: int = 16
    dim: int = 32
    codebook_seed: int = DEFAULT_CODEBOOK_SEED


def _audio_projection(params: EncoderParams) -> np.ndarray:
    """Fixed (vocab+3, dim) projection drawn from the codebook seed."""
    rng = SeededRng(derive_seed(params.codebook_seed, "audio-projection"))
    return rng.gaussian((params.vocab_size + 3, params.dim), 1.0)


def _text_table(params: EncoderParams) -> np.ndarray:
    """Fixed (vocab, dim) embedding table drawn from the codebook seed."""
    rng = SeededRng(derive_seed(params.codebook_seed, "text-table"))
    return rng.gaussian((params.vocab_size, params.dim), 1.0)


def _check_symbols(symbols, vocab_size: int):
    for s in symbols:
        if not 0 <= int(s) < vocab_size:
            raise ArgumentError(f"symbol id {s} out of range [0, {vocab_size})")


def encode_audio_like(
    phoneme_frames,
    speaker: SpeakerParams,
    seed: int,
    params: EncoderParams = EncoderParams(),
    jitter_std: float = 0.01,
) -> Tensor:
    """Per-frame speaker-entangled embeddings, (T_a, dim).

    Each frame's vector is the fixed codebook projection of
    [one-hot(symbol) ++ speaker traits], plus zero-mean jitter seeded per
    clip. Deterministic given (codebook seed, clip seed).
    """
    _check_symbols(phoneme_frames, params.vocab_size)
    proj = _audio_projection(params)
    t_a = len(phoneme_frames)
    feats = np.zeros((t_a, params.vocab_size + 3))
    feats[np.arange(t_a), np.asarray(phoneme_frames, dtype=int)] = 1.0
    feats[:, params.vocab_size:] = speaker.as_vector()
    out = feats @ proj
    if jitter_std > 0:
        jitter_rng = SeededRng(derive_seed(seed, "audio-jitter"))
        out = out + jitter_rng.gaussian(out.shape, jitter_std)
    return Tensor(out)


def encode_text_like(symbol_seq, params: EncoderParams = EncoderParams()) -> Tensor:
    """Per-token embeddings, (T_t, dim): a pure table lookup.

    Output depends only on the symbols, never on the speaker.
    """
    _check_symbols(symbol_seq, params.vocab_size)
    table = _text_table(params)
    return Tensor(table[np.asarray(symbol_seq, dtype=int)])


@dataclass
class FusionWeights:
    """Trainable projections of the cross-attention fusion block."""

    w_q: object
    w_k: object
    w_v: object
    w_o: object

    @staticmethod
    def init(dim: int, rng: SeededRng, scale: float | None = None) -> "FusionWeights":
        s = scale if scale is not None else 1.0 / np.sqrt(dim)
        return FusionWeights(
            w_q=rng.gaussian((dim, dim), s),
            w_k=rng.gaussian((dim, dim), s),
            w_v=rng.gaussian((dim, dim), s),
            w_o=rng.gaussian((dim, dim), s),
        )


def _swap_last_axes(ndim: int):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return axes


def _fuse_graph(audio: ad.Var, text: ad.Var, w: FusionWeights) -> ad.Var:
    dim = audio.value.shape[-1]
    q = ad.matmul(audio, w.w_q)
    k = ad.matmul(text, w.w_k)
    v = ad.matmul(text, w.w_v)
    kt = ad.transpose(k, _swap_last_axes(k.value.ndim))
    logits = ad.mul(ad.matmul(q, kt), 1.0 / np.sqrt(dim))
    attn = ad.softmax(logits, axis=-1)
    read = ad.matmul(ad.matmul(attn, v), w.w_o)
    return ad.add(audio, read)


def cross_attention_fuse(audio_seq, text_seq, weights: FusionWeights):
    """Fuse text into the audio stream: audio + softmax(QK^T/sqrt(d)) V W_o.

    Audio is the query stream (it carries the frame clock), text provides
    keys and values. Accepts Tensors/ndarrays (returns a Tensor) or autodiff
    Vars (returns a Var with gradients flowing to the weights).
    """
    a_val = audio_seq.data if isinstance(audio_seq, Tensor) else audio_seq
    t_val = text_seq.data if isinstance(text_seq, Tensor) else text_seq
    a = a_val if isinstance(a_val, ad.Var) else ad.Var(np.asarray(a_val, dtype=np.float64))
    t = t_val if isinstance(t_val, ad.Var) else ad.Var(np.asarray(t_val, dtype=np.float64))
    if a.value.shape[-1] != t.value.shape[-1]:
        raise ArgumentError(
            f"embedding dims differ: audio {a.value.shape[-1]} vs text {t.value.shape[-1]}"
        )
    has_var = any(
        isinstance(x, ad.Var)
        for x in (a_val, t_val, weights.w_q, weights.w_k, weights.w_v, weights.w_o)
    )
    if has_var:
        return _fuse_graph(a, t, weights)
    with ad.no_grad():
        out = _fuse_graph(a, t, weights)
    return Tensor(out.value)


@dataclass(frozen=True)
class ConditionSpec:
    """The raw recipe for one clip's conditions (what the sidecar stores)."""

    symbols: tuple[int, ...]
    frame_symbols: tuple[int, ...]
    speaker: SpeakerParams
    clip_seed: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "symbols": list(self.symbols),
                "frame_symbols": list(self.frame_symbols),
                "speaker": {
                    "vertical_offset": self.speaker.vertical_offset,
                    "amplitude_gain": self.speaker.amplitude_gain,
                    "brightness": self.speaker.brightness,
                    "speaker_id": self.speaker.speaker_id,
                },
                "clip_seed": self.clip_seed,
            },
            indent=2,
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "ConditionSpec":
        obj = json.loads(text)
        sp = obj["speaker"]
        return ConditionSpec(
            symbols=tuple(int(s) for s in obj["symbols"]),
            frame_symbols=tuple(int(s) for s in obj["frame_symbols"]),
            speaker=SpeakerParams(
                vertical_offset=float(sp["vertical_offset"]),
                amplitude_gain=float(sp["amplitude_gain"]),
                brightness=float(sp["brightness"]),
                speaker_id=int(sp["speaker_id"]),
            ),
            clip_seed=int(obj["clip_seed"]),
        )


@dataclass
class ConditionBundle:
    """Encoded condition streams for one clip (or one training window).

    ``fused`` is populated only after fusion ran, and only when a text
    stream exists.
    """

    audio_seq: Tensor
    text_seq: Tensor | None = None
    fused: Tensor | None = None

    def __post_init__(self):
        if self.text_seq is not None and self.audio_seq.shape[-1] != self.text_seq.shape[-1]:
            raise ArgumentError("audio and text embedding dims differ")
        if self.fused is not None and self.text_seq is None:
            raise ArgumentError("fused stream present without a text stream")

    @property
    def dim(self) -> int:
        return self.audio_seq.shape[-1]


def build_bundle(
    spec: ConditionSpec,
    with_text: bool,
    params: EncoderParams = EncoderParams(),
    frame_slice: slice | None = None,
) -> ConditionBundle:
    """Encode a ConditionSpec into streams (optionally a frame window)."""
    frames = spec.frame_symbols if frame_slice is None else spec.frame_symbols[frame_slice]
    audio = encode_audio_like(frames, spec.speaker, spec.clip_seed, params)
    text = encode_text_like(spec.symbols, params) if with_text else None
    return ConditionBundle(audio_seq=audio, text_seq=text)
