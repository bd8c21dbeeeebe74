"""Synthetic tongue-contour videos, their on-disk format, and dataset
assembly with a speaker-disjoint split.

Each clip renders a bright ridge with a Gaussian cross-section over a dark,
speckled background. The ridge's shape is driven by a per-symbol contour
codebook (the universal part, shared by every speaker) while each speaker
contributes a vertical offset, an amplitude gain, and a brightness level
(the individual part).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conditioning import ConditionSpec, EncoderParams, SpeakerParams, DEFAULT_CODEBOOK_SEED
from .errors import ArgumentError, FormatError
from .numerics import SeededRng, Tensor, derive_seed

__all__ = [
    "Clip",
    "Manifest",
    "ManifestEntry",
    "GenConfig",
    "Normalization",
    "synth_clip",
    "write_clip",
    "read_clip",
    "build_dataset",
    "clip_to_model",
    "model_to_clip",
    "contour_codebook",
    "contour_rows",
    "manifest_digest",
]

VALID_RESOLUTIONS = (16, 32, 64, 96, 112)
RIDGE_BASE = 0.25          # normalized row of the resting contour
RIDGE_THICKNESS = 0.06     # Gaussian cross-section std, fraction of height
SPECKLE_STD = 8.0          # gray levels


@dataclass(frozen=True)
class Clip:
    """A grayscale video stored as 8-bit frames (F, H, W) at a fixed fps."""

    frames: np.ndarray
    fps: int = 60

    def __post_init__(self):
        arr = np.asarray(self.frames)
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise ArgumentError(f"frames must be (F, H, W) with F >= 1, got {arr.shape}")
        if arr.dtype != np.uint8:
            raise ArgumentError(f"frames must be uint8, got {arr.dtype}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames.shape


@dataclass(frozen=True)
class Normalization:
    """Affine map between 8-bit pixels and the model's value domain.

    x = ((p/255 - 0.5) - mean) * scale, with scale chosen at dataset build
    time so the training set's std is exactly the schedule's sigma_data.
    """

    mean: float
    scale: float


def clip_to_model(frames: np.ndarray, norm: Normalization) -> Tensor:
    u = frames.astype(np.float64) / 255.0 - 0.5
    return Tensor((u - norm.mean) * norm.scale)


def model_to_clip(x: Tensor, norm: Normalization, fps: int = 60) -> Clip:
    u = x.data / norm.scale + norm.mean + 0.5
    p = np.clip(np.rint(u * 255.0), 0, 255).astype(np.uint8)
    return Clip(frames=p, fps=fps)


def contour_codebook(vocab_size: int, codebook_seed: int = DEFAULT_CODEBOOK_SEED) -> np.ndarray:
    """Per-symbol contour targets (center, amplitude, width), (vocab, 3)."""
    rng = SeededRng(derive_seed(codebook_seed, "contour-codebook"))
    u = rng.uniform(3 * vocab_size).reshape(vocab_size, 3)
    out = np.empty_like(u)
    out[:, 0] = 0.2 + 0.6 * u[:, 0]    # bump center, fraction of width
    out[:, 1] = 0.10 + 0.15 * u[:, 1]  # amplitude, fraction of height
    out[:, 2] = 0.08 + 0.12 * u[:, 2]  # width, fraction of width
    return out


def _frame_params(symbols, frames_per_symbol: int, codebook: np.ndarray) -> np.ndarray:
    """Per-frame (center, amplitude, width): linear interpolation between
    consecutive symbol targets, holding the last."""
    n_sym = len(symbols)
    targets = codebook[np.asarray(symbols, dtype=int)]
    out = np.empty((n_sym * frames_per_symbol, 3))
    for j in range(out.shape[0]):
        s = j // frames_per_symbol
        frac = (j % frames_per_symbol) / frames_per_symbol
        if s + 1 < n_sym:
            out[j] = (1.0 - frac) * targets[s] + frac * targets[s + 1]
        else:
            out[j] = targets[s]
    return out


def contour_rows(params_fhw: np.ndarray, speaker: SpeakerParams, height: int, width: int) -> np.ndarray:
    """Analytic ridge-center rows, (F, W), in pixel units.

    The speaker's vertical offset is applied as a whole-pixel shift
    (round(offset * H)) so that two speakers differing only in offset
    render the same ridge displaced by an exact integer number of rows.
    """
    cols = np.arange(width) / (width - 1)
    m = params_fhw[:, 0][:, None]
    a = params_fhw[:, 1][:, None]
    w = params_fhw[:, 2][:, None]
    bump = np.exp(-((cols[None, :] - m) ** 2) / (2.0 * w * w))
    y = RIDGE_BASE + speaker.amplitude_gain * a * bump
    return y * (height - 1) + round(speaker.vertical_offset * height)


def synth_clip(
    symbol_seq,
    speaker: SpeakerParams,
    resolution: int,
    frames_per_symbol: int,
    seed: int,
    encoder: EncoderParams = EncoderParams(),
    speckle_std: float = SPECKLE_STD,
    fps: int = 60,
) -> tuple[Clip, ConditionSpec]:
    """Render one clip and its condition recipe.

    Deterministic given (seed, codebook seed). Frame count is
    len(symbol_seq) * frames_per_symbol.
    """
    if resolution not in VALID_RESOLUTIONS:
        raise ArgumentError(f"resolution must be one of {VALID_RESOLUTIONS}, got {resolution}")
    if frames_per_symbol < 1:
        raise ArgumentError(f"frames_per_symbol must be >= 1, got {frames_per_symbol}")
    symbols = tuple(int(s) for s in symbol_seq)
    for s in symbols:
        if not 0 <= s < encoder.vocab_size:
            raise ArgumentError(f"symbol id {s} out of range [0, {encoder.vocab_size})")
    h = w = resolution
    codebook = contour_codebook(encoder.vocab_size, encoder.codebook_seed)
    frame_p = _frame_params(symbols, frames_per_symbol, codebook)
    rows_c = contour_rows(frame_p, speaker, h, w)  # (F, W)

    rgrid = np.arange(h)[None, :, None]  # (1, H, 1)
    tau = RIDGE_THICKNESS * h
    peak = speaker.brightness * 255.0
    img = peak * np.exp(-((rgrid - rows_c[:, None, :]) ** 2) / (2.0 * tau * tau))
    if speckle_std > 0:
        noise_rng = SeededRng(derive_seed(seed, "speckle"))
        img = img + noise_rng.gaussian(img.shape, speckle_std)
    frames = np.clip(np.rint(img), 0, 255).astype(np.uint8)

    spec = ConditionSpec(
        symbols=symbols,
        frame_symbols=tuple(symbols[j // frames_per_symbol] for j in range(len(frames))),
        speaker=speaker,
        clip_seed=int(seed),
    )
    return Clip(frames=frames, fps=fps), spec


# --- UTIV container ----------------------------------------------------------
# "UTIV" magic, u32 version=1, u32 F, u32 H, u32 W, u16 fps (little-endian),
# then F*H*W raw bytes in row-major order.

_UTIV_MAGIC = b"UTIV"
_UTIV_HEADER = "<4sIIIIH"


def write_clip(clip: Clip, path) -> Path:
    path = Path(path)
    f, h, w = clip.shape
    header = struct.pack(_UTIV_HEADER, _UTIV_MAGIC, 1, f, h, w, clip.fps)
    path.write_bytes(header + clip.frames.tobytes())
    return path


def read_clip(path) -> Clip:
    raw = Path(path).read_bytes()
    head = struct.calcsize(_UTIV_HEADER)
    if len(raw) < head:
        raise FormatError("file shorter than the UTIV header", offset=len(raw))
    magic, version, f, h, w, fps = struct.unpack(_UTIV_HEADER, raw[:head])
    if magic != _UTIV_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_UTIV_MAGIC!r}", offset=0)
    if version != 1:
        raise FormatError(f"unsupported UTIV version {version}", offset=4)
    need = head + f * h * w
    if len(raw) != need:
        raise FormatError(
            f"payload has {len(raw) - head} bytes, expected {f * h * w}", offset=min(len(raw), need)
        )
    frames = np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(f, h, w)
    return Clip(frames=frames.copy(), fps=fps)


# --- dataset assembly --------------------------------------------------------

@dataclass(frozen=True)
class GenConfig:
    """Everything the generator needs to build a dataset."""

    out_dir: str
    train_speakers: int = 40
    test_speakers: int = 4
    clips_per_speaker: int = 2
    symbols_per_clip: int = 4
    frames_per_symbol: int = 4
    resolution: int = 32
    master_seed: int = 0
    vocab_size: int = 16
    embed_dim: int = 32
    codebook_seed: int = DEFAULT_CODEBOOK_SEED
    fps: int = 60

    def encoder_params(self) -> EncoderParams:
        return EncoderParams(vocab_size=self.vocab_size, dim=self.embed_dim,
                             codebook_seed=self.codebook_seed)


@dataclass(frozen=True)
class ManifestEntry:
    clip_path: str
    sidecar_path: str
    speaker_id: int
    split: str  # "train" | "test"


@dataclass
class Manifest:
    """Dataset index: clip entries, generation seeds, and normalization."""

    entries: list = field(default_factory=list)
    resolution: int = 32
    frames_per_symbol: int = 4
    fps: int = 60
    master_seed: int = 0
    vocab_size: int = 16
    embed_dim: int = 32
    codebook_seed: int = DEFAULT_CODEBOOK_SEED
    normalization: Normalization = Normalization(mean=0.0, scale=1.0)

    def __post_init__(self):
        train = {e.speaker_id for e in self.entries if e.split == "train"}
        test = {e.speaker_id for e in self.entries if e.split == "test"}
        if train & test:
            raise ArgumentError(f"train/test speaker overlap: {sorted(train & test)}")

    def encoder_params(self) -> EncoderParams:
        return EncoderParams(vocab_size=self.vocab_size, dim=self.embed_dim,
                             codebook_seed=self.codebook_seed)

    def split_entries(self, split: str) -> list:
        return [e for e in self.entries if e.split == split]

    def to_json(self) -> str:
        return json.dumps(
            {
                "entries": [
                    {
                        "clip_path": e.clip_path,
                        "sidecar_path": e.sidecar_path,
                        "speaker_id": e.speaker_id,
                        "split": e.split,
                    }
                    for e in self.entries
                ],
                "resolution": self.resolution,
                "frames_per_symbol": self.frames_per_symbol,
                "fps": self.fps,
                "master_seed": self.master_seed,
                "vocab_size": self.vocab_size,
                "embed_dim": self.embed_dim,
                "codebook_seed": self.codebook_seed,
                "normalization": {"mean": self.normalization.mean,
                                  "scale": self.normalization.scale},
            },
            indent=2,
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "Manifest":
        obj = json.loads(text)
        return Manifest(
            entries=[
                ManifestEntry(
                    clip_path=e["clip_path"],
                    sidecar_path=e["sidecar_path"],
                    speaker_id=int(e["speaker_id"]),
                    split=e["split"],
                )
                for e in obj["entries"]
            ],
            resolution=int(obj["resolution"]),
            frames_per_symbol=int(obj["frames_per_symbol"]),
            fps=int(obj["fps"]),
            master_seed=int(obj["master_seed"]),
            vocab_size=int(obj["vocab_size"]),
            embed_dim=int(obj["embed_dim"]),
            codebook_seed=int(obj["codebook_seed"]),
            normalization=Normalization(
                mean=float(obj["normalization"]["mean"]),
                scale=float(obj["normalization"]["scale"]),
            ),
        )

    @staticmethod
    def load(path) -> "Manifest":
        return Manifest.from_json(Path(path).read_text())


def _draw_speaker(master_seed: int, speaker_id: int) -> SpeakerParams:
    rng = SeededRng(derive_seed(master_seed, "speaker", speaker_id))
    u = rng.uniform(3)
    return SpeakerParams(
        vertical_offset=-0.1 + 0.2 * u[0],
        amplitude_gain=0.8 + 0.4 * u[1],
        brightness=0.7 + 0.3 * u[2],
        speaker_id=speaker_id,
    )


def build_dataset(config: GenConfig) -> tuple[Manifest, Path]:
    """Generate clips, sidecars, and the manifest under config.out_dir.

    The same symbol sequences are reused across speakers so universal
    patterns repeat on both sides of the speaker-disjoint split.
    """
    out_dir = Path(config.out_dir)
    clips_dir = out_dir / "clips"
    clips_dir.mkdir(parents=True, exist_ok=True)
    encoder = config.encoder_params()

    seq_rng = SeededRng(derive_seed(config.master_seed, "symbol-sequences"))
    sequences = [
        tuple(int(s) for s in seq_rng.integers(0, config.vocab_size, config.symbols_per_clip))
        for _ in range(config.clips_per_speaker)
    ]

    n_total = config.train_speakers + config.test_speakers
    entries: list[ManifestEntry] = []
    train_pixels = []
    for speaker_id in range(n_total):
        speaker = _draw_speaker(config.master_seed, speaker_id)
        split = "train" if speaker_id < config.train_speakers else "test"
        for ci, symbols in enumerate(sequences):
            clip_seed = derive_seed(config.master_seed, "clip", speaker_id, ci)
            clip, spec = synth_clip(
                symbols, speaker, config.resolution, config.frames_per_symbol,
                clip_seed, encoder=encoder, fps=config.fps,
            )
            stem = f"spk{speaker_id:03d}_clip{ci:03d}"
            clip_path = clips_dir / f"{stem}.utiv"
            sidecar_path = clips_dir / f"{stem}.json"
            write_clip(clip, clip_path)
            sidecar_path.write_text(spec.to_json())
            entries.append(
                ManifestEntry(
                    clip_path=str(clip_path.relative_to(out_dir)),
                    sidecar_path=str(sidecar_path.relative_to(out_dir)),
                    speaker_id=speaker_id,
                    split=split,
                )
            )
            if split == "train":
                train_pixels.append(clip.frames)

    if train_pixels:
        u = np.concatenate([p.reshape(-1) for p in train_pixels]).astype(np.float64) / 255.0 - 0.5
        mean = float(u.mean())
        std = float(u.std())
        norm = Normalization(mean=mean, scale=0.25 / std if std > 0 else 1.0)
    else:
        norm = Normalization(mean=0.0, scale=1.0)

    manifest = Manifest(
        entries=entries,
        resolution=config.resolution,
        frames_per_symbol=config.frames_per_symbol,
        fps=config.fps,
        master_seed=config.master_seed,
        vocab_size=config.vocab_size,
        embed_dim=config.embed_dim,
        codebook_seed=config.codebook_seed,
        normalization=norm,
    )
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(manifest.to_json())
    return manifest, manifest_path


def manifest_digest(manifest_path) -> str:
    """SHA-256 over the manifest and every file it references, in order."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    manifest = Manifest.load(manifest_path)
    h = hashlib.sha256(manifest_path.read_bytes())
    for e in manifest.entries:
        h.update(hashlib.sha256((root / e.clip_path).read_bytes()).digest())
        h.update(hashlib.sha256((root / e.sidecar_path).read_bytes()).digest())
    return h.hexdigest()
