"""Command-line front end: dataset generation, training, sampling, and
evaluation from a single JSON config.

Subcommands: gen-data, train, sample, evaluate, inspect. Exit codes are
stable: 0 success, 2 config error, 3 I/O error, 4 training divergence,
5 sampler divergence, 6 evaluation pairing mismatch. stdout carries
machine-readable output paths; diagnostics go to stderr. All randomness
flows from one master seed (overridable via SONOTRACE_SEED) through
per-module derived seeds.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .conditioning import ConditionSpec, EncoderParams, build_bundle
from .dataset import (
    Clip,
    GenConfig,
    Manifest,
    Normalization,
    build_dataset,
    manifest_digest,
    model_to_clip,
    read_clip,
    write_clip,
)
from .denoiser import load_checkpoint
from .errors import ArgumentError, DivergenceError, FormatError, ProtocolError, SonotraceError
from .metrics import ToyFeatureExtractor, evaluate, load_external_features
from .numerics import SeededRng, derive_seed
from .sampler import CascadeSpec, SamplerParams, cascade_generate, generate
from .training import TrainConfig, train

__all__ = ["main", "cmd_gen_data", "cmd_train", "cmd_sample", "cmd_evaluate", "cmd_inspect"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_TRAIN_DIVERGED = 4
EXIT_SAMPLE_DIVERGED = 5
EXIT_PAIRING = 6

DEFAULTS: dict = {
    "master_seed": 0,
    "out_dir": "sonotrace_run",
    "dataset": {
        "train_speakers": 40,
        "test_speakers": 4,
        "clips_per_speaker": 2,
        "symbols_per_clip": 4,
        "frames_per_symbol": 4,
        "resolution": 32,
        "vocab_size": 16,
        "embed_dim": 32,
        "fps": 60,
    },
    "schedule": {
        "sigma_min": 0.002,
        "sigma_max": 160.0,
        "sigma_data": 0.25,
        "rho": 7.0,
        "n_steps": 40,
    },
    "sampler": {
        "n_steps": 20,
        "s_churn": 0.0,
        "s_tmin": 0.05,
        "s_tmax": 50.0,
        "s_noise": 1.003,
    },
    "train": {
        "iterations": 2000,
        "learning_rate": 5e-4,
        "batch_size": 4,
        "checkpoint_every": 1000,
        "eval_every": 250,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
        "condition_mode": "A",
        "channels": 8,
        "blocks": 1,
        "groups": 4,
        "noise_emb_dim": 16,
        "window_frames": 8,
        "val_windows": 16,
        "sigma_location": -1.2,
        "sigma_scale": 1.2,
        "stage": 0,
        "stage0_checkpoint": None,
        "cascade_cond_source": "stage0_samples",
        "stage0_sample_steps": 10,
    },
    "metrics": {
        "extractor_seed": 20240917,
    },
}


class ConfigError(SonotraceError):
    pass


def _merge_section(defaults: dict, user: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(defaults[key], dict) and not isinstance(value, dict):
            raise ConfigError(f"config key {where} must be an object")
        if isinstance(defaults[key], dict):
            out[key] = _merge_section(defaults[key], value, where)
        else:
            out[key] = value
    return out


def load_config(config_path) -> dict:
    """Parse, validate, and materialize defaults; applies SONOTRACE_SEED."""
    try:
        text = Path(config_path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        user = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = _merge_section(DEFAULTS, user, "")
    env_seed = os.environ.get("SONOTRACE_SEED")
    if env_seed is not None:
        try:
            cfg["master_seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"SONOTRACE_SEED must be an integer, got {env_seed!r}")
    return cfg


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]


def echo_config(cfg: dict, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "resolved_config.json"
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return path


def _gen_config(cfg: dict) -> GenConfig:
    d = cfg["dataset"]
    return GenConfig(
        out_dir=str(Path(cfg["out_dir"]) / "dataset"),
        train_speakers=int(d["train_speakers"]),
        test_speakers=int(d["test_speakers"]),
        clips_per_speaker=int(d["clips_per_speaker"]),
        symbols_per_clip=int(d["symbols_per_clip"]),
        frames_per_symbol=int(d["frames_per_symbol"]),
        resolution=int(d["resolution"]),
        master_seed=derive_seed(cfg["master_seed"], "dataset"),
        vocab_size=int(d["vocab_size"]),
        embed_dim=int(d["embed_dim"]),
        fps=int(d["fps"]),
    )


def _train_config(cfg: dict, mode: str | None, out_dir: Path) -> TrainConfig:
    t, s = cfg["train"], cfg["schedule"]
    return TrainConfig(
        out_dir=str(out_dir),
        iterations=int(t["iterations"]),
        learning_rate=float(t["learning_rate"]),
        batch_size=int(t["batch_size"]),
        checkpoint_every=int(t["checkpoint_every"]),
        eval_every=int(t["eval_every"]),
        beta1=float(t["beta1"]),
        beta2=float(t["beta2"]),
        adam_eps=float(t["adam_eps"]),
        condition_mode=mode or t["condition_mode"],
        seed=derive_seed(cfg["master_seed"], "train"),
        channels=int(t["channels"]),
        blocks=int(t["blocks"]),
        groups=int(t["groups"]),
        noise_emb_dim=int(t["noise_emb_dim"]),
        window_frames=int(t["window_frames"]),
        sigma_min=float(s["sigma_min"]),
        sigma_max=float(s["sigma_max"]),
        sigma_data=float(s["sigma_data"]),
        rho=float(s["rho"]),
        sample_steps=int(s["n_steps"]),
        sigma_location=float(t["sigma_location"]),
        sigma_scale=float(t["sigma_scale"]),
        val_windows=int(t["val_windows"]),
        stage=int(t["stage"]),
        stage0_checkpoint=t["stage0_checkpoint"],
        cascade_cond_source=t["cascade_cond_source"],
        stage0_sample_steps=int(t["stage0_sample_steps"]),
    )


def _sampler_params(cfg: dict) -> SamplerParams:
    s = cfg["sampler"]
    return SamplerParams(
        n_steps=int(s["n_steps"]),
        s_churn=float(s["s_churn"]),
        s_tmin=float(s["s_tmin"]),
        s_tmax=float(s["s_tmax"]),
        s_noise=float(s["s_noise"]),
    )


def cmd_gen_data(config_path) -> Path:
    cfg = load_config(config_path)
    out_dir = Path(cfg["out_dir"])
    echo_config(cfg, out_dir)
    _, manifest_path = build_dataset(_gen_config(cfg))
    return manifest_path


def cmd_train(config_path, mode: str | None = None) -> Path:
    cfg = load_config(config_path)
    out_root = Path(cfg["out_dir"])
    manifest_path = out_root / "dataset" / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    slug = (mode or cfg["train"]["condition_mode"]).replace("+", "").lower()
    run_dir = out_root / f"train-{slug}"
    tcfg = _train_config(cfg, mode, run_dir)
    echo_config(cfg, run_dir)
    result = train(tcfg, manifest_path)
    return Path(result.checkpoint_path)


def _write_pgm(frame: np.ndarray, path: Path):
    with open(path, "wb") as fh:
        fh.write(f"P5\n{frame.shape[1]} {frame.shape[0]}\n255\n".encode())
        fh.write(frame.tobytes())


def _sidecar_meta(ckpt_path) -> dict:
    sidecar = json.loads(Path(str(ckpt_path) + ".json").read_text())
    return sidecar.get("meta", {})


def cmd_sample(
    config_path,
    checkpoint,
    conditions_file,
    out_dir,
    cascade_stage0: str | None = None,
    dump_frames: bool = False,
    threads: int = 1,
) -> list[Path]:
    cfg = load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)

    model, sidecar = load_checkpoint(checkpoint)
    meta = sidecar.get("meta", {})
    norm = Normalization(
        mean=float(meta.get("normalization", {}).get("mean", 0.0)),
        scale=float(meta.get("normalization", {}).get("scale", 1.0)),
    )
    encoder = EncoderParams(
        vocab_size=int(meta.get("vocab_size", cfg["dataset"]["vocab_size"])),
        dim=model.arch.cond_dim,
        codebook_seed=int(meta.get("codebook_seed", EncoderParams().codebook_seed)),
    )
    specs = [
        ConditionSpec.from_json(json.dumps(entry))
        for entry in json.loads(Path(conditions_file).read_text())
    ]
    params = _sampler_params(cfg)
    res = int(cfg["dataset"]["resolution"])
    fps = int(cfg["dataset"]["fps"])
    with_text = model.mode == "A+T"

    stage0_model = None
    if cascade_stage0 is not None:
        stage0_model, _ = load_checkpoint(cascade_stage0)

    def sample_one(i: int) -> list[Path]:
        spec = specs[i]
        rng = SeededRng(derive_seed(cfg["master_seed"], "sample", i))
        bundle = build_bundle(spec, with_text, encoder)
        n_frames = len(spec.frame_symbols)
        written = []
        if stage0_model is not None:
            spec_stages = CascadeSpec(
                stages=((stage0_model, (res // 2, res // 2)), (model, (res, res))),
            )
            outs = cascade_generate(spec_stages, bundle, n_frames, params, rng,
                                    keep_intermediate=True)
            for s, x in enumerate(outs):
                clip = model_to_clip(x, norm, fps=fps)
                path = out / f"sample_{i:03d}_v{s}.utiv"
                write_clip(clip, path)
                written.append(path)
            final = outs[-1]
        else:
            x = generate(model, bundle, (n_frames, res, res), params, rng,
                         schedule=model.schedule)
            clip = model_to_clip(x, norm, fps=fps)
            path = out / f"sample_{i:03d}.utiv"
            write_clip(clip, path)
            written.append(path)
            final = x
        if dump_frames:
            frames_dir = out / "frames"
            frames_dir.mkdir(exist_ok=True)
            clip = model_to_clip(final, norm, fps=fps)
            for f in range(clip.frames.shape[0]):
                _write_pgm(clip.frames[f], frames_dir / f"sample_{i:03d}_f{f:03d}.pgm")
        return written

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(sample_one, range(len(specs))))
    else:
        results = [sample_one(i) for i in range(len(specs))]
    return [p for group in results for p in group]


def cmd_evaluate(
    generated_dir,
    reference_manifest,
    out_json,
    config_path=None,
    unpaired: bool = False,
    features_csv=None,
) -> Path:
    cfg = load_config(config_path) if config_path else copy.deepcopy(DEFAULTS)
    gen_dir = Path(generated_dir)
    manifest_path = Path(reference_manifest)
    manifest = Manifest.load(manifest_path)
    root = manifest_path.parent

    generated = [(p.stem, read_clip(p)) for p in sorted(gen_dir.glob("*.utiv"))]
    if not generated:
        raise FileNotFoundError(f"no .utiv clips found in {gen_dir}")
    reference = [
        (Path(e.clip_path).stem, read_clip(root / e.clip_path)) for e in manifest.entries
    ]
    extractor = ToyFeatureExtractor(seed=int(cfg["metrics"]["extractor_seed"]))
    external = load_external_features(features_csv) if features_csv else None
    report = evaluate(
        generated,
        reference,
        extractor=extractor,
        require_pairs=not unpaired,
        config_digest=config_digest(cfg),
        external_features=external,
    )
    out_path = Path(out_json)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(report.to_json() + "\n")
    print(
        f"rmse={report.rmse:.4f} psnr_db={report.psnr_db:.4f} "
        f"frechet={report.frechet:.4f} n_gen={report.n_generated} "
        f"n_ref={report.n_reference}",
        file=sys.stderr,
    )
    return out_path


def cmd_inspect(paths) -> list[str]:
    lines = []
    for p in paths:
        clip = read_clip(p)
        f, h, w = clip.shape
        lines.append(f"{p}: UTIV v1 frames={f} height={h} width={w} fps={clip.fps}")
    return lines


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sonotrace",
        description="Synthetic articulatory-video diffusion: data, training, sampling, metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    p.add_argument("config")

    p = sub.add_parser("train", help="train a denoiser")
    p.add_argument("config")
    p.add_argument("--mode", choices=["A", "A+T"], default=None)

    p = sub.add_parser("sample", help="sample clips for a conditions file")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.add_argument("conditions")
    p.add_argument("out_dir")
    p.add_argument("--cascade", metavar="STAGE0_CKPT", default=None,
                   help="two-stage sampling conditioned on this stage-0 checkpoint")
    p.add_argument("--frames", action="store_true", help="also dump PGM frames")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("evaluate", help="compare generated clips against a reference manifest")
    p.add_argument("generated_dir")
    p.add_argument("reference_manifest")
    p.add_argument("out_json")
    p.add_argument("--config", default=None)
    p.add_argument("--unpaired", action="store_true",
                   help="skip pairing; Fréchet only")
    p.add_argument("--features-csv", default=None,
                   help="externally computed per-clip features")

    p = sub.add_parser("inspect", help="print UTIV headers")
    p.add_argument("paths", nargs="+")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "gen-data":
            print(cmd_gen_data(args.config))
        elif args.command == "train":
            print(cmd_train(args.config, mode=args.mode))
        elif args.command == "sample":
            for path in cmd_sample(
                args.config, args.checkpoint, args.conditions, args.out_dir,
                cascade_stage0=args.cascade, dump_frames=args.frames,
                threads=max(1, args.threads),
            ):
                print(path)
        elif args.command == "evaluate":
            print(cmd_evaluate(
                args.generated_dir, args.reference_manifest, args.out_json,
                config_path=args.config, unpaired=args.unpaired,
                features_csv=args.features_csv,
            ))
        elif args.command == "inspect":
            for line in cmd_inspect(args.paths):
                print(line)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolError as exc:
        print(f"pairing error: {exc}", file=sys.stderr)
        if exc.unmatched:
            print("unmatched ids: " + ", ".join(exc.unmatched), file=sys.stderr)
        return EXIT_PAIRING
    except DivergenceError as exc:
        diverged_in_train = args.command == "train"
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_TRAIN_DIVERGED if diverged_in_train else EXIT_SAMPLE_DIVERGED
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FileNotFoundError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ArgumentError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
