#!/usr/bin/env python3
"""A miniature end-to-end run: build data, train briefly, sample a clip.

A few hundred iterations at 16x16 are enough to see the validation loss
move and to sample a recognizable (if soft) ridge. The full ablation at
32x32 with 2000 iterations lives in the acceptance suite.

Run: python3 demos/05_train_and_sample.py [out_dir]
"""

import sys
import time
from pathlib import Path

import numpy as np

from sonotrace import SamplerParams, SeededRng, derive_seed
from sonotrace.conditioning import ConditionSpec, build_bundle
from sonotrace.dataset import GenConfig, Manifest, build_dataset, model_to_clip, write_clip
from sonotrace.denoiser import load_checkpoint
from sonotrace.sampler import generate
from sonotrace.training import TrainConfig, train

out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_output/train")
out_dir.mkdir(parents=True, exist_ok=True)

print("building a 6+2-speaker dataset at 16x16 ...")
gcfg = GenConfig(out_dir=str(out_dir / "ds"), train_speakers=6, test_speakers=2,
                 clips_per_speaker=2, symbols_per_clip=4, frames_per_symbol=4,
                 resolution=16, master_seed=2024, vocab_size=8, embed_dim=16)
manifest, manifest_path = build_dataset(gcfg)

print("training an audio-only denoiser for 300 iterations ...")
tcfg = TrainConfig(out_dir=str(out_dir / "run"), iterations=300, batch_size=4,
                   checkpoint_every=300, eval_every=100, condition_mode="A",
                   channels=4, blocks=1, groups=2, seed=7, val_windows=8)
t0 = time.perf_counter()
result = train(tcfg, manifest_path)
print(f"done in {time.perf_counter() - t0:.0f}s: validation loss "
      f"{result.initial_val_loss:.1f} -> {result.final_val_loss:.1f}")
print(f"loss curve: {result.curve_path}")

print()
print("sampling a held-out test condition ...")
model, sidecar = load_checkpoint(result.checkpoint_path)
entry = manifest.split_entries("test")[0]
spec = ConditionSpec.from_json((manifest_path.parent / entry.sidecar_path).read_text())
bundle = build_bundle(spec, with_text=False, params=manifest.encoder_params())
x = generate(model, bundle, (len(spec.frame_symbols), 16, 16),
             SamplerParams(n_steps=16), SeededRng(derive_seed(2024, "demo-sample")),
             schedule=model.schedule)
clip = model_to_clip(x, manifest.normalization)
sample_path = write_clip(clip, out_dir / "sample.utiv")
print(f"sampled clip {clip.shape} -> {sample_path}")

frame = clip.frames[0]
chars = " .:-=+*#%@"
print("first frame (16x16):")
for row in frame:
    print("  " + "".join(chars[min(int(v) * len(chars) // 256, len(chars) - 1)] for v in row))
