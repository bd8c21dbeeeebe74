import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from sonotrace.conditioning import EncoderParams, SpeakerParams
from sonotrace.dataset import (
    Clip,
    GenConfig,
    Manifest,
    ManifestEntry,
    Normalization,
    build_dataset,
    clip_to_model,
    contour_codebook,
    contour_rows,
    manifest_digest,
    model_to_clip,
    read_clip,
    synth_clip,
    write_clip,
    _frame_params,
)
from sonotrace.errors import ArgumentError, FormatError
from sonotrace.numerics import Tensor

ENC = EncoderParams(vocab_size=6, dim=8)
SPK = SpeakerParams(0.0, 1.0, 0.9, 0)


class TestSynthClip:
    def test_noiseless_argmax_on_analytic_contour(self):
        clip, _ = synth_clip([2], SPK, 32, 1, seed=1, encoder=ENC, speckle_std=0.0)
        assert clip.shape == (1, 32, 32)
        codebook = contour_codebook(ENC.vocab_size, ENC.codebook_seed)
        rows = contour_rows(_frame_params([2], 1, codebook), SPK, 32, 32)
        argmax = clip.frames[0].argmax(axis=0)
        assert np.array_equal(argmax, np.rint(rows[0]).astype(int))

    def test_vertical_offset_is_exact_pixel_shift(self):
        spk0 = SpeakerParams(0.0, 1.0, 0.9, 0)
        spk1 = SpeakerParams(0.1, 1.0, 0.9, 1)
        c0, _ = synth_clip([1, 3], spk0, 32, 2, seed=5, encoder=ENC, speckle_std=0.0)
        c1, _ = synth_clip([1, 3], spk1, 32, 2, seed=5, encoder=ENC, speckle_std=0.0)
        shift = round(0.1 * 32)
        for f in range(c0.shape[0]):
            a0 = c0.frames[f].argmax(axis=0)
            a1 = c1.frames[f].argmax(axis=0)
            assert np.array_equal(a1 - a0, np.full(32, shift))

    def test_ridge_within_one_pixel_for_random_speakers(self):
        rng = np.random.default_rng(3)
        for trial in range(5):
            spk = SpeakerParams(
                float(rng.uniform(-0.1, 0.1)), float(rng.uniform(0.8, 1.2)),
                float(rng.uniform(0.7, 1.0)), trial,
            )
            symbols = rng.integers(0, 6, size=3).tolist()
            clip, _ = synth_clip(symbols, spk, 64, 2, seed=trial, encoder=ENC,
                                 speckle_std=0.0)
            codebook = contour_codebook(ENC.vocab_size, ENC.codebook_seed)
            rows = contour_rows(_frame_params(symbols, 2, codebook), spk, 64, 64)
            for f in range(clip.shape[0]):
                argmax = clip.frames[f].argmax(axis=0)
                assert np.max(np.abs(argmax - rows[f])) <= 1.0

    def test_deterministic(self):
        a, sa = synth_clip([0, 1], SPK, 32, 3, seed=7, encoder=ENC)
        b, sb = synth_clip([0, 1], SPK, 32, 3, seed=7, encoder=ENC)
        assert np.array_equal(a.frames, b.frames)
        assert sa == sb

    def test_condition_sidecar_contents(self):
        _, spec = synth_clip([4, 2], SPK, 16, 3, seed=9, encoder=ENC)
        assert spec.symbols == (4, 2)
        assert spec.frame_symbols == (4, 4, 4, 2, 2, 2)
        assert spec.clip_seed == 9

    def test_invalid_resolution(self):
        with pytest.raises(ArgumentError):
            synth_clip([0], SPK, 20, 1, seed=1, encoder=ENC)

    def test_invalid_symbol(self):
        with pytest.raises(ArgumentError):
            synth_clip([9], SPK, 32, 1, seed=1, encoder=ENC)


class TestClipType:
    def test_requires_uint8(self):
        with pytest.raises(ArgumentError):
            Clip(frames=np.zeros((1, 2, 2), dtype=np.float64))

    def test_requires_3d(self):
        with pytest.raises(ArgumentError):
            Clip(frames=np.zeros((2, 2), dtype=np.uint8))


class TestUtivFormat:
    def test_round_trip_exact(self, tmp_path):
        clip, _ = synth_clip([0, 5], SPK, 32, 2, seed=3, encoder=ENC)
        path = write_clip(clip, tmp_path / "c.utiv")
        again = read_clip(path)
        assert np.array_equal(clip.frames, again.frames)
        assert again.fps == clip.fps

    def test_header_arithmetic(self, tmp_path):
        clip = Clip(frames=np.full((2, 2, 2), 128, dtype=np.uint8), fps=60)
        path = write_clip(clip, tmp_path / "c.utiv")
        assert path.stat().st_size == 30  # 4+4+12+2 header + 8 payload

    def test_truncated_file_is_format_error(self, tmp_path):
        clip, _ = synth_clip([0], SPK, 16, 2, seed=3, encoder=ENC)
        path = write_clip(clip, tmp_path / "c.utiv")
        raw = path.read_bytes()
        path.write_bytes(raw[:-5])
        with pytest.raises(FormatError) as err:
            read_clip(path)
        assert err.value.offset is not None

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "c.utiv"
        path.write_bytes(b"NOPE" + bytes(30))
        with pytest.raises(FormatError) as err:
            read_clip(path)
        assert err.value.offset == 0

    @given(data=st.binary(min_size=0, max_size=64))
    @settings(max_examples=60, deadline=None)
    def test_arbitrary_bytes_never_crash(self, data, tmp_path_factory):
        path = tmp_path_factory.mktemp("fuzz") / "x.utiv"
        path.write_bytes(data)
        try:
            read_clip(path)
        except FormatError:
            pass

    @given(
        f=st.integers(1, 3), h=st.integers(1, 6), w=st.integers(1, 6),
        seed=st.integers(0, 10),
    )
    @settings(max_examples=25, deadline=None,
              suppress_health_check=[HealthCheck.function_scoped_fixture])
    def test_random_clip_round_trip(self, f, h, w, seed, tmp_path):
        frames = np.random.default_rng(seed).integers(0, 256, size=(f, h, w), dtype=np.uint8)
        path = write_clip(Clip(frames=frames, fps=60), tmp_path / f"r{f}{h}{w}{seed}.utiv")
        assert np.array_equal(read_clip(path).frames, frames)


class TestNormalization:
    def test_round_trip_u8(self):
        norm = Normalization(mean=-0.37, scale=1.07)
        frames = np.random.default_rng(1).integers(0, 256, size=(2, 4, 4), dtype=np.uint8)
        x = clip_to_model(frames, norm)
        back = model_to_clip(x, norm)
        assert np.array_equal(back.frames, frames)


class TestBuildDataset:
    def test_default_split_structure(self, tmp_path):
        cfg = GenConfig(out_dir=str(tmp_path / "ds"), train_speakers=40, test_speakers=4,
                        clips_per_speaker=1, resolution=16, master_seed=1)
        manifest, path = build_dataset(cfg)
        speakers = {e.speaker_id for e in manifest.entries}
        assert len(speakers) == 44
        train = {e.speaker_id for e in manifest.entries if e.split == "train"}
        test = {e.speaker_id for e in manifest.entries if e.split == "test"}
        assert len(train) == 40 and len(test) == 4
        assert train.isdisjoint(test)
        again = Manifest.load(path)
        assert len(again.entries) == len(manifest.entries)

    def test_zero_clips_gives_empty_manifest(self, tmp_path):
        cfg = GenConfig(out_dir=str(tmp_path / "ds"), train_speakers=3, test_speakers=1,
                        clips_per_speaker=0, resolution=16, master_seed=1)
        manifest, _ = build_dataset(cfg)
        assert manifest.entries == []

    def test_same_seed_same_digest(self, tmp_path):
        cfg_a = GenConfig(out_dir=str(tmp_path / "a"), train_speakers=3, test_speakers=1,
                          clips_per_speaker=2, resolution=16, master_seed=99)
        cfg_b = GenConfig(out_dir=str(tmp_path / "b"), train_speakers=3, test_speakers=1,
                          clips_per_speaker=2, resolution=16, master_seed=99)
        _, pa = build_dataset(cfg_a)
        _, pb = build_dataset(cfg_b)
        assert manifest_digest(pa) == manifest_digest(pb)

    def test_different_seed_different_digest(self, tmp_path):
        cfg_a = GenConfig(out_dir=str(tmp_path / "a"), train_speakers=2, test_speakers=1,
                          clips_per_speaker=1, resolution=16, master_seed=1)
        cfg_b = GenConfig(out_dir=str(tmp_path / "b"), train_speakers=2, test_speakers=1,
                          clips_per_speaker=1, resolution=16, master_seed=2)
        _, pa = build_dataset(cfg_a)
        _, pb = build_dataset(cfg_b)
        assert manifest_digest(pa) != manifest_digest(pb)

    def test_training_set_std_is_sigma_data(self, tmp_path):
        cfg = GenConfig(out_dir=str(tmp_path / "ds"), train_speakers=6, test_speakers=2,
                        clips_per_speaker=2, resolution=32, master_seed=5)
        manifest, path = build_dataset(cfg)
        root = path.parent
        pixels = []
        for e in manifest.split_entries("train"):
            clip = read_clip(root / e.clip_path)
            pixels.append(clip_to_model(clip.frames, manifest.normalization).data.reshape(-1))
        std = float(np.concatenate(pixels).std())
        assert abs(std - 0.25) < 1e-9          # exact by construction
        assert 0.8 * 0.25 <= std <= 1.2 * 0.25  # the +-20% contract

    def test_shared_sequences_across_speakers(self, tmp_path):
        import json
        cfg = GenConfig(out_dir=str(tmp_path / "ds"), train_speakers=2, test_speakers=1,
                        clips_per_speaker=2, resolution=16, master_seed=5)
        manifest, path = build_dataset(cfg)
        root = path.parent
        by_speaker = {}
        for e in manifest.entries:
            sc = json.loads((root / e.sidecar_path).read_text())
            by_speaker.setdefault(e.speaker_id, []).append(tuple(sc["symbols"]))
        seq_sets = list(by_speaker.values())
        assert all(s == seq_sets[0] for s in seq_sets[1:])

    def test_split_overlap_rejected(self):
        entries = [
            ManifestEntry("a.utiv", "a.json", speaker_id=1, split="train"),
            ManifestEntry("b.utiv", "b.json", speaker_id=1, split="test"),
        ]
        with pytest.raises(ArgumentError):
            Manifest(entries=entries)

    @given(
        train=st.integers(1, 5), test=st.integers(1, 3),
        clips=st.integers(1, 2), seed=st.integers(0, 50),
    )
    @settings(max_examples=12, deadline=None,
              suppress_health_check=[HealthCheck.function_scoped_fixture])
    def test_split_disjoint_property(self, train, test, clips, seed, tmp_path):
        cfg = GenConfig(out_dir=str(tmp_path / f"p{train}{test}{clips}{seed}"),
                        train_speakers=train, test_speakers=test,
                        clips_per_speaker=clips, resolution=16,
                        symbols_per_clip=2, frames_per_symbol=2, master_seed=seed)
        manifest, _ = build_dataset(cfg)
        tr = {e.speaker_id for e in manifest.entries if e.split == "train"}
        te = {e.speaker_id for e in manifest.entries if e.split == "test"}
        assert tr.isdisjoint(te)
        assert len(tr) == train and len(te) == test
