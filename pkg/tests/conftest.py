import numpy as np
import pytest

from sonotrace.conditioning import (
    ConditionBundle,
    EncoderParams,
    SpeakerParams,
    encode_audio_like,
    encode_text_like,
)
from sonotrace.denoiser import DenoiserArch, LearnedDenoiser
from sonotrace.schedule import NoiseSchedule

TINY_ENCODER = EncoderParams(vocab_size=6, dim=8)


@pytest.fixture
def tiny_encoder():
    return TINY_ENCODER


def make_tiny_bundle(with_text=True, speaker=None, seed=11):
    speaker = speaker or SpeakerParams(0.05, 1.0, 0.9, 0)
    audio = encode_audio_like([0, 1, 2, 3], speaker, seed, TINY_ENCODER)
    text = encode_text_like([0, 1], TINY_ENCODER) if with_text else None
    return ConditionBundle(audio_seq=audio, text_seq=text)


def make_tiny_model(mode="A+T", seed=5, in_channels=1):
    arch = DenoiserArch(in_channels=in_channels, channels=4, blocks=1, groups=2,
                        cond_dim=8, noise_emb_dim=8)
    return LearnedDenoiser.init(arch, NoiseSchedule(), mode, seed)


@pytest.fixture
def tiny_bundle():
    return make_tiny_bundle()


@pytest.fixture
def tiny_model():
    return make_tiny_model()
