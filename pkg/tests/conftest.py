import numpy as np
import pytest

from app.services.explicit_state import GateConfig
from app.services.fast_weight_memory import FastWeightConfig
from app.services.frame_packet import FramePacket
from app.services.recurrent_core import DecoderConfig, EngineConfig

# Toy dims used across the suite: d_in=64, d_model=48, heads=4, d_head=12, N_s=32, C=48
TOY_D_IN = 64


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_fw_config():
    return FastWeightConfig(d_in=64, d_model=48, heads=4, d_head=12, c_base=-7.0)


@pytest.fixture
def toy_gate_config():
    return GateConfig(state_tokens=32, channels=48, d_in=64, bottleneck=24)


@pytest.fixture
def toy_engine_config(toy_fw_config, toy_gate_config):
    return EngineConfig(
        fast_weight=toy_fw_config,
        gate=toy_gate_config,
        decoder=DecoderConfig(depth=1, d_model=48, heads=4, seed=3),
        seed=11,
    )


@pytest.fixture
def make_frame():
    def _make(rng, tokens=5, d_in=TOY_D_IN, index=0):
        return FramePacket.from_tokens(rng.normal(size=(tokens, d_in)), frame_index=index)

    return _make
