import json
import os
from functools import lru_cache
from pathlib import Path
from typing import Literal

from dotenv import load_dotenv
from pydantic import BaseModel, Field

from app.services.explicit_state import GateConfig, GateStrategy
from app.services.fast_weight_memory import FastWeightConfig
from app.services.recurrent_core import DecoderConfig, EngineConfig
from app.services.scene_service import FeaturizerConfig

# Always load .env from the project root
env_path = Path(__file__).resolve().parents[1] / ".env"
load_dotenv(dotenv_path=env_path)


class Settings(BaseModel):
    global_seed: int | None = None
    log_level: str = "INFO"
    report_dir: str = "reports"
    api_port: int = 8000


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    seed = os.environ.get("STREAM_SEED")
    return Settings(
        global_seed=int(seed) if seed not in (None, "") else None,
        log_level=os.environ.get("LOG_LEVEL", "INFO").upper(),
        report_dir=os.environ.get("REPORT_DIR", "reports"),
        api_port=int(os.environ.get("API_PORT", "8000")),
    )


# ===============================
# RUN CONFIG (JSON)
# ===============================
class Dims(BaseModel):
    d_in: int = Field(64, gt=1)
    d_model: int = Field(48, gt=0)
    heads: int = Field(4, gt=0)
    d_head: int = Field(12, gt=0)
    state_tokens: int = Field(32, gt=0)
    channels: int = Field(48, gt=0)
    bottleneck: int = Field(24, gt=0)
    token_grid: int = Field(4, gt=0)


class Seeds(BaseModel):
    engine: int = 0
    scene: int = 0
    featurizer: int = 0


class FastWeightTuning(BaseModel):
    gamma: float = Field(0.01, gt=0.0, lt=1.0)
    c_base: float = -7.0


class Ablation(BaseModel):
    fast_weights: bool = True
    channel_gate: bool = True


class RunConfig(BaseModel):
    dims: Dims = Field(default_factory=Dims)
    seeds: Seeds = Field(default_factory=Seeds)
    gate_strategy: GateStrategy = Field(default_factory=GateStrategy)
    decoder_depth: int = Field(1, ge=1)
    traj_kind: Literal["orbit", "corridor", "random-walk"] = "orbit"
    frames: int = Field(100, ge=2)
    landmarks: int = Field(256, ge=4)
    fast_weight: FastWeightTuning = Field(default_factory=FastWeightTuning)
    ablation: Ablation = Field(default_factory=Ablation)
    ate_lengths: list[int] = Field(default_factory=list)

    def engine_config(self) -> EngineConfig:
        d = self.dims
        return EngineConfig(
            fast_weight=FastWeightConfig(
                d_in=d.d_in, d_model=d.d_model, heads=d.heads, d_head=d.d_head,
                gamma=self.fast_weight.gamma, c_base=self.fast_weight.c_base,
            ),
            gate=GateConfig(
                state_tokens=d.state_tokens, channels=d.channels,
                d_in=d.d_in, bottleneck=d.bottleneck,
            ),
            decoder=DecoderConfig(
                depth=self.decoder_depth, d_model=d.d_model, heads=d.heads, seed=self.seeds.engine,
            ),
            gate_strategy=self.gate_strategy,
            seed=self.seeds.engine,
            use_fast_weights=self.ablation.fast_weights,
            use_channel_gate=self.ablation.channel_gate,
        )

    def featurizer_config(self) -> FeaturizerConfig:
        return FeaturizerConfig(d_in=self.dims.d_in, grid=self.dims.token_grid, seed=self.seeds.featurizer)


def apply_seed_override(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return cfg
    return cfg.model_copy(update={"seeds": Seeds(engine=seed, scene=seed, featurizer=seed)})


def load_run_config(path: str | Path) -> RunConfig:
    """Read a JSON run config; STREAM_SEED, when set, overrides every seed in it."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    cfg = RunConfig.model_validate(raw)
    return apply_seed_override(cfg, get_settings().global_seed)
