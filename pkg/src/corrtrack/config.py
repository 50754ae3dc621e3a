"""Run configuration: one TOML file with [network], [pipeline], [scene] and
[train] sections, fully determining every artifact together with the seed."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import tomli

from .network import NetworkConfig
from .synth import SceneConfig
from .tracker import PipelineConfig

STAGES = ("detect-pretrain", "joint-finetune")


@dataclass
class TrainSettings:
    learning_rate: float = 1e-3
    batch_size: int = 8
    pretrain_steps: int = 2000
    finetune_steps: int = 2000
    train_sequences: int = 16
    val_sequences: int = 10
    gradient_clip: float = 10.0
    seed: int = 0
    threads: int = 0  # 0 = library default; 1 = bitwise-reproducible mode
    dtype: str = "float32"


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    train: TrainSettings = field(default_factory=TrainSettings)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    return f'"{value}"'


def dump_toml(cfg: RunConfig) -> str:
    lines = []
    for section in ("network", "pipeline", "scene", "train"):
        obj = getattr(cfg, section)
        lines.append(f"[{section}]")
        for f_ in dataclasses.fields(obj):
            value = getattr(obj, f_.name)
            if value is None:
                continue
            lines.append(f"{f_.name} = {_fmt(value)}")
        lines.append("")
    return "\n".join(lines)


def save_config(path, cfg: RunConfig):
    with open(path, "w") as fh:
        fh.write(dump_toml(cfg))


def _build(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown key(s) in [{where}]: {sorted(unknown)}")
    return cls(**data)


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        data = tomli.load(fh)
    return RunConfig(
        network=_build(NetworkConfig, data.get("network", {}), "network"),
        pipeline=_build(PipelineConfig, data.get("pipeline", {}), "pipeline"),
        scene=_build(SceneConfig, data.get("scene", {}), "scene"),
        train=_build(TrainSettings, data.get("train", {}), "train"),
    )
