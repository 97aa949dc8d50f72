'''
Per-run hyperparameters: a pydantic model read from a flat key=value file and
overridden by --key=value flags.
'''
from __future__ import annotations
import logging
from typing import Dict, List, Literal, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import DatasetIOError, InvalidArgumentError

logger = logging.getLogger(__name__)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    device: Literal["cpu", "accelerator"] = "cpu"
    threads: int = Field(4, ge=1)
    image_size: int = 512

    # synthetic data
    data_styles: List[str] = ["neutral", "ballad", "rap", "opera"]
    samples_per_style: int = Field(5, ge=1)
    duration_s: float = Field(4., ge=1.)

    # audio encoder
    apc_hidden: int = Field(512, ge=1)
    apc_lr: float = 1e-4
    apc_batch: int = 64
    apc_steps: int = Field(200, ge=0)
    apc_crop: int = Field(64, ge=2)

    # motion generator
    motion_hidden: int = Field(256, ge=1)
    pose_hidden: int = Field(256, ge=1)
    k_me: Literal[25, 41] = 25
    motion_lr: float = 1e-4
    motion_batch: int = 64
    motion_steps: int = Field(200, ge=0)

    # style mapping
    num_keypoints: int = Field(15, ge=4)
    stylemap_lr: float = 1e-4
    stylemap_batch: int = 64
    stylemap_steps: int = Field(100, ge=0)

    # style-aware generator
    generator_channels: Tuple[int, ...] = (64, 128, 256, 512, 512, 512, 512, 512)
    discriminator_channels: Tuple[int, ...] = (64, 128, 256, 512)
    generator_lr: float = 1e-5
    generator_batch: int = 8
    generator_steps: int = Field(100, ge=0)
    lambda_pw: float = Field(100., ge=0.)
    lambda_p: float = Field(10., ge=0.)
    lambda_f: float = Field(1., ge=0.)

    # style transfer
    style_net_lr: float = 1e-4
    style_net_steps: int = Field(100, ge=0)
    transfer_epochs: int = Field(6, ge=1)
    transfer_steps_per_epoch: int = Field(20, ge=1)
    transfer_lr_phase1: float = 1e-3
    transfer_lr_phase2: float = 1e-7
    gamma_mode: Literal["fixed", "uniform-random"] = "uniform-random"
    gamma: float = Field(0.5, ge=0., le=1.)

    # evaluation grid
    metric_f_max: int = Field(100, ge=1)
    metric_v_max: int = Field(20, ge=1)
    workers: int = Field(4, ge=1)

    @field_validator("data_styles", mode="before")
    @classmethod
    def _split_styles(cls, value):
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @field_validator("generator_channels", "discriminator_channels", mode="before")
    @classmethod
    def _split_channels(cls, value):
        if isinstance(value, str):
            return tuple(int(item) for item in value.split(",") if item.strip())
        return value

    @model_validator(mode="after")
    def _check(self) -> RunConfig:
        for name, value in self.__dict__.items():
            if name.endswith("_lr") or name.startswith("transfer_lr"):
                if value <= 0:
                    raise ValueError("learning rate {} must be > 0, got {}".format(name, value))
            if name.endswith("_batch") and value < 1:
                raise ValueError("batch size {} must be >= 1, got {}".format(name, value))
        size = self.image_size
        # the style mapping encoders work at 1/16 resolution and need a >= 4 x 4 map
        if size < 64 or size & (size - 1):
            raise ValueError("image_size must be a power of two >= 64, got {}".format(size))
        if not self.generator_channels or size % (2 ** len(self.generator_channels)) != 0 \
                or size < 2 ** (len(self.generator_channels) + 1):
            raise ValueError("{} generator layers do not fit image_size {}".format(len(self.generator_channels), size))
        return self


def parse_key_values(lines) -> Dict[str, str]:
    '''
    key=value lines; '#' starts a comment, blank lines are ignored.
    '''
    values = {}
    for number, raw in enumerate(lines):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError("line {}: expected key=value, got '{}'".format(number + 1, raw.rstrip()))
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def load_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    values: Dict[str, str] = {}
    if path is not None:
        try:
            with open(path, "r") as f:
                values.update(parse_key_values(f.readlines()))
        except OSError as e:
            raise DatasetIOError("cannot read config ({})".format(e.strerror), path) from e
    if overrides:
        values.update({key.replace("-", "_"): value for key, value in overrides.items()})
    cfg = RunConfig(**values)
    logger.debug("run config: %s", cfg.model_dump())
    return cfg
