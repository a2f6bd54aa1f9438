"""Detector configuration: dataclasses plus a strict ``key = value`` file format.

Keys are ``section.field`` (``thin.k = 15``); tuples are comma separated.
A top-level ``preset = full|toy`` line picks the base configuration the
remaining keys override. Unknown keys are errors.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class BackboneSpec:
    name: str = "xception"
    conv1_channels: int = 24
    stage_channels: tuple = (144, 288, 576)
    stage_repeats: tuple = (3, 7, 3)
    mid_channels: tuple = (32, 64, 128)
    use_c5: bool = True
    large_kernel_bias: bool = True

    @staticmethod
    def preset(name: str) -> "BackboneSpec":
        if name == "xception":
            return BackboneSpec()
        if name == "xception_toy":
            return BackboneSpec(name="xception_toy", conv1_channels=16, stage_channels=(32, 64, 128),
                                stage_repeats=(1, 1, 1), mid_channels=(16, 32, 64), use_c5=False)
        raise ConfigError(f"unknown backbone '{name}'")


@dataclass
class AnchorSpec:
    ratios: tuple = (0.5, 1.0, 2.0)  # h / w
    scales: tuple = (32.0 ** 2, 64.0 ** 2, 128.0 ** 2, 256.0 ** 2, 512.0 ** 2)  # areas
    stride: int = 16

    @property
    def per_cell(self) -> int:
        return len(self.ratios) * len(self.scales)


@dataclass
class WarpSpec:
    p: int = 7
    alpha: int = 10
    spatial_scale: float = 1.0 / 32
    aligned: bool = True
    sampling_ratio: int = 2

    def __post_init__(self):
        if self.p < 1:
            raise ConfigError("warp.p must be >= 1")
        if self.sampling_ratio < 1:
            raise ConfigError("warp.sampling_ratio must be >= 1")

    @property
    def channels(self) -> int:
        return self.alpha * self.p * self.p


@dataclass
class LargeSepConvSpec:
    k: int = 15
    c_in: int = 576
    c_mid: int = 64
    c_out: int = 490
    single_branch: bool = False
    bias: bool = True

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ConfigError(f"large separable conv needs an odd kernel, got k={self.k}")

    @property
    def pad(self) -> int:
        return (self.k - 1) // 2


@dataclass
class HeadConfig:
    p: int = 7
    alpha: int = 10
    fc_width: int = 2048
    num_classes: int = 80
    reg_loss_weight: float = 2.0
    ohem_keep: int = 256
    fg_thresh: float = 0.5
    bbox_stds: tuple = (0.1, 0.1, 0.2, 0.2)

    @property
    def in_features(self) -> int:
        return self.alpha * self.p * self.p


@dataclass
class RPNConfig:
    channels: int = 256
    pos_thresh: float = 0.7
    neg_thresh: float = 0.3
    nms_thresh: float = 0.7
    pre_nms_train: int = 12000
    pre_nms_test: int = 6000
    post_nms_train: int = 2000
    post_nms_test: int = 1000
    min_size: float = 1.0


@dataclass
class DetectConfig:
    nms_thresh: float = 0.5
    score_thresh: float = 0.05
    max_detections: int = 100


@dataclass
class TrainConfig:
    iters: int = 500
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 2
    lr_drop_at: float = 0.75
    seed: int = 0
    image_size: int = 64
    max_objects: int = 2
    min_side: int = 12
    max_side: int = 32
    noise: float = 0.1


@dataclass
class DetectorConfig:
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    anchor: AnchorSpec = field(default_factory=AnchorSpec)
    warp: WarpSpec = field(default_factory=WarpSpec)
    thin: LargeSepConvSpec = field(default_factory=LargeSepConvSpec)
    head: HeadConfig = field(default_factory=HeadConfig)
    rpn: RPNConfig = field(default_factory=RPNConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def thin_source(self) -> str:
        return "c5" if self.backbone.use_c5 else "c4"

    @property
    def thin_stride(self) -> int:
        return 32 if self.backbone.use_c5 else 16

    def validate(self) -> "DetectorConfig":
        """Cross-module consistency; raises ConfigError before any computation."""
        bb = self.backbone
        if not (len(bb.stage_channels) == len(bb.stage_repeats) == len(bb.mid_channels) == 3):
            raise ConfigError("backbone needs exactly three stages")
        if self.thin.c_out != self.warp.channels:
            raise ConfigError(f"thin.c_out={self.thin.c_out} != alpha*p*p={self.warp.channels}")
        if (self.head.p, self.head.alpha) != (self.warp.p, self.warp.alpha):
            raise ConfigError("head.p/alpha must equal warp.p/alpha")
        if abs(self.warp.spatial_scale * self.thin_stride - 1.0) > 1e-9:
            raise ConfigError(f"warp.spatial_scale must be 1/{self.thin_stride} for the {self.thin_source} thin map")
        if self.anchor.stride != 16:
            raise ConfigError("anchor.stride must be 16 (RPN runs on C4)")
        src_channels = bb.stage_channels[2] if bb.use_c5 else bb.stage_channels[1]
        if self.thin.c_in != src_channels:
            raise ConfigError(f"thin.c_in={self.thin.c_in} but {self.thin_source} has {src_channels} channels")
        if not 0 < self.rpn.neg_thresh <= self.rpn.pos_thresh < 1:
            raise ConfigError("rpn thresholds must satisfy 0 < neg <= pos < 1")
        if self.head.num_classes < 1:
            raise ConfigError("head.num_classes must be >= 1")
        return self


def full_config() -> DetectorConfig:
    """Setting S at full scale (COCO: 80 foreground classes)."""
    return DetectorConfig().validate()


def toy_config() -> DetectorConfig:
    """64x64 synthetic-rectangle setting: thin map and RPN both on C4 (stride 16)."""
    cfg = DetectorConfig(
        backbone=BackboneSpec.preset("xception_toy"),
        anchor=AnchorSpec(scales=(8.0 ** 2, 16.0 ** 2, 32.0 ** 2)),
        warp=WarpSpec(spatial_scale=1.0 / 16),
        thin=LargeSepConvSpec(k=3, c_in=64, c_mid=64),
        head=HeadConfig(num_classes=2, fc_width=256),
        rpn=RPNConfig(channels=64),
        detect=DetectConfig(score_thresh=0.5),
        # objects span more than one stride-16 thin-map cell on each axis
        train=TrainConfig(min_side=20),
    )
    return cfg.validate()


PRESETS = {"full": full_config, "toy": toy_config}


def _coerce(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            elem = type(default[0]) if default else float
            return tuple(elem(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str, base: DetectorConfig | None = None) -> DetectorConfig:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs.append((lineno, key, value))

    cfg = base
    for lineno, key, value in pairs:
        if key == "preset":
            if value not in PRESETS:
                raise ConfigError(f"line {lineno}: unknown preset {value!r}")
            cfg = PRESETS[value]()
    cfg = cfg if cfg is not None else full_config()
    cfg = DetectorConfig(**{f.name: dataclasses.replace(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)})

    for lineno, key, value in pairs:
        if key == "preset":
            continue
        if key == "backbone.name":
            cfg.backbone = BackboneSpec.preset(value)
            continue
        section, _, name = key.partition(".")
        sub = getattr(cfg, section, None) if section in {f.name for f in dataclasses.fields(cfg)} else None
        if sub is None or name not in {f.name for f in dataclasses.fields(sub)}:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(sub, name, _coerce(value, getattr(sub, name), key))
    # re-run per-section checks after overrides
    for f in dataclasses.fields(cfg):
        sub = getattr(cfg, f.name)
        if hasattr(sub, "__post_init__"):
            sub.__post_init__()
    return cfg.validate()


def load_config(path=None, base: DetectorConfig | None = None) -> DetectorConfig:
    if path is None:
        return base if base is not None else full_config()
    return parse_config(Path(path).read_text(), base)


def dump_config(cfg: DetectorConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        sub = getattr(cfg, f.name)
        for g in dataclasses.fields(sub):
            v = getattr(sub, g.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            lines.append(f"{f.name}.{g.name} = {v}")
    return "\n".join(lines) + "\n"


def seed_override(default: int) -> int:
    """``LHRCNN_SEED`` in the environment replaces every seed."""
    env = os.environ.get("LHRCNN_SEED")
    return int(env) if env not in (None, "") else default
