"""Flat key = value configuration for runs and the synthetic generator.

One schema covers every knob the library exposes; a second, separate schema
drives dataset synthesis. Files are UTF-8 lines of ``key = value`` with
``#`` comments; unknown keys are rejected by name, and every command dumps
the effective configuration next to its outputs so a run can be replayed.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .bagio import SynthConfig
from .reembed import BlockSettings
from .model import ModelSettings
from .train import MONITORS, THRESHOLD_RULES, TrainConfig


@dataclass
class RunConfig:
    # architecture
    L: int = 8
    D: int = 512
    N_head: int = 8
    pos_conv_k: int = 15
    pos_conv_variant: str = "attn"
    use_pos_conv: bool = True
    use_cross_region: bool = True
    K: int = 3
    n_blocks: int = 1
    use_ffn: bool = False
    ffn_mult: int = 4
    mask_padding: bool = False
    rezero_pad: bool = True
    scale_full_d: bool = False
    cross_attn_axis: str = "region"
    mil_hidden: int = 128
    gated_attention: bool = True
    n_classes: int = 2
    # optimization
    lr: float = 2e-4
    weight_decay: float = 1e-5
    epochs: int = 200
    patience: int = 30
    seed: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    monitor: str = "auc"
    threshold_rule: str = "youden"

    def validate(self):
        if self.D % self.N_head != 0:
            raise ValueError(f"D={self.D} not divisible by N_head={self.N_head}")
        if self.pos_conv_k % 2 != 1:
            raise ValueError(f"pos_conv_k must be odd, got {self.pos_conv_k}")
        if self.L < 1 or self.K < 1 or self.mil_hidden < 1:
            raise ValueError("L, K, and mil_hidden must be >= 1")
        if self.n_blocks < 0:
            raise ValueError("n_blocks must be >= 0")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.pos_conv_variant not in ("attn", "value"):
            raise ValueError(f"unknown pos_conv_variant {self.pos_conv_variant!r}")
        if self.cross_attn_axis not in ("region", "slot"):
            raise ValueError(f"unknown cross_attn_axis {self.cross_attn_axis!r}")
        if self.monitor not in MONITORS:
            raise ValueError(f"unknown monitor {self.monitor!r}")
        if self.threshold_rule not in THRESHOLD_RULES:
            raise ValueError(f"unknown threshold_rule {self.threshold_rule!r}")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 1 <= self.patience <= self.epochs:
            raise ValueError("need 1 <= patience <= epochs")
        return self


def parse_config(text: str, cls):
    """Parse flat key = value text into dataclass ``cls``; unknown keys error."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    values = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in fields:
            raise ValueError(f"line {ln}: unknown config key {key!r}")
        values[key] = coerce(val, fields[key].type, key)
    cfg = cls(**values)
    return cfg.validate()


def coerce(text: str, type_name, key: str):
    if isinstance(type_name, type):
        type_name = type_name.__name__
    ty = {"int": int, "float": float, "bool": bool, "str": str}.get(type_name, None)
    if ty is None:
        raise ValueError(f"config key {key!r} has unsupported type {type_name!r}")
    if ty is bool:
        low = text.lower()
        if low not in ("true", "false"):
            raise ValueError(f"config key {key!r} wants true/false, got {text!r}")
        return low == "true"
    if ty is str:
        return text
    try:
        return ty(text)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {text!r} as {type_name}")


def dump_config(cfg) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_config_file(path, cls):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), cls)


# ---------------------------------------------------------------------------
# converters into the module-level settings objects


def block_settings(cfg: RunConfig) -> BlockSettings:
    return BlockSettings(
        d=cfg.D,
        regions_per_side=cfg.L,
        n_head=cfg.N_head,
        pos_conv_k=cfg.pos_conv_k,
        slots=cfg.K,
        use_pos_conv=cfg.use_pos_conv,
        use_cross_region=cfg.use_cross_region,
        use_ffn=cfg.use_ffn,
        pos_conv_variant=cfg.pos_conv_variant,
        mask_padding=cfg.mask_padding,
        rezero_pad=cfg.rezero_pad,
        scale_full_d=cfg.scale_full_d,
        cross_attn_axis=cfg.cross_attn_axis,
        ffn_mult=cfg.ffn_mult,
    )


def model_settings(cfg: RunConfig, d_in: int) -> ModelSettings:
    return ModelSettings(
        d_in=d_in,
        d=cfg.D,
        n_classes=cfg.n_classes,
        mil_hidden=cfg.mil_hidden,
        gated=cfg.gated_attention,
        n_blocks=cfg.n_blocks,
        block=block_settings(cfg),
    )


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        epochs=cfg.epochs,
        patience=cfg.patience,
        seed=cfg.seed,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps_adam=cfg.eps_adam,
        monitor=cfg.monitor,
        threshold_rule=cfg.threshold_rule,
    )
