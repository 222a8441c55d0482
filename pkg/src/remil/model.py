"""Full bag classifier: projection, re-embedding stack, attention head.

``Model`` owns every ParamTensor. The input projection maps raw feature width
to the working width, ``n_blocks`` re-embedding blocks transform the
projected bag (zero blocks gives the plain attention-pooling baseline), and
the gated head produces logits.

Checkpoints are binary: 4-byte magic, a version byte, then one blob per
tensor (u32 name length, UTF-8 name, u32 rank, u32 dims, float64
little-endian values) until end of file.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .milhead import (
    MILHeadParams,
    bag_loss,
    head_backward,
    head_forward,
    init_milhead_params,
)
from .numerics import ParamTensor, linear, linear_backward
from .reembed import BlockSettings, init_stack, stack_backward, stack_forward

CHECKPOINT_MAGIC = b"RMLC"
CHECKPOINT_VERSION = 1


@dataclass
class ModelSettings:
    d_in: int
    d: int = 512
    n_classes: int = 2
    mil_hidden: int = 128
    gated: bool = True
    n_blocks: int = 1
    block: BlockSettings = field(default_factory=BlockSettings)

    def validate(self):
        if self.d_in < 1 or self.d < 1:
            raise ValueError("feature widths must be positive")
        if self.n_blocks < 0:
            raise ValueError("n_blocks must be >= 0")
        if self.block.d != self.d:
            raise ValueError("block width must match model width")
        if self.n_blocks > 0:
            self.block.validate()
        return self


@dataclass
class ModelCache:
    x: np.ndarray
    h: np.ndarray
    block_caches: list
    head_cache: object


class Model:
    def __init__(self, settings: ModelSettings, seed: int):
        settings.validate()
        self.settings = settings
        rng = np.random.default_rng(seed)
        bound = 1.0 / math.sqrt(settings.d_in)
        self.proj_w = ParamTensor(
            "proj.w", rng.uniform(-bound, bound, size=(settings.d_in, settings.d))
        )
        self.proj_b = ParamTensor("proj.b", np.zeros(settings.d))
        self.blocks = init_stack("block", settings.block, settings.n_blocks, rng)
        self.head = init_milhead_params(
            "head", settings.d, settings.mil_hidden, settings.n_classes, rng,
            gated=settings.gated,
        )

    def parameters(self) -> list[ParamTensor]:
        out = [self.proj_w, self.proj_b]
        for b in self.blocks:
            out.extend(b.tensors())
        out.extend(self.head.tensors())
        return out

    def zero_grad(self):
        for t in self.parameters():
            t.zero_grad()

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        h = linear(x, self.proj_w.values, self.proj_b.values)
        z, block_caches = stack_forward(h, self.blocks, self.settings.block)
        pred, head_cache = head_forward(z, self.head)
        return pred, ModelCache(x, h, block_caches, head_cache)

    def backward(self, grad_logits, cache: ModelCache):
        grad_z = head_backward(grad_logits, cache.head_cache, self.head)
        grad_h = stack_backward(grad_z, cache.block_caches, self.blocks, self.settings.block)
        grad_x, gw, gb = linear_backward(grad_h, cache.x, self.proj_w.values)
        self.proj_w.grad += gw
        self.proj_b.grad += gb
        return grad_x

    def loss_on_bag(self, x, label):
        """Forward, loss, backward; accumulates grads, returns (loss, prediction)."""
        pred, cache = self.forward(x)
        loss, grad_logits = bag_loss(pred.logits, label)
        self.backward(grad_logits, cache)
        return loss, pred

    def get_values(self):
        return {t.name: t.values.copy() for t in self.parameters()}

    def set_values(self, values: dict):
        for t in self.parameters():
            src = values.get(t.name)
            if src is None:
                raise ValueError(f"missing tensor {t.name!r}")
            if src.shape != t.values.shape:
                raise ValueError(
                    f"tensor {t.name!r} shape {src.shape} does not match model {t.values.shape}"
                )
            t.values[...] = src


# ---------------------------------------------------------------------------
# checkpoint I/O


def save_checkpoint(path, tensors: dict):
    """tensors: mapping name -> float64 array."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<B", CHECKPOINT_VERSION))
        for name, values in tensors.items():
            values = np.asarray(values, dtype=np.float64)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", values.ndim))
            for dim in values.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(values.astype("<f8").tobytes())


def read_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad magic {magic!r} in {path}")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        out = {}
        while True:
            head = fh.read(4)
            if not head:
                return out
            (name_len,) = struct.unpack("<I", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack("<" + "I" * rank, fh.read(4 * rank))
            count = int(np.prod(shape)) if rank else 1
            payload = fh.read(8 * count)
            if len(payload) != 8 * count:
                raise ValueError(f"truncated checkpoint at tensor {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()


def load_checkpoint(path, model: Model):
    model.set_values(read_checkpoint(path))
