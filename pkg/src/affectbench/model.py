"""The convolutional encoder + feed-forward classifier, with checkpoints.

Architecture: ``depth`` blocks of (conv -> SiLU -> conv -> SiLU -> pool),
channel width doubling per block, dropout between blocks (not after the
last), then flatten and two fully connected layers.  The head emits raw
logits; softmax lives in the loss (training) or is applied explicitly
for reported probabilities.

Checkpoint file layout (little-endian throughout):
  magic "AFCK" | u16 version=1 | 9 u32 config fields in declaration
  order | u64 seed | u32 epoch | f64 validation loss | parameter records
  (u16 name length, ASCII name, u32 element count, f32 data).
The dropout rate occupies its u32 slot as the IEEE-754 binary32 bit
pattern; all other config fields are plain integers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from affectbench.autodiff import (
    Tensor,
    Tape,
    add,
    conv1d,
    dropout,
    flatten,
    matmul,
    maxpool1d,
    silu,
    softmax,
)
from affectbench.binio import ByteReader
from affectbench.errors import (
    BadMagicError,
    ConfigMismatchError,
    UnsupportedVersionError,
)
from affectbench.rng import Rng

CHECKPOINT_MAGIC = b"AFCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    # Field order is the checkpoint serialization order; don't reorder.
    in_channels: int = 8
    window_len: int = 64
    depth: int = 3
    base_channels: int = 16
    conv_kernel: int = 3
    pool_kernel: int = 2
    dropout_rate: float = 0.15
    fc_hidden: int = 128
    num_classes: int = 3

    def validate(self) -> None:
        for name in ("in_channels", "window_len", "depth", "base_channels",
                     "conv_kernel", "pool_kernel", "fc_hidden", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.window_len % self.pool_kernel ** self.depth != 0:
            raise ValueError(
                f"window_len {self.window_len} not divisible by "
                f"pool_kernel^depth = {self.pool_kernel ** self.depth}"
            )

    @property
    def pad(self) -> int:
        """Zero padding keeping conv output length equal to input length."""
        return (self.conv_kernel - 1) // 2

    def block_channels(self, block: int) -> int:
        """Output channel width of 1-based block ``block``."""
        return self.base_channels * 2 ** (block - 1)

    def layer_dims(self) -> list[tuple[str, tuple[int, ...]]]:
        """Ordered (name, shape) pairs for every parameter array."""
        dims: list[tuple[str, tuple[int, ...]]] = []
        length = self.window_len
        cin = self.in_channels
        conv_idx = 0
        for block in range(1, self.depth + 1):
            width = self.block_channels(block)
            for _ in range(2):
                conv_idx += 1
                dims.append((f"conv{conv_idx}.weight", (width, cin, self.conv_kernel)))
                dims.append((f"conv{conv_idx}.bias", (width,)))
                length = length + 2 * self.pad - self.conv_kernel + 1
                cin = width
            length //= self.pool_kernel
        flat = cin * length
        dims.append(("fc1.weight", (flat, self.fc_hidden)))
        dims.append(("fc1.bias", (self.fc_hidden,)))
        dims.append(("fc2.weight", (self.fc_hidden, self.num_classes)))
        dims.append(("fc2.bias", (self.num_classes,)))
        return dims

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def param_count(cfg: ModelConfig) -> int:
    cfg.validate()
    return sum(int(np.prod(shape)) for _, shape in cfg.layer_dims())


class EmotionNet:
    """Parameter set plus the wiring defined by its config."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params

    def _wire(self, p: dict[str, Tensor], x: Tensor, mode: str,
              rng: Optional[Rng]) -> Tensor:
        cfg = self.cfg
        h = x
        conv_idx = 0
        for block in range(1, cfg.depth + 1):
            for _ in range(2):
                conv_idx += 1
                h = conv1d(h, p[f"conv{conv_idx}.weight"],
                           p[f"conv{conv_idx}.bias"], pad=cfg.pad)
                h = silu(h)
            h = maxpool1d(h, cfg.pool_kernel)
            if block < cfg.depth:
                h = dropout(h, cfg.dropout_rate, mode, rng)
        h = flatten(h)
        h = silu(add(matmul(h, p["fc1.weight"]), p["fc1.bias"]))
        return add(matmul(h, p["fc2.weight"]), p["fc2.bias"])

    def forward_tracked(self, tape: Tape, batch: np.ndarray, mode: str,
                        rng: Optional[Rng] = None
                        ) -> tuple[Tensor, dict[str, Tensor]]:
        """Forward with parameters watched on ``tape`` (training path)."""
        self._check_batch(batch)
        p = {name: tape.watch(Tensor(arr)) for name, arr in self.params.items()}
        return self._wire(p, Tensor(batch), mode, rng), p

    def forward(self, batch: np.ndarray, mode: str = "eval",
                rng: Optional[Rng] = None) -> np.ndarray:
        """Logits [B, num_classes]; pure function of inputs in eval mode."""
        self._check_batch(batch)
        p = {name: Tensor(arr) for name, arr in self.params.items()}
        return self._wire(p, Tensor(batch), mode, rng).data

    def loss_with_params(self, param_list: list[Tensor], batch: np.ndarray,
                         targets: np.ndarray, mode: str = "eval",
                         rng_factory=None) -> Tensor:
        """Loss from an externally supplied ordered parameter list.

        Exists for gradient checking: the caller controls tracking, and
        ``rng_factory`` (called once per invocation) lets repeated calls
        reproduce the same dropout mask.
        """
        from affectbench.autodiff import softmax_cross_entropy

        names = list(self.params)
        if len(param_list) != len(names):
            raise ValueError("parameter list length mismatch")
        p = dict(zip(names, param_list))
        rng = rng_factory() if rng_factory is not None else None
        logits = self._wire(p, Tensor(batch), mode, rng)
        return softmax_cross_entropy(logits, targets)

    def _check_batch(self, batch: np.ndarray) -> None:
        if batch.ndim != 3 or batch.shape[1:] != (self.cfg.in_channels,
                                                  self.cfg.window_len):
            raise ValueError(
                f"batch must be [B, {self.cfg.in_channels}, "
                f"{self.cfg.window_len}], got {batch.shape}"
            )

    def copy(self) -> "EmotionNet":
        return EmotionNet(self.cfg, {k: v.copy() for k, v in self.params.items()})


def build_model(cfg: ModelConfig, rng: Rng, dtype=np.float64) -> EmotionNet:
    """Initialize parameters uniform on (-sqrt(1/fan_in), +sqrt(1/fan_in)).

    Draw order is fixed: for conv1..convN then fc1, fc2, the weight
    array (row-major) followed by its bias.  Same seed, same bits.
    """
    cfg.validate()
    params: dict[str, np.ndarray] = {}
    for name, shape in cfg.layer_dims():
        if name.endswith(".weight"):
            if name.startswith("conv"):
                fan_in = shape[1] * shape[2]
            else:
                fan_in = shape[0]
            bound = float(np.sqrt(1.0 / fan_in))
        # biases reuse the bound of the weight drawn just before them
        n = int(np.prod(shape))
        params[name] = rng.uniform(-bound, bound, n).reshape(shape).astype(dtype)
    return EmotionNet(cfg, params)


def predict(model: EmotionNet, batch: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to the smallest class index."""
    return predict_from_logits(model.forward(batch, mode="eval"))


def predict_from_logits(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=1)


def predict_proba(model: EmotionNet, batch: np.ndarray) -> np.ndarray:
    """Softmax probabilities, for reporting only."""
    return softmax(model.forward(batch, mode="eval"))


@dataclass
class CheckpointMeta:
    config: ModelConfig
    seed: int
    epoch: int
    val_loss: float


@dataclass
class Checkpoint:
    """A saved model state; parameter blobs are always float32."""

    meta: CheckpointMeta
    params: dict[str, np.ndarray] = field(repr=False)

    def restore(self, dtype=np.float64) -> EmotionNet:
        return EmotionNet(
            self.meta.config,
            {k: v.astype(dtype) for k, v in self.params.items()},
        )

    def to_bytes(self) -> bytes:
        cfg = self.meta.config
        rate_bits = struct.unpack("<I", struct.pack("<f", cfg.dropout_rate))[0]
        out = bytearray()
        out += struct.pack("<4sH", CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
        out += struct.pack(
            "<9I",
            cfg.in_channels, cfg.window_len, cfg.depth, cfg.base_channels,
            cfg.conv_kernel, cfg.pool_kernel, rate_bits, cfg.fc_hidden,
            cfg.num_classes,
        )
        out += struct.pack("<QId", self.meta.seed & (2 ** 64 - 1),
                           self.meta.epoch, self.meta.val_loss)
        for name, arr in self.params.items():
            encoded = name.encode("ascii")
            out += struct.pack("<H", len(encoded))
            out += encoded
            out += struct.pack("<I", arr.size)
            out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
        return bytes(out)

    def write(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())


def checkpoint_from_model(model: EmotionNet, meta: CheckpointMeta) -> Checkpoint:
    return Checkpoint(meta, {k: v.astype("<f4") for k, v in model.params.items()})


def save_checkpoint(model: EmotionNet, meta: CheckpointMeta, path) -> Checkpoint:
    ckpt = checkpoint_from_model(model, meta)
    ckpt.write(path)
    return ckpt


def read_checkpoint(path) -> Checkpoint:
    """Parse a checkpoint file; raises a distinct error per corruption mode."""
    with open(path, "rb") as fh:
        r = ByteReader(fh)
        magic = r.read(4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"bad checkpoint magic {magic!r} at byte 0")
        (version,) = r.unpack("<H", "version")
        if version != CHECKPOINT_VERSION:
            raise UnsupportedVersionError(f"unsupported checkpoint version {version}")
        words = r.unpack("<9I", "config")
        rate = struct.unpack("<f", struct.pack("<I", words[6]))[0]
        cfg = ModelConfig(
            in_channels=words[0], window_len=words[1], depth=words[2],
            base_channels=words[3], conv_kernel=words[4], pool_kernel=words[5],
            dropout_rate=rate, fc_hidden=words[7], num_classes=words[8],
        )
        seed, epoch, val_loss = r.unpack("<QId", "training metadata")
        params: dict[str, np.ndarray] = {}
        while not r.at_eof():
            (name_len,) = r.unpack("<H", "parameter header")
            name = r.read(name_len, "parameter name").decode("ascii")
            (count,) = r.unpack("<I", f"element count of {name}")
            blob = r.read(4 * count, f"data of {name}")
            params[name] = np.frombuffer(blob, dtype="<f4").copy()
    return Checkpoint(CheckpointMeta(cfg, seed, epoch, val_loss), params)


def load_checkpoint(path, expected_cfg: Optional[ModelConfig] = None,
                    dtype=np.float64) -> tuple[EmotionNet, CheckpointMeta]:
    """Load a model; rejects files whose config differs from ``expected_cfg``."""
    ckpt = read_checkpoint(path)
    cfg = ckpt.meta.config
    if expected_cfg is not None and _f32_cfg(cfg) != _f32_cfg(expected_cfg):
        raise ConfigMismatchError(
            f"checkpoint config {cfg} does not match expected {expected_cfg}"
        )
    expected_dims = dict(cfg.layer_dims())
    if set(ckpt.params) != set(expected_dims):
        raise ConfigMismatchError(
            "parameter records do not match the configured architecture"
        )
    shaped = {}
    for name, flat in ckpt.params.items():
        shape = expected_dims[name]
        if flat.size != int(np.prod(shape)):
            raise ConfigMismatchError(
                f"parameter {name} has {flat.size} elements, expected "
                f"{int(np.prod(shape))}"
            )
        shaped[name] = flat.reshape(shape).astype(dtype)
    ordered = {name: shaped[name] for name in expected_dims}
    return EmotionNet(cfg, ordered), ckpt.meta


def _f32_cfg(cfg: ModelConfig) -> ModelConfig:
    """Config with the dropout rate rounded through its f32 storage."""
    return replace(cfg, dropout_rate=float(np.float32(cfg.dropout_rate)))
