"""Model configuration, named parameter tensors and the checkpoint container."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

CHECKPOINT_MAGIC = b"FTCK"
CHECKPOINT_VERSION = 1

# Tensors that are running statistics rather than learned weights.
RUNNING_STATS = ("norm.running_mean", "norm.running_var")


@dataclass(frozen=True)
class TabNetConfig:
    input_dim: int
    n_classes: int
    n_d: int = 5
    n_a: int = 5
    n_steps: int = 3
    gamma: float = 1.3
    lambda_sparse: float = 1e-3
    bn_momentum: float = 0.1
    epsilon: float = 1e-15

    def __post_init__(self) -> None:
        for name in ("input_dim", "n_d", "n_a", "n_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be at least 2, got {self.n_classes}")
        if self.gamma < 1.0:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if self.lambda_sparse < 0.0:
            raise ValueError(f"lambda_sparse must be >= 0, got {self.lambda_sparse}")
        if not 0.0 < self.bn_momentum <= 1.0:
            raise ValueError(f"bn_momentum must be in (0, 1], got {self.bn_momentum}")
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def width(self) -> int:
        """Width of every feature-transformer output (decision + attention split)."""
        return self.n_d + self.n_a


class ParamTensor(NamedTuple):
    name: str
    values: np.ndarray
    trainable: bool

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


def param_shapes(config: TabNetConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical tensor order and shapes, derived from the config alone."""
    D, w = config.input_dim, config.width
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("norm.running_mean", (D,)),
        ("norm.running_var", (D,)),
        ("norm.scale", (D,)),
        ("norm.offset", (D,)),
        ("shared.0.weight", (D, 2 * w)),
        ("shared.0.bias", (2 * w,)),
        ("shared.1.weight", (w, 2 * w)),
        ("shared.1.bias", (2 * w,)),
    ]
    # step 0 is the initial transformer that only produces the first attention input
    for step in range(config.n_steps + 1):
        for block in range(2):
            shapes.append((f"step{step}.glu{block}.weight", (w, 2 * w)))
            shapes.append((f"step{step}.glu{block}.bias", (2 * w,)))
    for step in range(1, config.n_steps + 1):
        shapes.append((f"step{step}.attention.weight", (config.n_a, D)))
        shapes.append((f"step{step}.attention.bias", (D,)))
    shapes.append(("head.weight", (config.n_d, config.n_classes)))
    shapes.append(("head.bias", (config.n_classes,)))
    return shapes


class ModelParams:
    """Ordered, named parameter tensors for one TabNet model.

    Treated as an immutable value: operations return new instances and the
    arrays handed out are read-only views.
    """

    __slots__ = ("config", "_tensors")

    def __init__(self, config: TabNetConfig, tensors: dict[str, np.ndarray]):
        expected = param_shapes(config)
        if [n for n, _ in expected] != list(tensors):
            raise ValueError("tensor names/order do not match the config")
        frozen: dict[str, np.ndarray] = {}
        for name, shape in expected:
            arr = np.array(tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            arr.setflags(write=False)
            frozen[name] = arr
        self.config = config
        self._tensors = frozen

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __iter__(self) -> Iterator[ParamTensor]:
        for name, values in self._tensors.items():
            yield ParamTensor(name, values, name not in RUNNING_STATS)

    def __len__(self) -> int:
        return len(self._tensors)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.config == other.config and all(
            np.array_equal(a, other[n]) for n, a in self._tensors.items()
        )

    @property
    def names(self) -> list[str]:
        return list(self._tensors)

    def as_dict(self) -> dict[str, np.ndarray]:
        """Writable copies of every tensor."""
        return {n: a.copy() for n, a in self._tensors.items()}

    def replace(self, **updates: np.ndarray) -> ModelParams:
        tensors = dict(self._tensors)
        for name, values in updates.items():
            if name not in tensors:
                raise KeyError(name)
            tensors[name] = values
        return ModelParams(self.config, tensors)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self._tensors.values()])

    def to_bytes(self) -> bytes:
        return dump_checkpoint(self)

    @classmethod
    def from_bytes(cls, blob: bytes) -> ModelParams:
        return load_checkpoint(blob)


def init_params(config: TabNetConfig, seed: int) -> ModelParams:
    """Glorot-uniform linear maps, zero biases, identity input normalization."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config):
        if name.endswith(".weight"):
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
        elif name in ("norm.running_var", "norm.scale"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return ModelParams(config, tensors)


# Checkpoint layout (all integers little-endian):
#   magic "FTCK" | u32 version | u32 header length | header (UTF-8 JSON of the config)
#   | u32 tensor count | per tensor: u16 name length, name (UTF-8), u8 ndim,
#   u32 dims[ndim], u8 trainable flag, float64 little-endian values (C order)


def dump_checkpoint(params: ModelParams) -> bytes:
    header = json.dumps(asdict(params.config), sort_keys=True).encode("utf-8")
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<II", CHECKPOINT_VERSION, len(header)),
        header,
        struct.pack("<I", len(params)),
    ]
    for tensor in params:
        name = tensor.name.encode("utf-8")
        parts.append(struct.pack("<H", len(name)))
        parts.append(name)
        parts.append(struct.pack("<B", tensor.values.ndim))
        parts.append(struct.pack(f"<{tensor.values.ndim}I", *tensor.shape))
        parts.append(struct.pack("<B", int(tensor.trainable)))
        parts.append(np.ascontiguousarray(tensor.values, dtype="<f8").tobytes())
    return b"".join(parts)


def load_checkpoint(blob: bytes) -> ModelParams:
    """Parse :func:`dump_checkpoint` output; any malformed input raises ``ValueError``."""
    try:
        return _parse_checkpoint(blob)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise ValueError(f"malformed checkpoint: {exc}") from None


def _parse_checkpoint(blob: bytes) -> ModelParams:
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a fedtab checkpoint (bad magic)")
    pos = 4
    version, header_len = struct.unpack_from("<II", blob, pos)
    pos += 8
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    config = TabNetConfig(**json.loads(blob[pos : pos + header_len].decode("utf-8")))
    pos += header_len
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        (trainable,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        if bool(trainable) == (name in RUNNING_STATS):
            raise ValueError(f"{name}: trainable flag inconsistent with tensor role")
        size = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(blob, dtype="<f8", count=size, offset=pos)
        pos += 8 * size
        tensors[name] = values.reshape(shape).astype(np.float64)
    if pos != len(blob):
        raise ValueError("trailing bytes after checkpoint tensors")
    return ModelParams(config, tensors)


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    Path(path).write_bytes(dump_checkpoint(params))


def read_checkpoint(path: str | Path) -> ModelParams:
    return load_checkpoint(Path(path).read_bytes())
