"""Dense array arithmetic, parameter storage, Adam, and gradient checking.

Arrays are plain numpy ndarrays (row-major). Training runs in float32;
gradient verification runs the same code in float64, selected by the dtype
of the ParameterStore that owns the weights.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

DTYPE_TRAIN = np.float32
DTYPE_CHECK = np.float64

CHECKPOINT_MAGIC = b"SNQN"
CHECKPOINT_VERSION = 1


class NumericsError(Exception):
    """Base class for errors raised by this module."""


class ShapeError(NumericsError):
    """Operand shapes are incompatible."""


class NonFiniteError(NumericsError):
    """A NaN or Inf turned up where only finite values are allowed."""


class UsageError(NumericsError):
    """An operation was called outside its contract."""


class CheckpointFormatError(NumericsError):
    """A checkpoint file does not follow the expected layout."""


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two 2-D arrays with an explicit shape contract."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: cannot multiply {tuple(a.shape)} by {tuple(b.shape)}"
        )
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-safe for large |x| and exact at 0 (0.5)
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


_UNARY_OPS = {
    "sigmoid": sigmoid,
    "tanh": np.tanh,
}
_BINARY_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Apply a named elementwise op; binary ops require broadcastable shapes."""
    if op in _UNARY_OPS:
        if b is not None:
            raise UsageError(f"elementwise: {op!r} is unary")
        return _UNARY_OPS[op](a)
    if op in _BINARY_OPS:
        if b is None:
            raise UsageError(f"elementwise: {op!r} needs two operands")
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(
                f"elementwise {op}: shapes {tuple(a.shape)} and {tuple(b.shape)} "
                "do not broadcast"
            ) from None
        return _BINARY_OPS[op](a, b)
    raise UsageError(f"elementwise: unknown op {op!r}")


def assert_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {name!r}")


@dataclass
class AdamConfig:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise UsageError("AdamConfig: learning_rate must be positive")
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise UsageError("AdamConfig: betas must lie in (0, 1)")
        if not self.epsilon > 0:
            raise UsageError("AdamConfig: epsilon must be positive")


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray


@dataclass
class ParameterStore:
    """Named dense parameters with paired gradient and Adam-moment buffers.

    Iteration is always in sorted-name order, so anything derived from a
    store (updates, checkpoints, probes) is order-deterministic.
    """

    dtype: np.dtype = DTYPE_TRAIN
    step_count: int = 0
    _entries: dict[str, Param] = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._entries:
            raise UsageError(f"parameter {name!r} already exists")
        val = np.ascontiguousarray(value, dtype=self.dtype)
        self._entries[name] = Param(
            value=val,
            grad=np.zeros_like(val),
            m=np.zeros_like(val),
            v=np.zeros_like(val),
        )
        return val

    def names(self) -> list[str]:
        return sorted(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> Param:
        try:
            return self._entries[name]
        except KeyError:
            raise UsageError(f"unknown parameter {name!r}") from None

    def items(self):
        for name in self.names():
            yield name, self._entries[name]

    def value(self, name: str) -> np.ndarray:
        return self[name].value

    def grad(self, name: str) -> np.ndarray:
        return self[name].grad

    def zero_grads(self) -> None:
        for _, p in self.items():
            p.grad[...] = 0

    def num_scalars(self) -> int:
        return sum(p.value.size for _, p in self.items())

    def copy(self) -> "ParameterStore":
        out = ParameterStore(dtype=self.dtype, step_count=self.step_count)
        for name, p in self.items():
            out._entries[name] = Param(
                value=p.value.copy(), grad=p.grad.copy(), m=p.m.copy(), v=p.v.copy()
            )
        return out

    def astype(self, dtype) -> "ParameterStore":
        out = ParameterStore(dtype=np.dtype(dtype), step_count=self.step_count)
        for name, p in self.items():
            out.add(name, p.value)
        return out

    def equal_values(self, other: "ParameterStore") -> bool:
        if self.names() != other.names():
            return False
        return all(
            np.array_equal(self.value(n), other.value(n)) for n in self.names()
        )


def adam_step(store: ParameterStore, cfg: AdamConfig) -> None:
    """One bias-corrected Adam update over every entry; gradients are zeroed."""
    t = store.step_count + 1
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in store.items():
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        g = p.grad
        p.m *= cfg.beta1
        p.m += (1.0 - cfg.beta1) * g
        p.v *= cfg.beta2
        p.v += (1.0 - cfg.beta2) * (g * g)
        m_hat = p.m / bc1
        v_hat = p.v / bc2
        p.value -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        p.grad[...] = 0
    store.step_count = t


def finite_diff_check(
    loss_fn,
    store: ParameterStore,
    h: float = 1e-5,
    n_probes: int = 50,
    rng: np.random.Generator | None = None,
) -> tuple[float, str]:
    """Compare analytic gradients in `store` against central differences.

    `loss_fn` is a zero-argument callable re-evaluating the (deterministic)
    objective at the store's current values; `store.grad` must already hold
    the analytic gradient of that objective. Returns the worst relative
    error and the parameter coordinate where it occurred, with relative
    error |a-b| / max(|a|, |b|, 1e-8).
    """
    if store.dtype != np.dtype(DTYPE_CHECK):
        raise UsageError("finite_diff_check requires a float64 parameter store")
    if rng is None:
        rng = np.random.default_rng(0)

    names = store.names()
    sizes = np.array([store.value(n).size for n in names])
    total = int(sizes.sum())
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    worst_at = ""
    for flat in rng.integers(0, total, size=n_probes):
        slot = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[slot]
        idx = int(flat - offsets[slot])
        value = store.value(name)
        orig = value.flat[idx]

        value.flat[idx] = orig + h
        f_plus = float(loss_fn())
        value.flat[idx] = orig - h
        f_minus = float(loss_fn())
        value.flat[idx] = orig

        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = float(store.grad(name).flat[idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        if rel >= worst:
            worst = rel
            worst_at = f"{name}[{idx}]"
    return worst, worst_at


def save_checkpoint(store: ParameterStore, path) -> None:
    """Serialize parameter values: magic, version, then sorted named entries."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(bytes([CHECKPOINT_VERSION]))
        for name, p in store.items():
            name_b = name.encode("utf-8")
            dims = p.value.shape
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            fh.write(np.ascontiguousarray(p.value, dtype="<f4").tobytes())


def load_checkpoint(path, dtype=DTYPE_TRAIN) -> ParameterStore:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes")
    if len(raw) < 5 or raw[4] != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version")
    store = ParameterStore(dtype=np.dtype(dtype))
    pos = 5
    prev_name = None
    while pos < len(raw):
        try:
            (name_len,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(raw, dtype="<f4", count=count, offset=pos)
            pos += 4 * count
        except (struct.error, ValueError) as exc:
            raise CheckpointFormatError(f"{path}: truncated entry: {exc}") from None
        if prev_name is not None and name <= prev_name:
            raise CheckpointFormatError(f"{path}: entries not sorted by name")
        prev_name = name
        store.add(name, values.reshape(dims))
    return store
