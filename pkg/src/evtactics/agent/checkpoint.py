"""Binary checkpoint format for :class:`DQNAgent`.

All integers and floats are little-endian.  Layout::

    offset  type          field
    0       8 bytes       magic b"EVDQNCKP"
    8       u32           format version (1)
    12      u32           number of layer sizes L
    16      u32 * L       layer sizes, input first
    ...     u32 + bytes   variant name length, UTF-8 variant name
    ...     u64 * 3       environment steps, learning steps, Adam step count
    ...     f64           current epsilon
    ...     u64 * 4       PCG64 state (low, high), increment (low, high)
    ...     u32 * 2       PCG64 has_uint32, uinteger
    ...     u32           1 if Adam moments are present, else 0
    ...     f64 arrays    evaluate-net tensors, then target-net tensors,
                          then (if present) Adam first and second moments;
                          tensors ordered W1, b1, W2, b2, ... row-major

The replay buffer is not saved.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from evtactics.agent.dqn import DQNAgent, TrainingConfig
from evtactics.agent.network import QNetworkParams

MAGIC = b"EVDQNCKP"
VERSION = 1
_MASK64 = (1 << 64) - 1


class CheckpointError(ValueError):
    pass


def _shapes(sizes):
    out = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        out += [(fan_out, fan_in), (fan_out,)]
    return out


def to_bytes(agent: DQNAgent, variant: str = "") -> bytes:
    sizes = agent.evaluate.sizes
    name = variant.encode("utf-8")
    state = agent.rng.bit_generator.state
    if state["bit_generator"] != "PCG64":
        raise CheckpointError(f"unsupported bit generator {state['bit_generator']}")
    s, inc = state["state"]["state"], state["state"]["inc"]
    opt = agent.optimizer
    parts = [
        MAGIC,
        struct.pack("<II", VERSION, len(sizes)),
        struct.pack(f"<{len(sizes)}I", *sizes),
        struct.pack("<I", len(name)), name,
        struct.pack("<QQQd", agent.env_steps, agent.learn_steps, opt.t, agent.epsilon),
        struct.pack("<QQQQ", s & _MASK64, s >> 64, inc & _MASK64, inc >> 64),
        struct.pack("<II", state["has_uint32"], state["uinteger"]),
        struct.pack("<I", 1 if opt.m else 0),
    ]
    groups = [agent.evaluate.tensors, agent.target.tensors]
    if opt.m:
        groups += [opt.m, opt.v]
    for group in groups:
        for t in group:
            parts.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.raw(8 * n), dtype="<f8").astype(float).reshape(shape)


def from_bytes(data: bytes, cfg: TrainingConfig | None = None) -> tuple[DQNAgent, str]:
    """Rebuild an agent (with an empty replay buffer) and return it with its variant name."""
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    r = _Reader(data)
    r.raw(8)
    version, n_sizes = r.take("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    sizes = r.take(f"<{n_sizes}I")
    (name_len,) = r.take("<I")
    variant = r.raw(name_len).decode("utf-8")
    env_steps, learn_steps, adam_t, epsilon = r.take("<QQQd")
    s_lo, s_hi, inc_lo, inc_hi = r.take("<QQQQ")
    has_uint32, uinteger = r.take("<II")
    (has_moments,) = r.take("<I")
    shapes = _shapes(sizes)
    evaluate = QNetworkParams(tuple(sizes), [r.array(sh) for sh in shapes])
    target = QNetworkParams(tuple(sizes), [r.array(sh) for sh in shapes])
    m = [r.array(sh) for sh in shapes] if has_moments else []
    v = [r.array(sh) for sh in shapes] if has_moments else []
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes in checkpoint")

    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": s_lo | (s_hi << 64), "inc": inc_lo | (inc_hi << 64)},
        "has_uint32": has_uint32,
        "uinteger": uinteger,
    }
    agent = DQNAgent(cfg or TrainingConfig(), rng, tuple(sizes), params=evaluate)
    agent.target = target
    agent.env_steps = env_steps
    agent.learn_steps = learn_steps
    agent.epsilon = epsilon
    agent.optimizer.t = adam_t
    agent.optimizer.m = m
    agent.optimizer.v = v
    return agent, variant


def save(agent: DQNAgent, path, variant: str = "") -> Path:
    path = Path(path)
    try:
        path.write_bytes(to_bytes(agent, variant))
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load(path, cfg: TrainingConfig | None = None) -> tuple[DQNAgent, str]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        return from_bytes(data, cfg)
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
