"""Named model variables, their 2-D views and pairing metadata.

Every prunable variable is viewed as a matrix: leading dimensions collapse
into rows and the last dimension becomes columns. Slice patterns, scores and
packing all operate on that view. One-dimensional variables (biases, scales)
are never pruned.

Two prunable matrices can be linked as a feed-forward pair ``W -> W'``
(``W`` registered first). When a column of ``W`` is pruned the matching
output unit disappears, which makes the corresponding row of ``W'`` dead.
"""
from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np


class Role(enum.Enum):
    PRUNABLE = "prunable"
    EXCLUDED = "excluded"


@dataclass(frozen=True)
class VarSpec:
    name: str
    shape: tuple[int, ...]
    role: Role
    groups: tuple[str, ...] = ()

    @property
    def param_count(self) -> int:
        return math.prod(self.shape)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def prunable(self) -> bool:
        return self.role is Role.PRUNABLE


def canonical_2d_view(spec: VarSpec) -> tuple[int, int]:
    """Return ``(rows, cols)`` of the matrix view of a rank >= 2 variable.

    >>> canonical_2d_view(VarSpec("k", (2, 3, 5), Role.PRUNABLE))
    (6, 5)
    """
    if spec.ndim < 2:
        raise ValueError(f"{spec.name}: rank-{spec.ndim} variable has no 2-D view")
    return spec.param_count // spec.shape[-1], spec.shape[-1]


def to_2d(spec: VarSpec, value: np.ndarray) -> np.ndarray:
    return np.reshape(value, canonical_2d_view(spec))


def from_2d(spec: VarSpec, value: np.ndarray) -> np.ndarray:
    return np.reshape(value, spec.shape)


@dataclass(frozen=True)
class Pair:
    group: str
    upstream: str
    downstream: str


class VarStore:
    """Ordered collection of named variables with float64 value buffers.

    Iteration order is registration order and never changes, so servers and
    clients built from the same registration sequence agree on layout.
    """

    def __init__(self) -> None:
        self._specs: dict[str, VarSpec] = {}
        self._values: dict[str, np.ndarray] = {}
        self._group_members: dict[str, list[str]] = {}
        self.step = 0

    def register_var(
        self,
        name: str,
        shape,
        role: Role = Role.PRUNABLE,
        group: str | tuple[str, ...] | None = None,
        value: np.ndarray | None = None,
    ) -> VarSpec:
        if name in self._specs:
            raise ValueError(f"duplicate variable name {name!r}")
        shape = tuple(int(s) for s in shape)
        if not shape:
            raise ValueError(f"{name}: empty shape")
        if any(s < 1 for s in shape):
            raise ValueError(f"{name}: zero or negative dimension in {shape}")
        if len(shape) == 1:
            role = Role.EXCLUDED
        if group is None:
            groups: tuple[str, ...] = ()
        elif isinstance(group, str):
            groups = (group,)
        else:
            groups = tuple(group)
        spec = VarSpec(name, shape, role, groups)
        for g in groups:
            self._check_pairing(spec, g)

        if value is None:
            value = np.zeros(shape)
        value = np.array(value, dtype=np.float64).reshape(shape)
        if not np.all(np.isfinite(value)):
            raise ValueError(f"{name}: non-finite initial value")

        self._specs[name] = spec
        self._values[name] = value
        for g in groups:
            self._group_members.setdefault(g, []).append(name)
        return spec

    def _check_pairing(self, spec: VarSpec, group: str) -> None:
        if spec.role is not Role.PRUNABLE or spec.ndim != 2:
            raise ValueError(f"{spec.name}: only prunable 2-D variables can be paired")
        members = self._group_members.get(group, [])
        if len(members) >= 2:
            raise ValueError(f"group {group!r} already links two variables")
        if members:
            up = self._specs[members[0]]
            up_cols = canonical_2d_view(up)[1]
            down_rows = canonical_2d_view(spec)[0]
            if up_cols != down_rows:
                raise ValueError(
                    f"group {group!r}: {up.name} has {up_cols} columns but "
                    f"{spec.name} has {down_rows} rows"
                )

    # -- access -----------------------------------------------------------

    def __contains__(self, name: str) -> bool:
        return name in self._specs

    def __iter__(self) -> Iterator[str]:
        return iter(self._specs)

    def __len__(self) -> int:
        return len(self._specs)

    def spec(self, name: str) -> VarSpec:
        return self._specs[name]

    def specs(self) -> list[VarSpec]:
        return list(self._specs.values())

    def prunable(self) -> list[VarSpec]:
        return [s for s in self._specs.values() if s.prunable]

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        spec = self._specs[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != spec.shape:
            raise ValueError(f"{name}: expected shape {spec.shape}, got {value.shape}")
        if not np.all(np.isfinite(value)):
            raise ValueError(f"{name}: non-finite update rejected")
        self._values[name] = value

    def values(self) -> dict[str, np.ndarray]:
        return dict(self._values)

    def pairs(self) -> list[Pair]:
        return [
            Pair(g, members[0], members[1])
            for g, members in self._group_members.items()
            if len(members) == 2
        ]

    @property
    def param_count(self) -> int:
        return sum(s.param_count for s in self._specs.values())

    @property
    def prunable_param_count(self) -> int:
        return sum(s.param_count for s in self._specs.values() if s.prunable)

    def copy(self) -> VarStore:
        other = VarStore()
        other._specs = dict(self._specs)
        other._values = {k: v.copy() for k, v in self._values.items()}
        other._group_members = {k: list(v) for k, v in self._group_members.items()}
        other.step = self.step
        return other

    def with_values(self, values: dict[str, np.ndarray]) -> VarStore:
        """Copy of this store whose buffers are replaced by ``values``."""
        other = self.copy()
        for name, v in values.items():
            other[name] = v
        return other


# -- checkpoint container ------------------------------------------------------

CHECKPOINT_MAGIC = b"FPCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(store: VarStore, path) -> None:
    """Write ``store`` as a header plus little-endian float32 buffers.

    Layout: magic ``FPCK``, uint32 version, uint32 header length, UTF-8 JSON
    header ``{"step", "vars": [{"name", "shape", "role", "groups"}]}``, then
    each variable's row-major float32 buffer in registration order.
    """
    header = {
        "step": store.step,
        "vars": [
            {"name": s.name, "shape": list(s.shape), "role": s.role.value, "groups": list(s.groups)}
            for s in store.specs()
        ],
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(Path(path), "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for name in store:
            f.write(np.ascontiguousarray(store[name], dtype="<f4").tobytes())


def load_checkpoint(path) -> VarStore:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    store = VarStore()
    for entry in header["vars"]:
        shape = tuple(entry["shape"])
        n = math.prod(shape)
        buf = np.frombuffer(data, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        store.register_var(
            entry["name"],
            shape,
            Role(entry["role"]),
            tuple(entry["groups"]) or None,
            value=buf.astype(np.float64).reshape(shape),
        )
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes after last buffer")
    store.step = header["step"]
    return store
