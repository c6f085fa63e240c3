"""Slice patterns, mask generation, shrink/expand packing and zero accounting.

A pattern partitions the 2-D view of a variable into disjoint *slices*:

* ``WHOLE_ROW``: slice ``i`` is row ``i``.
* ``WHOLE_COLUMN``: slice ``j`` is column ``j``.
* ``HALF_COLUMN``: rows are split at ``rows // 2`` into a top and a bottom
  block; slice ``j`` is the top half of column ``j`` and slice ``cols + j``
  its bottom half.
* ``HALF_ROW``: columns are split at ``cols // 2``; slice ``i`` is the left
  half of row ``i`` and slice ``rows + i`` its right half.

Elements of a slice are listed in row-major order of the 2-D view. Packed
buffers concatenate kept slices in ascending slice order.
"""
from __future__ import annotations

import enum
import functools
import struct
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .schedule import quantize_slice_count
from .var_store import Role, VarSpec, VarStore, canonical_2d_view


class Pattern(enum.Enum):
    WHOLE_ROW = "whole_row"
    WHOLE_COLUMN = "whole_column"
    HALF_ROW = "half_row"
    HALF_COLUMN = "half_column"

    @property
    def is_half(self) -> bool:
        return self in (Pattern.HALF_ROW, Pattern.HALF_COLUMN)


@dataclass(frozen=True)
class SliceInfo:
    index: int
    half: int | None
    elements: np.ndarray  # flat positions in the 2-D view


@functools.lru_cache(maxsize=512)
def _slice_table(rows: int, cols: int, pattern: Pattern) -> tuple[np.ndarray, ...]:
    grid = np.arange(rows * cols).reshape(rows, cols)
    if pattern is Pattern.WHOLE_ROW:
        parts = [grid[i, :] for i in range(rows)]
    elif pattern is Pattern.WHOLE_COLUMN:
        parts = [grid[:, j] for j in range(cols)]
    elif pattern is Pattern.HALF_COLUMN:
        split = rows // 2
        parts = [grid[:split, j] for j in range(cols)] + [grid[split:, j] for j in range(cols)]
    else:
        split = cols // 2
        parts = [grid[i, :split] for i in range(rows)] + [grid[i, split:] for i in range(rows)]
    out = []
    for p in parts:
        p = np.ascontiguousarray(p.ravel())
        p.setflags(write=False)
        out.append(p)
    return tuple(out)


def slice_groups(n_slices: int, pattern: Pattern) -> list[np.ndarray]:
    """Index groups that are quantized independently (one per half)."""
    if pattern.is_half:
        half = n_slices // 2
        return [np.arange(half), np.arange(half, n_slices)]
    return [np.arange(n_slices)]


def enumerate_slices(spec: VarSpec, pattern: Pattern) -> list[SliceInfo]:
    if not spec.prunable:
        raise ValueError(f"{spec.name} is excluded from pruning")
    rows, cols = canonical_2d_view(spec)
    table = _slice_table(rows, cols, pattern)
    if pattern.is_half:
        per = len(table) // 2
        return [SliceInfo(i, i // per, e) for i, e in enumerate(table)]
    return [SliceInfo(i, None, e) for i, e in enumerate(table)]


def slice_elements(spec: VarSpec, pattern: Pattern) -> tuple[np.ndarray, ...]:
    return _slice_table(*canonical_2d_view(spec), pattern)


def slice_count(spec: VarSpec, pattern: Pattern) -> int:
    rows, cols = canonical_2d_view(spec)
    return {
        Pattern.WHOLE_ROW: rows,
        Pattern.WHOLE_COLUMN: cols,
        Pattern.HALF_ROW: 2 * rows,
        Pattern.HALF_COLUMN: 2 * cols,
    }[pattern]


@dataclass(frozen=True)
class SliceMask:
    var_name: str
    pattern: Pattern
    keep: np.ndarray  # bool per slice, True = kept
    rows: int
    cols: int

    @property
    def n_slices(self) -> int:
        return len(self.keep)

    @property
    def slice_lengths(self) -> np.ndarray:
        return np.array([len(e) for e in _slice_table(self.rows, self.cols, self.pattern)])

    @property
    def kept_indices(self) -> np.ndarray:
        return np.flatnonzero(self.keep)

    @property
    def pruned_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.keep)

    def element_mask(self) -> np.ndarray:
        """Boolean (rows, cols) array, True where the element is kept."""
        flat = np.zeros(self.rows * self.cols, dtype=bool)
        table = _slice_table(self.rows, self.cols, self.pattern)
        for i in self.kept_indices:
            flat[table[i]] = True
        return flat.reshape(self.rows, self.cols)

    def __eq__(self, other):
        if not isinstance(other, SliceMask):
            return NotImplemented
        return (
            self.var_name == other.var_name
            and self.pattern is other.pattern
            and (self.rows, self.cols) == (other.rows, other.cols)
            and np.array_equal(self.keep, other.keep)
        )

    __hash__ = None


MaskSet = dict[str, SliceMask]


def full_masks(store: VarStore, pattern: Pattern) -> MaskSet:
    """All-keep masks: the initial ``M`` of ones."""
    out = {}
    for spec in store.prunable():
        rows, cols = canonical_2d_view(spec)
        out[spec.name] = SliceMask(spec.name, pattern, np.ones(slice_count(spec, pattern), bool), rows, cols)
    return out


def generate_mask(
    scores: Mapping[str, np.ndarray],
    sparsity: float | Mapping[str, float],
    pattern: Pattern,
    store: VarStore,
) -> MaskSet:
    """Prune the lowest-scoring slices of every prunable variable.

    ``sparsity`` is either one fraction for all variables or a per-variable
    map. Within each quantization group (the whole variable, or each half
    for half patterns) ``floor(s * n)`` slices are pruned; equal scores are
    pruned in ascending slice order. Masks are rebuilt from scratch, so a
    previously pruned slice comes back when its rank recovers.
    """
    out = {}
    for spec in store.prunable():
        if spec.name not in scores:
            raise KeyError(f"score table has no entry for {spec.name!r}")
        s = sparsity[spec.name] if isinstance(sparsity, Mapping) else sparsity
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"{spec.name}: sparsity {s} outside [0, 1]")
        sc = np.asarray(scores[spec.name], dtype=np.float64)
        n = slice_count(spec, pattern)
        if sc.shape != (n,):
            raise ValueError(f"{spec.name}: expected {n} scores, got {sc.shape}")
        keep = np.ones(n, dtype=bool)
        for group in slice_groups(n, pattern):
            k = quantize_slice_count(s, len(group))
            if k:
                order = np.argsort(sc[group], kind="stable")
                keep[group[order[:k]]] = False
        rows, cols = canonical_2d_view(spec)
        out[spec.name] = SliceMask(spec.name, pattern, keep, rows, cols)
    return out


# -- packing ------------------------------------------------------------------


@dataclass(frozen=True)
class VarLayout:
    """How one variable is laid out in a packed buffer.

    ``indices`` are the kept slice ids, ``row_keep`` the surviving rows when
    a whole-column variable also lost dead rows to an upstream partner, and
    ``flat_index`` the positions (in the flattened full variable) of each
    packed element, in packed order. Excluded variables have
    ``pattern is None`` and are carried whole.
    """

    name: str
    shape: tuple[int, ...]
    pattern: Pattern | None
    indices: np.ndarray | None
    row_keep: np.ndarray | None
    flat_index: np.ndarray | None

    @property
    def size(self) -> int:
        if self.flat_index is None:
            return int(np.prod(self.shape))
        return len(self.flat_index)

    @property
    def reduced_shape(self) -> tuple[int, ...] | None:
        """Logical ``(rows, cols)`` of the reduced matrix, where one exists.

        Whole-column buffers store that matrix column by column.
        """
        if self.pattern is None:
            return self.shape
        rows = int(np.prod(self.shape[:-1]))
        cols = self.shape[-1]
        if self.pattern is Pattern.WHOLE_COLUMN:
            n_rows = rows if self.row_keep is None else len(self.row_keep)
            return (n_rows, len(self.indices))
        if self.pattern is Pattern.WHOLE_ROW:
            return (len(self.indices), cols)
        return None

    def same_as(self, other: VarLayout) -> bool:
        return (
            self.name == other.name
            and self.shape == other.shape
            and self.pattern is other.pattern
            and _opt_equal(self.indices, other.indices)
            and _opt_equal(self.row_keep, other.row_keep)
        )


def _opt_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


def build_layout(store: VarStore, masks: MaskSet, dead_rows: Mapping[str, np.ndarray] | None = None) -> dict[str, VarLayout]:
    """Packing layout for every variable of ``store`` under ``masks``.

    ``dead_rows`` optionally removes rows from whole-column variables (the
    induced rows of a feed-forward pair) so their packed buffers become
    physically smaller matrices.
    """
    dead_rows = dead_rows or {}
    layout = {}
    for spec in store.specs():
        if not spec.prunable:
            layout[spec.name] = VarLayout(spec.name, spec.shape, None, None, None, None)
            continue
        if spec.name not in masks:
            raise KeyError(f"no mask for prunable variable {spec.name!r}")
        m = masks[spec.name]
        rows, cols = canonical_2d_view(spec)
        if (m.rows, m.cols) != (rows, cols) or m.n_slices != slice_count(spec, m.pattern):
            raise ValueError(f"{spec.name}: mask shape does not match variable")
        table = _slice_table(rows, cols, m.pattern)
        kept = m.kept_indices
        row_keep = None
        if spec.name in dead_rows and len(dead_rows[spec.name]):
            if m.pattern is not Pattern.WHOLE_COLUMN:
                raise ValueError("row removal is only defined for whole-column layouts")
            alive = np.ones(rows, dtype=bool)
            alive[np.asarray(dead_rows[spec.name], dtype=np.int64)] = False
            row_keep = np.flatnonzero(alive)
            parts = [table[j][row_keep] for j in kept]
        else:
            parts = [table[j] for j in kept]
        flat = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        layout[spec.name] = VarLayout(spec.name, spec.shape, m.pattern, kept, row_keep, flat)
    return layout


@dataclass
class PackedModel:
    """Reduced model (or reduced delta): per-variable packed buffers."""

    layout: dict[str, VarLayout]
    values: dict[str, np.ndarray]

    @property
    def param_count(self) -> int:
        return sum(v.size for v in self.layout.values())

    def same_layout(self, other: PackedModel) -> bool:
        return list(self.layout) == list(other.layout) and all(
            self.layout[k].same_as(other.layout[k]) for k in self.layout
        )

    def copy(self) -> PackedModel:
        return PackedModel(self.layout, {k: v.copy() for k, v in self.values.items()})

    def with_values(self, values: dict[str, np.ndarray]) -> PackedModel:
        return PackedModel(self.layout, values)

    def __sub__(self, other: PackedModel) -> PackedModel:
        if not self.same_layout(other):
            raise ValueError("packed layouts differ")
        return PackedModel(self.layout, {k: self.values[k] - other.values[k] for k in self.values})


def shrink_values(values: Mapping[str, np.ndarray], layout: Mapping[str, VarLayout]) -> dict[str, np.ndarray]:
    out = {}
    for name, lay in layout.items():
        v = np.asarray(values[name], dtype=np.float64)
        if v.shape != lay.shape:
            raise ValueError(f"{name}: value shape {v.shape} does not match layout {lay.shape}")
        out[name] = v.copy() if lay.flat_index is None else v.reshape(-1)[lay.flat_index]
    return out


def shrink(store: VarStore, masks: MaskSet, dead_rows=None) -> PackedModel:
    """Pack the kept slices of every prunable variable, excluded ones whole."""
    layout = build_layout(store, masks, dead_rows)
    return PackedModel(layout, shrink_values(store.values(), layout))


def expand(packed: PackedModel, masks: MaskSet | None = None) -> dict[str, np.ndarray]:
    """Place packed buffers at their original positions; everything else is 0.

    When ``masks`` is given, the packed index sets must agree with it.
    """
    out = {}
    for name, lay in packed.layout.items():
        v = packed.values[name]
        if lay.flat_index is None:
            out[name] = np.array(v, dtype=np.float64).reshape(lay.shape)
            continue
        if masks is not None:
            if name not in masks or not np.array_equal(masks[name].kept_indices, lay.indices):
                raise ValueError(f"{name}: packed indices disagree with mask")
        if len(v) != len(lay.flat_index):
            raise ValueError(f"{name}: packed buffer has {len(v)} values, layout expects {len(lay.flat_index)}")
        full = np.zeros(int(np.prod(lay.shape)))
        full[lay.flat_index] = v
        out[name] = full.reshape(lay.shape)
    return out


# -- induced zeros and zero-parameter ratio --------------------------------------


@dataclass(frozen=True)
class InducedZeroReport:
    zeros: dict[str, int]  # zeroed elements per prunable variable
    induced_rows: dict[str, np.ndarray]  # dead rows per downstream variable
    prunable_params: int

    @property
    def total_zeros(self) -> int:
        return sum(self.zeros.values())

    @property
    def ratio(self) -> float:
        return self.total_zeros / self.prunable_params if self.prunable_params else 0.0


def induced_rows(masks: MaskSet, store: VarStore) -> dict[str, np.ndarray]:
    """Rows of downstream partners made dead by pruned upstream columns."""
    dead: dict[str, set[int]] = {}
    for pair in store.pairs():
        up = masks.get(pair.upstream)
        if up is None or up.pattern is not Pattern.WHOLE_COLUMN:
            continue
        dead.setdefault(pair.downstream, set()).update(up.pruned_indices.tolist())
    return {k: np.array(sorted(v), dtype=np.int64) for k, v in dead.items() if v}


def propagate_induced_zeros(masks: MaskSet, store: VarStore) -> InducedZeroReport:
    """Count zeros per variable once dead downstream rows are zeroed too.

    A row of the partner that also lies in one of its own pruned columns is
    counted once.
    """
    dead = induced_rows(masks, store)
    zeros = {}
    for spec in store.prunable():
        m = masks[spec.name]
        zero = ~m.element_mask()
        if spec.name in dead:
            zero[dead[spec.name], :] = True
        zeros[spec.name] = int(zero.sum())
    return InducedZeroReport(zeros, dead, store.prunable_param_count)


def zero_param_ratio(store: VarStore, masks: MaskSet, with_propagation: bool = True) -> float:
    """Fraction of prunable parameters that are structurally zero."""
    if with_propagation:
        return propagate_induced_zeros(masks, store).ratio
    total = store.prunable_param_count
    if not total:
        return 0.0
    zeros = 0
    for spec in store.prunable():
        m = masks[spec.name]
        zeros += int(m.slice_lengths[~m.keep].sum())
    return zeros / total


# -- wire format ---------------------------------------------------------------

PACKED_MAGIC = b"FPPK"
PACKED_VERSION = 2
_NO_ROWS = 0xFFFFFFFF


def _complement(ids, n) -> np.ndarray:
    keep = np.zeros(n, dtype=bool)
    keep[np.asarray(ids, dtype=np.int64)] = True
    return np.flatnonzero(~keep)


def _dropped(lay: VarLayout):
    """Pruned slice ids and removed row ids; the header stores these, not the kept ones."""
    spec = VarSpec(lay.name, lay.shape, Role.PRUNABLE)
    slices = _complement(lay.indices, slice_count(spec, lay.pattern))
    rows = None if lay.row_keep is None else _complement(lay.row_keep, canonical_2d_view(spec)[0])
    return slices, rows
_KIND_CODE = {None: 0, Pattern.WHOLE_ROW: 1, Pattern.WHOLE_COLUMN: 2, Pattern.HALF_ROW: 3, Pattern.HALF_COLUMN: 4}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def _var_header_size(lay: VarLayout) -> int:
    n = 2 + len(lay.name.encode("utf-8")) + 1 + 1 + 4 * len(lay.shape)
    if lay.pattern is not None:
        slices, rows = _dropped(lay)
        n += 4 + 4 * len(slices) + 4
        if rows is not None:
            n += 4 * len(rows)
    return n


def payload_nbytes(packed: PackedModel) -> int:
    """Size of ``encode_packed(packed)`` computed from counts alone."""
    header = 4 + 2 + 4 + sum(_var_header_size(lay) for lay in packed.layout.values())
    return header + 4 * packed.param_count


def encode_packed(packed: PackedModel) -> bytes:
    """Serialise a packed model.

    Header: magic ``FPPK``, uint16 version, uint32 variable count, then per
    variable: uint16 name length, name, uint8 kind (0 = excluded/dense,
    1-4 = pattern), uint8 rank, uint32 dims; for pruned variables a uint32
    count with the pruned slice ids, and a uint32 count (``0xFFFFFFFF`` = no
    rows removed) with the removed row ids. Listing what is dropped keeps
    the header short at moderate sparsity. After the header, the
    packed float32 buffers follow in variable order. All little-endian.
    """
    parts = [PACKED_MAGIC, struct.pack("<HI", PACKED_VERSION, len(packed.layout))]
    for lay in packed.layout.values():
        name = lay.name.encode("utf-8")
        parts.append(struct.pack("<H", len(name)) + name)
        parts.append(struct.pack("<BB", _KIND_CODE[lay.pattern], len(lay.shape)))
        parts.append(np.asarray(lay.shape, dtype="<u4").tobytes())
        if lay.pattern is not None:
            slices, rows = _dropped(lay)
            parts.append(struct.pack("<I", len(slices)) + slices.astype("<u4").tobytes())
            if rows is None:
                parts.append(struct.pack("<I", _NO_ROWS))
            else:
                parts.append(struct.pack("<I", len(rows)) + rows.astype("<u4").tobytes())
    for name in packed.layout:
        parts.append(np.ascontiguousarray(packed.values[name], dtype="<f4").tobytes())
    return b"".join(parts)


def decode_packed(data: bytes) -> PackedModel:
    if data[:4] != PACKED_MAGIC:
        raise ValueError("not a packed model")
    version, n_vars = struct.unpack_from("<HI", data, 4)
    if version != PACKED_VERSION:
        raise ValueError(f"unsupported packed version {version}")
    off = 10
    layout = {}
    for _ in range(n_vars):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        code, rank = struct.unpack_from("<BB", data, off)
        off += 2
        shape = tuple(int(x) for x in np.frombuffer(data, "<u4", rank, off))
        off += 4 * rank
        pattern = _CODE_KIND[code]
        if pattern is None:
            layout[name] = VarLayout(name, shape, None, None, None, None)
            continue
        spec = VarSpec(name, shape, Role.PRUNABLE)
        (nk,) = struct.unpack_from("<I", data, off)
        off += 4
        indices = _complement(np.frombuffer(data, "<u4", nk, off), slice_count(spec, pattern))
        off += 4 * nk
        (nr,) = struct.unpack_from("<I", data, off)
        off += 4
        row_keep = None
        if nr != _NO_ROWS:
            row_keep = _complement(np.frombuffer(data, "<u4", nr, off), canonical_2d_view(spec)[0])
            off += 4 * nr
        table = slice_elements(spec, pattern)
        parts = [table[j] if row_keep is None else table[j][row_keep] for j in indices]
        flat = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        layout[name] = VarLayout(name, shape, pattern, indices, row_keep, flat)
    values = {}
    for name, lay in layout.items():
        values[name] = np.frombuffer(data, "<f4", lay.size, off).astype(np.float64)
        off += 4 * lay.size
    if off != len(data):
        raise ValueError("trailing bytes in packed model")
    return PackedModel(layout, values)
