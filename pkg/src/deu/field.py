"""Shaped float64 arrays with axis semantics, counter-based RNG, and FLD1 file I/O.

Everything downstream (solvers, samplers, ensemble statistics) moves data
around as `Field`s or plain float64 ndarrays. A `Field` tags each axis with
one of the four roles ``batch | time | space | channel`` so that reductions
can be requested by meaning instead of position.

Randomness comes from `RngStream`, a counter-based generator: output element
``i`` is a pure function of ``(seed, counter + i)``, so identical
``(seed, counter)`` reproduce identical sequences and disjoint counter
ranges never overlap. Independent parallel streams are derived with
`RngStream.child`, never by sharing a stream.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

AXIS_TAGS = ("batch", "time", "space", "channel")

_MAGIC = b"FLD1"
_TAG_TO_BYTE = {"batch": ord("b"), "time": ord("t"), "space": ord("s"), "channel": ord("c")}
_BYTE_TO_TAG = {v: k for k, v in _TAG_TO_BYTE.items()}


class FieldError(ValueError):
    """Raised for malformed fields or FLD1 payloads."""


@dataclass(frozen=True)
class Field:
    """An n-dimensional float64 array with one semantic tag per axis.

    Fields are immutable after construction (the underlying buffer is marked
    read-only) and therefore safe to share across concurrent tasks.
    """

    data: np.ndarray
    axes: tuple[str, ...]

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        axes = tuple(self.axes)
        if arr.ndim != len(axes):
            raise FieldError(f"{arr.ndim} array dims but {len(axes)} axis tags")
        for tag in axes:
            if tag not in AXIS_TAGS:
                raise FieldError(f"unknown axis tag {tag!r}")
        if any(n < 1 for n in arr.shape):
            raise FieldError(f"zero-extent axis in shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise FieldError("field contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "axes", axes)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    def __array__(self, dtype=None):
        return np.asarray(self.data, dtype=dtype)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.ndim == 0 else self.data.item()

    def equals(self, other: "Field") -> bool:
        """Bit-exact equality of shape, tags, and values."""
        return (
            self.axes == other.axes
            and self.dims == other.dims
            and np.array_equal(self.data, other.data)
        )


def as_array(f) -> np.ndarray:
    """Coerce a Field or array-like to a float64 ndarray."""
    if isinstance(f, Field):
        return f.data
    return np.asarray(f, dtype=np.float64)


def field_new(dims, fill: float = 0.0, axes=None) -> Field:
    """Create a constant field. `axes` defaults to all-space tags."""
    dims = tuple(int(d) for d in dims)
    if len(dims) == 0:
        raise FieldError("dims must be nonempty")
    if any(d < 1 for d in dims):
        raise FieldError(f"all dims must be >= 1, got {dims}")
    if axes is None:
        axes = ("space",) * len(dims)
    return Field(np.full(dims, float(fill), dtype=np.float64), tuple(axes))


def reduce_mean(f: Field, axes) -> Field:
    """Mean over every axis carrying one of the named tags.

    Remaining axes keep their order. Reducing all axes yields a 0-d Field.
    """
    wanted = {axes} if isinstance(axes, str) else set(axes)
    for tag in wanted:
        if tag not in f.axes:
            raise FieldError(f"axis {tag!r} not present in field axes {f.axes}")
    positions = tuple(i for i, tag in enumerate(f.axes) if tag in wanted)
    kept = tuple(tag for tag in f.axes if tag not in wanted)
    return Field(np.mean(f.data, axis=positions), kept)


# ---------------------------------------------------------------------------
# Counter-based RNG
# ---------------------------------------------------------------------------
#
# Core primitive: the SplitMix64 finalizer, a bijective avalanche mix on
# uint64. One output word is
#
#     word(seed, c, lane) = mix(mix(c + PHI) ^ mix(seed + PHI * (lane + 1)))
#
# where c is the per-element counter value and `lane` separates the
# independent word channels needed per element (two for Box-Muller).
# All arithmetic is mod 2^64; results are identical across runs for a
# given (seed, counter). Normal deviates use the Box-Muller cosine branch,
# one deviate per counter tick.

_PHI = np.uint64(0x9E3779B97F4A7C15)
_U64 = np.uint64


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
        return z ^ (z >> _U64(31))


def derive_seed(seed: int, index: int) -> int:
    """Derived child seed: a hash of (seed, index), distinct per index."""
    with np.errstate(over="ignore"):
        s = _U64(seed & 0xFFFFFFFFFFFFFFFF)
        j = _U64(index & 0xFFFFFFFFFFFFFFFF)
        return int(_mix64(_mix64(j + _PHI) ^ _mix64(s + _PHI * _PHI)))


class RngStream:
    """Counter-based random stream; state is exactly (seed, counter)."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter) & 0xFFFFFFFFFFFFFFFF

    def __repr__(self):
        return f"RngStream(seed={self.seed}, counter={self.counter})"

    def child(self, index: int) -> "RngStream":
        """Independent stream for parallel work; never share `self` instead."""
        return RngStream(derive_seed(self.seed, index), 0)

    def _words(self, n: int, lane: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            ctr = np.arange(self.counter, self.counter + n, dtype=np.uint64)
            s = _mix64(_U64(self.seed) + _PHI * _U64(lane + 1))
            return _mix64(_mix64(ctr + _PHI) ^ s)

    def _advance(self, n: int) -> None:
        self.counter = (self.counter + n) & 0xFFFFFFFFFFFFFFFF

    @staticmethod
    def _to_unit(words: np.ndarray) -> np.ndarray:
        # 53-bit mantissa, shifted into (0, 1]: never exactly zero.
        return ((words >> _U64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)

    def normal(self, shape=()) -> np.ndarray:
        """I.i.d. standard normal draws; advances counter by element count."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u1 = self._to_unit(self._words(n, 0))
        u2 = self._to_unit(self._words(n, 1))
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
        self._advance(n)
        return z.reshape(shape) if shape else float(z[0])

    def uniform(self, shape=()) -> np.ndarray:
        """I.i.d. uniform draws in (0, 1]; advances counter by element count."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = self._to_unit(self._words(n, 0))
        self._advance(n)
        return u.reshape(shape) if shape else float(u[0])

    def integers(self, low: int, high: int, n: int = 1) -> np.ndarray:
        """Uniform integers in [low, high); advances counter by n."""
        if high <= low:
            raise ValueError("high must exceed low")
        w = self._words(n, 2)
        self._advance(n)
        return (low + (w % _U64(high - low)).astype(np.int64)).astype(np.int64)


def standard_normal(rng: RngStream, dims, axes=None) -> Field:
    """Field of i.i.d. N(0,1) draws from `rng`."""
    dims = tuple(int(d) for d in dims)
    if axes is None:
        axes = ("space",) * len(dims)
    return Field(rng.normal(dims), tuple(axes))


# ---------------------------------------------------------------------------
# FLD1 binary format
# ---------------------------------------------------------------------------
# Layout, little-endian throughout:
#   bytes 0..3   magic "FLD1"
#   u32          axis count
#   per axis     u8 tag ('b','t','s','c'), u32 extent
#   payload      float64 values, row-major

def field_write(f: Field, path) -> None:
    header = [_MAGIC, struct.pack("<I", len(f.axes))]
    for tag, extent in zip(f.axes, f.dims):
        header.append(struct.pack("<BI", _TAG_TO_BYTE[tag], extent))
    payload = np.ascontiguousarray(f.data, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(b"".join(header))
        fh.write(payload)


def field_read(path) -> Field:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise FieldError(f"bad magic in {path}: {raw[:4]!r}")
    if len(raw) < 8:
        raise FieldError(f"truncated header in {path}")
    (n_axes,) = struct.unpack_from("<I", raw, 4)
    offset = 8
    axes, dims = [], []
    for _ in range(n_axes):
        if offset + 5 > len(raw):
            raise FieldError(f"truncated axis table in {path}")
        tag_byte, extent = struct.unpack_from("<BI", raw, offset)
        offset += 5
        if tag_byte not in _BYTE_TO_TAG:
            raise FieldError(f"unknown axis tag byte {tag_byte:#x} in {path}")
        axes.append(_BYTE_TO_TAG[tag_byte])
        dims.append(extent)
    expected = 8 * int(np.prod(dims)) if dims else 0
    if len(raw) - offset != expected:
        raise FieldError(
            f"length mismatch in {path}: dims {tuple(dims)} imply {expected} payload "
            f"bytes, found {len(raw) - offset}"
        )
    data = np.frombuffer(raw, dtype="<f8", offset=offset).reshape(dims)
    return Field(data.astype(np.float64), tuple(axes))
