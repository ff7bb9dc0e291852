"""Quenched Bernoulli trap environments on finite boxes of Z^d.

Sites of the box [-L, L]^d are enumerated row-major with coordinates running
from -L to L and the last coordinate fastest; site ``i`` in that order is bit
``i % 8`` (least significant first) of payload byte ``i // 8``.  Bit 1 marks a
trap, bit 0 a vacant site.

Environment file layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"BRWT"
    4       2     format version (u16, currently 1)
    6       4     dimension d (u32)
    10      4     box radius L (u32)
    14      8     vacancy probability p (IEEE-754 double)
    22      8     master seed (u64)
    30      n     occupancy payload, n = ceil((2L+1)^d / 8)
    30+n    8     checksum: BLAKE2b-64 of the payload, read as u64
"""

from __future__ import annotations

import hashlib
import math
import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, FormatError, OutOfBoxError
from .rng import MASK64

# Site-percolation thresholds from the literature; used only to warn.
CRITICAL_VACANCY = {2: 0.592746, 3: 0.3116}

MAGIC = b"BRWT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIdQ")
_CHECKSUM = struct.Struct("<Q")


@dataclass(frozen=True)
class LatticeConfig:
    dimension: int
    box_radius: int
    vacancy_prob: float
    master_seed: int = 0

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise ConfigError(f"dimension must be 2 or 3, got {self.dimension}")
        if int(self.box_radius) != self.box_radius or self.box_radius < 1:
            raise ConfigError(f"box_radius must be a positive integer, got {self.box_radius}")
        if not 0.0 < self.vacancy_prob < 1.0:
            raise ConfigError(f"vacancy_prob must lie in (0, 1), got {self.vacancy_prob}")
        if not 0 <= self.master_seed <= MASK64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")

    @property
    def subcritical(self) -> bool:
        """True when p does not exceed the configured percolation threshold."""
        return self.vacancy_prob <= CRITICAL_VACANCY[self.dimension]

    @property
    def side(self) -> int:
        return 2 * self.box_radius + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.dimension

    @property
    def n_sites(self) -> int:
        return self.side ** self.dimension


@dataclass(frozen=True, eq=False)
class TrapField:
    """An immutable trap configuration on [-L, L]^d, stored bit-packed."""

    config: LatticeConfig
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        nbytes = (self.config.n_sites + 7) // 8
        if self.bits.dtype != np.uint8 or self.bits.shape != (nbytes,):
            raise ValueError(f"payload must be {nbytes} bytes of uint8")
        self.bits.flags.writeable = False

    @classmethod
    def from_traps(cls, config: LatticeConfig, traps: np.ndarray) -> "TrapField":
        traps = np.asarray(traps, dtype=bool)
        if traps.shape != config.shape:
            raise ValueError(f"trap array shape {traps.shape} != box shape {config.shape}")
        return cls(config, np.packbits(traps.ravel(), bitorder="little"))

    @cached_property
    def traps(self) -> np.ndarray:
        """Boolean trap indicator indexed by ``site + L`` (read-only)."""
        flat = np.unpackbits(self.bits, count=self.config.n_sites, bitorder="little")
        arr = flat.astype(bool).reshape(self.config.shape)
        arr.flags.writeable = False
        return arr

    @cached_property
    def vacant(self) -> np.ndarray:
        arr = ~self.traps
        arr.flags.writeable = False
        return arr

    @property
    def dimension(self) -> int:
        return self.config.dimension

    @property
    def box_radius(self) -> int:
        return self.config.box_radius

    def in_box(self, site: Sequence[int]) -> bool:
        L = self.box_radius
        return len(site) == self.dimension and all(-L <= int(c) <= L for c in site)

    def array_index(self, site: Sequence[int]) -> tuple[int, ...]:
        if not self.in_box(site):
            raise OutOfBoxError(f"site {tuple(site)} outside box [-{self.box_radius}, {self.box_radius}]^{self.dimension}")
        return tuple(int(c) + self.box_radius for c in site)

    def flat_index(self, site: Sequence[int]) -> int:
        return int(np.ravel_multi_index(self.array_index(site), self.config.shape))

    def site_of(self, flat: int) -> tuple[int, ...]:
        return tuple(int(i) - self.box_radius for i in np.unravel_index(flat, self.config.shape))

    def trap_count(self) -> int:
        return int(np.count_nonzero(self.traps))

    def __eq__(self, other):
        if not isinstance(other, TrapField):
            return NotImplemented
        return self.config == other.config and np.array_equal(self.bits, other.bits)

    __hash__ = None


def generate_environment(config: LatticeConfig, warn: bool = True) -> TrapField:
    """Draw a Bernoulli trap field.

    The i-th double of a Philox stream keyed by ``master_seed`` decides site i
    (row-major): the site is a trap iff the draw is below ``1 - p``.
    """
    if warn and config.subcritical:
        warnings.warn(
            f"vacancy_prob={config.vacancy_prob} is at or below the site-percolation "
            f"threshold {CRITICAL_VACANCY[config.dimension]} for d={config.dimension}",
            stacklevel=2,
        )
    rng = np.random.Generator(np.random.Philox(key=config.master_seed))
    u = rng.random(config.n_sites)
    traps = u < (1.0 - config.vacancy_prob)
    return TrapField(config, np.packbits(traps, bitorder="little"))


def is_trap(field: TrapField, site: Sequence[int]) -> bool:
    return bool(field.traps[field.array_index(site)])


def _checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def environment_bytes(field: TrapField) -> bytes:
    cfg = field.config
    payload = field.bits.tobytes()
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, cfg.dimension, cfg.box_radius, cfg.vacancy_prob, cfg.master_seed)
    return head + payload + _CHECKSUM.pack(_checksum(payload))


def save_environment(field: TrapField, path: str | Path) -> None:
    Path(path).write_bytes(environment_bytes(field))


def parse_environment(data: bytes) -> TrapField:
    if len(data) < _HEADER.size:
        raise FormatError(f"truncated header: {len(data)} of {_HEADER.size} bytes", len(data))
    magic, version, d, L, p, seed = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    try:
        config = LatticeConfig(d, L, p, seed)
    except ConfigError as exc:
        raise FormatError(f"invalid header: {exc}", 6) from None
    nbytes = (config.n_sites + 7) // 8
    start = _HEADER.size
    end = start + nbytes
    if len(data) < end:
        raise FormatError(f"truncated payload: expected {nbytes} bytes, found {len(data) - start}", len(data))
    if len(data) < end + _CHECKSUM.size:
        raise FormatError("truncated checksum", len(data))
    if len(data) > end + _CHECKSUM.size:
        raise FormatError("trailing bytes after checksum", end + _CHECKSUM.size)
    payload = data[start:end]
    (stored,) = _CHECKSUM.unpack_from(data, end)
    if stored != _checksum(payload):
        raise FormatError("payload checksum mismatch", end)
    pad = nbytes * 8 - config.n_sites
    if pad and payload[-1] >> (8 - pad):
        raise FormatError("nonzero padding bits in final payload byte", end - 1)
    bits = np.frombuffer(payload, dtype=np.uint8).copy()
    return TrapField(config, bits)


def load_environment(path: str | Path) -> TrapField:
    return parse_environment(Path(path).read_bytes())


def uniform_field(dimension: int, box_radius: int, trap: bool, vacancy_prob: float = 0.5) -> TrapField:
    """All-vacant (``trap=False``) or all-trap field; handy for degenerate checks."""
    config = LatticeConfig(dimension, box_radius, vacancy_prob)
    return TrapField.from_traps(config, np.full(config.shape, trap, dtype=bool))


def sup_norm(site: Sequence[int]) -> int:
    return max(abs(int(c)) for c in site) if len(site) else 0


def required_radius(start: Sequence[int], n: int) -> int:
    """Smallest box radius on which an n-step walk from ``start`` stays inside."""
    return sup_norm(start) + n


def neighbor_offsets(dimension: int) -> np.ndarray:
    """The 2d unit vectors, ordered +e1, -e1, +e2, -e2, ..."""
    offs = np.zeros((2 * dimension, dimension), dtype=np.int64)
    for i in range(dimension):
        offs[2 * i, i] = 1
        offs[2 * i + 1, i] = -1
    return offs


def flat_offsets(shape: Sequence[int]) -> np.ndarray:
    """Flat-index displacement of each neighbour offset for a C-ordered array."""
    d = len(shape)
    strides = [int(math.prod(shape[i + 1:])) for i in range(d)]
    return neighbor_offsets(d) @ np.array(strides, dtype=np.int64)
