"""Keyed data/address obfuscation used by the hardened pipeline model.

The core primitive is a 4-round Feistel network over 32-bit words. Each round
mixes the 16-bit right half with a 16-bit round key through a fixed affine map
over GF(2): ``Y = A @ (R || K) xor C`` where ``A`` is a 16x32 binary matrix and
``C`` a 16-bit constant. Keys are drawn from a 64-bit Fibonacci LFSR, 64 bits
(4 x 16) per key epoch. Addresses are obfuscated on their tag/set-index bits
only; cache line offset bits pass through unchanged so line-internal layout is
preserved.

Scalar entry points operate on plain ints; ``*_vec`` variants operate on numpy
arrays and accept per-element key material, which is what the batch simulator
uses.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

MASK16 = 0xFFFF
MASK32 = 0xFFFFFFFF

#: Fibonacci right-shift taps for x^64 + x^63 + x^61 + x^60 + 1
#: (feedback = parity of state bits {0, 1, 3, 4}).
DEFAULT_TAPS = 0x1B

AFFINE_VERSION = "v1"
_AFFINE_LABEL = b"leakscope-affine-" + AFFINE_VERSION.encode() + b":"


class ObfuscationError(ValueError):
    pass


def generate_affine_v1() -> tuple[tuple[int, ...], int]:
    """Regenerate the shipped default affine parameters.

    Rows come from a SHA-256 counter stream over a fixed label, 4 bytes
    big-endian per row with all-zero rows rejected, followed by 2 bytes for
    the constant. The result is frozen in ``data/affine_v1.json``; this
    function exists so the constant stays reproducible.
    """
    buf = b""
    counter = 0

    def refill(need):
        nonlocal buf, counter
        while len(buf) < need:
            buf += hashlib.sha256(_AFFINE_LABEL + counter.to_bytes(4, "big")).digest()
            counter += 1

    rows = []
    pos = 0
    while len(rows) < 16:
        refill(pos + 4)
        row = int.from_bytes(buf[pos:pos + 4], "big")
        pos += 4
        if row != 0:
            rows.append(row)
    refill(pos + 2)
    const = int.from_bytes(buf[pos:pos + 2], "big")
    return tuple(rows), const


@dataclass(frozen=True)
class AffineSpec:
    """Parameters of the per-round affine map.

    ``rows[i]`` is a 32-bit mask over the input vector ``(R << 16) | K``;
    output bit i is the parity of the masked input, xored with bit i of
    ``const``.
    """

    rows: tuple[int, ...]
    const: int
    version: str = AFFINE_VERSION
    _tables: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.rows) != 16:
            raise ObfuscationError(f"affine matrix needs 16 rows, got {len(self.rows)}")
        for i, row in enumerate(self.rows):
            if not 0 <= row <= MASK32:
                raise ObfuscationError(f"row {i} out of 32-bit range")
        if not 0 <= self.const <= MASK16:
            raise ObfuscationError("constant out of 16-bit range")
        object.__setattr__(self, "_tables", _build_byte_tables(self.rows))

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": self.version,
                "rows": [f"{r:08x}" for r in self.rows],
                "const": f"{self.const:04x}",
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "AffineSpec":
        try:
            obj = json.loads(text)
            rows = tuple(int(r, 16) for r in obj["rows"])
            const = int(obj["const"], 16)
            version = obj.get("version", "custom")
        except (KeyError, ValueError, TypeError) as exc:
            raise ObfuscationError(f"bad affine spec document: {exc}") from exc
        return cls(rows=rows, const=const, version=version)


def _build_byte_tables(rows):
    """Per-byte lookup tables for the linear part of the affine map.

    A @ v over GF(2) decomposes as the xor of four byte-indexed tables, which
    turns the map into 4 gathers + xors in both the scalar and numpy paths.
    """
    tables = []
    for byte_pos in range(4):
        tab = np.zeros(256, dtype=np.uint32)
        for byte_val in range(256):
            out = 0
            for i, row in enumerate(rows):
                seg = (row >> (8 * byte_pos)) & 0xFF
                if (seg & byte_val).bit_count() & 1:
                    out |= 1 << i
            tab[byte_val] = out
        tables.append(tab)
    return tuple(tables)


_DEFAULT_SPEC = None


def default_spec() -> AffineSpec:
    """The versioned default affine parameters shipped with the package."""
    global _DEFAULT_SPEC
    if _DEFAULT_SPEC is None:
        from importlib import resources

        text = resources.files("leakscope").joinpath("data/affine_v1.json").read_text()
        _DEFAULT_SPEC = AffineSpec.from_json(text)
    return _DEFAULT_SPEC


@dataclass(frozen=True)
class RoundKeys:
    """Four 16-bit Feistel round keys plus the epoch they belong to."""

    keys: tuple[int, int, int, int]
    epoch: int = 0

    def __post_init__(self):
        if len(self.keys) != 4:
            raise ObfuscationError("exactly 4 round keys required")
        for k in self.keys:
            if not 0 <= k <= MASK16:
                raise ObfuscationError("round key out of 16-bit range")


@dataclass(frozen=True)
class Lfsr:
    """64-bit Fibonacci LFSR; ``epoch`` counts key draws so far."""

    state: int
    taps: int = DEFAULT_TAPS
    epoch: int = 0

    def __post_init__(self):
        if self.state == 0:
            raise ObfuscationError("LFSR state must be non-zero")
        if not 0 < self.state < (1 << 64):
            raise ObfuscationError("LFSR state must fit in 64 bits")


@dataclass(frozen=True)
class AddressGeometry:
    """Split of a physical address into (tag || set index) and line offset."""

    address_width: int
    offset_bits: int

    def __post_init__(self):
        if self.offset_bits < 1:
            raise ObfuscationError("offset_bits must be >= 1")
        if self.tagset_bits != 32:
            raise ObfuscationError(
                f"address_width - offset_bits must be 32, got {self.tagset_bits}"
            )

    @property
    def tagset_bits(self) -> int:
        return self.address_width - self.offset_bits

    @property
    def offset_mask(self) -> int:
        return (1 << self.offset_bits) - 1


def affine_f(r: int, k: int, spec: AffineSpec) -> int:
    """Round function: 16-bit output of A @ ((r<<16)|k) xor C."""
    v = ((r & MASK16) << 16) | (k & MASK16)
    t0, t1, t2, t3 = spec._tables
    out = (
        int(t0[v & 0xFF])
        ^ int(t1[(v >> 8) & 0xFF])
        ^ int(t2[(v >> 16) & 0xFF])
        ^ int(t3[v >> 24])
    )
    return out ^ spec.const


def obfuscate32(x: int, keys: RoundKeys, spec: AffineSpec | None = None) -> int:
    """Forward 4-round Feistel; no swap after the last round."""
    spec = spec or default_spec()
    left = (x >> 16) & MASK16
    right = x & MASK16
    for k in keys.keys:
        left, right = right, left ^ affine_f(right, k, spec)
    return (left << 16) | right


def deobfuscate32(y: int, keys: RoundKeys, spec: AffineSpec | None = None) -> int:
    """Inverse of obfuscate32: same network, keys in reverse order.

    With the no-final-swap convention the inverse is the forward network
    conjugated by a half swap.
    """
    spec = spec or default_spec()
    left = y & MASK16
    right = (y >> 16) & MASK16
    for k in reversed(keys.keys):
        left, right = right, left ^ affine_f(right, k, spec)
    return (right << 16) | left


def obfuscate64(x: int, keys: RoundKeys, spec: AffineSpec | None = None) -> int:
    """64-bit payloads are obfuscated as two independent 32-bit halves."""
    spec = spec or default_spec()
    return (obfuscate32(x >> 32, keys, spec) << 32) | obfuscate32(x & MASK32, keys, spec)


def deobfuscate64(y: int, keys: RoundKeys, spec: AffineSpec | None = None) -> int:
    spec = spec or default_spec()
    return (deobfuscate32(y >> 32, keys, spec) << 32) | deobfuscate32(y & MASK32, keys, spec)


def obfuscate_address(a: int, geom: AddressGeometry, keys: RoundKeys,
                      spec: AffineSpec | None = None) -> int:
    """Encrypt tag and set-index bits of an address, keep offset bits."""
    if not 0 <= a < (1 << geom.address_width):
        raise ObfuscationError(
            f"address {a:#x} exceeds {geom.address_width}-bit geometry"
        )
    tagset = a >> geom.offset_bits
    return (obfuscate32(tagset, keys, spec) << geom.offset_bits) | (a & geom.offset_mask)


def deobfuscate_address(a_prime: int, geom: AddressGeometry, keys: RoundKeys,
                        spec: AffineSpec | None = None) -> int:
    if not 0 <= a_prime < (1 << geom.address_width):
        raise ObfuscationError(
            f"address {a_prime:#x} exceeds {geom.address_width}-bit geometry"
        )
    tagset = a_prime >> geom.offset_bits
    return (deobfuscate32(tagset, keys, spec) << geom.offset_bits) | (a_prime & geom.offset_mask)


def remap(d_prime: int, old: RoundKeys, new: RoundKeys,
          spec: AffineSpec | None = None) -> int:
    """Re-encrypt a stored word from the old key epoch to the new one."""
    return obfuscate32(deobfuscate32(d_prime, old, spec), new, spec)


def next_round_keys(lfsr: Lfsr) -> tuple[RoundKeys, Lfsr]:
    """Draw 64 bits and split them into four 16-bit round keys.

    Bits go into each key MSB-first in draw order; the returned LFSR has its
    epoch advanced.
    """
    state = lfsr.state
    keys = []
    for _ in range(4):
        k = 0
        for _ in range(16):
            k = (k << 1) | (state & 1)
            fb = (state & lfsr.taps).bit_count() & 1
            state = (state >> 1) | (fb << 63)
        keys.append(k)
    return (
        RoundKeys(keys=tuple(keys), epoch=lfsr.epoch),
        Lfsr(state=state, taps=lfsr.taps, epoch=lfsr.epoch + 1),
    )


def lfsr_from_seed(seed: int, taps: int = DEFAULT_TAPS) -> Lfsr:
    """Build a dense non-zero LFSR state from an arbitrary integer seed."""
    digest = hashlib.sha256(b"leakscope-lfsr:" + seed.to_bytes(16, "big", signed=True)).digest()
    state = int.from_bytes(digest[:8], "big")
    if state == 0:  # 2^-64 corner, but the constructor forbids it
        state = 1
    return Lfsr(state=state, taps=taps)


# ---------------------------------------------------------------------------
# vectorized variants (per-element keys supported)


def _affine_f_vec(r, k, spec):
    """Vectorized round function on uint32 arrays."""
    t0, t1, t2, t3 = spec._tables
    v = ((r & MASK16) << np.uint32(16)) | (k & MASK16)
    out = (
        t0[v & np.uint32(0xFF)]
        ^ t1[(v >> np.uint32(8)) & np.uint32(0xFF)]
        ^ t2[(v >> np.uint32(16)) & np.uint32(0xFF)]
        ^ t3[v >> np.uint32(24)]
    )
    return out ^ np.uint32(spec.const)


def _as_key_arrays(keys):
    """Normalize RoundKeys | 4-seq of ints | 4-seq of arrays to 4 arrays."""
    if isinstance(keys, RoundKeys):
        ks = keys.keys
    else:
        ks = keys
        if len(ks) != 4:
            raise ObfuscationError("exactly 4 round keys required")
    return [np.asarray(k, dtype=np.uint32) for k in ks]


def obfuscate32_vec(x, keys, spec: AffineSpec | None = None):
    """obfuscate32 on a uint32 numpy array; keys may be per-element arrays."""
    spec = spec or default_spec()
    x = np.asarray(x, dtype=np.uint32)
    ks = _as_key_arrays(keys)
    left = x >> np.uint32(16)
    right = x & np.uint32(MASK16)
    for k in ks:
        left, right = right, left ^ _affine_f_vec(right, k, spec)
    return (left << np.uint32(16)) | right


def deobfuscate32_vec(y, keys, spec: AffineSpec | None = None):
    spec = spec or default_spec()
    y = np.asarray(y, dtype=np.uint32)
    ks = _as_key_arrays(keys)
    left = y & np.uint32(MASK16)
    right = y >> np.uint32(16)
    for k in reversed(ks):
        left, right = right, left ^ _affine_f_vec(right, k, spec)
    return (right << np.uint32(16)) | left


def obfuscate64_vec(x, keys, spec: AffineSpec | None = None):
    x = np.asarray(x, dtype=np.uint64)
    hi = obfuscate32_vec((x >> np.uint64(32)).astype(np.uint32), keys, spec)
    lo = obfuscate32_vec(x.astype(np.uint32), keys, spec)
    return (hi.astype(np.uint64) << np.uint64(32)) | lo.astype(np.uint64)


def deobfuscate64_vec(y, keys, spec: AffineSpec | None = None):
    y = np.asarray(y, dtype=np.uint64)
    hi = deobfuscate32_vec((y >> np.uint64(32)).astype(np.uint32), keys, spec)
    lo = deobfuscate32_vec(y.astype(np.uint32), keys, spec)
    return (hi.astype(np.uint64) << np.uint64(32)) | lo.astype(np.uint64)
