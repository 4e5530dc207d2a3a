"""Bit-exact serialization of uplink payloads.

Budget accounting is literal: the body of a payload carrying an (m, V)
index matrix at b bits per index is exactly ``m * V * b`` bits, zero
padded to the next byte boundary only at the very end.  Indices are laid
out probe-major, MSB first within each index, so payloads are
byte-comparable across implementations.

The header travels in front at a fixed length (``HEADER_LEN`` bytes);
multi-byte fields are little endian.  It carries the dither seed, which
is aggregator-chosen public randomness, so subtractive dithering costs
zero uplink bits beyond the fixed header.

The same framing doubles as the on-disk capture format: a capture file is
a concatenation of payloads, each preceded by a 32-bit little-endian
length prefix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .quant import ProtocolError

__all__ = [
    "HEADER_LEN",
    "EncodingError",
    "ProtocolError",
    "PayloadHeader",
    "pack",
    "unpack",
    "body_bits",
    "write_capture",
    "read_capture",
]

# node_id u16 | round u16 | probe_count u32 | vocab u32 | bits_per_coord u8
# | clip f64 | dither_seed u64, all little endian, no alignment padding.
_HEADER_FORMAT = "<HHIIBdQ"
HEADER_LEN = struct.calcsize(_HEADER_FORMAT)

_MAX_BITS = 64  # indices are packed through uint64 lanes


class EncodingError(ValueError):
    """A payload cannot be encoded (index overflow, bad shape)."""


@dataclass(frozen=True)
class PayloadHeader:
    node_id: int
    round_index: int
    probe_count: int
    vocab: int
    bits_per_coord: int
    clip: float
    dither_seed: int


def body_bits(header: PayloadHeader) -> int:
    """Exact number of index bits in the body: m * V * bits_per_coord."""
    return header.probe_count * header.vocab * header.bits_per_coord


def pack(header: PayloadHeader, indices) -> bytes:
    """Serialize header + (m, V) index matrix; deterministic byte layout."""
    idx = np.asarray(indices)
    if idx.shape != (header.probe_count, header.vocab):
        raise EncodingError(
            f"index matrix shape {idx.shape} does not match header "
            f"({header.probe_count}, {header.vocab})"
        )
    b = header.bits_per_coord
    if b > _MAX_BITS:
        raise EncodingError(f"bits_per_coord > {_MAX_BITS} is unsupported")
    if np.any(idx < 0):
        raise EncodingError("negative index")
    idx = idx.astype(np.uint64)
    if b < _MAX_BITS and np.any(idx >> np.uint64(b)):
        raise EncodingError(f"index does not fit in {b} bits")
    try:
        head = struct.pack(
            _HEADER_FORMAT,
            header.node_id,
            header.round_index,
            header.probe_count,
            header.vocab,
            b,
            header.clip,
            header.dither_seed,
        )
    except struct.error as exc:
        raise EncodingError(f"header field out of range: {exc}") from None
    if b == 0 or idx.size == 0:
        return head
    # Per index: view as 8 big-endian bytes, unpack to 64 bits MSB-first,
    # keep the low b bits, then repack the concatenated stream.  packbits
    # zero-pads the final byte, which is exactly the padding rule.
    lanes = idx.ravel().astype(">u8").view(np.uint8).reshape(-1, 8)
    bits = np.unpackbits(lanes, axis=1)[:, 64 - b:]
    return head + np.packbits(bits.ravel()).tobytes()


def unpack(payload: bytes) -> tuple[PayloadHeader, np.ndarray]:
    """Inverse of :func:`pack`; rejects any framing inconsistency."""
    if len(payload) < HEADER_LEN:
        raise ProtocolError(f"truncated payload: {len(payload)} < {HEADER_LEN} header bytes")
    fields = struct.unpack_from(_HEADER_FORMAT, payload)
    header = PayloadHeader(*fields)
    b = header.bits_per_coord
    if b > _MAX_BITS:
        raise ProtocolError(f"bits_per_coord > {_MAX_BITS} is unsupported")
    nbits = body_bits(header)
    expected = HEADER_LEN + (nbits + 7) // 8
    if len(payload) != expected:
        raise ProtocolError(
            f"payload length {len(payload)} inconsistent with header "
            f"(expected {expected})"
        )
    shape = (header.probe_count, header.vocab)
    if nbits == 0:
        return header, np.zeros(shape, dtype=np.uint64)
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8, offset=HEADER_LEN))
    if bits[nbits:].any():
        raise ProtocolError("nonzero padding bits")
    weights = np.left_shift(np.uint64(1), np.arange(b - 1, -1, -1, dtype=np.uint64))
    values = (bits[:nbits].reshape(-1, b).astype(np.uint64) * weights).sum(
        axis=1, dtype=np.uint64
    )
    return header, values.reshape(shape)


def write_capture(path, payloads) -> None:
    """Write payloads as consecutive length-prefixed records."""
    with open(path, "wb") as fh:
        for p in payloads:
            fh.write(struct.pack("<I", len(p)))
            fh.write(p)


def read_capture(path) -> list[bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    out = []
    pos = 0
    while pos < len(blob):
        if pos + 4 > len(blob):
            raise ProtocolError("truncated capture record length")
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + n > len(blob):
            raise ProtocolError("truncated capture record body")
        out.append(blob[pos:pos + n])
        pos += n
    return out
