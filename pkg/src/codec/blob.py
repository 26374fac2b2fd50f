"""
Encoded blob container and its little-endian wire framing.

Wire layout (all integers little-endian):

    scheme_id        1 byte
    d                8 bytes
    side-info length 8 bytes
    side-info        <side-info length> bytes
    payload bits     8 bytes
    payload          ceil(payload bits / 8) bytes, MSB-first bit packing
"""

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from src.codec.bitstream import BitReader, float32_bits, pack_codes
from src.exceptions import CodecError

_HEADER = struct.Struct('<BQQ')
_PAYLOAD_BITS = struct.Struct('<Q')


class SchemeId(IntEnum):
    """Wire tag of every registered compression scheme"""
    IDENTITY = 0
    ECUQ = 1
    SQ = 2
    HADAMARD_SQ = 3
    QSGD = 4
    RANDK = 5
    TOPK = 6
    HUFFMAN = 7
    SPARSE_SQ = 8
    NOISE = 9


@dataclass(frozen=True)
class EncodedBlob:
    """
    Bit-exact compressed representation of one dense vector.

    `codebook` holds the scheme's side information, `payload` the packed
    bitstream of which exactly `bit_length` bits are meaningful.
    """
    scheme_id: SchemeId
    d: int
    codebook: bytes
    payload: bytes
    bit_length: int

    def __post_init__(self):
        if self.d < 1:
            raise CodecError(f"blob dimension must be >= 1, got {self.d}")
        if self.bit_length < 0:
            raise CodecError("negative payload bit length")
        if len(self.payload) != (self.bit_length + 7) // 8:
            raise CodecError(
                f"payload holds {len(self.payload)} bytes but bit_length is {self.bit_length}"
            )

    @property
    def side_info_bits(self) -> int:
        return 8 * len(self.codebook)

    @property
    def total_bits(self) -> int:
        return self.bit_length + self.side_info_bits

    def to_bytes(self) -> bytes:
        return b''.join([
            _HEADER.pack(int(self.scheme_id), self.d, len(self.codebook)),
            self.codebook,
            _PAYLOAD_BITS.pack(self.bit_length),
            self.payload,
        ])

    @classmethod
    def from_bytes(cls, data: bytes) -> 'EncodedBlob':
        blob, consumed = cls.read_from(data, 0)
        if consumed != len(data):
            raise CodecError(f"{len(data) - consumed} trailing bytes after blob")
        return blob

    @classmethod
    def read_from(cls, data: bytes, offset: int):
        """Parse one framed blob starting at `offset`; returns (blob, new offset)."""
        try:
            scheme, d, side_len = _HEADER.unpack_from(data, offset)
            offset += _HEADER.size
            codebook = bytes(data[offset:offset + side_len])
            if len(codebook) != side_len:
                raise CodecError("truncated side information")
            offset += side_len
            (bit_length,) = _PAYLOAD_BITS.unpack_from(data, offset)
            offset += _PAYLOAD_BITS.size
        except struct.error as e:
            raise CodecError(f"truncated blob header: {e}") from e

        n_bytes = (bit_length + 7) // 8
        payload = bytes(data[offset:offset + n_bytes])
        if len(payload) != n_bytes:
            raise CodecError("truncated payload")
        try:
            scheme_id = SchemeId(scheme)
        except ValueError as e:
            raise CodecError(f"unknown scheme id {scheme}") from e
        return cls(scheme_id, d, codebook, payload, bit_length), offset + n_bytes


def as_dense_vector(x, name: str = 'x') -> np.ndarray:
    """Validate and convert input to a flat float32 vector."""
    values = np.asarray(x, dtype=np.float32).ravel()
    if values.size == 0:
        raise CodecError(f"{name} is empty")
    if not np.all(np.isfinite(values)):
        raise CodecError(f"{name} contains non-finite entries")
    return values


def pack_float32(values):
    """IEEE-754 patterns of float32 values as consecutive MSB-first 32-bit fields."""
    patterns = float32_bits(values)
    return pack_codes(patterns, np.full(patterns.size, 32, dtype=np.int64))


def unpack_float32(blob: EncodedBlob) -> np.ndarray:
    if blob.bit_length != 32 * blob.d:
        raise CodecError(f"raw payload must carry {32 * blob.d} bits, got {blob.bit_length}")
    reader = BitReader(blob.payload, blob.bit_length)
    values = reader.read_float32_array(blob.d)
    reader.expect_exhausted()
    return values


def encode_raw(x) -> EncodedBlob:
    """Uncompressed 32-bit transport (the identity scheme)."""
    values = as_dense_vector(x)
    payload, bit_length = pack_float32(values)
    return EncodedBlob(SchemeId.IDENTITY, values.size, b'', payload, bit_length)


def decode_raw(blob: EncodedBlob) -> np.ndarray:
    return unpack_float32(blob)


def write_blob_stream(path, blobs) -> int:
    """Append framed blobs to a binary file; returns bytes written."""
    written = 0
    with open(path, 'ab') as f:
        for blob in blobs:
            data = blob.to_bytes()
            f.write(data)
            written += len(data)
    return written


def read_blob_stream(path) -> list:
    with open(path, 'rb') as f:
        data = f.read()
    blobs = []
    offset = 0
    while offset < len(data):
        blob, offset = EncodedBlob.read_from(data, offset)
        blobs.append(blob)
    return blobs
