"""
Bit-level packing and reading (MSB-first) plus Elias-gamma integer codes.
"""

import struct

import numpy as np

from src.exceptions import CodecError

_PACK_CHUNK = 1 << 16


def pack_codes(codes, lengths):
    """
    Concatenate variable-length codewords into an MSB-first bitstream.

    Args:
        codes: non-negative integers, codeword i occupying the low lengths[i] bits
        lengths: codeword lengths in bits (0..64)

    Returns:
        tuple: (payload bytes, exact bit count)
    """
    codes = np.asarray(codes, dtype=np.uint64).ravel()
    lengths = np.asarray(lengths, dtype=np.int64).ravel()
    if codes.shape != lengths.shape:
        raise CodecError("codes and lengths differ in shape")
    if lengths.size == 0:
        return b'', 0
    if lengths.min() < 0 or lengths.max() > 64:
        raise CodecError("codeword lengths must lie in [0, 64]")

    total = int(lengths.sum())
    if total == 0:
        return b'', 0

    width = int(lengths.max())
    offsets = np.arange(width, dtype=np.int64)
    chunks = []
    for start in range(0, codes.size, _PACK_CHUNK):
        c = codes[start:start + _PACK_CHUNK]
        n = lengths[start:start + _PACK_CHUNK]
        pos = n[:, None] - 1 - offsets[None, :]
        valid = pos >= 0
        shifts = np.where(valid, pos, 0).astype(np.uint64)
        bits = (c[:, None] >> shifts) & np.uint64(1)
        chunks.append(bits[valid].astype(np.uint8))
    stream = np.concatenate(chunks)
    return np.packbits(stream).tobytes(), total


def concat_streams(*parts):
    """Join several (codes, lengths) groups in order into one bitstream."""
    codes = np.concatenate([np.asarray(c, dtype=np.uint64).ravel() for c, _ in parts])
    lengths = np.concatenate([np.asarray(n, dtype=np.int64).ravel() for _, n in parts])
    return pack_codes(codes, lengths)


def float32_bits(values) -> np.ndarray:
    """IEEE-754 bit patterns of float32 values as unsigned integers."""
    return np.asarray(values, dtype=np.float32).view(np.uint32).astype(np.uint64)


def bit_lengths(values) -> np.ndarray:
    """floor(log2 n) + 1 for positive integers."""
    values = np.asarray(values)
    if values.size and values.min() < 1:
        raise CodecError("bit length is defined for positive integers only")
    _, exponent = np.frexp(values.astype(np.float64))
    return exponent.astype(np.int64)


def elias_gamma_lengths(values) -> np.ndarray:
    """Codeword lengths 2*floor(log2 n) + 1."""
    return 2 * bit_lengths(values) - 1


def elias_gamma_codes(values):
    """
    Elias-gamma codewords for positive integers.

    The gamma codeword of n is n written in 2*floor(log2 n)+1 bits, i.e.
    floor(log2 n) zeros followed by the binary form of n.
    """
    values = np.asarray(values, dtype=np.uint64).ravel()
    return values, elias_gamma_lengths(values)


class BitReader:
    """Sequential MSB-first reader that counts consumed bits"""

    def __init__(self, payload: bytes, bit_length: int):
        if len(payload) * 8 < bit_length:
            raise CodecError(
                f"payload holds {len(payload) * 8} bits, header claims {bit_length}"
            )
        raw = np.frombuffer(payload, dtype=np.uint8)
        self.bits = np.unpackbits(raw)[:bit_length] if bit_length else np.zeros(0, np.uint8)
        self.bit_length = bit_length
        self.position = 0
        self._bit_list = None

    @property
    def remaining(self) -> int:
        return self.bit_length - self.position

    def _list(self):
        if self._bit_list is None:
            self._bit_list = self.bits.tolist()
        return self._bit_list

    def read_bit(self) -> int:
        if self.position >= self.bit_length:
            raise CodecError("bitstream exhausted")
        bit = self._list()[self.position]
        self.position += 1
        return bit

    def read_bits(self, n: int) -> int:
        if n == 0:
            return 0
        if self.position + n > self.bit_length:
            raise CodecError("bitstream exhausted")
        value = 0
        for bit in self._list()[self.position:self.position + n]:
            value = (value << 1) | bit
        self.position += n
        return value

    def read_array(self, count: int, width: int) -> np.ndarray:
        """Read `count` fixed-width unsigned integers."""
        if count == 0 or width == 0:
            return np.zeros(count, dtype=np.uint64)
        n = count * width
        if self.position + n > self.bit_length:
            raise CodecError("bitstream exhausted")
        block = self.bits[self.position:self.position + n].reshape(count, width).astype(np.uint64)
        weights = np.uint64(1) << np.arange(width - 1, -1, -1, dtype=np.uint64)
        self.position += n
        return (block * weights).sum(axis=1, dtype=np.uint64)

    def read_float32(self) -> float:
        return struct.unpack('<f', struct.pack('<I', self.read_bits(32)))[0]

    def read_float32_array(self, count: int) -> np.ndarray:
        return self.read_array(count, 32).astype(np.uint32).view(np.float32)

    def read_elias_gamma(self) -> int:
        zeros = 0
        while self.read_bit() == 0:
            zeros += 1
            if zeros > 64:
                raise CodecError("malformed Elias-gamma codeword")
        return (1 << zeros) | self.read_bits(zeros)

    def expect_exhausted(self):
        if self.remaining != 0:
            raise CodecError(f"{self.remaining} unread payload bits")
