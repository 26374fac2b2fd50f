"""
Canonical Huffman coding over a finite alphabet of quantization values.
"""

import heapq
import struct

import numpy as np

from src.codec.bitstream import BitReader, pack_codes
from src.codec.blob import EncodedBlob, SchemeId, as_dense_vector
from src.exceptions import CodecError

# Largest code length decoded through a flat lookup table
_TABLE_BITS = 20


class HuffmanNode:
    """
    Node of the Huffman merge tree.

    Ordering is (weight, lowest symbol index below the node, creation order),
    which fixes how equal-weight nodes are merged.
    """

    def __init__(self, weight, order, symbol=None, left=None, right=None):
        self.weight = weight
        self.order = order
        self.symbol = symbol
        self.left = left
        self.right = right
        if symbol is not None:
            self.min_symbol = symbol
        else:
            self.min_symbol = min(left.min_symbol, right.min_symbol)

    def __lt__(self, other):
        return (self.weight, self.min_symbol, self.order) < (other.weight, other.min_symbol, other.order)

    @property
    def is_leaf(self):
        return self.symbol is not None


def code_lengths(weights) -> np.ndarray:
    """
    Huffman codeword length of every symbol.

    Args:
        weights: positive weights (counts or probabilities), one per symbol

    Returns:
        np.ndarray: integer lengths; a lone symbol gets length 0
    """
    weights = np.asarray(weights, dtype=np.float64).ravel()
    n = weights.size
    if n == 0:
        raise CodecError("cannot build a code for an empty alphabet")
    if np.any(weights <= 0):
        raise CodecError("symbol weights must be positive")
    if n == 1:
        return np.zeros(1, dtype=np.int64)

    heap = [HuffmanNode(float(w), order=i, symbol=i) for i, w in enumerate(weights)]
    heapq.heapify(heap)
    order = n
    while len(heap) > 1:
        a = heapq.heappop(heap)
        b = heapq.heappop(heap)
        heapq.heappush(heap, HuffmanNode(a.weight + b.weight, order=order, left=a, right=b))
        order += 1

    lengths = np.zeros(n, dtype=np.int64)
    stack = [(heap[0], 0)]
    while stack:
        node, depth = stack.pop()
        if node.is_leaf:
            lengths[node.symbol] = depth
        else:
            stack.append((node.left, depth + 1))
            stack.append((node.right, depth + 1))
    return lengths


def canonical_codes(lengths) -> np.ndarray:
    """Assign canonical codewords, ordered by (length, symbol index)."""
    lengths = np.asarray(lengths, dtype=np.int64).ravel()
    codes = np.zeros(lengths.size, dtype=np.uint64)
    if lengths.size == 1:
        return codes
    if lengths.max() > 63:
        raise CodecError("Huffman code too deep")
    order = np.lexsort((np.arange(lengths.size), lengths))
    code = 0
    prev_len = int(lengths[order[0]])
    for sym in order:
        length = int(lengths[sym])
        code <<= (length - prev_len)
        codes[sym] = code
        code += 1
        prev_len = length
    return codes


def is_prefix_free(codes, lengths) -> bool:
    words = sorted(
        format(int(c), f'0{int(n)}b') if n else '' for c, n in zip(codes, lengths)
    )
    return all(not b.startswith(a) for a, b in zip(words, words[1:]))


def encode_symbols(symbols, lengths, codes):
    """Pack a symbol sequence with a prebuilt code; returns (payload, bits)."""
    symbols = np.asarray(symbols, dtype=np.int64)
    return pack_codes(codes[symbols], lengths[symbols])


def decode_symbols(reader: BitReader, count: int, lengths, codes) -> np.ndarray:
    """Decode `count` symbols from the reader's current position."""
    lengths = np.asarray(lengths, dtype=np.int64)
    max_len = int(lengths.max()) if lengths.size else 0
    if max_len == 0:
        return np.zeros(count, dtype=np.int64)
    if max_len <= _TABLE_BITS:
        return _decode_with_table(reader, count, lengths, codes, max_len)
    return _decode_bitwise(reader, count, lengths, codes)


def _decode_with_table(reader, count, lengths, codes, max_len):
    table_sym = np.full(1 << max_len, -1, dtype=np.int64)
    table_len = np.full(1 << max_len, -1, dtype=np.int64)
    for sym, (code, length) in enumerate(zip(codes.tolist(), lengths.tolist())):
        start = code << (max_len - length)
        span = 1 << (max_len - length)
        table_sym[start:start + span] = sym
        table_len[start:start + span] = length

    # value of the max_len bits starting at every position
    padded = np.concatenate([reader.bits[reader.position:], np.zeros(max_len, dtype=np.uint8)])
    n_windows = padded.size - max_len + 1
    peek = np.zeros(n_windows, dtype=np.int64)
    for j in range(max_len):
        peek = (peek << 1) | padded[j:j + n_windows]
    peek = peek.tolist()

    syms = table_sym.tolist()
    lens = table_len.tolist()
    available = reader.remaining
    out = [0] * count
    p = 0
    for i in range(count):
        if p >= available:
            raise CodecError("bitstream exhausted")
        v = peek[p]
        length = lens[v]
        if length < 0:
            raise CodecError("invalid Huffman codeword")
        out[i] = syms[v]
        p += length
    if p > available:
        raise CodecError("bitstream exhausted")
    reader.position += p
    return np.asarray(out, dtype=np.int64)


def _decode_bitwise(reader, count, lengths, codes):
    lookup = {(int(n), int(c)): s for s, (c, n) in enumerate(zip(codes, lengths))}
    max_len = int(lengths.max())
    out = np.zeros(count, dtype=np.int64)
    for i in range(count):
        code, length = 0, 0
        while True:
            code = (code << 1) | reader.read_bit()
            length += 1
            sym = lookup.get((length, code))
            if sym is not None:
                out[i] = sym
                break
            if length > max_len:
                raise CodecError("invalid Huffman codeword")
    return out


# ----- Public API -----

def huffman_encode(q, density) -> EncodedBlob:
    """
    Entropy-code a quantized vector against its empirical density.

    Args:
        q: quantized values, every entry a member of density.support
        density: EmpiricalDensity of q (or of a superset alphabet)

    Returns:
        EncodedBlob: side information is the support and code lengths
    """
    values = as_dense_vector(q, 'q')
    support = np.asarray(density.support, dtype=np.float32)
    order = np.argsort(support, kind='stable')
    support = support[order]
    probabilities = np.asarray(density.probabilities, dtype=np.float64)[order]

    symbols = np.searchsorted(support, values)
    inside = symbols < support.size
    if not np.all(inside) or not np.array_equal(support[symbols], values):
        raise CodecError("symbol outside the density support")

    lengths = code_lengths(probabilities)
    codes = canonical_codes(lengths)
    payload, n_bits = encode_symbols(symbols, lengths, codes)
    codebook = b''.join([
        struct.pack('<I', support.size),
        support.astype('<f4').tobytes(),
        lengths.astype(np.uint8).tobytes(),
    ])
    return EncodedBlob(SchemeId.HUFFMAN, values.size, codebook, payload, n_bits)


def huffman_decode(blob: EncodedBlob) -> np.ndarray:
    if blob.scheme_id != SchemeId.HUFFMAN:
        raise CodecError(f"expected a Huffman blob, got {blob.scheme_id.name}")
    try:
        (n,) = struct.unpack_from('<I', blob.codebook, 0)
        support = np.frombuffer(blob.codebook, dtype='<f4', count=n, offset=4)
        lengths = np.frombuffer(blob.codebook, dtype=np.uint8, count=n, offset=4 + 4 * n)
    except (struct.error, ValueError) as e:
        raise CodecError(f"corrupted Huffman codebook: {e}") from e
    lengths = lengths.astype(np.int64)
    codes = canonical_codes(lengths)
    reader = BitReader(blob.payload, blob.bit_length)
    symbols = decode_symbols(reader, blob.d, lengths, codes)
    reader.expect_exhausted()
    return support[symbols].astype(np.float32)


def average_code_length(density) -> float:
    lengths = code_lengths(density.probabilities)
    return float(np.sum(np.asarray(density.probabilities) * lengths))
