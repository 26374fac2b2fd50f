"""
Randomized compressors: stochastic quantization (SQ), the randomized
Hadamard preconditioner, QSGD with Elias-gamma coding, and rand-K / top-K
sparsification.

Every function takes an explicit integer seed; no global RNG is touched.
"""

import struct

import numpy as np

from src.codec.bitstream import (
    BitReader,
    concat_streams,
    elias_gamma_codes,
    float32_bits,
    pack_codes,
)
from src.codec.blob import EncodedBlob, SchemeId, as_dense_vector, pack_float32, unpack_float32
from src.exceptions import CodecError

# Independent PRNG streams derived from one seed
_SIGN_STREAM = 0
_ROUNDING_STREAM = 1
_MASK_STREAM = 2

_SQ_HEADER = struct.Struct('<ffB')
_HSQ_HEADER = struct.Struct('<QffB')


def _rng(seed, stream):
    return np.random.default_rng([int(seed), stream])


def _check_seed(seed):
    if seed is None or int(seed) < 0:
        raise CodecError(f"seed must be a non-negative integer, got {seed}")
    return int(seed)


def _check_bits(bits):
    bits = int(bits)
    if not 1 <= bits <= 32:
        raise CodecError(f"bits must lie in [1, 32], got {bits}")
    return bits


# ============================================================================
# STOCHASTIC QUANTIZATION
# ============================================================================

def _stochastic_indices(values, lo, hi, levels, rng):
    draws = rng.random(values.size)
    if hi == lo:
        return np.zeros(values.size, dtype=np.int64)
    step = (hi - lo) / (levels - 1)
    u = np.clip((values - lo) / step, 0.0, levels - 1)
    nearest = np.rint(u)
    # coordinates sitting on a grid point are not perturbed
    u = np.where(np.abs(u - nearest) <= 1e-9, nearest, u)
    lower = np.floor(u)
    idx = lower + (draws < (u - lower))
    return np.minimum(idx, levels - 1).astype(np.int64)


def _sq_payload(values, lo, hi, bits, rng):
    levels = 2 ** bits
    idx = _stochastic_indices(values, lo, hi, levels, rng)
    if hi == lo:
        return b'', 0
    return pack_codes(idx, np.full(idx.size, bits))


def _sq_values(reader, count, lo, hi, bits):
    if hi == lo:
        return np.full(count, lo, dtype=np.float64)
    idx = reader.read_array(count, bits).astype(np.float64)
    step = (float(hi) - float(lo)) / (2 ** bits - 1)
    return float(lo) + idx * step


def stochastic_quantize(x, bits: int, seed: int, lo: float = None, hi: float = None) -> EncodedBlob:
    """
    Unbiased stochastic rounding onto 2^bits evenly spaced levels.

    Levels span [lo, hi], by default the vector's own min and max. Each
    coordinate rounds to one of its two enclosing levels with probabilities
    that make the reconstruction unbiased.
    """
    values = as_dense_vector(x)
    bits = _check_bits(bits)
    seed = _check_seed(seed)
    lo = np.float32(values.min() if lo is None else lo)
    hi = np.float32(values.max() if hi is None else hi)
    if hi < lo:
        raise CodecError("quantization range is inverted")
    if values.min() < lo or values.max() > hi:
        raise CodecError("quantization range does not cover the input")

    payload, n_bits = _sq_payload(values.astype(np.float64), float(lo), float(hi), bits,
                                  _rng(seed, _ROUNDING_STREAM))
    codebook = _SQ_HEADER.pack(lo, hi, bits)
    return EncodedBlob(SchemeId.SQ, values.size, codebook, payload, n_bits)


def stochastic_dequantize(blob: EncodedBlob) -> np.ndarray:
    if blob.scheme_id != SchemeId.SQ:
        raise CodecError(f"expected an SQ blob, got {blob.scheme_id.name}")
    try:
        lo, hi, bits = _SQ_HEADER.unpack(blob.codebook)
    except struct.error as e:
        raise CodecError(f"corrupted SQ codebook: {e}") from e
    reader = BitReader(blob.payload, blob.bit_length)
    out = _sq_values(reader, blob.d, lo, hi, bits)
    reader.expect_exhausted()
    return out.astype(np.float32)


# ============================================================================
# RANDOMIZED HADAMARD TRANSFORM
# ============================================================================

def padded_length(d: int) -> int:
    return 1 << (int(d) - 1).bit_length()


def fwht(vec) -> np.ndarray:
    """Orthonormal fast Walsh-Hadamard transform of a power-of-two length vector."""
    out = np.array(vec, dtype=np.float64)
    n = out.size
    if n & (n - 1):
        raise CodecError(f"Hadamard transform needs a power-of-two length, got {n}")
    h = 1
    while h < n:
        blocks = out.reshape(-1, 2, h)
        out = np.stack([blocks[:, 0] + blocks[:, 1], blocks[:, 0] - blocks[:, 1]], axis=1).reshape(-1)
        h *= 2
    return out / np.sqrt(n)


def random_signs(n: int, seed: int) -> np.ndarray:
    return _rng(seed, _SIGN_STREAM).integers(0, 2, size=n) * 2.0 - 1.0


def hadamard_precondition(x, seed: int) -> np.ndarray:
    """Zero-pad to a power of two, flip signs by a seeded diagonal, rotate."""
    values = as_dense_vector(x).astype(np.float64)
    n = padded_length(values.size)
    padded = np.zeros(n)
    padded[:values.size] = values
    return fwht(padded * random_signs(n, _check_seed(seed)))


def hadamard_invert(z, seed: int, d: int = None) -> np.ndarray:
    """Inverse of hadamard_precondition; truncates back to d coordinates."""
    z = np.asarray(z, dtype=np.float64).ravel()
    n = z.size
    d = n if d is None else int(d)
    return (fwht(z) * random_signs(n, _check_seed(seed)))[:d]


def hadamard_sq_encode(x, bits: int, seed: int) -> EncodedBlob:
    """Randomized Hadamard rotation followed by stochastic quantization."""
    values = as_dense_vector(x)
    bits = _check_bits(bits)
    seed = _check_seed(seed)
    z = hadamard_precondition(values, seed)
    lo, hi = np.float32(z.min()), np.float32(z.max())
    # widen by one ulp where float32 rounding cut off an extreme
    if lo > z.min():
        lo = np.nextafter(lo, np.float32(-np.inf))
    if hi < z.max():
        hi = np.nextafter(hi, np.float32(np.inf))
    payload, n_bits = _sq_payload(z, float(lo), float(hi), bits, _rng(seed, _ROUNDING_STREAM))
    codebook = _HSQ_HEADER.pack(seed, lo, hi, bits)
    return EncodedBlob(SchemeId.HADAMARD_SQ, values.size, codebook, payload, n_bits)


def hadamard_sq_decode(blob: EncodedBlob) -> np.ndarray:
    if blob.scheme_id != SchemeId.HADAMARD_SQ:
        raise CodecError(f"expected a Hadamard+SQ blob, got {blob.scheme_id.name}")
    try:
        seed, lo, hi, bits = _HSQ_HEADER.unpack(blob.codebook)
    except struct.error as e:
        raise CodecError(f"corrupted Hadamard+SQ codebook: {e}") from e
    reader = BitReader(blob.payload, blob.bit_length)
    z = _sq_values(reader, padded_length(blob.d), lo, hi, bits)
    reader.expect_exhausted()
    return hadamard_invert(z, seed, blob.d).astype(np.float32)


# ============================================================================
# QSGD
# ============================================================================

def qsgd_encode(x, levels: int, seed: int) -> EncodedBlob:
    """
    QSGD with `levels` magnitude levels, Elias-gamma coded.

    Payload: 32-bit norm, then per coordinate gamma(level + 1) followed by a
    sign bit when the level is non-zero. A zero vector is just its norm.
    """
    values = as_dense_vector(x).astype(np.float64)
    levels = int(levels)
    if levels < 1:
        raise CodecError(f"QSGD needs at least one level, got {levels}")
    seed = _check_seed(seed)

    norm = np.float32(np.linalg.norm(values))
    codebook = struct.pack('<I', levels)
    header = (float32_bits([norm]), np.array([32]))
    if norm == 0:
        payload, n_bits = concat_streams(header)
        return EncodedBlob(SchemeId.QSGD, values.size, codebook, payload, n_bits)

    scaled = np.abs(values) / float(norm) * levels
    lower = np.floor(scaled)
    draws = _rng(seed, _ROUNDING_STREAM).random(values.size)
    level = np.minimum(lower + (draws < scaled - lower), levels).astype(np.int64)

    codes, lengths = elias_gamma_codes(level + 1)
    nonzero = level > 0
    sign = (values < 0).astype(np.uint64)
    codes = np.where(nonzero, (codes << np.uint64(1)) | sign, codes)
    lengths = lengths + nonzero
    payload, n_bits = concat_streams(header, (codes, lengths))
    return EncodedBlob(SchemeId.QSGD, values.size, codebook, payload, n_bits)


def qsgd_decode(blob: EncodedBlob) -> np.ndarray:
    if blob.scheme_id != SchemeId.QSGD:
        raise CodecError(f"expected a QSGD blob, got {blob.scheme_id.name}")
    try:
        (levels,) = struct.unpack('<I', blob.codebook)
    except struct.error as e:
        raise CodecError(f"corrupted QSGD codebook: {e}") from e
    reader = BitReader(blob.payload, blob.bit_length)
    norm = reader.read_float32()
    out = np.zeros(blob.d, dtype=np.float64)
    if norm != 0:
        for i in range(blob.d):
            level = reader.read_elias_gamma() - 1
            if level > levels:
                raise CodecError("QSGD level exceeds the level count")
            if level:
                sign = -1.0 if reader.read_bit() else 1.0
                out[i] = sign * norm * level / levels
    reader.expect_exhausted()
    return out.astype(np.float32)


# ============================================================================
# SPARSIFIERS
# ============================================================================

def index_width(d: int) -> int:
    return max(1, (int(d) - 1).bit_length())


def _check_k(k, d):
    k = int(k)
    if not 1 <= k <= d:
        raise CodecError(f"k must lie in [1, {d}], got {k}")
    return k


def _sparse_blob(scheme, d, indices, kept):
    width = index_width(d)
    payload, n_bits = concat_streams(
        (indices, np.full(indices.size, width)),
        (float32_bits(kept), np.full(indices.size, 32)),
    )
    return EncodedBlob(scheme, d, struct.pack('<I', indices.size), payload, n_bits)


def randk_encode(x, k: int, seed: int) -> EncodedBlob:
    """Keep k uniformly chosen coordinates, scaled by d/k."""
    values = as_dense_vector(x)
    k = _check_k(k, values.size)
    seed = _check_seed(seed)
    indices = np.sort(_rng(seed, _MASK_STREAM).choice(values.size, size=k, replace=False))
    kept = values[indices].astype(np.float64) * (values.size / k)
    return _sparse_blob(SchemeId.RANDK, values.size, indices, kept)


def topk_encode(x, k: int) -> EncodedBlob:
    """Keep the k largest-magnitude coordinates (ties resolved by position)."""
    values = as_dense_vector(x)
    k = _check_k(k, values.size)
    indices = np.sort(np.argsort(-np.abs(values), kind='stable')[:k])
    return _sparse_blob(SchemeId.TOPK, values.size, indices, values[indices])


def sparse_decode(blob: EncodedBlob) -> np.ndarray:
    if blob.scheme_id not in (SchemeId.RANDK, SchemeId.TOPK):
        raise CodecError(f"expected a sparse blob, got {blob.scheme_id.name}")
    try:
        (k,) = struct.unpack('<I', blob.codebook)
    except struct.error as e:
        raise CodecError(f"corrupted sparse codebook: {e}") from e
    reader = BitReader(blob.payload, blob.bit_length)
    indices = reader.read_array(k, index_width(blob.d)).astype(np.int64)
    kept = reader.read_float32_array(k)
    reader.expect_exhausted()
    if k and indices.max() >= blob.d:
        raise CodecError("sparse index out of range")
    out = np.zeros(blob.d, dtype=np.float32)
    out[indices] = kept
    return out


def sparse_mask(d: int, k: int, seed: int) -> np.ndarray:
    return np.sort(_rng(_check_seed(seed), _MASK_STREAM).choice(d, size=k, replace=False))


def sparse_sq_encode(x, k: int, bits: int, seed: int) -> EncodedBlob:
    """
    Sub-bit composition: seeded rand-K mask, then Hadamard+SQ on the kept
    (d/k-scaled) values. The mask is regenerated from the seed, so only the
    quantized values travel.
    """
    values = as_dense_vector(x)
    k = _check_k(k, values.size)
    seed = _check_seed(seed)
    kept = values[sparse_mask(values.size, k, seed)].astype(np.float64) * (values.size / k)
    inner = hadamard_sq_encode(kept, bits, seed)
    codebook = struct.pack('<I', k) + inner.codebook
    return EncodedBlob(SchemeId.SPARSE_SQ, values.size, codebook, inner.payload, inner.bit_length)


def sparse_sq_decode(blob: EncodedBlob) -> np.ndarray:
    if blob.scheme_id != SchemeId.SPARSE_SQ:
        raise CodecError(f"expected a sparse SQ blob, got {blob.scheme_id.name}")
    try:
        (k,) = struct.unpack_from('<I', blob.codebook, 0)
    except struct.error as e:
        raise CodecError(f"corrupted sparse SQ codebook: {e}") from e
    inner = EncodedBlob(SchemeId.HADAMARD_SQ, k, blob.codebook[4:], blob.payload, blob.bit_length)
    seed = _HSQ_HEADER.unpack(inner.codebook)[0]
    out = np.zeros(blob.d, dtype=np.float32)
    out[sparse_mask(blob.d, k, seed)] = hadamard_sq_decode(inner)
    return out


# ============================================================================
# MULTIPLICATIVE NOISE
# ============================================================================

def noise_encode(x, omega: float, seed: int) -> EncodedBlob:
    """x + eps * |x| with eps = +/- omega per coordinate; raw 32-bit payload."""
    values = as_dense_vector(x).astype(np.float64)
    eps = _rng(_check_seed(seed), _ROUNDING_STREAM).choice([-omega, omega], size=values.size)
    payload, bit_length = pack_float32(values + eps * np.abs(values))
    return EncodedBlob(SchemeId.NOISE, values.size, struct.pack('<f', omega), payload, bit_length)


def noise_decode(blob: EncodedBlob) -> np.ndarray:
    if blob.scheme_id != SchemeId.NOISE:
        raise CodecError(f"expected a noise blob, got {blob.scheme_id.name}")
    return unpack_float32(blob)
