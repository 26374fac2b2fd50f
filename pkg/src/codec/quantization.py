"""
Uniform quantization grids, empirical densities and the entropy-constrained
uniform quantizer (ECUQ).

ECUQ looks for the largest number of uniformly spaced levels whose quantized
vector has empirical entropy inside [budget - tolerance, budget], then
Huffman-codes the indices. Only the final grid is entropy coded.
"""

import logging
import struct
from dataclasses import dataclass

import numpy as np

from src.codec.bitstream import BitReader
from src.codec.blob import EncodedBlob, SchemeId, as_dense_vector
from src.codec.huffman import canonical_codes, code_lengths, decode_symbols, encode_symbols
from src.exceptions import CodecError

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 0.1
LEVELS_PER_COORDINATE_CAP = 64
# level counts the fallback scan may try after the searches
SCAN_LIMIT = 256

_GRID_HEADER = struct.Struct('<ffII')


@dataclass(frozen=True)
class QuantizationGrid:
    """K uniformly spaced centers x_min + (k + 1/2)(x_max - x_min)/K"""
    x_min: float
    x_max: float
    level_count: int

    def __post_init__(self):
        if self.level_count < 1:
            raise CodecError("level count must be >= 1")
        if self.x_max < self.x_min:
            raise CodecError("grid range is inverted")

    @classmethod
    def for_vector(cls, x, level_count: int) -> 'QuantizationGrid':
        """Grid spanning min/max of x; a constant vector collapses to one level."""
        values = as_dense_vector(x)
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            level_count = 1
        return cls(lo, hi, int(level_count))

    @property
    def is_degenerate(self) -> bool:
        return self.x_min == self.x_max

    @property
    def step(self) -> float:
        return (float(self.x_max) - float(self.x_min)) / self.level_count

    @property
    def levels(self) -> np.ndarray:
        if self.x_min == self.x_max:
            return np.full(self.level_count, self.x_min, dtype=np.float32)
        k = np.arange(self.level_count, dtype=np.float64)
        return (float(self.x_min) + (k + 0.5) * self.step).astype(np.float32)

    def indices(self, x) -> np.ndarray:
        """Nearest-level index of every entry (clamped to the grid)."""
        values = np.asarray(x, dtype=np.float64)
        if self.x_min == self.x_max or self.level_count == 1:
            return np.zeros(values.size, dtype=np.int64)
        idx = np.floor((values - float(self.x_min)) / self.step).astype(np.int64)
        return np.clip(idx, 0, self.level_count - 1)


@dataclass(frozen=True)
class EmpiricalDensity:
    """Relative frequencies of the distinct values of a quantized vector"""
    support: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.size == 0 or p.size != np.asarray(self.support).size:
            raise CodecError("support and probabilities must be non-empty and aligned")
        if np.any(p <= 0):
            raise CodecError("zero-probability levels must be excluded from the support")
        if abs(p.sum() - 1.0) > 1e-9:
            raise CodecError(f"probabilities sum to {p.sum()}, not 1")

    def as_dict(self) -> dict:
        return {float(v): float(p) for v, p in zip(self.support, self.probabilities)}


def uniform_quantize(x, grid: QuantizationGrid) -> np.ndarray:
    """Map every coordinate to its nearest grid level."""
    values = as_dense_vector(x)
    return grid.levels[grid.indices(values)]


def empirical_density(q) -> EmpiricalDensity:
    values = as_dense_vector(q, 'q')
    support, counts = np.unique(values, return_counts=True)
    return EmpiricalDensity(support, counts / values.size)


def entropy_bits(density: EmpiricalDensity) -> float:
    """Shannon entropy in bits."""
    return _entropy(np.asarray(density.probabilities, dtype=np.float64))


def _entropy(p) -> float:
    p = p[p > 0]
    return max(0.0, float(-np.sum(p * np.log2(p))))


def _index_entropy(values, x_min, x_max, level_count) -> float:
    grid = QuantizationGrid(x_min, x_max, level_count)
    counts = np.bincount(grid.indices(values), minlength=level_count)
    return _entropy(counts / values.size)


def select_level_count(x, budget: int, tolerance: float = DEFAULT_TOLERANCE, max_levels: int = None):
    """
    Double binary search for the ECUQ level count.

    Starting from K = 2^budget, the upper phase probes 2^budget + 2^p for
    p = 0, 1, ... until the entropy overshoots the budget (or the cap is
    hit), then bisects. Returns as soon as a probe lands in the window.
    When neither search hits it, at most SCAN_LIMIT further level counts
    above the best one are scanned.

    Args:
        x: input vector
        budget: bits per coordinate (integer >= 1)
        tolerance: width of the accepted entropy window
        max_levels: level cap, default 64 * d

    Returns:
        tuple: (level count, entropy of the chosen quantization)
    """
    values = as_dense_vector(x).astype(np.float64)
    budget = _check_budget(budget)
    if tolerance <= 0:
        raise CodecError(f"tolerance must be positive, got {tolerance}")

    x_min, x_max = float(values.min()), float(values.max())
    if x_min == x_max:
        return 1, 0.0

    base = 2 ** budget
    cap = max(base, max_levels or LEVELS_PER_COORDINATE_CAP * values.size)
    floor_h = budget - tolerance

    def entropy_at(k):
        return _index_entropy(values, x_min, x_max, k)

    h = entropy_at(base)
    if h >= floor_h:
        return base, h

    best_k, best_h = base, h
    overshoot = None
    low, high, p = base, None, -1
    while high is None or low <= high:
        if high is None:
            p += 1
            mid = base + 2 ** p
            if mid >= cap:
                mid, high = cap, cap
        else:
            mid = (low + high) // 2
        h = entropy_at(mid)
        if h > budget:
            high = mid - 1
            overshoot = mid if overshoot is None else min(overshoot, mid)
        elif h < floor_h:
            low = mid + 1
            if h > best_h:
                best_k, best_h = mid, h
        else:
            return mid, h

    # entropy is not monotone in K; scan the unresolved stretch linearly
    stop = min(overshoot - 1, cap) if overshoot is not None else cap
    stop = min(stop, best_k + SCAN_LIMIT)
    if stop > best_k:
        logger.info(f"ECUQ search missed [{floor_h:.3f}, {budget}]; scanning K in ({best_k}, {stop}]")
    for k in range(best_k + 1, stop + 1):
        h = entropy_at(k)
        if floor_h <= h <= budget:
            return k, h
        if h <= budget and h > best_h:
            best_k, best_h = k, h
    logger.debug(f"ECUQ window [{floor_h}, {budget}] not reachable; using K={best_k} (H={best_h:.4f})")
    return best_k, best_h


def _check_budget(budget) -> int:
    if isinstance(budget, float) and not budget.is_integer():
        raise CodecError(f"ECUQ budget must be an integer number of bits, got {budget}")
    budget = int(budget)
    if budget < 1:
        raise CodecError(f"ECUQ budget must be >= 1, got {budget}")
    return budget


def ecuq_grid(x, budget: int, tolerance: float = DEFAULT_TOLERANCE, max_levels: int = None):
    """Final ECUQ grid and its entropy for x."""
    level_count, entropy = select_level_count(x, budget, tolerance, max_levels)
    values = as_dense_vector(x)
    return QuantizationGrid(float(values.min()), float(values.max()), level_count), entropy


def ecuq_encode(x, budget: int, tolerance: float = DEFAULT_TOLERANCE, max_levels: int = None) -> EncodedBlob:
    """
    Quantize with the ECUQ grid and Huffman-code the level indices.

    Side information: grid bounds, level count and the (level index, code
    length) pair of every used level.
    """
    values = as_dense_vector(x)
    grid, _ = ecuq_grid(values, budget, tolerance, max_levels)
    idx = grid.indices(values)
    counts = np.bincount(idx, minlength=grid.level_count)
    used = np.flatnonzero(counts)

    lengths = code_lengths(counts[used])
    codes = canonical_codes(lengths)
    symbol_of_level = np.zeros(grid.level_count, dtype=np.int64)
    symbol_of_level[used] = np.arange(used.size)
    payload, n_bits = encode_symbols(symbol_of_level[idx], lengths, codes)

    codebook = b''.join([
        _GRID_HEADER.pack(grid.x_min, grid.x_max, grid.level_count, used.size),
        used.astype('<u4').tobytes(),
        lengths.astype(np.uint8).tobytes(),
    ])
    return EncodedBlob(SchemeId.ECUQ, values.size, codebook, payload, n_bits)


def ecuq_decode(blob: EncodedBlob) -> np.ndarray:
    if blob.scheme_id != SchemeId.ECUQ:
        raise CodecError(f"expected an ECUQ blob, got {blob.scheme_id.name}")
    grid, used, lengths = _read_ecuq_codebook(blob.codebook)
    codes = canonical_codes(lengths)
    reader = BitReader(blob.payload, blob.bit_length)
    symbols = decode_symbols(reader, blob.d, lengths, codes)
    reader.expect_exhausted()
    return grid.levels[used[symbols]]


def _read_ecuq_codebook(codebook: bytes):
    try:
        x_min, x_max, level_count, n_used = _GRID_HEADER.unpack_from(codebook, 0)
        offset = _GRID_HEADER.size
        used = np.frombuffer(codebook, dtype='<u4', count=n_used, offset=offset).astype(np.int64)
        offset += 4 * n_used
        lengths = np.frombuffer(codebook, dtype=np.uint8, count=n_used, offset=offset).astype(np.int64)
    except (struct.error, ValueError) as e:
        raise CodecError(f"corrupted ECUQ codebook: {e}") from e
    if n_used == 0 or used.max() >= level_count:
        raise CodecError("ECUQ codebook references levels outside the grid")
    return QuantizationGrid(x_min, x_max, level_count), used, lengths
