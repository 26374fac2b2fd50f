"""
Compressor objects, their bias/NMSE contracts, and the scheme registry.

A compressor is configured from a compact spec string such as
``hadamard_sq:2`` or ``ecuq:4``; every blob carries enough side information
to be decoded by `decode_blob` without the originating compressor.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from src.codec import quantization, stochastic
from src.codec.blob import EncodedBlob, SchemeId, decode_raw, encode_raw
from src.codec.huffman import huffman_decode
from src.exceptions import CodecError, UndefinedMetricError


@dataclass(frozen=True)
class CompressorContract:
    """
    Declared statistical behaviour of a compressor.

    nmse_bound is the omega^2 of E||C(x) - x||^2 <= omega^2 ||x||^2 at the
    contract's dimension, or None when no bound holds. Quantizers whose
    bound depends on the input record a measured Monte-Carlo ceiling.
    """
    unbiased: bool
    nmse_bound: Optional[float]
    lossless: bool = False

    @property
    def omega(self) -> Optional[float]:
        return None if self.nmse_bound is None else math.sqrt(self.nmse_bound)


def nmse(x, xhat) -> float:
    """Normalized squared error ||xhat - x||^2 / ||x||^2."""
    x = np.asarray(x, dtype=np.float64).ravel()
    xhat = np.asarray(xhat, dtype=np.float64).ravel()
    if x.shape != xhat.shape:
        raise CodecError(f"length mismatch: {x.size} vs {xhat.size}")
    ref = float(np.dot(x, x))
    if ref == 0:
        raise UndefinedMetricError("NMSE is undefined for a zero-norm reference")
    diff = xhat - x
    return float(np.dot(diff, diff)) / ref


def _count(fraction, d):
    return max(1, min(d, int(round(fraction * d))))


class Compressor:
    """Base compressor; subclasses set `scheme_id` and implement `_encode`."""

    scheme_id = None
    name = None
    lossless = False

    def encode(self, x, seed: int = 0) -> EncodedBlob:
        return self._encode(x, seed)

    def decode(self, blob: EncodedBlob) -> np.ndarray:
        return decode_blob(blob)

    def roundtrip(self, x, seed: int = 0) -> np.ndarray:
        return self.decode(self.encode(x, seed))

    def contract(self, d: int) -> CompressorContract:
        raise NotImplementedError

    @property
    def spec(self) -> str:
        params = self._params()
        return ':'.join([self.name] + [_format_param(p) for p in params])

    @property
    def bits_per_coordinate(self) -> float:
        """Nominal payload budget used by the bandwidth arithmetic."""
        raise NotImplementedError

    def _params(self):
        return []

    def _encode(self, x, seed):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.spec!r})"

    def __eq__(self, other):
        return isinstance(other, Compressor) and self.spec == other.spec

    def __hash__(self):
        return hash(self.spec)


def _format_param(p):
    if isinstance(p, float):
        return repr(p)
    return str(p)


class IdentityCompressor(Compressor):
    scheme_id = SchemeId.IDENTITY
    name = 'identity'
    bits_per_coordinate = 32.0
    lossless = True

    def _encode(self, x, seed):
        return encode_raw(x)

    def contract(self, d):
        return CompressorContract(unbiased=True, nmse_bound=0.0, lossless=True)


class EcuqCompressor(Compressor):
    scheme_id = SchemeId.ECUQ
    name = 'ecuq'

    def __init__(self, bits: int, tolerance: float = quantization.DEFAULT_TOLERANCE):
        self.bits = quantization._check_budget(bits)
        if tolerance <= 0:
            raise CodecError(f"ECUQ tolerance must be positive, got {tolerance}")
        self.tolerance = float(tolerance)

    @property
    def bits_per_coordinate(self):
        return float(self.bits)

    def _params(self):
        if self.tolerance == quantization.DEFAULT_TOLERANCE:
            return [self.bits]
        return [self.bits, self.tolerance]

    def _encode(self, x, seed):
        return quantization.ecuq_encode(x, self.bits, self.tolerance)

    def contract(self, d):
        return CompressorContract(unbiased=False, nmse_bound=None)


class StochasticQuantizer(Compressor):
    scheme_id = SchemeId.SQ
    name = 'sq'

    def __init__(self, bits: int):
        self.bits = stochastic._check_bits(bits)

    @property
    def bits_per_coordinate(self):
        return float(self.bits)

    def _params(self):
        return [self.bits]

    def _encode(self, x, seed):
        return stochastic.stochastic_quantize(x, self.bits, seed)

    def contract(self, d):
        return CompressorContract(unbiased=True, nmse_bound=measured_nmse_ceiling(self.spec, d))


# Monte-Carlo setup behind measured ceilings
CEILING_TRIALS = 200
CEILING_MARGIN = 1.25


def _ceiling_panel(d, rng):
    spike = np.zeros(d)
    spike[0] = 1.0
    return [rng.normal(size=d), rng.uniform(size=d), rng.lognormal(size=d), spike]


@lru_cache(maxsize=None)
def measured_nmse_ceiling(spec: str, d: int, trials: int = CEILING_TRIALS, seed: int = 0) -> float:
    """
    Expected-NMSE ceiling of a compressor on length-d inputs.

    Runs `trials` seeded round trips on normal, uniform, log-normal and
    one-spike vectors and returns the largest mean NMSE times CEILING_MARGIN.
    Deterministic for a given (spec, d, trials, seed).
    """
    if d < 1:
        raise CodecError(f"dimension must be positive, got {d}")
    compressor = make_compressor(spec)
    rng = np.random.default_rng([seed, d])
    worst = 0.0
    for x in _ceiling_panel(int(d), rng):
        errors = [nmse(x, compressor.roundtrip(x, seed=k)) for k in range(trials)]
        worst = max(worst, float(np.mean(errors)))
    return CEILING_MARGIN * worst


class HadamardQuantizer(Compressor):
    scheme_id = SchemeId.HADAMARD_SQ
    name = 'hadamard_sq'

    def __init__(self, bits: int):
        self.bits = stochastic._check_bits(bits)

    @property
    def bits_per_coordinate(self):
        return float(self.bits)

    def _params(self):
        return [self.bits]

    def _encode(self, x, seed):
        return stochastic.hadamard_sq_encode(x, self.bits, seed)

    def contract(self, d):
        return CompressorContract(unbiased=True, nmse_bound=measured_nmse_ceiling(self.spec, d))


class QsgdCompressor(Compressor):
    scheme_id = SchemeId.QSGD
    name = 'qsgd'

    def __init__(self, levels: int):
        self.levels = int(levels)
        if self.levels < 1:
            raise CodecError(f"QSGD needs at least one level, got {levels}")

    @property
    def bits_per_coordinate(self):
        # sign plus a fixed-width level index
        return 1.0 + math.ceil(math.log2(self.levels + 1))

    def _params(self):
        return [self.levels]

    def _encode(self, x, seed):
        return stochastic.qsgd_encode(x, self.levels, seed)

    def contract(self, d):
        s = self.levels
        return CompressorContract(unbiased=True, nmse_bound=min(d / s ** 2, math.sqrt(d) / s))


class RandKCompressor(Compressor):
    scheme_id = SchemeId.RANDK
    name = 'randk'

    def __init__(self, fraction: float):
        if not 0 < fraction <= 1:
            raise CodecError(f"rand-K fraction must lie in (0, 1], got {fraction}")
        self.fraction = float(fraction)

    @property
    def bits_per_coordinate(self):
        return 32.0 * self.fraction

    def _params(self):
        return [self.fraction]

    def _encode(self, x, seed):
        d = np.asarray(x).size
        return stochastic.randk_encode(x, _count(self.fraction, d), seed)

    def contract(self, d):
        return CompressorContract(unbiased=True, nmse_bound=d / _count(self.fraction, d) - 1.0)


class TopKCompressor(Compressor):
    scheme_id = SchemeId.TOPK
    name = 'topk'

    def __init__(self, fraction: float):
        if not 0 < fraction <= 1:
            raise CodecError(f"top-K fraction must lie in (0, 1], got {fraction}")
        self.fraction = float(fraction)

    @property
    def bits_per_coordinate(self):
        return 32.0 * self.fraction

    def _params(self):
        return [self.fraction]

    def _encode(self, x, seed):
        d = np.asarray(x).size
        return stochastic.topk_encode(x, _count(self.fraction, d))

    def contract(self, d):
        return CompressorContract(unbiased=False, nmse_bound=1.0 - _count(self.fraction, d) / d)


class SparseQuantizer(Compressor):
    """rand-K mask followed by Hadamard+SQ; reaches sub-bit budgets"""

    scheme_id = SchemeId.SPARSE_SQ
    name = 'sparse_sq'

    def __init__(self, fraction: float, bits: int):
        if not 0 < fraction <= 1:
            raise CodecError(f"sparse SQ fraction must lie in (0, 1], got {fraction}")
        self.fraction = float(fraction)
        self.bits = stochastic._check_bits(bits)

    @property
    def bits_per_coordinate(self):
        return self.fraction * self.bits

    def _params(self):
        return [self.fraction, self.bits]

    def _encode(self, x, seed):
        d = np.asarray(x).size
        return stochastic.sparse_sq_encode(x, _count(self.fraction, d), self.bits, seed)

    def contract(self, d):
        return CompressorContract(unbiased=True, nmse_bound=measured_nmse_ceiling(self.spec, d))


class MultiplicativeNoise(Compressor):
    """x + eps|x| with eps = +/- omega; a synthetic compressor with NMSE omega^2"""

    scheme_id = SchemeId.NOISE
    name = 'noise'
    bits_per_coordinate = 32.0

    def __init__(self, omega: float):
        if omega < 0:
            raise CodecError(f"noise level must be non-negative, got {omega}")
        self.omega = float(omega)

    def _params(self):
        return [self.omega]

    def _encode(self, x, seed):
        return stochastic.noise_encode(x, self.omega, seed)

    def contract(self, d):
        return CompressorContract(unbiased=True, nmse_bound=self.omega ** 2)


# ----- Registry -----

_DECODERS = {
    SchemeId.IDENTITY: decode_raw,
    SchemeId.ECUQ: quantization.ecuq_decode,
    SchemeId.SQ: stochastic.stochastic_dequantize,
    SchemeId.HADAMARD_SQ: stochastic.hadamard_sq_decode,
    SchemeId.QSGD: stochastic.qsgd_decode,
    SchemeId.RANDK: stochastic.sparse_decode,
    SchemeId.TOPK: stochastic.sparse_decode,
    SchemeId.HUFFMAN: huffman_decode,
    SchemeId.SPARSE_SQ: stochastic.sparse_sq_decode,
    SchemeId.NOISE: stochastic.noise_decode,
}

# name -> (class, parameter parsers)
REGISTRY = {
    'identity': (IdentityCompressor, []),
    'ecuq': (EcuqCompressor, [int, float]),
    'sq': (StochasticQuantizer, [int]),
    'hadamard_sq': (HadamardQuantizer, [int]),
    'qsgd': (QsgdCompressor, [int]),
    'randk': (RandKCompressor, [float]),
    'topk': (TopKCompressor, [float]),
    'sparse_sq': (SparseQuantizer, [float, int]),
    'noise': (MultiplicativeNoise, [float]),
}

_REQUIRED = {
    'identity': 0, 'ecuq': 1, 'sq': 1, 'hadamard_sq': 1, 'qsgd': 1,
    'randk': 1, 'topk': 1, 'sparse_sq': 2, 'noise': 1,
}


def decode_blob(blob: EncodedBlob) -> np.ndarray:
    """Decode any registered blob using only its own side information."""
    try:
        decoder = _DECODERS[blob.scheme_id]
    except KeyError as e:
        raise CodecError(f"no decoder for scheme {blob.scheme_id}") from e
    out = decoder(blob)
    if out.size != blob.d:
        raise CodecError(f"decoded {out.size} coordinates, blob declares {blob.d}")
    return out


def make_compressor(spec: str) -> Compressor:
    """
    Build a compressor from a spec string.

    Examples: ``identity``, ``ecuq:4``, ``ecuq:4:0.05``, ``sq:2``,
    ``hadamard_sq:2``, ``qsgd:4``, ``randk:0.1``, ``topk:0.1``,
    ``sparse_sq:0.25:2``, ``noise:0.5``.
    """
    if isinstance(spec, Compressor):
        return spec
    parts = [p.strip() for p in str(spec).strip().split(':')]
    name, raw = parts[0].lower(), parts[1:]
    if name not in REGISTRY:
        raise CodecError(f"unknown compression scheme '{name}' (known: {', '.join(sorted(REGISTRY))})")
    cls, parsers = REGISTRY[name]
    if not _REQUIRED[name] <= len(raw) <= len(parsers):
        raise CodecError(f"scheme '{name}' takes {_REQUIRED[name]}..{len(parsers)} parameters, got {len(raw)}")
    try:
        args = [parse(value) for parse, value in zip(parsers, raw)]
    except ValueError as e:
        raise CodecError(f"bad parameter in '{spec}': {e}") from e
    return cls(*args)
