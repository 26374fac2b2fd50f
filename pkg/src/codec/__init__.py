"""
Vector compression codecs with exact bit accounting.
"""

from src.codec.blob import EncodedBlob, SchemeId, as_dense_vector, read_blob_stream, write_blob_stream
from src.codec.compressors import (
    Compressor,
    CompressorContract,
    REGISTRY,
    decode_blob,
    make_compressor,
    measured_nmse_ceiling,
    nmse,
)
from src.codec.huffman import huffman_decode, huffman_encode
from src.codec.quantization import (
    EmpiricalDensity,
    QuantizationGrid,
    ecuq_decode,
    ecuq_encode,
    ecuq_grid,
    empirical_density,
    entropy_bits,
    select_level_count,
    uniform_quantize,
)
from src.codec.stochastic import (
    hadamard_invert,
    hadamard_precondition,
    qsgd_decode,
    qsgd_encode,
    randk_encode,
    sparse_decode,
    stochastic_dequantize,
    stochastic_quantize,
    topk_encode,
)

__all__ = [
    'Compressor', 'CompressorContract', 'EmpiricalDensity', 'EncodedBlob', 'QuantizationGrid',
    'REGISTRY', 'SchemeId', 'as_dense_vector', 'decode_blob', 'ecuq_decode', 'ecuq_encode',
    'ecuq_grid', 'empirical_density', 'entropy_bits', 'hadamard_invert', 'hadamard_precondition',
    'huffman_decode', 'huffman_encode', 'make_compressor', 'measured_nmse_ceiling', 'nmse',
    'qsgd_decode', 'qsgd_encode', 'randk_encode', 'read_blob_stream', 'select_level_count',
    'sparse_decode', 'stochastic_dequantize', 'stochastic_quantize', 'topk_encode',
    'uniform_quantize', 'write_blob_stream',
]
