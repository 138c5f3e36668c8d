"""Feature-map quantization and entropy coding.

The transmitted intermediate data is shrunk in two steps: min-max integer
quantization of the 32-bit feature map down to ``bits`` per element, then
Huffman coding of the resulting symbol stream. ``compressed_size`` combines
both to estimate the byte count actually sent over the link, including the
codebook the decoder needs.

Quantization maps x_i to round((L-1) * (x_i - min) / (max - min)) with
L = 2**bits levels by default. Rounding is half-away-from-zero (the scaled
values are never negative, so this is floor(v + 0.5)); the choice is pinned
so that encoded sizes and golden tests are reproducible.
"""

from __future__ import annotations

import heapq
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .profiles import ModelProfile

#: Bit widths the quantizer accepts unless the caller overrides the set.
DEFAULT_ALLOWED_BITS = (4, 8, 12, 16)

#: Scale of the half-normal component of synthetic feature maps.
SYNTH_SCALE = 1.0


class CodecError(Exception):
    """Raised when a Huffman bitstream cannot be decoded."""


@dataclass(frozen=True)
class QuantizedTensor:
    symbols: np.ndarray  # int64, each in [0, levels-1]
    vmin: float
    vmax: float
    bits: int
    levels: int

    @property
    def length(self) -> int:
        return int(self.symbols.size)


@dataclass(frozen=True)
class HuffmanCode:
    codebook: dict  # symbol -> bit string
    encoded: str  # concatenated bit string
    original_length: int


def quantize(x, bits, allowed_bits=DEFAULT_ALLOWED_BITS, levels=None) -> QuantizedTensor:
    """Min-max quantize ``x`` to integer symbols.

    ``levels`` defaults to 2**bits; passing ``bits + 1`` reproduces the
    alternative reading where the bit parameter counts quantization steps
    rather than width. A constant input maps every element to symbol 0.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot quantize an empty sequence")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    if allowed_bits is not None and bits not in allowed_bits:
        raise ValueError(f"bits={bits} not in allowed set {tuple(allowed_bits)}")
    if levels is None:
        levels = 2 ** int(bits)
    if levels < 2:
        raise ValueError(f"need at least 2 quantization levels, got {levels}")
    vmin = float(x.min())
    vmax = float(x.max())
    if vmax == vmin:
        symbols = np.zeros(x.shape, dtype=np.int64)
    else:
        scaled = (levels - 1) * (x - vmin) / (vmax - vmin)
        symbols = np.floor(scaled + 0.5).astype(np.int64)  # half away from zero
    return QuantizedTensor(symbols=symbols, vmin=vmin, vmax=vmax, bits=int(bits), levels=int(levels))


def dequantize(q: QuantizedTensor) -> np.ndarray:
    """Map symbols back to reals; exact at the range endpoints."""
    if q.vmax == q.vmin:
        return np.full(q.symbols.shape, q.vmin, dtype=np.float64)
    step = (q.vmax - q.vmin) / (q.levels - 1)
    return q.vmin + q.symbols.astype(np.float64) * step


def quantization_error_bound(vmin, vmax, bits, levels=None) -> float:
    """Worst-case absolute roundtrip error: half a quantization step."""
    if levels is None:
        levels = 2 ** int(bits)
    return (vmax - vmin) / (2.0 * (levels - 1))


def _code_lengths(freqs: dict) -> dict:
    """Huffman code length per symbol from a frequency table.

    Single-symbol alphabets get length 1 (the symbol is coded as "0"); the
    merge order is made deterministic with an insertion counter so equal
    frequencies always tie-break the same way.
    """
    if len(freqs) == 1:
        (sym,) = freqs
        return {sym: 1}
    heap = []
    counter = 0
    for sym in sorted(freqs):
        heap.append((freqs[sym], counter, {sym: 0}))
        counter += 1
    heapq.heapify(heap)
    while len(heap) > 1:
        f1, _, d1 = heapq.heappop(heap)
        f2, _, d2 = heapq.heappop(heap)
        merged = {s: d + 1 for s, d in d1.items()}
        merged.update({s: d + 1 for s, d in d2.items()})
        heapq.heappush(heap, (f1 + f2, counter, merged))
        counter += 1
    return heap[0][2]


def _canonical_codebook(lengths: dict) -> dict:
    """Assign canonical prefix-free codes from code lengths."""
    order = sorted(lengths.items(), key=lambda kv: (kv[1], kv[0]))
    codebook = {}
    code = 0
    prev_len = 0
    for sym, length in order:
        code <<= length - prev_len
        codebook[sym] = format(code, f"0{length}b")
        code += 1
        prev_len = length
    return codebook


def huffman_encode(symbols) -> HuffmanCode:
    """Build an optimal prefix-free code for ``symbols`` and encode them."""
    symbols = np.asarray(symbols)
    if symbols.size == 0:
        raise ValueError("cannot encode an empty symbol sequence")
    freqs = Counter(symbols.tolist())
    codebook = _canonical_codebook(_code_lengths(freqs))
    encoded = "".join(map(codebook.__getitem__, symbols.tolist()))
    return HuffmanCode(codebook=codebook, encoded=encoded, original_length=int(symbols.size))


def huffman_decode(code: HuffmanCode) -> np.ndarray:
    """Invert huffman_encode exactly.

    A bitstream that ends mid-codeword, contains an impossible prefix, or
    carries bits beyond the last symbol raises CodecError rather than
    returning garbage.
    """
    decode_table = {v: k for k, v in code.codebook.items()}
    max_len = max((len(v) for v in code.codebook.values()), default=0)
    out = []
    buf = ""
    for bit in code.encoded:
        if bit not in "01":
            raise CodecError(f"invalid bit {bit!r} in encoded stream")
        buf += bit
        if buf in decode_table:
            out.append(decode_table[buf])
            buf = ""
            if len(out) > code.original_length:
                raise CodecError("bitstream decodes past the declared length")
        elif len(buf) > max_len:
            raise CodecError(f"prefix {buf!r} matches no codeword")
    if buf:
        raise CodecError("bitstream ends in the middle of a codeword")
    if len(out) != code.original_length:
        raise CodecError(
            f"decoded {len(out)} symbols, expected {code.original_length}"
        )
    return np.asarray(out, dtype=np.int64)


def codebook_overhead_bytes(alphabet_size: int, bits: int) -> int:
    """Bytes needed to ship the codebook alongside the payload.

    2 bytes for the alphabet size, then per entry the raw symbol
    (ceil(bits/8) bytes) and its canonical code length (1 byte). The decoder
    can rebuild the canonical codebook from exactly this.
    """
    return 2 + alphabet_size * (math.ceil(bits / 8) + 1)


def _encoded_bits_from_counts(counts: np.ndarray) -> tuple:
    """(total encoded bits, alphabet size) without materializing the stream."""
    nonzero = np.nonzero(counts)[0]
    freqs = {int(s): int(counts[s]) for s in nonzero}
    if not freqs:
        return 0, 0
    lengths = _code_lengths(freqs)
    total = sum(freqs[s] * lengths[s] for s in freqs)
    return total, len(freqs)


def compressed_size(x, bits, allowed_bits=DEFAULT_ALLOWED_BITS, levels=None) -> int:
    """Bytes on the wire after quantization plus Huffman coding.

    ceil(encoded bits / 8) plus the codebook overhead documented in
    codebook_overhead_bytes.
    """
    q = quantize(x, bits, allowed_bits=allowed_bits, levels=levels)
    counts = np.bincount(q.symbols, minlength=q.levels)
    total_bits, alphabet = _encoded_bits_from_counts(counts)
    return math.ceil(total_bits / 8) + codebook_overhead_bytes(alphabet, q.bits)


def synth_feature_map(n, sparsity, seed) -> np.ndarray:
    """Synthetic post-layer feature map for compression estimation.

    A mixture of a point mass at zero (probability ``sparsity``) and the
    half-normal magnitudes typical of the surviving values.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    values = np.abs(rng.normal(0.0, SYNTH_SCALE, size=n))
    if sparsity > 0.0:
        values[rng.random(n) < sparsity] = 0.0
    return values


def accuracy_after(
    profile: ModelProfile, exit_id: int, pp: int, bits: int, quantize_raw_input: bool = False
) -> float:
    """Classification accuracy of ``exit_id`` after a partition at ``pp``.

    The branch accuracy minus the tabulated quantization drop at
    (exit, pp, bits). No drop applies when nothing is quantized: a fully
    on-device partition transmits nothing, and a fully edge-side partition
    sends the raw input, which is only quantized when quantize_raw_input is
    set (and then only if the profile tabulates a drop for layer 0).
    """
    topo = profile.topology
    count = topo.layer_count(exit_id)
    if not 0 <= pp <= count:
        raise ValueError(f"partition point {pp} invalid for exit {exit_id} ({count} layers)")
    acc = topo.exit_accuracy(exit_id)
    if pp == count:
        return acc
    if pp == 0:
        if not quantize_raw_input:
            return acc
        drop = profile.quant_table.drops.get((exit_id, 0, bits), 0.0)
        return max(0.0, acc - drop)
    return max(0.0, acc - profile.quant_table.drop(exit_id, pp, bits))


class CompressionModel:
    """Estimated wire size of each layer's feature map at each bit width.

    The profile records only raw feature-map sizes, so compressibility is
    estimated on synthetic data: a map with the layer's sparsity is drawn
    (seeded per (layer, bits), independent of call order), quantized, and its
    Huffman-coded size measured. Maps larger than ``sample_cap`` elements are
    estimated from a capped sample and scaled, with the codebook overhead
    added at full size. Results are cached.
    """

    def __init__(self, profile: ModelProfile, seed: int = 0, sample_cap: int = 65536,
                 levels_of=None):
        self._profile = profile
        self._seed = seed
        self._cap = sample_cap
        self._levels_of = levels_of or (lambda bits: 2 ** bits)
        self._cache = {}

    def layer_payload_bytes(self, layer_index: int, bits: int) -> int:
        """Transmitted bytes for the output of 1-based ``layer_index``."""
        key = (layer_index, bits)
        if key in self._cache:
            return self._cache[key]
        layer = self._profile.topology.layers[layer_index - 1]
        n_elements = layer.output_bytes // 4  # profile sizes are 32-bit maps
        if n_elements == 0:
            self._cache[key] = 0
            return 0
        n_sample = min(n_elements, self._cap)
        data = synth_feature_map(
            n_sample,
            layer.effective_sparsity(),
            seed=(self._seed, layer_index, bits),
        )
        q = quantize(data, bits, allowed_bits=None, levels=self._levels_of(bits))
        counts = np.bincount(q.symbols, minlength=q.levels)
        payload_bits, alphabet = _encoded_bits_from_counts(counts)
        payload_bits = payload_bits * (n_elements / n_sample)
        size = math.ceil(payload_bits / 8) + codebook_overhead_bytes(alphabet, bits)
        self._cache[key] = size
        return size

    def raw_input_bytes(self, bits: int, quantize_raw_input: bool = False) -> int:
        """Bytes sent for a fully edge-side partition (the raw input)."""
        n_bytes = self._profile.topology.input_bytes
        if not quantize_raw_input:
            return n_bytes
        key = ("input", bits)
        if key in self._cache:
            return self._cache[key]
        n_elements = n_bytes // 4
        if n_elements == 0:
            self._cache[key] = 0
            return 0
        n_sample = min(n_elements, self._cap)
        data = synth_feature_map(n_sample, 0.0, seed=(self._seed, 0, bits))
        q = quantize(data, bits, allowed_bits=None, levels=self._levels_of(bits))
        counts = np.bincount(q.symbols, minlength=q.levels)
        payload_bits, alphabet = _encoded_bits_from_counts(counts)
        payload_bits = payload_bits * (n_elements / n_sample)
        size = math.ceil(payload_bits / 8) + codebook_overhead_bytes(alphabet, bits)
        self._cache[key] = size
        return size
