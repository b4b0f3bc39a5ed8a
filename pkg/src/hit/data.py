"""Paired video/text datasets: synthetic generation and HITF feature files.

HITF layout (all integers little-endian)::

    b"HITF" | u8 version=1 | u8 dtype | u32 ndims | ndims x u32 extents | payload

dtype 1 is IEEE-754 float64, dtype 2 is u32 (token ids). The payload is the
array in row-major order. Video feature files are 4-D ``[N, experts,
tokens_per_expert, dim]`` with all-NaN rows marking empty slots; token files
are 2-D ``[N, max_words]`` with id 0 as padding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import NUM_SPECIAL, EncoderConfig, TextInput, VisualInput, pack_text, pack_video
from .errors import (
    BadMagicError,
    DimensionOverflowError,
    FormatError,
    InputError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

MAGIC = b"HITF"
VERSION = 1
DTYPE_F64 = 1
DTYPE_U32 = 2
_DTYPES = {DTYPE_F64: np.dtype("<f8"), DTYPE_U32: np.dtype("<u4")}
MAX_DIMS = 8
MAX_ELEMENTS = 1 << 36


def encode_array(array: np.ndarray, dtype: int | None = None) -> bytes:
    array = np.asarray(array)
    if dtype is None:
        dtype = DTYPE_U32 if np.issubdtype(array.dtype, np.integer) else DTYPE_F64
    if dtype not in _DTYPES:
        raise ValueError(f"unknown HITF dtype {dtype}")
    if array.ndim > MAX_DIMS:
        raise ValueError(f"HITF supports at most {MAX_DIMS} dims")
    header = MAGIC + struct.pack("<BBI", VERSION, dtype, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes()


def decode_array(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}", 0)
    if len(buf) < 10:
        raise TruncatedPayloadError(f"header needs 10 bytes, file has {len(buf)}", len(buf))
    version, dtype, ndims = struct.unpack_from("<BBI", buf, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", 4)
    if dtype not in _DTYPES:
        raise FormatError(f"unknown dtype code {dtype}", 5)
    if ndims > MAX_DIMS:
        raise DimensionOverflowError(f"{ndims} dimensions exceeds limit {MAX_DIMS}", 6)
    header_end = 10 + 4 * ndims
    if len(buf) < header_end:
        raise TruncatedPayloadError(
            f"expected {header_end} header bytes, got {len(buf)}", len(buf)
        )
    shape = struct.unpack_from(f"<{ndims}I", buf, 10)
    count = 1
    for i, extent in enumerate(shape):
        count *= extent
        if count > MAX_ELEMENTS:
            raise DimensionOverflowError(
                f"extents {shape} exceed {MAX_ELEMENTS} elements", 10 + 4 * i
            )
    itemsize = _DTYPES[dtype].itemsize
    expected = count * itemsize
    actual = len(buf) - header_end
    if actual < expected:
        raise TruncatedPayloadError(
            f"expected {expected} payload bytes, got {actual}", header_end + actual
        )
    if actual > expected:
        raise FormatError(f"{actual - expected} trailing bytes after payload", header_end + expected)
    out = np.frombuffer(buf, dtype=_DTYPES[dtype], count=count, offset=header_end).reshape(shape)
    return out.astype(np.float64 if dtype == DTYPE_F64 else np.int64)


def write_feature_file(path, array: np.ndarray, dtype: int | None = None) -> None:
    Path(path).write_bytes(encode_array(array, dtype))


def load_feature_file(path) -> np.ndarray:
    return decode_array(Path(path).read_bytes())


@dataclass
class PairedData:
    """Index-aligned videos and captions.

    ``video`` is ``[N, experts, tokens_per_expert, dim]`` with ``video_valid``
    marking filled slots; captions are word-id lists without [CLS]/[END].
    """

    video: np.ndarray
    video_valid: np.ndarray
    captions: list[list[int]] = field(default_factory=list)

    def __len__(self):
        return self.video.shape[0]

    def subset(self, idx) -> "PairedData":
        idx = np.asarray(idx)
        return PairedData(self.video[idx], self.video_valid[idx], [self.captions[i] for i in idx])

    def split(self, holdout_fraction: float = 0.25) -> tuple["PairedData", "PairedData"]:
        """Last ``holdout_fraction`` of pairs by index are held out."""
        n = len(self)
        n_test = int(round(n * holdout_fraction))
        return self.subset(np.arange(n - n_test)), self.subset(np.arange(n - n_test, n))

    def video_inputs(self, config: EncoderConfig) -> VisualInput:
        raw = [
            [self.video[b, e][self.video_valid[b, e]] for e in range(self.video.shape[1])]
            for b in range(len(self))
        ]
        return pack_video(raw, config)

    def text_inputs(self, config: EncoderConfig, max_words: int) -> TextInput:
        length = min(config.max_seq, max_words + 2)
        return pack_text(self.captions, config, max_words=max_words, length=length)

    def to_files(self, video_path, text_path) -> None:
        video = np.where(self.video_valid[..., None], self.video, np.nan)
        width = max(len(c) for c in self.captions)
        tokens = np.zeros((len(self), width), dtype=np.int64)
        for i, c in enumerate(self.captions):
            tokens[i, : len(c)] = c
        write_feature_file(video_path, video, DTYPE_F64)
        write_feature_file(text_path, tokens, DTYPE_U32)

    @classmethod
    def from_files(cls, video_path, text_path) -> "PairedData":
        video = load_feature_file(video_path)
        tokens = load_feature_file(text_path)
        if video.ndim != 4:
            raise InputError(f"video feature file must be 4-D, got shape {video.shape}")
        if tokens.ndim != 2:
            raise InputError(f"token file must be 2-D, got shape {tokens.shape}")
        if len(video) != len(tokens):
            raise InputError(f"{len(video)} videos but {len(tokens)} captions")
        valid = ~np.isnan(video).all(axis=-1)
        captions = [[int(t) for t in row if t != 0] for row in tokens]
        return cls(np.nan_to_num(video), valid, captions)


@dataclass(frozen=True)
class SyntheticSpec:
    num_pairs: int = 128
    latent_dim: int = 16
    video_noise: float = 0.05
    text_noise: float = 0.05
    num_experts: int = 2
    tokens_per_expert: int = 4
    input_dim: int = 32
    max_filler_words: int = 2
    filler_vocab: int = 4
    bins: int = 3

    def __post_init__(self):
        if self.video_noise < 0 or self.text_noise < 0:
            raise InputError("noise scales must be non-negative")
        if self.max_filler_words < 0 or (self.max_filler_words and self.filler_vocab < 1):
            raise InputError("filler words need a non-empty filler vocabulary")

    @property
    def vocab_size(self) -> int:
        return NUM_SPECIAL + self.latent_dim * self.bins + self.filler_vocab

    @property
    def max_words(self) -> int:
        return self.latent_dim + self.max_filler_words


def _bin_edges(bins: int) -> np.ndarray:
    """Equiprobable bin edges for a standard normal variable."""
    from scipy.stats import norm

    return norm.ppf(np.arange(1, bins) / bins)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> PairedData:
    """Pairs sharing a Gaussian latent ``z``.

    Each expert's rows are ``A_e @ z`` plus noise. A caption holds one word per
    latent component, ``3 + j * bins + q`` for component ``j`` falling in
    quantile bin ``q``, plus up to ``max_filler_words`` uninformative filler
    words, all in random order. Caption lengths therefore vary.
    """
    rng = np.random.default_rng(seed)
    n, k = spec.num_pairs, spec.latent_dim
    z = rng.normal(size=(n, k))
    mixing = rng.normal(size=(spec.num_experts, spec.input_dim, k)) / np.sqrt(k)
    clean = np.einsum("edk,nk->ned", mixing, z)
    video = clean[:, :, None, :] + spec.video_noise * rng.normal(
        size=(n, spec.num_experts, spec.tokens_per_expert, spec.input_dim)
    )
    valid = np.ones(video.shape[:3], dtype=bool)

    edges = _bin_edges(spec.bins)
    quant = np.searchsorted(edges, z + spec.text_noise * rng.normal(size=z.shape))
    filler_base = NUM_SPECIAL + k * spec.bins
    captions = []
    for i in range(n):
        words = [NUM_SPECIAL + j * spec.bins + int(quant[i, j]) for j in range(k)]
        n_fill = int(rng.integers(0, spec.max_filler_words + 1))
        words += [filler_base + int(f) for f in rng.integers(0, spec.filler_vocab, size=n_fill)]
        captions.append([words[p] for p in rng.permutation(len(words))])
    return PairedData(video, valid, captions)
