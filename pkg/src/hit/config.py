"""Run configuration: a flat dataclass read from ``key = value`` text files."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .data import SyntheticSpec
from .encoders import NUM_SPECIAL, EncoderConfig
from .errors import ConfigError
from .heads import AGGREGATIONS

LOSSES = ("infonce", "triplet")
KEY_SOURCES = ("momentum", "query")


@dataclass
class RunConfig:
    seed: int = 7
    batch_size: int = 32
    epochs: int = 20
    lr: float = 1e-3
    weight_decay: float = 1e-2
    temperature: float = 0.07
    alpha: float = 1.0
    beta: float = 1.0
    momentum: float = 0.95
    bank_size_video: int = 512
    bank_size_text: int = 512
    # text_layer:video_layer pairs, -1 is the last block
    levels: str = "1:1,-1:-1"
    aggregation: str = "mean"
    loss: str = "infonce"
    margin: float = 0.2
    key_encoder_source: str = "momentum"
    fusion_weights: str = ""

    video_layers: int = 2
    video_heads: int = 4
    video_hidden: int = 64
    video_intermediate: int = 64
    text_layers: int = 2
    text_heads: int = 4
    text_hidden: int = 64
    text_intermediate: int = 64
    max_words: int = 25
    proj_hidden: int = 256
    out_dim: int = 64

    data_source: str = "synthetic"
    video_file: str = ""
    text_file: str = ""
    holdout_fraction: float = 0.25
    num_pairs: int = 128
    latent_dim: int = 16
    noise: float = 0.05
    num_experts: int = 2
    tokens_per_expert: int = 4
    input_dim: int = 32
    max_filler_words: int = 2
    filler_vocab: int = 4
    quant_bins: int = 3
    # 0 derives the vocabulary from the synthetic generator
    vocab_size: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        for name in ("bank_size_video", "bank_size_text"):
            k = getattr(self, name)
            if k < 0 or (k and k % self.batch_size):
                raise ConfigError(f"{name}={k} must be 0 or a multiple of batch_size={self.batch_size}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")
        if self.key_encoder_source not in KEY_SOURCES:
            raise ConfigError(f"key_encoder_source must be one of {KEY_SOURCES}")
        if self.data_source not in ("synthetic", "files"):
            raise ConfigError("data_source must be 'synthetic' or 'files'")
        if self.data_source == "files" and not (self.video_file and self.text_file):
            raise ConfigError("data_source=files needs video_file and text_file")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in (0, 1)")
        taps = self.level_taps
        for text_layer, video_layer in taps:
            for layer, depth, name in ((text_layer, self.text_layers, "text"), (video_layer, self.video_layers, "video")):
                if not (1 <= layer <= depth or -depth <= layer <= -1):
                    raise ConfigError(f"{name} tap {layer} outside encoder depth {depth}")
        if len(self.fusion) != len(taps):
            raise ConfigError(f"{len(self.fusion)} fusion weights for {len(taps)} levels")
        self.video_encoder_config(32)
        self.text_encoder_config()

    @property
    def level_taps(self) -> list[tuple[int, int]]:
        try:
            pairs = [tuple(int(x) for x in item.split(":")) for item in self.levels.split(",") if item.strip()]
        except ValueError:
            raise ConfigError(f"cannot parse levels {self.levels!r}; expected e.g. '1:1,-1:-1'") from None
        if not pairs or any(len(p) != 2 for p in pairs):
            raise ConfigError(f"cannot parse levels {self.levels!r}; expected e.g. '1:1,-1:-1'")
        return pairs

    @property
    def level_weights(self) -> list[float]:
        """alpha on the first level, beta on the last, 1 on any level in between."""
        n = len(self.level_taps)
        if n == 1:
            return [1.0]
        return [self.alpha] + [1.0] * (n - 2) + [self.beta]

    @property
    def fusion(self) -> list[float]:
        if not self.fusion_weights.strip():
            return [1.0] * len(self.level_taps)
        try:
            return [float(x) for x in self.fusion_weights.split(",")]
        except ValueError:
            raise ConfigError(f"cannot parse fusion_weights {self.fusion_weights!r}") from None

    def video_encoder_config(self, input_dim: int | None = None) -> EncoderConfig:
        return EncoderConfig(
            num_layers=self.video_layers,
            num_heads=self.video_heads,
            hidden=self.video_hidden,
            intermediate=self.video_intermediate,
            max_seq=self.num_experts * self.tokens_per_expert + 2,
            num_experts=self.num_experts,
            tokens_per_expert=self.tokens_per_expert,
            input_dim=self.input_dim if input_dim is None else input_dim,
            cls_framing=self.aggregation == "cls",
        )

    def text_encoder_config(self) -> EncoderConfig:
        vocab = self.effective_vocab_size
        if vocab <= NUM_SPECIAL:
            raise ConfigError(f"vocab_size must exceed {NUM_SPECIAL}")
        return EncoderConfig(
            num_layers=self.text_layers,
            num_heads=self.text_heads,
            hidden=self.text_hidden,
            intermediate=self.text_intermediate,
            max_seq=self.max_words + 2,
            vocab_size=vocab,
        )

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            num_pairs=self.num_pairs,
            latent_dim=self.latent_dim,
            video_noise=self.noise,
            text_noise=self.noise,
            num_experts=self.num_experts,
            tokens_per_expert=self.tokens_per_expert,
            input_dim=self.input_dim,
            max_filler_words=self.max_filler_words,
            filler_vocab=self.filler_vocab,
            bins=self.quant_bins,
        )

    @property
    def effective_vocab_size(self) -> int:
        if self.vocab_size:
            return self.vocab_size
        if self.data_source == "synthetic":
            return self.synthetic_spec().vocab_size
        raise ConfigError("vocab_size must be set when reading token files")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def _convert(name: str, raw: str):
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    kind = types[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = _convert(key, value)
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file's values, then ``overrides`` (already typed or raw strings)."""
    values = parse_config_text(Path(path).read_text()) if path else {}
    for key, value in (overrides or {}).items():
        values[key] = _convert(key, value) if isinstance(value, str) else value
    return RunConfig(**values)
