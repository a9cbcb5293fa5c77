"""Model hyperparameters."""

from __future__ import annotations

from dataclasses import dataclass

PROJ_LAYER_CHOICES = (1, 2, 3)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Sizes and rates of one city model.

    ``num_locations`` excludes the start token; the embedding table carries
    one extra row (id ``num_locations``) used only to seed generation.
    """

    num_locations: int
    hidden_dim: int = 96
    num_heads: int = 4
    num_layers: int = 2
    proj_layers: int = 2
    max_seq_len: int = 25
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.num_locations < 1:
            raise ConfigError("num_locations must be positive")
        if self.hidden_dim < 1 or self.num_heads < 1 or self.num_layers < 1:
            raise ConfigError("hidden_dim, num_heads and num_layers must be positive")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.proj_layers not in PROJ_LAYER_CHOICES:
            raise ConfigError(f"proj_layers must be in {PROJ_LAYER_CHOICES}")
        if self.max_seq_len < 1:
            raise ConfigError("max_seq_len must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @property
    def start_token_id(self) -> int:
        return self.num_locations
