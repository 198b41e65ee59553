"""
Configuration management for MVQA
Loads environment settings and provides model, training and generator configuration
"""

import copy
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from core.errors import ConfigError

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Process settings loaded from environment variables (prefix MVQA_)"""

    APP_NAME: str = "MVQA"
    APP_VERSION: str = "1.0.0"
    LOG_LEVEL: str = "INFO"

    # Where CLI commands write runs, datasets and exports by default
    ARTIFACT_DIR: str = "./artifacts"

    # Numerics
    DEFAULT_PRECISION: Literal["float32", "float64"] = "float32"
    DETECT_ANOMALY: bool = False

    # Gradient suite
    GRADCHECK_SEEDS: int = Field(default=100, ge=1)

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="MVQA_",
        case_sensitive=True,
        extra="ignore",
    )


# Global settings instance with graceful fallback
try:
    settings = Settings()
except ValidationError as e:
    logger.warning(f"Invalid MVQA_* environment settings, using defaults: {e}")
    settings = Settings.model_construct()


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

class ModelConfig(BaseModel):
    """Architecture hyperparameters"""

    model_config = ConfigDict(extra="forbid")

    # Image encoder
    image_size: int = Field(default=64, ge=1)
    patch_size: int = Field(default=8, ge=1)
    channels: int = Field(default=3, ge=1)

    # Shared width and attention stacks
    d_model: int = Field(default=32, ge=1)
    num_heads: int = Field(default=2, ge=1)
    ffn_mult: int = Field(default=2, ge=1)
    encoder_layers: int = Field(default=2, ge=1)
    max_question_len: int = Field(default=24, ge=2)

    # QQ-Former
    num_queries: int = Field(default=32, ge=1)
    qformer_layers: int = Field(default=2, ge=1)

    # Cross-modal Mamba stack
    d_state: int = Field(default=8, ge=1)
    expand: int = Field(default=2, ge=1)
    conv_width: int = Field(default=4, ge=1)
    dt_rank: Optional[int] = Field(default=None, ge=1)
    cmm_blocks: int = Field(default=2, ge=1)
    partner_pooling: Literal["mean", "identity"] = "mean"

    # Auxiliary decoder
    decoder_layers: int = Field(default=2, ge=1)
    max_answer_len: int = Field(default=8, ge=2)

    ln_eps: float = Field(default=1e-5, gt=0)
    mask_eps: float = Field(default=1e-6, gt=0)

    @model_validator(mode="after")
    def _check_divisibility(self) -> "ModelConfig":
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}"
            )
        if self.d_model % self.num_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} is not divisible by num_heads {self.num_heads}"
            )
        return self

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model

    @property
    def resolved_dt_rank(self) -> int:
        return self.dt_rank or max(1, -(-self.d_model // 16))

    @property
    def num_patches(self) -> int:
        side = self.image_size // self.patch_size
        return side * side

    @property
    def patch_grid(self) -> int:
        return self.image_size // self.patch_size


class TrainConfig(BaseModel):
    """Optimizer, loss weights, module toggles and seed"""

    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(default=1e-3, gt=0)
    epochs: int = Field(default=50, ge=1)
    batch_size: int = Field(default=8, ge=1)

    alpha: float = Field(default=0.2, ge=0)
    beta: float = Field(default=0.3, ge=0)
    tau: float = Field(default=0.07, gt=0)

    weight_decay: float = Field(default=0.01, ge=0)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)

    seed: int = 0
    precision: Literal["float32", "float64"] = "float32"

    # Ablation toggles
    use_qqformer: bool = True
    use_cmcl: bool = True
    use_cmm: bool = True
    use_ahead: bool = True

    model: ModelConfig = Field(default_factory=ModelConfig)

    @property
    def effective_alpha(self) -> float:
        return self.alpha if self.use_cmcl else 0.0

    @property
    def effective_beta(self) -> float:
        return self.beta if self.use_ahead else 0.0

    def config_hash(self) -> str:
        """Stable hash of the canonical JSON form"""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def toggle_label(self) -> str:
        names = [
            ("QQ-Former", self.use_qqformer),
            ("CMCL", self.use_cmcl),
            ("CMM", self.use_cmm),
            ("AHead", self.use_ahead),
        ]
        active = [name for name, on in names if on]
        return "+".join(active) if active else "none"


class GeneratorConfig(BaseModel):
    """Synthetic scene dataset inventory and split sizes"""

    model_config = ConfigDict(extra="forbid")

    image_size: int = Field(default=64, ge=8)
    shapes: List[str] = Field(default_factory=lambda: ["square", "circle", "triangle"])
    colors: List[str] = Field(default_factory=lambda: ["red", "green", "blue", "yellow"])
    positions: List[str] = Field(
        default_factory=lambda: ["upper left", "upper right", "lower left", "lower right"]
    )
    min_objects: int = Field(default=1, ge=1)
    max_objects: int = Field(default=3, ge=1)

    train_count: int = Field(default=512, ge=0)
    val_count: int = Field(default=64, ge=0)
    test_count: int = Field(default=128, ge=0)
    open_fraction: float = 0.5

    # Difficulty knobs
    noise_level: float = Field(default=0.05, ge=0)
    position_jitter: int = Field(default=3, ge=0)

    @field_validator("open_fraction")
    @classmethod
    def _check_open_fraction(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"open_fraction must lie in [0, 1], got {value}")
        return value

    @model_validator(mode="after")
    def _check_inventory(self) -> "GeneratorConfig":
        if self.image_size % 2 != 0:
            raise ValueError("image_size must be even (scenes use a 2x2 position grid)")
        if len(self.positions) != 4:
            raise ValueError("exactly four grid positions are supported")
        if self.max_objects < self.min_objects or self.max_objects > len(self.positions):
            raise ValueError(
                f"object count range [{self.min_objects}, {self.max_objects}] does not fit "
                f"{len(self.positions)} positions"
            )
        if not self.shapes or not self.colors:
            raise ValueError("shape and color inventories must be non-empty")
        return self

    @property
    def split_counts(self) -> Dict[str, int]:
        return {"train": self.train_count, "val": self.val_count, "test": self.test_count}


# ---------------------------------------------------------------------------
# Presets and key=value config files
# ---------------------------------------------------------------------------

PRESETS: Dict[str, Dict[str, Any]] = {
    "toy": {},
    "paper": {
        "learning_rate": 5e-6,
        "model": {
            "image_size": 384,
            "patch_size": 16,
            "d_model": 768,
            "num_heads": 12,
            "encoder_layers": 12,
            "max_question_len": 32,
            "num_queries": 32,
            "decoder_layers": 12,
            "d_state": 16,
        },
    },
}


def _coerce(value: str) -> Any:
    lowered = value.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    return value


def parse_key_values(lines: List[str], source: str = "<config>") -> Dict[str, Any]:
    """Parse `key=value` lines into a nested dict (dotted keys nest)"""
    result: Dict[str, Any] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        target = result
        *parents, leaf = key.split(".")
        for parent in parents:
            target = target.setdefault(parent, {})
            if not isinstance(target, dict):
                raise ConfigError(f"{source}:{lineno}: {parent} is not a section")
        target[leaf] = _coerce(value)
    return result


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_key_values(path.read_text(encoding="utf-8").splitlines(), source=str(path))


def _deep_merge(base: Dict[str, Any], overlay: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def build_train_config(
    preset: str = "toy",
    *overlays: Optional[Dict[str, Any]],
) -> TrainConfig:
    """Preset, then each overlay in order (config file, CLI flags)"""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    merged: Dict[str, Any] = PRESETS[preset]
    for overlay in overlays:
        if overlay:
            merged = _deep_merge(merged, overlay)
    try:
        return TrainConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"invalid training configuration: {e}") from e


def build_generator_config(overlay: Optional[Dict[str, Any]] = None) -> GeneratorConfig:
    try:
        return GeneratorConfig.model_validate(overlay or {})
    except ValidationError as e:
        raise ConfigError(f"invalid generator configuration: {e}") from e


def flatten_config(config: BaseModel) -> List[str]:
    """Inverse of parse_key_values for one model: sorted dotted key=value lines"""
    lines: List[str] = []

    def walk(prefix: str, value: Any) -> None:
        if isinstance(value, dict):
            for key in sorted(value):
                walk(f"{prefix}{key}.", value[key])
        elif value is not None:
            rendered = json.dumps(value) if isinstance(value, list) else str(value)
            lines.append(f"{prefix[:-1]}={rendered}")

    walk("", config.model_dump(mode="json"))
    return lines
