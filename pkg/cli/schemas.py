"""
Pydantic schemas for command-line configuration
"""
from typing import Any, Dict, Iterable, Mapping, Optional

from pydantic import ConfigDict, Field, ValidationError

from core.exceptions import ConfigurationError
from core.models.settings import CkanSettings, DataSettings, GeneratorConfig, Settings, TrainConfig
from core.utils.config_file import flatten, merge_sources, nest


class CliConfig(Settings):
    """Every setting a command can read, addressed as section.key"""
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    ckan: CkanSettings = Field(default_factory=CkanSettings)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataSettings = Field(default_factory=DataSettings)

    model_config = ConfigDict(
        extra="forbid",
        validate_assignment=True,
        json_schema_extra={
            "example": {
                "ckan": {"chunk_pixels": 1024},
                "train": {"epochs": 2, "loss": {"lambda_adv": 0.001}},
            }
        },
    )

    @classmethod
    def from_flat(cls, flat: Mapping[str, Any]) -> "CliConfig":
        """Validate a dotted-key mapping; unknown keys raise ConfigurationError"""
        try:
            return cls.model_validate(nest(flat))
        except ValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(part) for part in err['loc'])}: {err['msg']}" for err in e.errors()
            )
            raise ConfigurationError(f"Invalid configuration: {problems}") from e

    @classmethod
    def load(cls, path=None, overrides: Optional[Iterable[str]] = None,
             environ: Optional[Mapping[str, str]] = None) -> "CliConfig":
        return cls.from_flat(merge_sources(path, overrides, environ))

    def effective(self) -> Dict[str, Any]:
        """Flat key -> value view for the log header"""
        return flatten(self.model_dump(mode="json"))
