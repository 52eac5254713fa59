from typing import Literal

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    log_level: str = Field(default="INFO", description="Root log level")
    log_json: bool = Field(default=True, description="Emit structured JSON log lines on stderr")

    # Simulation engine
    n_jobs: int = Field(default=1, description="joblib worker count for replicate loops")
    max_failure_rate: float = Field(default=0.01, ge=0.0, le=1.0, description="Abort threshold for failed replicates")

    # Estimation
    variance_form: Literal["printed", "linearized"] = Field(
        default="printed",
        description="Integrand used for the standardized AH variance; linearized is opt-in",
    )
    default_alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    default_unit_scale: Literal[1, 100] = Field(default=100, description="Display rates per this many person-months")
    risk_set_dominance_threshold: float = Field(
        default=0.5, gt=0.0, le=1.0,
        description="Warn when one jump carries more than this share of a variance sum",
    )

    # Tracing
    enable_tracing: bool = Field(default=False, description="Wrap analyze/simulate in OpenTelemetry spans")

    model_config = SettingsConfigDict(env_prefix="STRATAH_", env_file=".env", env_file_encoding="utf-8", extra="ignore")


settings = Settings()
