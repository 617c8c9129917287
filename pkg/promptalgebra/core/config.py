from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Literal
import os

class Settings(BaseSettings):
    """Application settings"""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="PROMPTALGEBRA_",
        case_sensitive=False,
        extra="ignore",
    )

    # Application
    app_name: str = "Prompt Algebra"
    app_version: str = "1.0.0"
    log_level: str = "INFO"

    # Scoring model
    logit_scale: float = 100.0
    encoder_weight: Literal["identity", "orthogonal"] = "identity"

    # Eigenspace
    energy_fraction: float = 0.90
    eigensolver: Literal["jacobi", "lapack"] = "jacobi"
    jacobi_tolerance: float = 1e-12
    jacobi_max_sweeps: int = 100

    # Outputs
    hashed_filenames: bool = False
    plot_sweeps: bool = True
    tsv_float_format: str = "%.6f"

# Global settings instance
settings = Settings()

def load_settings():
    """Refresh settings from the environment (and .env)"""
    fresh = Settings()
    for name in Settings.model_fields:
        setattr(settings, name, getattr(fresh, name))

    # DEBUG=true wins over PROMPTALGEBRA_LOG_LEVEL
    if os.getenv("DEBUG", "false").lower() == "true":
        settings.log_level = "DEBUG"
