"""
Configuration management for CT Restore.
Loads process-level settings from environment variables via pydantic-settings.
Experiment parameters live in run files (see app.pipeline.config).
"""

import os
from functools import lru_cache
from typing import Literal

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(env_file=".env", extra="ignore")

    # Logging
    LOG_LEVEL: str = "INFO"
    DEBUG: bool = False

    # Execution
    THREADS: int = 0  # 0 = available parallelism
    PRECISION: Literal["float32", "float64"] = "float32"

    # Output
    OUTPUT_DIR: str = "runs"
    PROGRESS_BARS: bool = True


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


def resolve_threads(requested: int = 0) -> int:
    """Worker count for kernels: explicit request, then THREADS, then CPU count."""
    if requested and requested > 0:
        return requested
    if settings.THREADS > 0:
        return settings.THREADS
    return os.cpu_count() or 1


# Global settings instance
settings = get_settings()
