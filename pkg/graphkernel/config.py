"""
Configuration management for the graph kernel reconstruction toolkit
"""
from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Toolkit settings loaded from environment variables (prefix GRAPHKERNEL_)"""

    model_config = SettingsConfigDict(
        env_prefix="GRAPHKERNEL_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Harness workers (GRAPHKERNEL_THREADS)
    threads: int = 1

    # Numerical tolerances
    pinv_tol: float = 1e-12  # relative threshold for pseudo-inverses
    jitter_scale: float = 1e-12  # diagonal jitter factor (times trace/n) on PD retry

    # Reproducibility
    default_seed: int = 0

    # Report store
    # For local use: sqlite:///./graphkernel.db
    database_url: str = "sqlite:///./graphkernel.db"

    # Server
    host: str = "0.0.0.0"
    port: int = 8000
    debug: bool = False

    # Environment
    environment: str = "development"  # "development" or "production"
    log_level: str = "INFO"


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance"""
    return Settings()
