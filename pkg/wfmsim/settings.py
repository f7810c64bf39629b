import os

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings read from WFMSIM_* environment variables or a .env file."""

    model_config = SettingsConfigDict(
        env_prefix="WFMSIM_",
        env_file=os.path.join(os.path.dirname(__file__), ".env"),
        env_file_encoding="utf-8",
        extra="ignore",
    )

    log_level: str = "INFO"
    output_dir: str = "out"
    parallel: int = Field(default=1, ge=1)
    reference_seeds: int = Field(default=50, ge=1)
    service_host: str = "0.0.0.0"
    service_port: int = 7002


settings = Settings()
