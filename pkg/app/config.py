"""Process-level settings"""
from typing import Literal
from pydantic_settings import BaseSettings, SettingsConfigDict


class RuntimeSettings(BaseSettings):
    LOG_LEVEL: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    OUTPUT_DIR: str = "runs"
    MAX_WORKERS: int = 1  # threads for independent LTV windows / sweep cells

    model_config = SettingsConfigDict(env_file=".env", extra="ignore")


settings = RuntimeSettings()
