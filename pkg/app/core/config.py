# app/core/config.py
import os
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field, field_validator


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"
    LOG_FILE: str = "logs/toolkit.log"
    LOG_TO_FILE: bool = True

    # default replicate-worker count; `--threads` wins
    THREADS: int = Field(1, ge=1)
    DEFAULT_SEED: int = Field(20240917, ge=0, lt=2**64)

    # chunk of replicates handed to one worker; fixed so results never depend on THREADS
    REPLICATE_CHUNK: int = Field(256, ge=1)
    # cap on rows*steps held by one chunk; long paths get smaller chunks
    CHUNK_CELLS: int = Field(20_000_000, ge=1)

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def _upper_level(cls, v):
        if isinstance(v, str):
            return v.strip().upper()
        return v

    model_config = SettingsConfigDict(
        env_prefix="SNDE_",
        env_file=None if os.getenv("ENV", "").lower() in {"prod", "production", "ci"} else ".env",
        extra="ignore",
    )

settings = Settings()
