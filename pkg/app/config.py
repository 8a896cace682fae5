import logging
import sys

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Loads and validates process settings from environment variables."""

    log_level: str = Field(default="WARNING", alias="CONSORTIUM_LOG_LEVEL")
    data_dir: str = Field(default="data", alias="CONSORTIUM_DATA_DIR")
    sweep_workers: int = Field(default=1, ge=1, alias="CONSORTIUM_SWEEP_WORKERS")

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="",        # aliases carry the prefix
        extra="ignore",       # allow unknown vars
        case_sensitive=True,
        populate_by_name=True,
    )


def get_settings() -> Settings:
    """Fresh read of the environment (tests patch env vars and call this)."""
    return Settings()


settings = get_settings()


LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | None = None) -> None:
    """Route diagnostics to stderr; stdout stays reserved for reproducible output."""
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel((level or settings.log_level).upper())
