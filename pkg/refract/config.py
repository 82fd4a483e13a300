import logging
import os
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from refract.errors import ModelConfigError

load_dotenv()

# Paths
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
MODEL_DIR = os.path.join(BASE_DIR, "model")
DEFAULT_FIXTURES = os.path.join(MODEL_DIR, "fixtures.json")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class Settings(BaseModel):
    """Process-wide knobs read from the environment (and a local .env file)."""

    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    log_level: str = "WARNING"
    mc_block: int = Field(default=4096, ge=1)

    @classmethod
    def from_env(cls) -> "Settings":
        raw = {
            "threads": os.getenv("REFRACT_THREADS"),
            "log_level": os.getenv("REFRACT_LOG_LEVEL"),
            "mc_block": os.getenv("REFRACT_MC_BLOCK"),
        }
        try:
            return cls(**{k: v for k, v in raw.items() if v})
        except ValidationError as e:
            raise ModelConfigError(f"Invalid REFRACT_* environment: {e}") from e


def get_settings() -> Settings:
    return Settings.from_env()


def setup_logging(level: Optional[str] = None) -> None:
    """Attach one stream handler to the package logger."""
    level = (level or get_settings().log_level).upper()
    logger = logging.getLogger("refract")
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
    logger.setLevel(level)
