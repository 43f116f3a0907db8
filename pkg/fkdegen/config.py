"""
Configuration module for loading environment variables.
Flags and run-config sections override anything read here.
"""
import os
from functools import lru_cache
from typing import Optional


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name, "")
    try:
        return int(raw) if raw.strip() else default
    except ValueError:
        return default


class Settings:
    """Process-wide settings loaded from environment variables."""

    def __init__(self) -> None:
        self.threads: int = max(1, _int_env("FKDEGEN_THREADS", 1))
        self.batch_size: int = max(1, _int_env("FKDEGEN_BATCH_SIZE", 4096))
        self.log_level: str = os.getenv("FKDEGEN_LOG_LEVEL", "INFO").upper()
        self.output_dir: str = os.getenv("FKDEGEN_OUTPUT_DIR", "./out")
        self.metrics_path: str = os.getenv("FKDEGEN_METRICS_PATH", "")

    @property
    def metrics_file(self) -> Optional[str]:
        """Prometheus textfile target, or None when export is off."""
        return self.metrics_path or None

    def resolve_threads(self, requested: Optional[int]) -> int:
        """Pick the worker cap: explicit request first, then the environment."""
        if requested is not None and requested >= 1:
            return int(requested)
        return self.threads


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
