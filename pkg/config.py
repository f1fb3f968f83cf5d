"""
Settings, logging setup and the flat key = value config reader
"""
import logging
import os
from dataclasses import dataclass
from typing import Dict, Optional

from dotenv import load_dotenv

load_dotenv()


class ConfigError(ValueError):
    """Raised for unreadable or invalid key = value config files"""


@dataclass
class Settings:
    log_level: str = "INFO"
    workers: int = 1
    short_np_max: int = 3
    feature_cache: Optional[str] = None
    report_path: str = "report.tsv"


class SettingsManager:
    """Singleton holder for environment-driven settings"""

    _instance = None
    _settings = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        if self._settings is None:
            self._settings = self._load_settings()

    def _load_settings(self) -> Settings:
        """Read PROSCOREF_* variables, falling back to defaults"""
        try:
            return Settings(
                log_level=os.getenv("PROSCOREF_LOG_LEVEL", "INFO").upper(),
                workers=max(1, int(os.getenv("PROSCOREF_WORKERS", "1"))),
                short_np_max=int(os.getenv("PROSCOREF_SHORT_NP_MAX", "3")),
                feature_cache=os.getenv("PROSCOREF_FEATURE_CACHE") or None,
                report_path=os.getenv("PROSCOREF_REPORT", "report.tsv"),
            )
        except ValueError as e:
            logging.getLogger(__name__).warning(f"⚠️ Invalid environment setting, using defaults: {e}")
            return Settings()

    def get_settings(self) -> Settings:
        return self._settings

    def reload(self) -> Settings:
        """Re-read the environment (tests patch variables and call this)"""
        self._settings = self._load_settings()
        return self._settings


# Global settings manager instance
settings_manager = SettingsManager()


def get_settings() -> Settings:
    """Get the global settings"""
    return settings_manager.get_settings()


def setup_logging(level: Optional[str] = None) -> None:
    """Configure the root logger once for command-line use"""
    logging.basicConfig(
        level=getattr(logging, (level or get_settings().log_level), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def read_key_value_file(path: str) -> Dict[str, str]:
    """Parse a flat `key = value` file; `#` starts a comment"""
    values: Dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e

    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{line_no}: empty key")
        if key in values:
            raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
        values[key] = value
    return values
