"""Configuration management for the safe imitation learning experiments."""
import os
from pathlib import Path
from typing import Dict, Iterable, Optional, Union

from dotenv import dotenv_values, load_dotenv

# Load environment variables
load_dotenv()


class ConfigError(ValueError):
    """Invalid configuration value; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class Config:
    """Configuration class for the application."""

    # Output Settings
    OUTPUT_DIR: Path = Path(os.getenv("SAFEIL_OUTPUT_DIR", "./runs"))

    # Run Settings
    DEFAULT_SEED: str = os.getenv("SAFEIL_SEED", "0")
    WORKERS: str = os.getenv("SAFEIL_WORKERS", "1")
    VERBOSE: bool = os.getenv("SAFEIL_VERBOSE", "0").lower() in ("1", "true", "yes")

    @classmethod
    def validate(cls) -> bool:
        """Validate environment-provided configuration."""
        seed = parse_int("SAFEIL_SEED", cls.DEFAULT_SEED)
        workers = parse_int("SAFEIL_WORKERS", cls.WORKERS)
        if seed < 0:
            raise ConfigError("SAFEIL_SEED", "must be non-negative")
        if workers < 1:
            raise ConfigError("SAFEIL_WORKERS", "must be at least 1")
        return True

    @classmethod
    def seed(cls) -> int:
        return parse_int("SAFEIL_SEED", cls.DEFAULT_SEED)

    @classmethod
    def workers(cls) -> int:
        return parse_int("SAFEIL_WORKERS", cls.WORKERS)

    @classmethod
    def ensure_output_dir(cls) -> Path:
        """Ensure output directory exists."""
        cls.OUTPUT_DIR.mkdir(parents=True, exist_ok=True)
        return cls.OUTPUT_DIR


def load_kv_file(path: Union[str, Path]) -> Dict[str, str]:
    """
    Read a plain ``key=value`` file (comments with ``#``).

    Args:
        path: File to read

    Returns:
        Mapping of keys to raw string values
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    values = dotenv_values(path)
    for key, value in values.items():
        if value is None or value == "":
            raise ConfigError(key, "missing value")
    return dict(values)


def check_keys(values: Dict[str, str], allowed: Iterable[str], prefix: str = "") -> None:
    """Reject keys (optionally restricted to ``prefix``) not in ``allowed``."""
    allowed = set(allowed)
    for key in values:
        if prefix and not key.startswith(prefix):
            continue
        if key not in allowed:
            raise ConfigError(key, "unknown key")


def parse_float(key: str, raw: Union[str, float]) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a number, got {raw!r}") from None


def parse_int(key: str, raw: Union[str, int]) -> int:
    try:
        return int(raw)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected an integer, got {raw!r}") from None


def get_float(values: Dict[str, str], key: str, default: Optional[float] = None) -> float:
    """Typed lookup with a default; missing without default is an error."""
    if key in values:
        return parse_float(key, values[key])
    if default is None:
        raise ConfigError(key, "required key is missing")
    return default


def get_int(values: Dict[str, str], key: str, default: Optional[int] = None) -> int:
    if key in values:
        return parse_int(key, values[key])
    if default is None:
        raise ConfigError(key, "required key is missing")
    return default


def get_str(values: Dict[str, str], key: str, default: Optional[str] = None) -> str:
    if key in values:
        return values[key].strip()
    if default is None:
        raise ConfigError(key, "required key is missing")
    return default


# Instance for import
config = Config()
