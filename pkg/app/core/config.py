"""
Core configuration for ExplainIL
"""
import json
import logging
from pathlib import Path
from typing import Optional

from pydantic import ValidationError
from pydantic_settings import BaseSettings

from app.core.exceptions import ConfigError
from app.models.config import RunConfig

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Process-wide settings (environment / .env)"""

    # App Info
    app_name: str = "ExplainIL"
    app_version: str = "1.0.0"
    debug: bool = False

    # Paths
    base_dir: Path = Path(__file__).parent.parent.parent
    output_dir: Path = Path("runs")

    # Logging
    log_level: str = "INFO"
    log_file: Optional[Path] = None

    # Torch runtime
    torch_threads: int = 1
    deterministic: bool = True

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        env_prefix = "EXPLAINIL_"


# Global settings instance
settings = Settings()


def configure_torch(threads: Optional[int] = None, deterministic: Optional[bool] = None):
    """Apply the torch runtime settings"""
    import torch

    threads = settings.torch_threads if threads is None else threads
    deterministic = settings.deterministic if deterministic is None else deterministic
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(deterministic, warn_only=True)
    logger.debug(f"torch configured: threads={threads}, deterministic={deterministic}")


def _format_location(loc) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def load_config(path) -> RunConfig:
    """
    Parse and validate a JSON run configuration

    Args:
        path: Path to the JSON document

    Returns:
        RunConfig with desk-scale defaults applied

    Raises:
        ConfigError: Unreadable file, JSON syntax error (with line/column),
            or semantic error naming the offending key
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e

    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: JSON parse error at line {e.lineno}, column {e.colno}: {e.msg}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")

    try:
        config = RunConfig.model_validate(data, context={"base_dir": path.parent})
    except ValidationError as e:
        problems = "; ".join(f"{_format_location(err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"{path}: {problems}") from e

    logger.info(f"Loaded config {path.name} (data source: {config.data_source})")
    return config
