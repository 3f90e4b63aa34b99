"""
Logging configuration for ExplainIL
"""
import logging
import sys
from pathlib import Path
from typing import Optional, Union


def setup_logging(log_file: Optional[Union[str, Path]] = None, level: Union[int, str] = logging.INFO):
    """
    Configure logging for the toolkit

    Args:
        log_file: Optional log file path; console only when omitted
        level: Logging level

    Returns:
        The configured root logger
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())

    # Create formatters
    file_formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    console_formatter = logging.Formatter(
        '%(levelname)s: %(message)s'
    )

    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # Repeated setup (tests, nested dispatch) must not stack handlers
    for handler in list(root_logger.handlers):
        if getattr(handler, "_explainil", False):
            root_logger.removeHandler(handler)
            handler.close()

    # Console handler
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(level)
    console_handler.setFormatter(console_formatter)
    console_handler._explainil = True
    root_logger.addHandler(console_handler)

    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setLevel(level)
        file_handler.setFormatter(file_formatter)
        file_handler._explainil = True
        root_logger.addHandler(file_handler)

    return root_logger


logger = logging.getLogger("app")
