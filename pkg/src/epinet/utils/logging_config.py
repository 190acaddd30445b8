"""
Logging Configuration Module

This module provides functions to configure logging for the epinet toolkit.
"""

import logging
import sys
from pathlib import Path

DEFAULT_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def configure_logging(config):
    """
    Configure logging based on the provided configuration.

    Args:
        config (dict): Logging configuration dictionary with keys:
            - level: Logging level (INFO, DEBUG, etc.)
            - file: Optional path to a log file
            - format: Log message format

    Returns:
        logging.Logger: The package root logger
    """
    level_name = str(config.get('level', 'INFO')).upper()
    log_level = getattr(logging, level_name, None)
    if not isinstance(log_level, int):
        raise ValueError(f"Unknown log level: {level_name}")
    log_format = config.get('format') or DEFAULT_FORMAT

    # stdout is reserved for command output
    handlers = [logging.StreamHandler(sys.stderr)]

    log_file = config.get('file')
    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_path))

    logging.basicConfig(
        level=log_level,
        format=log_format,
        handlers=handlers,
        force=True
    )

    logger = logging.getLogger('epinet')
    logger.debug(f"Logging configured with level {level_name}")

    return logger
