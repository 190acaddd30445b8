"""
Configuration Settings Module

This module handles loading and managing runtime settings for the toolkit.
Settings come from environment variables, optionally seeded from a .env file.
Model parameters themselves live in per-experiment config documents
(see epinet.models.network), not here.
"""

import os

from dotenv import load_dotenv


def _env_int(name, default):
    raw = os.getenv(name)
    if raw is None or raw == '':
        return default
    try:
        return int(float(raw)) if 'e' in raw.lower() else int(raw)
    except ValueError:
        raise ValueError(f"Environment variable {name} must be an integer, got {raw!r}")


def _env_float(name, default):
    raw = os.getenv(name)
    if raw is None or raw == '':
        return default
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"Environment variable {name} must be a number, got {raw!r}")


def load_config():
    """
    Load configuration settings from environment variables and/or a .env file.

    Returns:
        dict: A dictionary containing all configuration settings
    """
    # Load environment variables from .env file
    load_dotenv()

    # Logging configuration
    logging_config = {
        'level': os.getenv('LOG_LEVEL', 'INFO'),
        'file': os.getenv('LOG_FILE') or None,
        'format': os.getenv('LOG_FORMAT', '%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    }

    # Build complete configuration
    config = {
        'seed': _env_int('EPI_SEED', 1),
        'workers': _env_int('EPI_WORKERS', 1),
        'output_dir': os.getenv('EPI_OUTPUT_DIR', 'results'),
        'event_cap': _env_int('EPI_EVENT_CAP', 10 ** 9),
        'logging': logging_config,
        'outbreak': {
            'tol': _env_float('EPI_TOL', 1e-12),
            'max_iter': _env_int('EPI_MAX_ITER', 10 ** 6),
        },
        'classifier': {
            'min_size': _env_int('EPI_MAJOR_MIN_SIZE', 100),
            'fraction': _env_float('EPI_MAJOR_FRACTION', 0.05),
        },
        'ldp': {
            'u_max': _env_float('EPI_U_MAX', 40.0),
        },
        'ode': {
            'rtol': _env_float('EPI_ODE_RTOL', 1e-9),
            'atol': _env_float('EPI_ODE_ATOL', 1e-12),
        },
    }

    if config['workers'] < 1:
        raise ValueError(f"EPI_WORKERS must be at least 1, got {config['workers']}")

    return config
