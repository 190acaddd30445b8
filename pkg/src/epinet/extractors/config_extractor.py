"""
Config Extractor Module

This module provides functionality to read model configuration files.
"""

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

from epinet.models.network import NetworkModel, ScalingConfig, load_model

logger = logging.getLogger('epinet.extractors.config')


@dataclass
class ModelConfig:
    """A loaded model with the hash of the exact bytes it came from."""

    model: NetworkModel
    scaling: ScalingConfig
    sha256: str
    path: str


class ConfigExtractor:
    """Class for extracting network models from JSON config files."""

    def __init__(self, config_path):
        self.config_path = config_path

    def extract(self):
        """
        Read, hash and parse the config file.

        Returns:
            ModelConfig: The model, its scaling and the SHA-256 of the file bytes

        Raises:
            FileNotFoundError: If the config file does not exist
            ModelValidationError: If the document is not a valid model
        """
        try:
            path = Path(self.config_path)
            if not path.exists():
                raise FileNotFoundError(f"Config file not found at {self.config_path}")
            raw = path.read_bytes()
            digest = hashlib.sha256(raw).hexdigest()
            logger.info(f"Loading model config {self.config_path} (sha256 {digest[:12]})")
            model, scaling = load_model(raw)
            return ModelConfig(model, scaling, digest, str(path))

        except Exception as e:
            logger.error(f"Error loading model config: {str(e)}")
            raise
