"""
Output Utility Module

This module provides transactional file output: artefacts are staged next to
their final location and only renamed into place when the whole run succeeds.
"""

import logging
import os
from pathlib import Path

logger = logging.getLogger('epinet.utils.output')


class OutputTransaction:
    """Context manager staging output files until the enclosing block succeeds."""

    def __init__(self, directory):
        """
        Initialize with the directory receiving the outputs.

        Args:
            directory (str or Path): Target directory, created if missing
        """
        self.directory = Path(directory)
        self._staged = []
        self.committed = []

    def stage(self, name):
        """
        Reserve a staged path for an output file.

        Args:
            name (str): File name (or path relative to the directory)

        Returns:
            Path: Temporary path to write to; renamed to its final name on commit
        """
        final = self.directory / name
        final.parent.mkdir(parents=True, exist_ok=True)
        temp = final.with_name(f".{final.name}.partial")
        self._staged.append((temp, final))
        return temp

    def write_text(self, name, text):
        """Stage a text file and return its final path."""
        temp = self.stage(name)
        temp.write_text(text, encoding='utf-8')
        return self.directory / name

    def __enter__(self):
        """Enter the context manager."""
        self.directory.mkdir(parents=True, exist_ok=True)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        """Exit the context manager, committing or rolling back as appropriate."""
        if exc_type is None:
            for temp, final in self._staged:
                os.replace(temp, final)
                self.committed.append(final)
            logger.debug(f"Committed {len(self.committed)} output file(s) in {self.directory}")
        else:
            logger.error(f"Output transaction failed: {exc_val}")
            for temp, _ in self._staged:
                if temp.exists():
                    temp.unlink()
        self._staged = []
        return False  # Re-raise the exception
