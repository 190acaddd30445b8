"""
CSV Extractor Module

This module provides functionality to extract calibration tables from CSV files.
"""

import logging
from pathlib import Path

import pandas as pd

from epinet.utils.errors import ModelValidationError

logger = logging.getLogger('epinet.extractors.csv')


class CsvExtractor:
    """Class for extracting census and movement tables from CSV files."""

    def __init__(self, csv_path, required_columns=()):
        """
        Initialize with the path to the CSV file.

        Args:
            csv_path (str): Path to the CSV file
            required_columns (tuple): Columns the header must contain
        """
        self.csv_path = csv_path
        self.required_columns = tuple(required_columns)

    def extract(self):
        """
        Extract data from the CSV file.

        Id columns are read as strings so that ids like "007" keep their form.

        Returns:
            pandas.DataFrame: DataFrame containing the CSV data

        Raises:
            FileNotFoundError: If the CSV file does not exist
            ModelValidationError: If a required column is missing or the file cannot be parsed
        """
        try:
            file_path = Path(self.csv_path)
            if not file_path.exists():
                raise FileNotFoundError(f"CSV file not found at {self.csv_path}")

            logger.info(f"Extracting data from {self.csv_path}")
            id_columns = {c: str for c in self.required_columns if c.endswith('_id')}
            try:
                df = pd.read_csv(file_path, dtype=id_columns, encoding='utf-8')
            except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
                raise ModelValidationError(f"parse failure in {self.csv_path}: {e}")
            missing = [c for c in self.required_columns if c not in df.columns]
            if missing:
                raise ModelValidationError(f"missing field {', '.join(missing)} in {self.csv_path}")
            logger.info(f"Successfully extracted {len(df)} records from CSV")
            return df

        except FileNotFoundError as e:
            logger.error(f"CSV file not found: {str(e)}")
            raise

        except Exception as e:
            logger.error(f"Error extracting CSV data: {str(e)}")
            raise
