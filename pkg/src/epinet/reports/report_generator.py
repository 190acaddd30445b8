"""
Report Generator Module

This module provides functionality to write run outputs: JSON reports for
scalar and vector results, CSV tables for time series and ensembles, and a
run manifest listing every file produced.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from epinet import __version__
from epinet.utils.output import OutputTransaction

logger = logging.getLogger('epinet.reports.generator')


def to_jsonable(value):
    """
    Convert numpy and pandas values into plain JSON types.

    Non-finite floats become None so that the output is strict JSON.
    """
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, pd.DataFrame):
        return to_jsonable(value.to_dict(orient='records'))
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def dumps(payload):
    """Deterministic JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(to_jsonable(payload), sort_keys=True, indent=2, allow_nan=False) + "\n"


@dataclass
class RunManifest:
    """
    Provenance record written beside the outputs of one run.

    Fields listed in RUNTIME_FIELDS describe how the run was executed, not
    what it computed, and differ between otherwise identical runs.
    """

    RUNTIME_FIELDS = ('wall_time', 'workers')

    subcommand: str
    flags: dict
    seed: int = None
    config_sha256: str = None
    version: str = __version__
    outputs: list = field(default_factory=list)
    workers: int = 1
    wall_time: float = 0.0

    def to_dict(self):
        return asdict(self)

    def reproducible_dict(self):
        """The manifest without its runtime fields."""
        return {k: v for k, v in self.to_dict().items() if k not in self.RUNTIME_FIELDS}


class ReportGenerator:
    """Class for writing the outputs of one run under a common file stem."""

    def __init__(self, output_dir, stem):
        """
        Initialize with the output directory and file stem.

        Args:
            output_dir (str): Directory receiving the outputs (created if missing)
            stem (str): Common prefix of the output file names
        """
        self.output_dir = output_dir
        self.stem = stem
        self.started = time.monotonic()

    def generate(self, manifest, report=None, tables=None):
        """
        Write the JSON report, the CSV tables and the manifest atomically.

        Args:
            manifest (RunManifest): Provenance of the run; its outputs and
                wall_time are filled in here
            report (dict, optional): JSON-ready report written to <stem>.json
            tables (dict, optional): Suffix -> DataFrame, written to <stem>_<suffix>.csv,
                or to <stem>.csv for the empty suffix

        Returns:
            list: Final paths of every file written, manifest last

        Raises:
            Exception: If any write fails; no output is left behind then
        """
        try:
            logger.info(f"Writing outputs for '{self.stem}' to {self.output_dir}")
            with OutputTransaction(self.output_dir) as transaction:
                names = []
                if report is not None:
                    name = f"{self.stem}.json"
                    transaction.write_text(name, dumps(report))
                    names.append(name)
                for suffix, frame in sorted((tables or {}).items()):
                    name = f"{self.stem}_{suffix}.csv" if suffix else f"{self.stem}.csv"
                    frame.to_csv(transaction.stage(name), index=False, lineterminator="\n")
                    names.append(name)
                manifest.outputs = names
                manifest.wall_time = round(time.monotonic() - self.started, 6)
                transaction.write_text(f"{self.stem}.manifest.json", dumps(manifest.to_dict()))
            logger.info(f"Wrote {len(transaction.committed)} files")
            return transaction.committed

        except Exception as e:
            logger.error(f"Error writing outputs: {str(e)}")
            raise
