#!/usr/bin/env python
"""
Epinet Main Entry Point

Launcher for running the command-line tool from a source checkout without
installing the package.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from epinet.main import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
