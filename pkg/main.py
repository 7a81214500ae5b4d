#!/usr/bin/env python3
"""
Implied Weights Toolkit
Main entry point for the command-line application
"""

import sys
from pathlib import Path

# Add src directory to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from cli.app import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
