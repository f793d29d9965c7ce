"""
Main entry point for running the simulator as a module.

Usage: python -m src {run,bench,verify-complexity,topology} [options]
"""

import sys

from .cli import main


if __name__ == "__main__":
    sys.exit(main())
