"""
Entry point for the stochastic wave simulator.

Runs one subcommand (simulate, convergence, stability, noise-check) with
logging to stderr and to a timestamped file under logs/.

    python -m src.main --help
"""

import sys

from src.swave.cli import main

if __name__ == "__main__":
    sys.exit(main())
