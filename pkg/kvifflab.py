#!/usr/bin/env python3
"""
kvifflab - Kernel Variational Inference Flow Filter Lab

Main entry point. Runs filtering experiments, the numerical
certification checks, and lists the built-in scenarios.

    python kvifflab.py run --config configs/linear10d.json --set num_particles=50
    python kvifflab.py validate
    python kvifflab.py scenarios
"""

import sys
import logging
from pathlib import Path

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent / "src"))

from src.kvifflab.config.settings import settings
from src.kvifflab.ui.cli import main


def setup_logging():
    """Setup logging configuration"""
    log_level = getattr(logging, settings.log_level, logging.INFO)

    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(settings.log_file),
            logging.StreamHandler() if settings.debug_mode else logging.NullHandler()
        ]
    )
    # matplotlib is chatty at DEBUG
    logging.getLogger("matplotlib").setLevel(logging.WARNING)


if __name__ == "__main__":
    setup_logging()
    sys.exit(main())
