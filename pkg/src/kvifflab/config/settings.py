"""
kvifflab Configuration Settings

This module handles environment-level configuration (threads, output
directory, logging) loaded from a .env file or the process environment,
with defaults. Experiment definitions live in JSON files instead; see
config/experiment.py.
"""

import os
from pathlib import Path
from typing import Optional

import psutil
from dotenv import load_dotenv


class KviffLabSettings:
    """Central environment configuration for kvifflab"""

    def __init__(self, env_file: Optional[str] = None):
        """Initialize settings by loading from environment file"""
        self._load_env_file(env_file)
        self._validate_settings()

    def _load_env_file(self, env_file: Optional[str] = None):
        """Load environment variables from .env file"""
        if env_file:
            env_path = Path(env_file)
        else:
            # Look for .env in current directory and parent directories
            current_dir = Path.cwd()
            env_path = current_dir / ".env"

            while not env_path.exists() and current_dir.parent != current_dir:
                current_dir = current_dir.parent
                env_path = current_dir / ".env"

        if env_path.exists():
            load_dotenv(env_path)

    def _validate_settings(self):
        """Fail early on malformed numeric settings"""
        problems = []
        for name, prop in (("KVIFF_THREADS", "threads"), ("KVIFF_VALIDATE_GRID_NODES", "validate_grid_nodes")):
            try:
                getattr(self, prop)
            except ValueError:
                problems.append(name)

        if problems:
            raise ValueError(
                f"Malformed settings: {', '.join(problems)}. "
                "Please check your .env file or environment variables."
            )

    # Execution
    @property
    def threads(self) -> int:
        """Cap on concurrently running trials"""
        raw = os.getenv('KVIFF_THREADS', '')
        if raw.strip():
            return max(1, int(raw))
        return max(1, psutil.cpu_count(logical=False) or 1)

    @property
    def output_dir(self) -> str:
        return os.getenv('KVIFF_OUTPUT_DIR', 'results')

    @property
    def validate_grid_nodes(self) -> int:
        return int(os.getenv('KVIFF_VALIDATE_GRID_NODES', '801'))

    @property
    def run_slow(self) -> bool:
        return os.getenv('KVIFF_RUN_SLOW', 'false').lower() == 'true'

    # UI Settings
    @property
    def cli_colors_enabled(self) -> bool:
        return os.getenv('CLI_COLORS_ENABLED', 'true').lower() == 'true'

    # Debug Settings
    @property
    def debug_mode(self) -> bool:
        return os.getenv('DEBUG_MODE', 'false').lower() == 'true'

    @property
    def log_level(self) -> str:
        return os.getenv('LOG_LEVEL', 'INFO').upper()

    @property
    def log_file(self) -> str:
        return os.getenv('LOG_FILE', 'kvifflab.log')


# Global settings instance
settings = KviffLabSettings()
