"""
Settings management for the Implied Weights Toolkit
Handles persistent configuration storage, retrieval and environment overrides
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, Optional
import logging

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

ENV_PREFIX = "IMPLIEDW_"


class Settings:
    """
    Manages toolkit settings with JSON persistence

    Values are resolved in order: defaults, the JSON settings file, then
    IMPLIEDW_<KEY> environment variables (a .env file is honoured).
    """

    DEFAULT_SETTINGS = {
        "singularity_threshold": 1e-10,
        "weight_sum_tolerance": 1e-8,
        "base_normalization_tolerance": 1e-8,
        "kkt_tolerance": 1e-8,
        "delimiter": ",",
        "extreme_weight_multiple": 10.0,
        "significant_digits": 12,
        "default_seed": 20240101,
        "default_reps": 50,
        "default_n_grid": [1000, 4000, 16000],
        "max_regeneration_attempts": 20,
        "workers": 1,
        "output_dir": "output",
        "log_level": "INFO",
        "auto_save": False,
        "recent_inputs": [],
    }

    def __init__(self, config_file: Optional[str] = None, use_environment: bool = True):
        """
        Initialize settings manager

        Args:
            config_file: Optional path to configuration file
            use_environment: Apply IMPLIEDW_* environment overrides after loading
        """
        if config_file:
            self.config_file = Path(config_file)
        else:
            # Default config location
            self.config_file = Path.home() / ".impliedw" / "settings.json"

        self.use_environment = use_environment
        self.settings: Dict[str, Any] = {}
        self.load()

    def load(self) -> None:
        """
        Load settings from configuration file
        """
        self.settings = json.loads(json.dumps(self.DEFAULT_SETTINGS))
        if self.config_file.exists() and self.config_file.stat().st_size > 0:
            try:
                with open(self.config_file, 'r', encoding='utf-8') as f:
                    loaded_settings = json.load(f)
                # Merge with defaults to ensure all keys exist
                self.settings = {**self.settings, **loaded_settings}
                logger.info(f"Settings loaded from {self.config_file}")
            except (OSError, ValueError) as e:
                logger.error(f"Error loading settings: {e}")
        if self.use_environment:
            self._apply_environment()

    def _apply_environment(self) -> None:
        """Override keys from IMPLIEDW_<KEY> variables"""
        load_dotenv(override=False)
        for name, raw in os.environ.items():
            if not name.startswith(ENV_PREFIX):
                continue
            key = name[len(ENV_PREFIX):].lower()
            try:
                value = json.loads(raw)
            except ValueError:
                value = raw
            self.settings[key] = value
            logger.debug(f"Setting '{key}' overridden from environment")

    def save(self) -> None:
        """
        Save current settings to configuration file
        """
        try:
            self.config_file.parent.mkdir(parents=True, exist_ok=True)
            with open(self.config_file, 'w', encoding='utf-8') as f:
                json.dump(self.settings, f, indent=2, ensure_ascii=False, sort_keys=True)
            logger.info(f"Settings saved to {self.config_file}")
        except OSError as e:
            logger.error(f"Error saving settings: {e}")

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get a setting value

        Args:
            key: Setting key
            default: Default value if key not found

        Returns:
            Setting value or default
        """
        return self.settings.get(key, default)

    def set(self, key: str, value: Any) -> None:
        """
        Set a setting value

        Args:
            key: Setting key
            value: Setting value
        """
        self.settings[key] = value
        if self.get("auto_save", False):
            self.save()

    def update(self, updates: Dict[str, Any]) -> None:
        """
        Update multiple settings at once

        Args:
            updates: Dictionary of settings to update
        """
        self.settings.update(updates)
        if self.get("auto_save", False):
            self.save()

    def reset(self) -> None:
        """
        Reset settings to defaults
        """
        self.settings = json.loads(json.dumps(self.DEFAULT_SETTINGS))
        self.save()

    def add_recent_input(self, file_path: str, max_items: int = 10) -> None:
        """
        Add a data file to recent inputs

        Args:
            file_path: Path to the input table
            max_items: Maximum number of recent items to keep
        """
        recent = list(self.get("recent_inputs", []))

        # Remove if already exists
        if file_path in recent:
            recent.remove(file_path)

        # Add to beginning
        recent.insert(0, file_path)

        self.set("recent_inputs", recent[:max_items])
