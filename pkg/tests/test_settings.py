"""
Unit tests for settings management
"""

import os
import unittest
import tempfile
import json
from pathlib import Path
import sys

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from config.settings import Settings


class TestSettings(unittest.TestCase):
    """
    Test cases for Settings class
    """

    def setUp(self):
        """Set up test fixtures"""
        # Create temporary config file
        self.temp_file = tempfile.NamedTemporaryFile(mode='w', suffix='.json', delete=False)
        self.temp_file.close()
        self.settings = Settings(self.temp_file.name, use_environment=False)

    def tearDown(self):
        """Clean up test fixtures"""
        # Remove temporary file
        Path(self.temp_file.name).unlink(missing_ok=True)
        os.environ.pop("IMPLIEDW_DEFAULT_REPS", None)
        os.environ.pop("IMPLIEDW_DELIMITER", None)

    def test_default_settings(self):
        """Test that default settings are loaded"""
        self.assertEqual(self.settings.get("singularity_threshold"), 1e-10)
        self.assertEqual(self.settings.get("default_n_grid"), [1000, 4000, 16000])
        self.assertEqual(self.settings.get("extreme_weight_multiple"), 10.0)
        self.assertEqual(self.settings.get("significant_digits"), 12)

    def test_set_and_get(self):
        """Test setting and getting values"""
        self.settings.set("test_key", "test_value")
        self.assertEqual(self.settings.get("test_key"), "test_value")

    def test_save_and_load(self):
        """Test saving and loading settings"""
        self.settings.set("default_reps", 7)
        self.settings.save()

        # Create new settings instance with same file
        new_settings = Settings(self.temp_file.name, use_environment=False)
        self.assertEqual(new_settings.get("default_reps"), 7)
        self.assertEqual(new_settings.get("workers"), 1)

    def test_missing_file_not_created(self):
        """Loading from a missing path does not write a file"""
        missing = Path(tempfile.gettempdir()) / "impliedw_missing_dir" / "settings.json"
        settings = Settings(str(missing), use_environment=False)
        self.assertFalse(missing.exists())
        self.assertEqual(settings.get("delimiter"), ",")

    def test_update(self):
        """Test updating multiple settings"""
        updates = {
            "key1": "value1",
            "key2": "value2",
            "key3": 123
        }
        self.settings.update(updates)

        self.assertEqual(self.settings.get("key1"), "value1")
        self.assertEqual(self.settings.get("key2"), "value2")
        self.assertEqual(self.settings.get("key3"), 123)

    def test_reset(self):
        """Test resetting to defaults"""
        self.settings.set("custom_key", "custom_value")
        self.settings.reset()

        self.assertIsNone(self.settings.get("custom_key"))
        self.assertEqual(self.settings.get("default_reps"), 50)
        with open(self.temp_file.name, encoding='utf-8') as f:
            self.assertEqual(json.load(f)["default_reps"], 50)

    def test_defaults_not_shared_between_instances(self):
        """Mutating a list value leaves the class defaults alone"""
        self.settings.get("default_n_grid").append(64000)
        self.assertEqual(Settings.DEFAULT_SETTINGS["default_n_grid"], [1000, 4000, 16000])

    def test_environment_override(self):
        """IMPLIEDW_* variables override file values"""
        os.environ["IMPLIEDW_DEFAULT_REPS"] = "7"
        os.environ["IMPLIEDW_DELIMITER"] = ";"
        settings = Settings(self.temp_file.name)
        self.assertEqual(settings.get("default_reps"), 7)
        self.assertEqual(settings.get("delimiter"), ";")

    def test_recent_inputs(self):
        """Test managing recent input files"""
        self.settings.add_recent_input("file1.csv")
        self.settings.add_recent_input("file2.csv")
        self.settings.add_recent_input("file3.csv")

        recent = self.settings.get("recent_inputs")
        self.assertEqual(recent[0], "file3.csv")
        self.assertEqual(recent[1], "file2.csv")
        self.assertEqual(recent[2], "file1.csv")

        # Test duplicate handling
        self.settings.add_recent_input("file1.csv")
        recent = self.settings.get("recent_inputs")
        self.assertEqual(recent[0], "file1.csv")
        self.assertEqual(len([f for f in recent if f == "file1.csv"]), 1)

    def test_recent_inputs_capped(self):
        """Only the ten most recent inputs are kept"""
        for i in range(15):
            self.settings.add_recent_input(f"file{i}.csv")
        recent = self.settings.get("recent_inputs")
        self.assertEqual(len(recent), 10)
        self.assertEqual(recent[0], "file14.csv")


if __name__ == '__main__':
    unittest.main()
