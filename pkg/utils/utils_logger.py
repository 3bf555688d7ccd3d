"""
Logger Setup Script
File: utils/utils_logger.py

This script provides logging functions for the project.
Logging is an essential way to track events and issues during execution.

Features:
- Logs information, warnings, and errors to a designated log file.
- Ensures the log directory exists.
- Reads the log folder and level from the environment (.env).
"""

# Imports from Python Standard Library
import os
import pathlib

# Imports from external packages
from dotenv import load_dotenv
from loguru import logger

load_dotenv()

# Get this file name without the extension
CURRENT_SCRIPT = pathlib.Path(__file__).stem

# Set directory where logs will be stored
LOG_FOLDER: pathlib.Path = pathlib.Path(os.getenv("TUBENESS_LOG_FOLDER") or "logs")

# Set the name of the log file
LOG_FILE: pathlib.Path = LOG_FOLDER.joinpath("tubeness.log")

# Level written to the log file
LOG_LEVEL: str = (os.getenv("TUBENESS_LOG_LEVEL") or "INFO").upper()

# Ensure the log folder exists or create it
try:
    LOG_FOLDER.mkdir(parents=True, exist_ok=True)
    logger.debug(f"Log folder ready at: {LOG_FOLDER}")
except Exception as e:
    logger.error(f"Error creating log folder: {e}")

# Configure Loguru to write to the log file
try:
    logger.add(LOG_FILE, level=LOG_LEVEL)
    logger.debug(f"Logging to file: {LOG_FILE} at level {LOG_LEVEL}")
except Exception as e:
    logger.error(f"Error configuring logger to write to file: {e}")


def get_log_file_path() -> pathlib.Path:
    """Return the path to the log file."""
    return LOG_FILE


def get_log_level() -> str:
    """Return the level used for the log file sink."""
    return LOG_LEVEL
