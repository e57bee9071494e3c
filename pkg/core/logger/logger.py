"""
Module handles the logging of the laboratory runs.

Every module logger writes to one timestamped file per process under APLAB_LOG_DIR
(default "logs"); the console only shows warnings and errors.
"""
import datetime
import logging
import os
from functools import lru_cache
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

load_dotenv()

logs_dir = Path(os.getenv("APLAB_LOG_DIR", "logs"))
logs_dir.mkdir(parents=True, exist_ok=True)

current_dt = datetime.datetime.now().strftime("%Y%m%d_%H%M%S")
log_file = logs_dir / f"{current_dt}.log"

FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
CONSOLE_FORMAT = "%(levelname)s - %(name)s - %(message)s"


def _level_from_env() -> int:
    name = os.getenv("APLAB_LOG_LEVEL", "INFO").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


@lru_cache(maxsize=None)
def _file_handler() -> logging.Handler:
    handler = logging.FileHandler(log_file, encoding="utf-8")
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt="%Y-%m-%d %H:%M:%S"))
    return handler


@lru_cache(maxsize=None)
def _console_handler() -> logging.Handler:
    handler = logging.StreamHandler()
    handler.setLevel(logging.WARNING)
    handler.setFormatter(logging.Formatter(CONSOLE_FORMAT))
    return handler


def setup_logger(file_name: str, log_level: Optional[int] = None) -> logging.Logger:
    """
    Returns the logger `file_name` attached to the shared run file and the console.

    Args:
        file_name (str): Name of the logger (typically __name__).
        log_level (int, optional): Logging level. When omitted the level is read
                                   from APLAB_LOG_LEVEL (default: INFO).

    Example:
        >>> logger = setup_logger(__name__)
        >>> logger.info("Starting evolve")
    """
    logger = logging.getLogger(file_name)
    logger.setLevel(log_level if log_level is not None else _level_from_env())

    if logger.handlers:
        return logger
    logger.addHandler(_file_handler())
    logger.addHandler(_console_handler())
    logger.propagate = False
    return logger


def view_logs(tail: Optional[int] = None) -> str:
    """
    Content of the newest log file, or only its last `tail` lines.

    Returns:
        str: the log text, or a message when there is nothing to show.
    """
    try:
        log_files = sorted(logs_dir.glob("*.log"), key=lambda f: f.stat().st_mtime)
        if not log_files:
            return "No log files found."
        latest_log = log_files[-1]
        lines = latest_log.read_text(encoding="utf-8").splitlines()
        if not lines:
            return f"Log file {latest_log.name} is empty."
        if tail is not None:
            lines = lines[-tail:]
        return "\n".join(lines)
    except OSError as e:
        return f"Error reading logs: {e}"
