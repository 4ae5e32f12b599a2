"""
Logging utilities: console/file loggers and JSON-lines training logs
"""
import json
import logging
import sys
import threading
from pathlib import Path
from typing import Any, Dict, Mapping, Optional


def setup_logger(name: Optional[str] = None, log_file: Optional[str] = None) -> logging.Logger:
    """
    Setup logger with console and optional file output

    Args:
        name: Logger name, None for the root logger
        log_file: Optional log file path

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)

    # Only setup if not already configured
    if logger.handlers:
        return logger

    logger.setLevel(logging.DEBUG)

    formatter = logging.Formatter(
        '[%(asctime)s] [%(levelname)s] [%(name)s] %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(logging.INFO)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


def get_logger(name: str) -> logging.Logger:
    """
    Get or create a logger

    Args:
        name: Logger name

    Returns:
        Logger instance
    """
    return logging.getLogger(name)


def log_settings(logger: logging.Logger, settings: Mapping[str, Any]) -> None:
    """Echo every effective setting as `key = value`"""
    logger.info("=" * 50)
    logger.info("Effective configuration")
    for key in sorted(settings):
        logger.info(f"{key} = {settings[key]}")
    logger.info("=" * 50)


class JsonlWriter:
    """
    Append-only JSON-lines file

    One record per line; a line is written and flushed under a lock so
    concurrent writers never interleave partial lines.
    """

    def __init__(self, path, append: bool = True):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._handle = open(self.path, "a" if append else "w", encoding="utf-8", newline="\n")

    def write(self, record: Dict[str, Any]) -> None:
        line = json.dumps(record, sort_keys=False) + "\n"
        with self._lock:
            self._handle.write(line)
            self._handle.flush()

    def close(self) -> None:
        with self._lock:
            if not self._handle.closed:
                self._handle.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @staticmethod
    def read(path) -> list:
        with open(path, "r", encoding="utf-8") as handle:
            return [json.loads(line) for line in handle if line.strip()]
