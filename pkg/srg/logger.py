"""
JSON file logging utility
"""
import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from srg.config import LOG_DIR_DEFAULT, LOG_FILE_NAME


def to_jsonable(obj: Any) -> Any:
    """
    Recursively convert datetimes, numpy values and paths to JSON-safe values
    """
    if isinstance(obj, datetime):
        return obj.isoformat()
    elif isinstance(obj, Path):
        return str(obj)
    elif isinstance(obj, np.ndarray):
        return obj.tolist()
    elif isinstance(obj, np.generic):
        return obj.item()
    elif isinstance(obj, dict):
        return {
            str(key): to_jsonable(value)
            for key, value in obj.items()
        }
    elif isinstance(obj, (list, tuple)):
        return [to_jsonable(item) for item in obj]
    else:
        return obj


LOG_DIR = Path(LOG_DIR_DEFAULT)
LOG_FILE = LOG_DIR / LOG_FILE_NAME


def configure_log_dir(log_dir: Path):
    """Send subsequent log entries to <log_dir>/srg_log.jsonl"""
    global LOG_DIR, LOG_FILE
    LOG_DIR = Path(log_dir)
    LOG_FILE = LOG_DIR / LOG_FILE_NAME


def ensure_log_dir():
    """Ensure log directory exists"""
    LOG_DIR.mkdir(parents=True, exist_ok=True)


def log_to_json(
    level: str,
    message: str,
    context: Optional[Dict[str, Any]] = None,
    error: Optional[str] = None
):
    """
    Write log entry to JSON file and print to console

    Args:
        level: Log level (INFO, ERROR, WARNING)
        message: Log message
        context: Additional context data (dict)
        error: Error message if applicable
    """
    ensure_log_dir()

    log_entry = {
        "timestamp": datetime.now().isoformat(),
        "level": level,
        "message": message
    }

    if context:
        log_entry["context"] = to_jsonable(context)

    if error:
        log_entry["error"] = error

    # Only ERROR and WARNING reach the console
    if level in ["ERROR", "WARNING"]:
        print(f"[{level}] {message}")
        if error:
            print(f"  Error: {error}")

    # One JSON object per line (JSONL)
    try:
        with open(LOG_FILE, "a", encoding="utf-8") as f:
            f.write(json.dumps(log_entry, ensure_ascii=False) + "\n")
    except Exception as e:
        print(f"ERROR: Failed to write log: {e}")
        print(f"Log entry: {log_entry}")


def log_info(message: str, context: Optional[Dict[str, Any]] = None):
    """Log info message"""
    log_to_json("INFO", message, context)


def log_error(message: str, error: Optional[str] = None, context: Optional[Dict[str, Any]] = None):
    """Log error message"""
    log_to_json("ERROR", message, context, error)


def log_warning(message: str, context: Optional[Dict[str, Any]] = None):
    """Log warning message"""
    log_to_json("WARNING", message, context)


def log_training_epoch(network: str, epoch: int, mean_loss: float, lr: float, steps: int):
    """One summary line per epoch or logging interval"""
    log_info(
        f"{network} training progress",
        {"epoch": epoch, "mean_loss": round(float(mean_loss), 6), "lr": lr, "steps": steps}
    )


def log_artifact_written(command: str, path: Path, summary: Optional[Dict[str, Any]] = None):
    """Record an artifact written by a command"""
    context = {"command": command, "path": path}
    if summary:
        context.update(summary)
    log_info(f"{command}: wrote {Path(path).name}", context)
