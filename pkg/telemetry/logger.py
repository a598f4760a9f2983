#!/usr/bin/env python3
"""
Run Logger for quantlab

Appends experiment runs, training progress and free-form events as JSON
lines to quantlab_runs.jsonl. Result files never contain telemetry.
"""

import json
import os
import threading
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

TELEMETRY_ENV = "QUANTLAB_TELEMETRY_DIR"
RUNS_FILENAME = "quantlab_runs.jsonl"


def default_telemetry_dir(output_path: Optional[Union[str, Path]] = None) -> Path:
    """$QUANTLAB_TELEMETRY_DIR, else the output file's directory, else ./telemetry."""
    if os.environ.get(TELEMETRY_ENV):
        return Path(os.environ[TELEMETRY_ENV])
    if output_path:
        return Path(output_path).resolve().parent
    return Path.cwd() / "telemetry"


class RunLogger:
    """Handles logging of experiment runs and training progress."""

    def __init__(self, telemetry_dir: Optional[Union[str, Path]] = None):
        """
        Initialize the run logger.

        Args:
            telemetry_dir: Directory for quantlab_runs.jsonl.
                          Defaults to default_telemetry_dir().
        """
        self.telemetry_dir = Path(telemetry_dir) if telemetry_dir is not None else default_telemetry_dir()
        self.telemetry_dir.mkdir(parents=True, exist_ok=True)
        self.runs_file = self.telemetry_dir / RUNS_FILENAME
        self.runs_file.touch(exist_ok=True)

        # Session ID persists for the lifetime of this logger instance
        self.session_id = str(uuid.uuid4())
        self._lock = threading.Lock()

    def _append(self, record: Dict[str, Any]) -> None:
        record = {"timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"), "session_id": self.session_id, **record}
        line = json.dumps(record, default=str) + "\n"
        with self._lock:
            with open(self.runs_file, "a") as f:
                f.write(line)

    def log_run_start(
        self,
        experiment: str,
        config_hash: str,
        seed: int,
        parameters: Optional[Dict[str, Any]] = None
    ) -> str:
        """
        Log the start of an experiment run.

        Returns:
            run_id: Unique identifier for this run
        """
        run_id = str(uuid.uuid4())
        self._append({
            "event": "run_start",
            "run_id": run_id,
            "experiment": experiment,
            "config_hash": config_hash,
            "seed": seed,
            "parameters": parameters or {}
        })
        return run_id

    def log_run_end(
        self,
        run_id: str,
        status: str,
        duration_seconds: float,
        rows: int,
        output_path: Optional[str] = None,
        error: Optional[Dict[str, Any]] = None
    ) -> None:
        """
        Log run completion.

        Args:
            run_id: Run that finished
            status: success or failure
            duration_seconds: Wall time of the run
            rows: Number of result rows produced
            output_path: CSV written, if any
            error: Machine-readable error for failed runs
        """
        self._append({
            "event": "run_end",
            "run_id": run_id,
            "status": status,
            "duration_seconds": duration_seconds,
            "rows": rows,
            "output_path": str(output_path) if output_path else None,
            "error": error
        })

    def log_training_progress(
        self,
        run_id: Optional[str],
        tag: str,
        step: int,
        loss: float,
        extra: Optional[Dict[str, Any]] = None
    ) -> None:
        self._append({
            "event": "training_progress",
            "run_id": run_id,
            "tag": tag,
            "step": step,
            "loss": loss,
            "extra": extra or {}
        })

    def log_event(self, run_id: Optional[str], event_type: str, payload: Optional[Dict[str, Any]] = None) -> None:
        self._append({"event": event_type, "run_id": run_id, "payload": payload or {}})

    def get_runs(self, experiment: Optional[str] = None) -> List[Dict[str, Any]]:
        """
        Read run records back, skipping malformed lines.

        Args:
            experiment: Only return run_start records of this experiment and
                        the records sharing their run_id

        Returns:
            Records in file order
        """
        records = []
        with open(self.runs_file, "r") as f:
            for line in f:
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError:
                    continue
        if experiment is None:
            return records
        run_ids = {r.get("run_id") for r in records if r.get("event") == "run_start" and r.get("experiment") == experiment}
        return [r for r in records if r.get("run_id") in run_ids]

    def get_session_id(self) -> str:
        """Return the current session ID."""
        return self.session_id


def main():
    """Example usage of the run logger."""
    logger = RunLogger()
    run_id = logger.log_run_start("soft-curves", "0" * 64, 0, {"alphas": [1.0, 5.0]})
    logger.log_training_progress(run_id, "demo", 100, 0.5, {"mu_q": 0.0})
    logger.log_run_end(run_id, "success", 0.1, 802)
    print(f"Logged run {run_id} to {logger.runs_file}")


if __name__ == "__main__":
    main()
