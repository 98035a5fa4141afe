import json
import shutil
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import pandas as pd

from sim.errors import MissingLogsError
from utils.logger import get_logger

logger = get_logger("run_store")

TRAJECTORY_LOG = "trajectories.jsonl"
COLLISION_LOG = "collisions.jsonl"
ALERT_LOG = "alerts.jsonl"
META_FILE = "meta.json"
SUMMARY_FILE = "summary.json"

LOG_FILES = (TRAJECTORY_LOG, COLLISION_LOG, ALERT_LOG)


def run_name(seed: int, latency: str, reaction: str) -> str:
    """Directory name of one run: seed and profiles"""
    return f"seed{seed:03d}_{latency}_{reaction}"


class RunStore:
    """Output directory of one run: the three line-delimited logs, metadata and tables"""

    def __init__(self, root, name: Optional[str] = None):
        self.root = Path(root)
        self.path = self.root / name if name else self.root

    def create(self) -> "RunStore":
        self.path.mkdir(parents=True, exist_ok=True)
        logger.debug(f"Run directory ready at {self.path}")
        return self

    def file(self, name: str) -> Path:
        return self.path / name

    def write_jsonl(self, name: str, records: Iterable[Mapping[str, Any]]) -> int:
        """Write one JSON object per line; floats keep their exact repr"""
        count = 0
        with open(self.file(name), "w", encoding="utf-8") as f:
            for record in records:
                f.write(json.dumps(record))
                f.write("\n")
                count += 1
        return count

    def write_json(self, name: str, data: Any) -> None:
        with open(self.file(name), "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True, default=str)

    def read_json(self, name: str) -> Any:
        path = self.file(name)
        if not path.exists():
            raise MissingLogsError(f"{path} not found")
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)

    def write_table(self, name: str, table: pd.DataFrame, index: bool = False) -> Path:
        path = self.file(name)
        table.to_csv(path, index=index)
        return path

    def require_logs(self) -> None:
        """Raise MissingLogsError unless all three logs and the metadata exist"""
        missing = [n for n in (*LOG_FILES, META_FILE) if not self.file(n).exists()]
        if missing:
            raise MissingLogsError(f"{self.path}: missing {', '.join(missing)}")

    def discard(self) -> bool:
        """Remove the run directory and everything written to it"""
        if not self.path.exists():
            return False
        try:
            shutil.rmtree(self.path)
            logger.warning(f"Discarded partial outputs at {self.path}")
            return True
        except OSError as e:
            logger.error(f"Failed to discard {self.path}: {e}")
            return False

    def get_stats(self):
        """File sizes of the run directory"""
        if not self.path.exists():
            return {"path": str(self.path), "files": {}}
        return {
            "path": str(self.path),
            "files": {p.name: p.stat().st_size for p in sorted(self.path.iterdir()) if p.is_file()},
        }
