import sqlite3
import os
import logging
from pathlib import Path
from datetime import datetime
from typing import Optional, List, Dict, Any
from contextlib import contextmanager

logger = logging.getLogger(__name__)

DEFAULT_DB_PATH = "data/runs.db"


class DatabaseManager:
    def __init__(self, db_path: str = DEFAULT_DB_PATH):
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self.init_database()
        logger.debug("run registry at %s", self.db_path)

    @contextmanager
    def get_connection(self):
        """Connection with name-addressable rows, closed on exit"""
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        try:
            yield conn
        finally:
            conn.close()

    def init_database(self):
        """Create the runs and sweep_points tables when missing"""
        with self.get_connection() as conn:
            cursor = conn.cursor()

            # One row per command that produced metrics
            cursor.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id TEXT UNIQUE NOT NULL,
                    command TEXT NOT NULL,
                    task_path TEXT DEFAULT '',
                    ablation TEXT DEFAULT 'none',
                    anchor_hop INTEGER DEFAULT 2,
                    config_json TEXT NOT NULL DEFAULT '{}',
                    metrics_json TEXT NOT NULL DEFAULT '{}',
                    checkpoint_path TEXT DEFAULT '',
                    notes TEXT DEFAULT '',
                    created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
                )
            """)

            # Per-k rows of hop sweeps, linked to their run
            cursor.execute("""
                CREATE TABLE IF NOT EXISTS sweep_points (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id TEXT NOT NULL,
                    k INTEGER NOT NULL,
                    mrr REAL NOT NULL,
                    hits_at_1 REAL DEFAULT 0.0,
                    hits_at_5 REAL DEFAULT 0.0,
                    hits_at_10 REAL DEFAULT 0.0,
                    num_degenerate_queries INTEGER DEFAULT 0,
                    FOREIGN KEY (run_id) REFERENCES runs (run_id)
                )
            """)

            cursor.execute("CREATE INDEX IF NOT EXISTS idx_runs_command ON runs (command)")
            cursor.execute("CREATE INDEX IF NOT EXISTS idx_sweep_run ON sweep_points (run_id)")
            conn.commit()

    def execute_query(self, query: str, params: tuple = ()) -> List[sqlite3.Row]:
        """Rows of a read query"""
        with self.get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute(query, params)
            return cursor.fetchall()

    def execute_update(self, query: str, params: tuple = ()) -> int:
        """Write query; returns the number of rows touched"""
        with self.get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute(query, params)
            conn.commit()
            return cursor.rowcount

    def execute_insert(self, query: str, params: tuple = ()) -> int:
        """Insert; returns the new rowid"""
        with self.get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute(query, params)
            conn.commit()
            return cursor.lastrowid

    def row_to_dict(self, row: sqlite3.Row) -> Dict[str, Any]:
        return dict(row) if row else {}

    def backup_database(self, backup_path: str = None) -> str:
        """Online copy of the registry; defaults to a timestamped file under data/backups"""
        if not backup_path:
            timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            backup_path = f"data/backups/runs_{timestamp}.db"

        backup_path = Path(backup_path)
        backup_path.parent.mkdir(parents=True, exist_ok=True)

        with self.get_connection() as source:
            with sqlite3.connect(backup_path) as backup:
                source.backup(backup)

        return str(backup_path)


_db: Optional[DatabaseManager] = None


def get_db() -> DatabaseManager:
    """Global registry database; ALIGN_DB_PATH overrides the location"""
    global _db
    path = os.environ.get("ALIGN_DB_PATH", DEFAULT_DB_PATH)
    if _db is None or str(_db.db_path) != str(Path(path)):
        _db = DatabaseManager(path)
    return _db
