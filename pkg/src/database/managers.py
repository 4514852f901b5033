import json
from datetime import datetime
from typing import List, Optional, Dict, Any

import pandas as pd

from src.database.database import get_db
from src.models.models import RunRecord


def _row_to_record(row: Dict[str, Any]) -> RunRecord:
    created = row.get("created_at")
    if isinstance(created, str):
        try:
            created = datetime.fromisoformat(created)
        except ValueError:
            created = None
    return RunRecord(
        id=row["id"],
        run_id=row["run_id"],
        command=row["command"],
        task_path=row.get("task_path") or "",
        ablation=row.get("ablation") or "none",
        anchor_hop=row.get("anchor_hop") or 0,
        config=json.loads(row.get("config_json") or "{}"),
        metrics=json.loads(row.get("metrics_json") or "{}"),
        checkpoint_path=row.get("checkpoint_path") or "",
        notes=row.get("notes") or "",
        created_at=created,
    )


class RunManager:
    @staticmethod
    def record_run(run: RunRecord) -> int:
        """Store a finished run and return its row ID"""
        db = get_db()
        query = """
            INSERT INTO runs (run_id, command, task_path, ablation, anchor_hop,
                              config_json, metrics_json, checkpoint_path, notes)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
        """
        return db.execute_insert(query, (
            run.run_id, run.command, run.task_path, run.ablation, run.anchor_hop,
            json.dumps(run.config, sort_keys=True), json.dumps(run.metrics, sort_keys=True),
            run.checkpoint_path, run.notes
        ))

    @staticmethod
    def get_run(run_id: str) -> Optional[RunRecord]:
        """Get a run by its run ID"""
        db = get_db()
        rows = db.execute_query("SELECT * FROM runs WHERE run_id = ?", (run_id,))
        if rows:
            return _row_to_record(db.row_to_dict(rows[0]))
        return None

    @staticmethod
    def get_all_runs(limit: int = 100) -> List[RunRecord]:
        """Most recent runs first"""
        db = get_db()
        rows = db.execute_query("SELECT * FROM runs ORDER BY id DESC LIMIT ?", (limit,))
        return [_row_to_record(db.row_to_dict(row)) for row in rows]

    @staticmethod
    def search_runs(command: str = "", ablation: str = "", limit: int = 100) -> List[RunRecord]:
        """Filter runs by command and ablation"""
        db = get_db()
        query = "SELECT * FROM runs WHERE 1=1"
        params = []
        if command:
            query += " AND command = ?"
            params.append(command)
        if ablation:
            query += " AND ablation = ?"
            params.append(ablation)
        query += " ORDER BY id DESC LIMIT ?"
        params.append(limit)
        rows = db.execute_query(query, tuple(params))
        return [_row_to_record(db.row_to_dict(row)) for row in rows]

    @staticmethod
    def update_notes(run_id: str, notes: str) -> bool:
        db = get_db()
        return db.execute_update("UPDATE runs SET notes = ? WHERE run_id = ?", (notes, run_id)) > 0

    @staticmethod
    def delete_run(run_id: str) -> bool:
        """Delete a run and its sweep points"""
        db = get_db()
        db.execute_update("DELETE FROM sweep_points WHERE run_id = ?", (run_id,))
        return db.execute_update("DELETE FROM runs WHERE run_id = ?", (run_id,)) > 0

    @staticmethod
    def runs_frame(runs: List[RunRecord]) -> pd.DataFrame:
        """Flat table of runs with their headline metrics"""
        rows = []
        for run in runs:
            row = {
                "run_id": run.run_id[:8],
                "command": run.command,
                "ablation": run.ablation,
                "k": run.anchor_hop,
                "task": run.task_path,
                "created_at": run.created_at,
            }
            for key in ("mrr", "hits@1", "hits@10", "num_degenerate_queries", "max_relative_error"):
                if key in run.metrics:
                    row[key] = run.metrics[key]
            rows.append(row)
        return pd.DataFrame(rows)


class SweepManager:
    @staticmethod
    def record_sweep(run_id: str, frame: pd.DataFrame) -> int:
        """Store one row per k of a hop sweep"""
        db = get_db()
        query = """
            INSERT INTO sweep_points (run_id, k, mrr, hits_at_1, hits_at_5, hits_at_10, num_degenerate_queries)
            VALUES (?, ?, ?, ?, ?, ?, ?)
        """
        for k, row in frame.iterrows():
            db.execute_insert(query, (
                run_id, int(k), float(row["mrr"]), float(row.get("hits@1", 0.0)),
                float(row.get("hits@5", 0.0)), float(row.get("hits@10", 0.0)),
                int(row.get("num_degenerate_queries", 0))
            ))
        return len(frame)

    @staticmethod
    def get_sweep(run_id: str) -> pd.DataFrame:
        db = get_db()
        rows = db.execute_query("SELECT * FROM sweep_points WHERE run_id = ? ORDER BY k", (run_id,))
        frame = pd.DataFrame([db.row_to_dict(row) for row in rows])
        if frame.empty:
            return frame
        frame = frame.rename(columns={"hits_at_1": "hits@1", "hits_at_5": "hits@5", "hits_at_10": "hits@10"})
        return frame.drop(columns=["id", "run_id"]).set_index("k")
