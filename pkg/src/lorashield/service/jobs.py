"""Spool-directory job store and worker pool.

Each job owns one subdirectory under the spool root:

    <spool>/<job_id>/
        adapter.st   concept.st   config.json    # inputs
        state.json                               # job record
        edited.st    report.json                 # artifacts (on success)

All files are written to a temporary name and atomically renamed, so a
reader never observes a partial file and completed artifacts are
immutable. Jobs found queued or running at startup are re-queued.
"""

from __future__ import annotations

import json
import logging
import queue
import shutil
import threading
import time
import uuid
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

from ..adapter import adapter_from_tensor_map, base_weights_from_tensor_map, patch_tensor_map
from ..concepts import spec_from_tensor_map
from ..container import read_container_file, write_container
from ..editing import EditConfig, edit_adapter
from ..errors import LoraShieldError
from .schemas import EditRequestConfig

log = logging.getLogger("lorashield.service")

ADAPTER_FILE = "adapter.st"
CONCEPT_FILE = "concept.st"
CONFIG_FILE = "config.json"
STATE_FILE = "state.json"
ARTIFACTS = {"adapter": "edited.st", "report": "report.json"}


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


@dataclass
class JobRecord:
    job_id: str
    state: str
    submitted_at: str
    config: dict
    completed_at: str | None = None
    failure_reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "state": self.state,
            "submitted_at": self.submitted_at,
            "completed_at": self.completed_at,
            "config": self.config,
            "failure_reason": self.failure_reason,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "JobRecord":
        return cls(
            job_id=doc["job_id"],
            state=doc["state"],
            submitted_at=doc["submitted_at"],
            config=doc.get("config", {}),
            completed_at=doc.get("completed_at"),
            failure_reason=doc.get("failure_reason"),
        )


class JobStore:
    """Filesystem-backed job records; one writer per job, snapshot reads."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def job_dir(self, job_id: str) -> Path:
        return self.root / job_id

    def create(self, adapter: bytes, concept: bytes, config: EditRequestConfig) -> JobRecord:
        job_id = str(uuid.uuid4())
        jdir = self.job_dir(job_id)
        jdir.mkdir()
        _atomic_write(jdir / ADAPTER_FILE, adapter)
        _atomic_write(jdir / CONCEPT_FILE, concept)
        _atomic_write(jdir / CONFIG_FILE, config.model_dump_json().encode("utf-8"))
        record = JobRecord(
            job_id=job_id, state="queued", submitted_at=_utcnow(),
            config=config.model_dump(),
        )
        self.write_record(record)
        return record

    def write_record(self, record: JobRecord) -> None:
        _atomic_write(
            self.job_dir(record.job_id) / STATE_FILE,
            json.dumps(record.to_dict(), sort_keys=True).encode("utf-8"),
        )

    def read_record(self, job_id: str) -> JobRecord | None:
        state_path = self.job_dir(job_id) / STATE_FILE
        if not state_path.is_file():
            return None
        return JobRecord.from_dict(json.loads(state_path.read_text(encoding="utf-8")))

    def artifact_path(self, job_id: str, kind: str) -> Path | None:
        filename = ARTIFACTS.get(kind)
        if filename is None:
            return None
        return self.job_dir(job_id) / filename

    def pending_ids(self) -> list[str]:
        """Jobs left queued or running by a previous process, oldest first."""
        pending = []
        for state_path in sorted(self.root.glob("*/state.json")):
            record = JobRecord.from_dict(json.loads(state_path.read_text(encoding="utf-8")))
            if record.state in ("queued", "running"):
                pending.append((record.submitted_at, record.job_id))
        return [job_id for _, job_id in sorted(pending)]

    def sweep_expired(self, ttl: timedelta) -> int:
        """Delete finished jobs whose completion predates the TTL."""
        cutoff = datetime.now(timezone.utc) - ttl
        removed = 0
        for state_path in list(self.root.glob("*/state.json")):
            record = JobRecord.from_dict(json.loads(state_path.read_text(encoding="utf-8")))
            if record.state not in ("succeeded", "failed") or not record.completed_at:
                continue
            if datetime.fromisoformat(record.completed_at) < cutoff:
                shutil.rmtree(state_path.parent, ignore_errors=True)
                removed += 1
        if removed:
            log.info("swept %d expired job(s)", removed)
        return removed


def run_edit_job(store: JobStore, job_id: str, bases: dict[str, Path]) -> None:
    """Execute one job end to end, updating its state file."""
    record = store.read_record(job_id)
    if record is None or record.state not in ("queued", "running"):
        return
    record.state = "running"
    store.write_record(record)
    jdir = store.job_dir(job_id)
    try:
        req = EditRequestConfig.model_validate_json(
            (jdir / CONFIG_FILE).read_text(encoding="utf-8")
        )
        tmap = read_container_file(jdir / ADAPTER_FILE)
        adapter, _ = adapter_from_tensor_map(tmap)
        spec = spec_from_tensor_map(read_container_file(jdir / CONCEPT_FILE))
        base = base_weights_from_tensor_map(
            read_container_file(bases[req.base]), str(bases[req.base])
        )
        config = EditConfig(
            steps=req.steps, tau=req.tau, eta=req.eta,
            learning_rate=req.learning_rate, alpha=req.alpha,
            seed=req.seed, compute_dtype=req.compute_dtype,
        )
        edited, report = edit_adapter(
            adapter, base, spec, config,
            patterns=req.patterns, rank_override=req.rank,
        )
        payload = write_container(patch_tensor_map(tmap, edited, list(report.layers)))
        _atomic_write(jdir / ARTIFACTS["adapter"], payload)
        _atomic_write(
            jdir / ARTIFACTS["report"], (report.to_json(canonical=True) + "\n").encode("utf-8")
        )
        record.state = "succeeded"
    except (LoraShieldError, OSError, KeyError, ValueError) as exc:
        log.warning("job %s failed: %s", job_id, exc)
        record.state = "failed"
        record.failure_reason = f"{type(exc).__name__}: {exc}"
    record.completed_at = _utcnow()
    store.write_record(record)


class WorkerPool:
    """Bounded FIFO queue drained by daemon threads."""

    def __init__(self, store: JobStore, bases: dict[str, Path], workers: int, depth: int):
        self.store = store
        self.bases = bases
        self.queue: queue.Queue[str | None] = queue.Queue(maxsize=depth)
        self.workers = max(1, workers)
        self._threads: list[threading.Thread] = []

    def start(self) -> None:
        for job_id in self.store.pending_ids():
            try:
                self.queue.put_nowait(job_id)
            except queue.Full:
                log.warning("recovered job %s exceeds queue depth; left queued", job_id)
        for i in range(self.workers):
            t = threading.Thread(target=self._loop, name=f"edit-worker-{i}", daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        for _ in self._threads:
            self.queue.put(None)
        for t in self._threads:
            t.join(timeout=5)
        self._threads.clear()

    def submit(self, job_id: str) -> bool:
        try:
            self.queue.put_nowait(job_id)
            return True
        except queue.Full:
            return False

    def _loop(self) -> None:
        while True:
            job_id = self.queue.get()
            if job_id is None:
                return
            try:
                run_edit_job(self.store, job_id, self.bases)
            except Exception:  # noqa: BLE001 - worker must survive anything
                log.exception("unexpected failure in job %s", job_id)
                record = self.store.read_record(job_id)
                if record is not None:
                    record.state = "failed"
                    record.failure_reason = "internal error"
                    record.completed_at = _utcnow()
                    self.store.write_record(record)
            finally:
                self.queue.task_done()


def wait_for_completion(store: JobStore, job_id: str, timeout: float = 60.0) -> JobRecord:
    """Poll until a job leaves the queued/running states (test helper)."""
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        record = store.read_record(job_id)
        if record is not None and record.state in ("succeeded", "failed"):
            return record
        time.sleep(0.05)
    raise TimeoutError(f"job {job_id} did not complete within {timeout}s")
