"""Edit service: submit/poll/download loop, error paths, crash recovery."""

import io
import json
import time

import pytest
from fastapi.testclient import TestClient

from lorashield import read_container
from lorashield.adapter import adapter_from_tensor_map
from lorashield.service import ServiceConfig, create_app
from lorashield.service.jobs import JobStore

JOB_TIMEOUT = 60.0


@pytest.fixture()
def service(desk_kit, tmp_path):
    config = ServiceConfig(
        spool_dir=tmp_path / "spool",
        bases={"desk-base": desk_kit["base"]},
        workers=1,
        queue_depth=8,
        max_upload_mb=1,
    )
    app = create_app(config)
    with TestClient(app) as client:
        yield client, desk_kit


def submit(client, kit, config=None):
    payload = {"base": "desk-base", "steps": 3}
    payload.update(config or {})
    return client.post(
        "/v1/edits",
        files={
            "adapter": ("adapter.st", kit["adapter"].read_bytes()),
            "concept": ("concept.st", kit["concept"].read_bytes()),
        },
        data={"config": json.dumps(payload)},
    )


def wait_done(client, job_id, timeout=JOB_TIMEOUT):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        doc = client.get(f"/v1/edits/{job_id}").json()
        if doc["state"] in ("succeeded", "failed"):
            return doc
        time.sleep(0.05)
    raise TimeoutError(job_id)


def test_submit_poll_download_loop(service):
    client, kit = service
    resp = submit(client, kit)
    assert resp.status_code == 202
    job_id = resp.json()["job_id"]
    assert len(job_id) == 36 and all(c in "0123456789abcdef-" for c in job_id)

    first_poll = client.get(f"/v1/edits/{job_id}").json()
    assert first_poll["state"] in ("queued", "running", "succeeded")

    doc = wait_done(client, job_id)
    assert doc["state"] == "succeeded", doc
    assert doc["artifacts"]["adapter"].endswith("/artifacts/adapter")
    assert doc["completed_at"] is not None

    edited = client.get(doc["artifacts"]["adapter"])
    assert edited.status_code == 200
    assert edited.headers["ETag"]
    adapter, _ = adapter_from_tensor_map(read_container(edited.content))
    assert adapter.layers

    report = client.get(doc["artifacts"]["report"])
    assert report.status_code == 200
    body = report.json()
    assert body["schema_version"].startswith("lorashield-report")
    assert body["edited_layers"]

    # identical second download (immutability + stable ETag)
    again = client.get(doc["artifacts"]["adapter"])
    assert again.content == edited.content
    assert again.headers["ETag"] == edited.headers["ETag"]


def test_unknown_base_is_404(service):
    client, kit = service
    resp = submit(client, kit, {"base": "no-such-base"})
    assert resp.status_code == 404
    body = resp.json()
    assert body["code"] == "unknown_base"
    assert body["field"] == "base"


def test_invalid_config_is_400_naming_field(service):
    client, kit = service
    resp = submit(client, kit, {"steps": 0})
    assert resp.status_code == 400
    body = resp.json()
    assert body["code"] == "invalid_config"
    assert "steps" in body["field"]


def test_invalid_bundle_is_400(service, tmp_path):
    client, kit = service
    resp = client.post(
        "/v1/edits",
        files={
            "adapter": ("adapter.st", kit["adapter"].read_bytes()),
            "concept": ("concept.st", b"garbage bytes"),
        },
        data={"config": json.dumps({"base": "desk-base"})},
    )
    assert resp.status_code == 400
    assert resp.json()["field"] == "concept"


def test_oversized_payload_is_413(service):
    client, kit = service
    big = b"\x00" * (2 * 1024 * 1024)  # limit is 1 MiB
    resp = client.post(
        "/v1/edits",
        files={"adapter": ("adapter.st", big), "concept": ("c.st", b"")},
        data={"config": json.dumps({"base": "desk-base"})},
    )
    assert resp.status_code == 413
    assert resp.json()["code"] == "payload_too_large"


def test_unknown_job_and_artifact_404(service):
    client, _ = service
    assert client.get("/v1/edits/00000000-0000-0000-0000-000000000000").status_code == 404
    resp = client.get("/v1/edits/00000000-0000-0000-0000-000000000000/artifacts/adapter")
    assert resp.status_code == 404


def test_download_before_completion_is_409(desk_kit, tmp_path):
    # No workers started: job stays queued while the app is alive.
    config = ServiceConfig(
        spool_dir=tmp_path / "spool409",
        bases={"desk-base": desk_kit["base"]},
        workers=1,
    )
    app = create_app(config)
    client = TestClient(app)  # no context: lifespan (worker start) skipped
    resp = submit(client, desk_kit)
    assert resp.status_code == 202
    job_id = resp.json()["job_id"]
    resp = client.get(f"/v1/edits/{job_id}/artifacts/adapter")
    assert resp.status_code == 409
    assert resp.json()["code"] == "not_ready"


def test_bases_and_health_endpoints(service):
    client, _ = service
    assert client.get("/v1/bases").json() == {"bases": ["desk-base"]}
    health = client.get("/healthz").json()
    assert health["status"] == "ok"
    assert health["workers"] == 1


def test_queue_full_is_503(desk_kit, tmp_path):
    config = ServiceConfig(
        spool_dir=tmp_path / "spool503",
        bases={"desk-base": desk_kit["base"]},
        workers=1,
        queue_depth=1,
    )
    app = create_app(config)
    client = TestClient(app)  # workers never started; queue fills up
    assert submit(client, desk_kit).status_code == 202
    resp = submit(client, desk_kit)
    assert resp.status_code == 503
    assert resp.json()["code"] == "queue_full"


def test_crash_recovery_requeues_running_jobs(desk_kit, tmp_path):
    spool = tmp_path / "spool_recover"
    config = ServiceConfig(
        spool_dir=spool, bases={"desk-base": desk_kit["base"]}, workers=1
    )
    # First process: accept a job but never run it (no lifespan).
    app = create_app(config)
    client = TestClient(app)
    job_id = submit(client, desk_kit).json()["job_id"]
    # Simulate a crash mid-run.
    store = JobStore(spool)
    record = store.read_record(job_id)
    record.state = "running"
    store.write_record(record)

    # Second process: startup re-queues and completes the job.
    with TestClient(create_app(config)) as client2:
        doc = wait_done(client2, job_id)
        assert doc["state"] == "succeeded"
