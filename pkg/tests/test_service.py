import json
import time

import pytest
from fastapi.testclient import TestClient

from flowsmith.config import default_config
from flowsmith.gateway import CassetteStore, LLMGateway, ScriptedTransport
from flowsmith.scenarios import GOAL_FIG1
from flowsmith.service import create_app

from conftest import REPO_ROOT

SESSION_CASSETTES = REPO_ROOT / "fixtures" / "session"


def replay_app(tmp_path):
    gateway = LLMGateway(mode="replay", cassettes=CassetteStore(SESSION_CASSETTES))
    return create_app(tmp_path / "workspace", default_config(), gateway)


def poll(client, url, until, timeout=10.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        response = client.get(url)
        if response.status_code == 200 and until(response.json()):
            return response.json()
        time.sleep(0.02)
    raise AssertionError(f"timed out polling {url}")


@pytest.fixture()
def client(tmp_path):
    with TestClient(replay_app(tmp_path)) as c:
        yield c


def test_create_session(client):
    response = client.post("/sessions")
    assert response.status_code == 201
    assert response.json()["id"].startswith("session-")
    assert response.json()["status"] == "chatting"


def test_first_message_returns_capped_form(client):
    session = client.post("/sessions").json()
    response = client.post(f"/sessions/{session['id']}/messages", json={"text": GOAL_FIG1})
    assert response.status_code == 200
    turn = response.json()
    assert 0 < len(turn["questions"]) <= 3
    assert turn["coverage_hint"] in ("low", "medium", "high")


def test_unknown_session_404(client):
    assert client.post("/sessions/nope/messages", json={"text": "hi"}).status_code == 404
    assert client.get("/sessions/nope").status_code == 404


def test_empty_message_422(client):
    session = client.post("/sessions").json()
    assert client.post(f"/sessions/{session['id']}/messages", json={"text": "  "}).status_code == 422


def test_generate_on_empty_session_422(client):
    session = client.post("/sessions").json()
    assert client.post(f"/sessions/{session['id']}/generate").status_code == 422


def full_session_flow(client):
    session = client.post("/sessions").json()
    sid = session["id"]
    turn = client.post(f"/sessions/{sid}/messages", json={"text": GOAL_FIG1}).json()
    q = turn["questions"][0]
    answer_body = {
        "answers": [
            {"question_id": q["id"], "question": q["text"], "answer": "Use the Gaussian integral."}
        ]
    }
    turn2 = client.post(f"/sessions/{sid}/messages", json=answer_body)
    assert turn2.status_code == 200
    job = client.post(f"/sessions/{sid}/generate").json()
    done = poll(client, f"/jobs/{job['id']}", lambda j: j["phase"] in ("done", "failed"))
    assert done["phase"] == "done", done
    return sid, done["flow_id"]


def test_generate_job_to_flow_and_run(client):
    sid, flow_id = full_session_flow(client)
    flow_doc = client.get(f"/flows/{flow_id}").json()
    assert flow_doc["id"] == flow_id
    assert len(flow_doc["nodes"]) == 5
    assert len(flow_doc["edges"]) == 4

    session = client.get(f"/sessions/{sid}").json()
    # back to chatting: the user can refine the intent and regenerate
    assert session["status"] == "chatting"
    assert flow_id in session["flow_ids"]

    run = client.post(f"/flows/{flow_id}/run").json()
    final = poll(client, f"/runs/{run['id']}", lambda r: r["status"] in ("succeeded", "failed"))
    assert final["status"] == "succeeded"
    prompt_node = next(n["id"] for n in flow_doc["nodes"] if n["kind"] == "Prompt")
    assert len(final["result"]["responses"][prompt_node]) == 12


def test_replay_generation_subsecond(client):
    session = client.post("/sessions").json()
    sid = session["id"]
    client.post(f"/sessions/{sid}/messages", json={"text": GOAL_FIG1})
    started = time.monotonic()
    job = client.post(f"/sessions/{sid}/generate").json()
    poll(client, f"/jobs/{job['id']}", lambda j: j["phase"] in ("done", "failed"))
    assert time.monotonic() - started < 1.0


def test_job_phases_monotone(client):
    session = client.post("/sessions").json()
    sid = session["id"]
    client.post(f"/sessions/{sid}/messages", json={"text": GOAL_FIG1})
    job = client.post(f"/sessions/{sid}/generate").json()
    order = ["planning", "generating", "connecting", "reviewing", "done", "failed"]
    seen = []
    deadline = time.monotonic() + 10
    while time.monotonic() < deadline:
        phase = client.get(f"/jobs/{job['id']}").json()["phase"]
        if not seen or seen[-1] != phase:
            seen.append(phase)
        if phase in ("done", "failed"):
            break
    assert seen[-1] == "done"
    indices = [order.index(p) for p in seen]
    assert indices == sorted(indices)


def test_unknown_flow_job_run_404(client):
    assert client.get("/flows/flow-none").status_code == 404
    assert client.get("/jobs/job-none").status_code == 404
    assert client.get("/runs/run-none").status_code == 404


def test_put_flow_sets_edited_provenance(client):
    _sid, flow_id = full_session_flow(client)
    doc = client.get(f"/flows/{flow_id}").json()
    doc["nodes"][0]["x"] = 999
    response = client.put(f"/flows/{flow_id}", json=doc)
    assert response.status_code == 200
    saved = client.get(f"/flows/{flow_id}").json()
    assert saved["provenance"] == "edited"
    moved = next(n for n in saved["nodes"] if n["id"] == doc["nodes"][0]["id"])
    assert moved["x"] == 999


def test_put_malformed_flow_422_with_path(client):
    _sid, flow_id = full_session_flow(client)
    doc = client.get(f"/flows/{flow_id}").json()
    doc["nodes"][0]["kind"] = "Join"
    response = client.put(f"/flows/{flow_id}", json=doc)
    assert response.status_code == 422
    assert "kind" in json.dumps(response.json())


def test_run_invalid_flow_422_with_report(client):
    _sid, flow_id = full_session_flow(client)
    doc = client.get(f"/flows/{flow_id}").json()
    doc["edges"] = []  # unbind every variable
    client.put(f"/flows/{flow_id}", json=doc)
    response = client.post(f"/flows/{flow_id}/run")
    assert response.status_code == 422
    detail = response.json()["detail"]
    assert any(v["rule"] == "unbound_variable" for v in detail["violations"])


def test_state_recoverable_after_restart(tmp_path):
    with TestClient(replay_app(tmp_path)) as client:
        sid, flow_id = full_session_flow(client)
    # new app instance over the same workspace directory
    with TestClient(replay_app(tmp_path)) as reborn:
        assert reborn.get(f"/sessions/{sid}").status_code == 200
        assert reborn.get(f"/flows/{flow_id}").status_code == 200
        run = reborn.post(f"/flows/{flow_id}/run").json()
        final = poll(reborn, f"/runs/{run['id']}", lambda r: r["status"] in ("succeeded", "failed"))
        assert final["status"] == "succeeded"


def slow_mock_app(tmp_path, hold_s=0.6):
    def slow_plan(_request):
        time.sleep(hold_s)
        return json.dumps(
            {
                "rationale": "r",
                "tasks": [
                    {"id": "t", "kind": "TextFields", "instructions": "one field titled 'x'", "depends_on": []}
                ],
            }
        )

    transport = ScriptedTransport(
        [slow_plan], default=lambda _r: json.dumps({"title": "x", "fields": ["value"]})
    )
    gateway = LLMGateway(mode="mock", transport=transport)
    return create_app(tmp_path / "workspace", default_config(), gateway)


def test_message_during_generation_409(tmp_path):
    with TestClient(slow_mock_app(tmp_path)) as client:
        session = client.post("/sessions").json()
        sid = session["id"]
        # seed a user message without a dialogue turn: post would consume mock
        # script, so generate directly after a scripted first message
        gateway_free_body = {"text": "make a tiny flow"}
        # the slow plan holds the job in "generating" long enough to race
        service = client.app.state.service
        doc = service.get_session(sid)
        doc["state"]["history"] = [{"role": "user", "content": "make a tiny flow"}]
        service.workspace.write("sessions", sid, doc)
        client.post(f"/sessions/{sid}/generate")
        assert client.post(f"/sessions/{sid}/messages", json=gateway_free_body).status_code == 409
        assert client.post(f"/sessions/{sid}/generate").status_code == 409
        poll(client, f"/sessions/{sid}", lambda s: s["status"] != "generating")


def test_cancel_job_best_effort(tmp_path):
    with TestClient(slow_mock_app(tmp_path, hold_s=0.4)) as client:
        session = client.post("/sessions").json()
        sid = session["id"]
        service = client.app.state.service
        doc = service.get_session(sid)
        doc["state"]["history"] = [{"role": "user", "content": "go"}]
        service.workspace.write("sessions", sid, doc)
        job = client.post(f"/sessions/{sid}/generate").json()
        assert client.delete(f"/jobs/{job['id']}").status_code == 202
        final = poll(client, f"/jobs/{job['id']}", lambda j: j["phase"] in ("done", "failed"))
        assert final["phase"] == "failed"
        assert final["error"] == "cancelled"


def test_api_never_leaks_provider_bodies(tmp_path):
    from flowsmith.gateway import ProviderError

    transport = ScriptedTransport([ProviderError(500, "SECRET-TOKEN-abc123")] * 4)
    gateway = LLMGateway(mode="mock", transport=transport, retry_backoffs=(0.0,))
    with TestClient(create_app(tmp_path / "ws", default_config(), gateway)) as client:
        session = client.post("/sessions").json()
        response = client.post(f"/sessions/{session['id']}/messages", json={"text": "hello"})
        assert response.status_code == 503
        assert "SECRET-TOKEN" not in response.text
