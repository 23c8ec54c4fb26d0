"""Record the visit-loop scenario against the real API into test fixtures.

Run from the repository root after installing the Python package:

    python3 frontend/scripts/record_fixtures.py

Produces frontend/tests/fixtures/visit_loop.json: an ordered list of
{method, path, body, status, response} entries that the frontend tests replay
through a fake transport.
"""

import json
import pathlib
import sys

from fastapi.testclient import TestClient

from persched.artifact import demo_artifact
from persched.service import create_app

OUT = pathlib.Path(__file__).parent.parent / "tests" / "fixtures" / "visit_loop.json"


def main():
    app = create_app(demo_artifact(), seed=20, n_theta=1, per_theta=150)
    client = TestClient(app)
    recorded = []

    def call(method, path, body=None, expect=None):
        if method == "GET":
            response = client.get(path)
        else:
            response = client.post(path, json=body)
        entry = {
            "method": method,
            "path": path,
            "body": body,
            "status": response.status_code,
            "response": response.json(),
        }
        if expect is not None and response.status_code != expect:
            raise SystemExit(f"{method} {path}: got {response.status_code}, expected {expect}")
        recorded.append(entry)
        return entry["response"]

    def proposals():
        for policy, params in [
            ("hybrid", "policy=hybrid&kappa=0.95&hybrid_center=med"),
            ("dyn_risk", "policy=dyn_risk&kappa=0.95"),
            ("exp", "policy=exp"),
            ("med", "policy=med"),
            ("annual", "policy=annual"),
            ("prias", "policy=prias"),
        ]:
            call("GET", f"/patients/demo/proposal?{params}", expect=200)

    def curves():
        call("GET", "/patients/demo/survival?points=81", expect=200)
        call("GET", "/patients/demo/psa-fit?points=61", expect=200)

    # the visit loop: create, first PSA, inspect; second PSA, inspect;
    # negative biopsy (proposals move later); upgraded biopsy (terminal).
    call("POST", "/patients", {"id": "demo", "age": 70}, expect=201)
    call("GET", "/patients/demo", expect=200)
    curves()
    proposals()

    call("POST", "/patients/demo/psa", {"time": 0.0, "psa": 5.6}, expect=200)
    curves()
    proposals()

    call("POST", "/patients/demo/psa", {"time": 0.5, "psa": 5.9}, expect=200)
    curves()
    proposals()

    call("POST", "/patients/demo/biopsies", {"time": 1.0, "upgraded": False}, expect=200)
    curves()
    proposals()

    call("POST", "/patients/demo/biopsies", {"time": 2.2, "upgraded": True}, expect=200)
    call("GET", "/patients/demo/proposal?policy=dyn_risk&kappa=0.95")  # 422 terminal

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(recorded, indent=1, sort_keys=True))
    print(f"wrote {OUT} with {len(recorded)} entries")


if __name__ == "__main__":
    sys.exit(main())
