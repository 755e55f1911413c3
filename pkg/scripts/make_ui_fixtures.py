#!/usr/bin/env python3
"""Regenerate the golden service-response fixtures for the browser UI tests.

Fits two artifacts (the third worked example and the synthetic intensive-care
process), serves each over the real HTTP consultation service, and captures
/meta plus a grid of /recommend responses — including error responses — as
JSON files under frontend/tests/fixtures/.  Each fixture stores the request
that produced it and the response body as the exact string the service sent,
so the UI tests can assert byte-for-byte agreement without the Python
service running.
"""

import json
import sys
import threading
import urllib.error
import urllib.request
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
from run_icu_style import icu_style_law  # noqa: E402

from superregime.estimate import EstimationConfig, run_fit  # noqa: E402
from superregime.serve import build_server  # noqa: E402
from superregime.simulate import build_example_law, draw_sample  # noqa: E402

FIXTURE_DIR = Path(__file__).resolve().parents[1] / "frontend" / "tests" / "fixtures"


def _capture(base: str, path: str, body: dict | None) -> dict:
    data = None if body is None else json.dumps(body).encode("utf-8")
    req = urllib.request.Request(base + path, data=data, method="GET" if data is None else "POST")
    if data is not None:
        req.add_header("Content-Type", "application/json")
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            status, raw = resp.status, resp.read().decode("utf-8")
    except urllib.error.HTTPError as err:
        status, raw = err.code, err.read().decode("utf-8")
    return {"path": path, "request": body, "status": status, "raw": raw}


def _with_server(artifact, fn):
    server = build_server(artifact, host="127.0.0.1", port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        return fn(f"http://127.0.0.1:{server.server_address[1]}")
    finally:
        server.shutdown()
        server.server_close()


def _write(name: str, fixture: dict) -> None:
    out = FIXTURE_DIR / f"{name}.json"
    out.write_text(json.dumps(fixture, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out.relative_to(FIXTURE_DIR.parents[1])} (status {fixture['status']})")


def ex3_fixtures() -> None:
    law = build_example_law(3, c=0.2)
    dataset = draw_sample(law, 6_000, seed=42)
    artifact = run_fit(dataset, EstimationConfig(bootstrap_reps=200, seed=5))

    def capture(base: str) -> None:
        _write("ex3_meta", _capture(base, "/meta", None))
        tags = {None: "u", 0: "0", 1: "1"}
        for intent, i_tag in tags.items():
            for instrument, z_tag in tags.items():
                body: dict = {"covariates": {}}
                if intent is not None:
                    body["intent"] = intent
                if instrument is not None:
                    body["instrument"] = instrument
                _write(f"ex3_recommend_intent-{i_tag}_z-{z_tag}", _capture(base, "/recommend", body))
        _write("ex3_error_bad_intent", _capture(base, "/recommend", {"covariates": {}, "intent": 7}))
        _write("ex3_error_unknown_path", _capture(base, "/nope", {}))

    _with_server(artifact, capture)


def icu_fixtures() -> None:
    law = icu_style_law()
    dataset = draw_sample(law, 13_011, seed=0)
    artifact = run_fit(dataset, EstimationConfig(bootstrap_reps=200, seed=0))

    def capture(base: str) -> None:
        _write("icu_meta", _capture(base, "/meta", None))
        # Success-path requests use the schema's native (integer) levels, the
        # same canonical form the UI submits; error-path requests use strings
        # so the captured messages show the quoted-repr shape.
        baseline = {"severe": 0, "resp_support": 0, "elderly": 0}
        _write("icu_recommend_baseline", _capture(base, "/recommend", {"covariates": baseline}))
        disclosed = {"severe": 1, "resp_support": 1, "elderly": 0}
        _write(
            "icu_recommend_disclosed",
            _capture(base, "/recommend", {"covariates": disclosed, "intent": 1, "instrument": 1}),
        )
        _write(
            "icu_error_unknown_level",
            _capture(base, "/recommend", {"covariates": {"severe": "5", "resp_support": "0", "elderly": "0"}}),
        )
        missing = {"severe": "0", "resp_support": "0"}
        _write("icu_error_missing_covariate", _capture(base, "/recommend", {"covariates": missing}))

    _with_server(artifact, capture)


def main() -> int:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    ex3_fixtures()
    icu_fixtures()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
