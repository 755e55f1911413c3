"""Read-only consultation HTTP service over a fitted regime artifact.

The service does no estimation: every answer is a lookup into the artifact's
precomputed tables, so request handling is a pure function of
(artifact, request) and is trivially safe under concurrency.

Endpoints
---------
GET  /meta       schema, regime kinds, and the value table.
POST /recommend  body {"covariates": {...}, "intent": 0|1 (optional),
                 "instrument": 0|1 (optional)} -> recommendations for every
                 intent value, the gamma instruction, and value estimates.

Errors: 400 for malformed bodies and unknown covariate levels, 404 for
contexts absent from the artifact tables.
"""

from __future__ import annotations

import json
import logging
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .core import ValidationError
from .estimate import RegimeArtifact

logger = logging.getLogger(__name__)


class RequestRejected(Exception):
    """Carries the HTTP status and message for a rejected request."""

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def meta_document(artifact: RegimeArtifact) -> dict:
    return {
        "type": "consultation_meta",
        "covariates": list(artifact.covariates),
        "levels": {name: list(levels) for name, levels in artifact.levels.items()},
        "has_instrument": artifact.has_instrument,
        "regime_kinds": sorted(artifact.regimes),
        "value_estimates": artifact.value_estimates,
        "n_rows": artifact.n_rows,
        "schema_version": artifact.schema_version,
    }


def _parse_binary(name: str, raw) -> int:
    if isinstance(raw, bool):
        raise RequestRejected(400, f"{name!r} must be 0 or 1, got {raw!r}")
    if raw in (0, 1):
        return int(raw)
    if isinstance(raw, str) and raw.strip() in ("0", "1"):
        return int(raw.strip())
    raise RequestRejected(400, f"{name!r} must be 0 or 1, got {raw!r}")


def _resolve_context(artifact: RegimeArtifact, covariates) -> tuple:
    if not isinstance(covariates, dict):
        raise RequestRejected(400, "'covariates' must be an object")
    unknown = [name for name in covariates if name not in artifact.covariates]
    if unknown:
        raise RequestRejected(400, f"unknown covariate {unknown[0]!r}")
    context = []
    for name in artifact.covariates:
        if name not in covariates:
            raise RequestRejected(400, f"missing covariate {name!r}")
        value = covariates[name]
        declared = artifact.levels[name]
        # JSON clients may send numbers where the artifact stores strings
        # (or vice versa); match on the textual form as a fallback.
        for level in declared:
            if value == level or str(value) == str(level):
                context.append(level)
                break
        else:
            raise RequestRejected(
                400, f"unknown covariate level {name}={value!r} (declared: {list(declared)!r})"
            )
    return tuple(context)


def recommendation_document(artifact: RegimeArtifact, body) -> dict:
    if not isinstance(body, dict):
        raise RequestRejected(400, "request body must be a JSON object")
    context = _resolve_context(artifact, body.get("covariates", {}))
    intent = body.get("intent")
    if intent is not None:
        intent = _parse_binary("intent", intent)
    instrument = body.get("instrument")
    if instrument is not None:
        if not artifact.has_instrument:
            raise RequestRejected(400, "artifact has no instrument")
        instrument = _parse_binary("instrument", instrument)

    try:
        g_opt = artifact.regime("optimal_L").decide(l=context)
        sup = artifact.regime("superoptimal_LA")
        g_sup_by_intent = {"0": sup.decide(0, context), "1": sup.decide(1, context)}
        g_zsup_by_intent = None
        if instrument is not None:
            zsup = artifact.regime("superoptimal_LAZ")
            g_zsup_by_intent = {
                "0": zsup.decide(0, context, instrument),
                "1": zsup.decide(1, context, instrument),
            }
    except ValidationError:
        raise RequestRejected(404, f"context {context!r} absent from the artifact tables") from None
    instruction = artifact.instruction_map.get(context)
    if instruction is None:
        raise RequestRejected(404, f"context {context!r} absent from the instruction map")

    doc = {
        "g_opt": g_opt,
        "g_sup_by_intent": g_sup_by_intent,
        "gamma": int(instruction),
        "instruction": instruction.label,
        "value_estimates": artifact.value_estimates,
    }
    if g_zsup_by_intent is not None:
        doc["g_zsup_by_intent"] = g_zsup_by_intent
        doc["instrument"] = instrument
    if intent is not None:
        doc["intent"] = intent
        doc["g_sup"] = doc["g_sup_by_intent"][str(intent)]
        if g_zsup_by_intent is not None:
            doc["g_zsup"] = g_zsup_by_intent[str(intent)]
    return doc


class ConsultationHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    artifact: RegimeArtifact
    meta: dict

    def log_message(self, fmt, *args):  # route access logs away from stderr
        logger.debug("serve: " + fmt, *args)

    def _send(self, status: int, doc: dict) -> None:
        payload = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        if self.path.split("?")[0] == "/meta":
            self._send(200, self.meta)
        else:
            self._send(404, {"error": f"unknown path {self.path!r}"})

    def do_POST(self):
        if self.path.split("?")[0] != "/recommend":
            self._send(404, {"error": f"unknown path {self.path!r}"})
            return
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode("utf-8")) if raw else {}
        except (json.JSONDecodeError, UnicodeDecodeError) as err:
            self._send(400, {"error": f"body is not valid JSON: {err}"})
            return
        try:
            self._send(200, recommendation_document(self.artifact, body))
        except RequestRejected as err:
            self._send(err.status, {"error": err.message})


class ConsultationServer(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128  # burst of concurrent consultations must not RST


def build_server(
    artifact: RegimeArtifact, host: str = "127.0.0.1", port: int = 8000
) -> ConsultationServer:
    """HTTP server bound to `port` (0 picks a free one); caller runs serve_forever."""
    handler = type(
        "BoundConsultationHandler",
        (ConsultationHandler,),
        {"artifact": artifact, "meta": meta_document(artifact)},
    )
    return ConsultationServer((host, port), handler)
