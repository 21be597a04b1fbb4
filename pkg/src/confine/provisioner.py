"""Data holder service: announces case refs, gates them behind attestation.

The service itself is transport-neutral; an HTTP front end is provided for
real deployments and tests alike. Segments are pushed to the miner's
callback only after the evidence verified, so no case data ever leaves
before a trusted verdict.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Iterable
from urllib.parse import parse_qs, urlparse

from .attest import AttestationReport, ReferenceRegistry, new_nonce, verify_report
from .codec import b64u_encode
from .eventlog import EventLog
from .transport import TransportError
from .wire import (
    Ack,
    AttestationChallenge,
    CaseRefResponse,
    CaseRequest,
    UnknownCaseRefsError,
    encrypt_segment,
    segment_log,
)

__all__ = ["AccessDeniedError", "ProvisionerService", "ProvisionerServer"]

log = logging.getLogger(__name__)


class AccessDeniedError(PermissionError):
    """The requesting miner id is not on the allow-list."""


@dataclass
class _Pending:
    seg_size: int
    refs: tuple[str, ...]
    callback: str


@dataclass
class ProvisionerService:
    """One organization's provisioner: refs, challenges, sealed segments."""

    org_id: str
    log_data: EventLog
    registry: ReferenceRegistry
    allowed_miners: Iterable[str]
    push: Callable[[str, dict], dict]
    push_retries: int = 3
    retry_backoff_s: float = 0.05
    _pending: dict[bytes, _Pending] = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self) -> None:
        self.allowed_miners = set(self.allowed_miners)
        if not self.registry.measurements:
            raise ValueError("reference registry is empty, nothing could ever be trusted")

    # -- stage 1: initialization ------------------------------------------

    def serve_case_refs(self, miner_id: str) -> dict:
        """List the case refs this org holds; empty logs yield empty lists."""
        if "*" not in self.allowed_miners and miner_id not in self.allowed_miners:
            raise AccessDeniedError(f"miner {miner_id!r} is not allowed at org {self.org_id!r}")
        return CaseRefResponse(org=self.org_id, refs=tuple(self.log_data.case_refs())).to_dict()

    # -- stage 2: challenge and attestation --------------------------------

    def handle_case_request(self, body: dict) -> dict:
        """Validate a case request and answer with a fresh challenge."""
        req = CaseRequest.from_dict(body)
        if req.seg_size < 1:
            raise ValueError(f"seg_size must be >= 1, got {req.seg_size}")
        if not req.callback:
            raise ValueError("case request needs a callback URL")
        unknown = [r for r in req.refs if r not in self.log_data.cases]
        if unknown:
            raise UnknownCaseRefsError(unknown)
        nonce = new_nonce()
        with self._lock:
            self._pending[nonce] = _Pending(req.seg_size, req.refs, req.callback)
        return AttestationChallenge(nonce=nonce).to_dict()

    def handle_attestation(self, body: dict) -> dict:
        """Appraise evidence; on trust, seal and push the requested cases.

        The nonce echoed inside the report selects the pending request. A
        report for an unknown or already consumed nonce is rejected as
        stale, so replays never release data twice.
        """
        try:
            report = AttestationReport.from_dict(body.get("report") or {})
        except ValueError:
            return Ack(status="rejected", reason="bad_signature").to_dict()

        with self._lock:
            # challenges are single-use: consumed on first answer, whatever
            # the verdict, so replays and retries always read stale_nonce
            pending = self._pending.pop(report.nonce, None)
        if pending is None:
            return Ack(status="rejected", reason="stale_nonce").to_dict()

        verdict = verify_report(report, expected_nonce=report.nonce, registry=self.registry)
        if not verdict.trusted:
            log.info("org %s rejected attestation: %s", self.org_id, verdict.reason)
            return Ack(status="rejected", reason=verdict.reason).to_dict()

        self._deliver(pending, report.enc_pub)
        return Ack(status="trusted").to_dict()

    # -- stage 3: transmission ---------------------------------------------

    def _deliver(self, pending: _Pending, enc_pub_der: bytes) -> None:
        segments = segment_log(self.log_data, list(pending.refs), pending.seg_size, self.org_id)
        log.info(
            "org %s delivering %d case(s) in %d segment(s)",
            self.org_id, len(pending.refs), len(segments),
        )
        for segment in segments:
            envelope = encrypt_segment(segment, enc_pub_der).to_dict()
            if not self._push_with_retry(pending.callback, envelope):
                log.error(
                    "org %s aborting transfer at segment %d/%d: callback %s unreachable",
                    self.org_id, segment.seq_no, segment.total, pending.callback,
                )
                return

    def _push_with_retry(self, callback: str, envelope: dict) -> bool:
        for attempt in range(self.push_retries):
            try:
                ack = Ack.from_dict(self.push(callback, envelope))
            except TransportError as exc:
                log.warning("push attempt %d to %s failed: %s", attempt + 1, callback, exc)
                time.sleep(self.retry_backoff_s * (attempt + 1))
                continue
            if ack.status == "ok":
                return True
            # The receiver answered but refused the segment; retrying the
            # same bytes cannot help.
            log.error("receiver at %s refused segment: %s", callback, ack.reason)
            return False
        return False


# ---------------------------------------------------------------------------
# HTTP front end


class _ProvisionerHandler(BaseHTTPRequestHandler):
    server_version = "confine-provisioner/0.1"

    def _send(self, status: int, body: dict) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _read_json(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length)
        body = json.loads(raw.decode("utf-8"))
        if not isinstance(body, dict):
            raise ValueError("request body must be a JSON object")
        return body

    def do_GET(self) -> None:  # noqa: N802 (http.server API)
        url = urlparse(self.path)
        if url.path != "/caserefs":
            self._send(404, {"error": "not found"})
            return
        miner_id = (parse_qs(url.query).get("miner_id") or [""])[0]
        if not miner_id:
            self._send(400, {"error": "miner_id query parameter is required"})
            return
        try:
            self._send(200, self.server.service.serve_case_refs(miner_id))
        except AccessDeniedError as exc:
            self._send(403, {"error": str(exc)})

    def do_POST(self) -> None:  # noqa: N802
        try:
            body = self._read_json()
        except ValueError as exc:
            self._send(400, {"error": f"bad JSON body: {exc}"})
            return
        service = self.server.service
        try:
            if self.path == "/cases":
                self._send(200, service.handle_case_request(body))
            elif self.path == "/attestation":
                self._send(200, service.handle_attestation(body))
            else:
                self._send(404, {"error": "not found"})
        except ValueError as exc:
            self._send(400, {"error": str(exc)})
        except Exception:
            log.exception("unhandled provisioner error")
            self._send(500, {"error": "internal error"})

    def log_message(self, fmt: str, *args) -> None:
        log.debug("%s %s", self.address_string(), fmt % args)


class ProvisionerServer:
    """Threaded HTTP server wrapping one ProvisionerService."""

    def __init__(self, service: ProvisionerService, host: str = "127.0.0.1", port: int = 0):
        self._httpd = ThreadingHTTPServer((host, port), _ProvisionerHandler)
        self._httpd.service = service
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "ProvisionerServer":
        self._thread.start()
        return self

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)
