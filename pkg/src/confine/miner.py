"""Miner session: the trusted application driving the protocol end to end.

Decrypted case data lives only in the session's private store and leaves
the process exclusively as mined nets and metrics. Every buffer inside the
simulated enclave is charged against an explicit memory budget: queued
ciphertext, the open plaintext buffer, retained case views, eligibility
bookkeeping and the running mining statistics.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .attest import EnclaveIdentity, make_report
from .eventlog import CaseView
from .hminer import DfStats, HeuristicsNet, MinerConfig, accumulate, build_net, serialize_net
from .merge import DeliveryError, EligibilityLedger, MergeSchema, DEFAULT_SCHEMA, merge_case
from .transport import TransportError
from .wire import (
    Ack,
    AttestationAnswer,
    AttestationChallenge,
    CaseRefResponse,
    CaseRequest,
    DEFAULT_SEG_SIZE,
    EnvelopeFormatError,
    MIB,
    SegmentEnvelope,
    case_payload,
    decrypt_segment,
    parse_segment_payload,
)

__all__ = [
    "EnclaveMemoryExceeded",
    "BudgetAccountingError",
    "InitializationError",
    "AttestationRejectedError",
    "IncompleteDeliveryError",
    "EnclaveBudget",
    "MinerSession",
    "MinerReceiver",
    "DEFAULT_CAPACITY",
]

log = logging.getLogger(__name__)

DEFAULT_CAPACITY = 128 * MIB

STAGES = ("init", "attest", "transmit", "compute")

# Logical byte sizes of enclave bookkeeping structures. They are charged
# like any buffer: the ledger grows with announced (case, org) pairs and
# every retained partial view costs a fixed overhead on top of its rows.
LEDGER_ENTRY_BYTES = 32
DELIVERY_ENTRY_BYTES = 16
PART_OVERHEAD_BYTES = 48


class EnclaveMemoryExceeded(RuntimeError):
    """A charge would push enclave memory beyond its capacity."""


class BudgetAccountingError(RuntimeError):
    """Charge and release calls went out of balance; this is a bug."""


class InitializationError(RuntimeError):
    """A provider could not be enumerated during initialization."""


class AttestationRejectedError(RuntimeError):
    """A provider refused this enclave's evidence."""

    def __init__(self, org: str, reason: str | None):
        self.org = org
        self.reason = reason
        super().__init__(f"org {org!r} rejected attestation: {reason}")


class IncompleteDeliveryError(RuntimeError):
    """Announced cases never arrived in full before the timeout."""

    def __init__(self, missing: dict[str, set[str]]):
        self.missing = missing
        stragglers = "; ".join(
            f"{ref} (waiting on {', '.join(sorted(orgs))})" for ref, orgs in sorted(missing.items())
        )
        super().__init__(f"incomplete deliveries: {stragglers or 'missing segments'}")


@dataclass
class EnclaveBudget:
    """Simulated enclave memory: explicit charge/release with a hard cap."""

    capacity: int = DEFAULT_CAPACITY
    in_use: int = 0
    peak: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def charge(self, n: int) -> None:
        if n < 0:
            raise BudgetAccountingError(f"negative charge of {n} bytes")
        with self._lock:
            if self.in_use + n > self.capacity:
                raise EnclaveMemoryExceeded(
                    f"charge of {n} bytes exceeds capacity: "
                    f"{self.in_use} in use of {self.capacity}"
                )
            self.in_use += n
            if self.in_use > self.peak:
                self.peak = self.in_use

    def release(self, n: int) -> None:
        if n < 0:
            raise BudgetAccountingError(f"negative release of {n} bytes")
        with self._lock:
            if n > self.in_use:
                raise BudgetAccountingError(
                    f"release of {n} bytes would drop in_use below zero ({self.in_use} held)"
                )
            self.in_use -= n


def _ct_size(env: SegmentEnvelope) -> int:
    return len(env.wrapped_key) + len(env.ciphertext) + len(env.auth_tag)


class MinerSession:
    """Runs initialization, acquisition and computation against providers.

    mode is "single_batch" (mine once after all cases merged) or
    "incremental" (fold merged cases into the statistics every
    batch_cases, releasing their buffers early).
    """

    def __init__(
        self,
        providers: list[str],
        transport,
        callback_url: str,
        seg_size: int = DEFAULT_SEG_SIZE,
        mode: str = "single_batch",
        batch_cases: int = 100,
        capacity: int = DEFAULT_CAPACITY,
        miner_config: MinerConfig = MinerConfig(),
        identity: EnclaveIdentity | None = None,
        miner_id: str = "miner1",
        timeout_s: float = 30.0,
        compute_enabled: bool = True,
        schema: MergeSchema = DEFAULT_SCHEMA,
    ):
        if mode not in ("single_batch", "incremental"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "incremental" and batch_cases < 1:
            raise ValueError("batch_cases must be >= 1")
        if seg_size < 1:
            raise ValueError("seg_size must be >= 1")
        self.providers = list(providers)
        self.transport = transport
        self.callback_url = callback_url
        self.seg_size = seg_size
        self.mode = mode
        self.batch_cases = batch_cases
        self.budget = EnclaveBudget(capacity=capacity)
        self.miner_config = miner_config
        self.identity = identity or EnclaveIdentity.generate()
        self.miner_id = miner_id
        self.timeout_s = timeout_s
        self.compute_enabled = compute_enabled
        self.schema = schema

        self.ledger = EligibilityLedger()
        self.stats = DfStats()
        self.net: HeuristicsNet | None = None
        self.metrics: list[tuple[float, str, int, int]] = []
        self.outbound: list[tuple[str, str]] = []  # secrecy audit transcript
        self.receiver_acks: list[str] = []

        self._queue: "queue.Queue[SegmentEnvelope]" = queue.Queue()
        self._fatal: BaseException | None = None
        self._org_urls: dict[str, str] = {}
        self._org_refs: dict[str, tuple[str, ...]] = {}
        self._org_total: dict[str, int] = {}
        self._org_received: dict[str, set[int]] = {}
        # Enclave-tagged store: raw case data is reachable only through
        # these private buffers and is never exported.
        self._parts: dict[str, list[CaseView]] = {}
        self._case_bytes: dict[str, int] = {}
        self._eligible: list[CaseView] = []
        self._stats_charged = 0
        self._ledger_charged = 0
        self._stage = "init"
        self._t0 = time.perf_counter()

    # -- instrumentation ----------------------------------------------------

    def _metric(self) -> None:
        t_ms = (time.perf_counter() - self._t0) * 1000.0
        self.metrics.append((round(t_ms, 3), self._stage, self.budget.in_use, self.budget.peak))

    def metrics_csv(self) -> str:
        lines = ["t_ms,stage,in_use_bytes,peak_bytes"]
        for t_ms, stage, in_use, peak in self.metrics:
            lines.append(f"{t_ms},{stage},{in_use},{peak}")
        return "\n".join(lines) + "\n"

    def exports(self) -> dict[str, bytes]:
        """Everything the enclave ever hands to the outside."""
        out = {"metrics.csv": self.metrics_csv().encode("utf-8")}
        if self.net is not None:
            out["net.json"] = serialize_net(self.net, "json").encode("utf-8")
            out["net.dot"] = serialize_net(self.net, "dot").encode("utf-8")
        return out

    def emitted_payloads(self) -> list[bytes]:
        """All byte blobs that crossed the enclave boundary outward."""
        blobs = [body.encode("utf-8") for _url, body in self.outbound]
        blobs.extend(ack.encode("utf-8") for ack in self.receiver_acks)
        blobs.extend(self.exports().values())
        return blobs

    def _send(self, kind: str, url: str, body: dict) -> dict:
        text = json.dumps(body, sort_keys=True)
        self.outbound.append((url, text))
        if kind == "cases":
            return self.transport.post_cases(url, body)
        return self.transport.post_attestation(url, body)

    # -- segment intake ------------------------------------------------------

    def enqueue(self, raw: dict) -> dict:
        """Accept one pushed envelope; called by the callback receiver."""
        try:
            env = SegmentEnvelope.from_dict(raw)
        except EnvelopeFormatError as exc:
            ack = Ack(status="error", reason=str(exc)).to_dict()
            self.receiver_acks.append(json.dumps(ack, sort_keys=True))
            return ack
        try:
            self.budget.charge(_ct_size(env))
        except EnclaveMemoryExceeded as exc:
            self._fatal = exc
            ack = Ack(status="error", reason="enclave memory exceeded").to_dict()
            self.receiver_acks.append(json.dumps(ack, sort_keys=True))
            return ack
        self._queue.put(env)
        ack = Ack(status="ok").to_dict()
        self.receiver_acks.append(json.dumps(ack, sort_keys=True))
        return ack

    # -- stage 1: initialization ---------------------------------------------

    def run_initialization(self) -> None:
        """Learn which org holds which cases; builds the eligibility ledger."""
        self._stage = "init"
        self._metric()
        for url in self.providers:
            try:
                resp = CaseRefResponse.from_dict(self.transport.get_case_refs(url, self.miner_id))
            except TransportError as exc:
                raise InitializationError(f"provider {url} failed: {exc.detail}") from None
            if resp.org in self._org_urls:
                raise InitializationError(f"duplicate org {resp.org!r} announced by {url}")
            self._org_urls[resp.org] = url
            self._org_refs[resp.org] = resp.refs
            self.ledger.record_manifest(resp.org, list(resp.refs))
            entry_bytes = sum(len(ref) + len(resp.org) + LEDGER_ENTRY_BYTES for ref in resp.refs)
            self.budget.charge(entry_bytes)
            self._ledger_charged += entry_bytes
            log.info("org %s announced %d case(s)", resp.org, len(resp.refs))
            self._metric()

    # -- stage 2 + 3: attestation and transmission ----------------------------

    def run_acquisition(self) -> None:
        """Attest to every provider, then drain the segment queue."""
        self._stage = "attest"
        self._metric()
        for org in sorted(self._org_urls):
            refs = self._org_refs[org]
            if not refs:
                log.info("org %s holds no cases, skipping", org)
                continue
            url = self._org_urls[org]
            request = CaseRequest(seg_size=self.seg_size, refs=refs, callback=self.callback_url)
            challenge = AttestationChallenge.from_dict(self._send("cases", url, request.to_dict()))
            report = make_report(self.identity, challenge.nonce)
            answer = AttestationAnswer(report=report.to_dict())
            ack = Ack.from_dict(self._send("attestation", url, answer.to_dict()))
            if ack.status != "trusted":
                raise AttestationRejectedError(org, ack.reason)
            self._metric()

        self._stage = "transmit"
        self._metric()
        self._drain()

    def _expected_orgs(self) -> list[str]:
        return [org for org, refs in self._org_refs.items() if refs]

    def _transfer_complete(self) -> bool:
        for org in self._expected_orgs():
            total = self._org_total.get(org)
            if total is None or len(self._org_received.get(org, ())) < total:
                return False
        return True

    def _drain(self) -> None:
        # Envelopes are processed strictly one at a time: decrypt, merge,
        # release. Deliveries normally complete before the last Ack, so the
        # timeout only fires when a provider withholds announced data.
        last_progress = time.monotonic()
        while not self._transfer_complete():
            if self._fatal is not None:
                raise self._fatal
            try:
                env = self._queue.get(timeout=0.05)
            except queue.Empty:
                if time.monotonic() - last_progress > self.timeout_s:
                    break
                continue
            self._process_envelope(env)
            last_progress = time.monotonic()
        if self._fatal is not None:
            raise self._fatal
        if not self._transfer_complete() or self.ledger.pending_refs():
            raise IncompleteDeliveryError(self.ledger.missing())

    def _process_envelope(self, env: SegmentEnvelope) -> None:
        if env.org not in self._org_refs:
            raise DeliveryError(f"segment from unannounced org {env.org!r}")
        total = self._org_total.setdefault(env.org, env.total)
        if env.total != total or not 0 <= env.seq_no < total:
            raise DeliveryError(
                f"org {env.org!r} segment {env.seq_no}/{env.total} contradicts total {total}"
            )
        received = self._org_received.setdefault(env.org, set())
        if env.seq_no in received:
            raise DeliveryError(f"org {env.org!r} pushed segment {env.seq_no} twice")

        payload = decrypt_segment(env, self.identity.enc_priv)
        self.budget.charge(len(payload))
        part_log = parse_segment_payload(payload, source_org=env.org)
        for ref in part_log.case_refs():
            view = part_log.cases[ref]
            newly_eligible = self.ledger.record_delivery(env.org, ref)
            entry = len(env.org) + DELIVERY_ENTRY_BYTES
            self.budget.charge(entry)
            self._ledger_charged += entry
            size = len(case_payload(view)) + PART_OVERHEAD_BYTES
            self.budget.charge(size)
            self._case_bytes[ref] = self._case_bytes.get(ref, 0) + size
            self._parts.setdefault(ref, []).append(view)
            if newly_eligible:
                merged = merge_case(self._parts.pop(ref), self.schema)
                self._eligible.append(merged)
                if self.mode == "incremental" and len(self._eligible) >= self.batch_cases:
                    self._flush()
        self.budget.release(len(payload))
        self.budget.release(_ct_size(env))
        received.add(env.seq_no)
        self._metric()

    def _flush(self) -> None:
        """Fold buffered merged cases into the statistics, free their bytes."""
        if not self._eligible:
            return
        accumulate(self.stats, self._eligible)
        new_estimate = self.stats.estimate_bytes()
        if new_estimate > self._stats_charged:
            self.budget.charge(new_estimate - self._stats_charged)
            self._stats_charged = new_estimate
        freed = sum(self._case_bytes.pop(view.case_ref) for view in self._eligible)
        self.budget.release(freed)
        self._eligible.clear()
        self._metric()

    # -- stage 4: computation --------------------------------------------------

    def run_computation(self) -> HeuristicsNet | None:
        """Mine the merged cases; with computation disabled, just clean up."""
        self._stage = "compute"
        self._metric()
        if not self.compute_enabled:
            self.finish()
            return None
        self._flush()
        if self.stats.case_count == 0:
            raise ValueError("no eligible cases were delivered, nothing to mine")
        self.net = build_net(self.stats, self.miner_config)
        self._metric()
        self.finish()
        return self.net

    def finish(self) -> None:
        """Release every enclave buffer; in_use returns to the baseline."""
        while True:
            try:
                env = self._queue.get_nowait()
            except queue.Empty:
                break
            self.budget.release(_ct_size(env))
        leftover = sum(self._case_bytes.values())
        if leftover:
            self.budget.release(leftover)
        self._case_bytes.clear()
        self._parts.clear()
        self._eligible.clear()
        if self._stats_charged:
            self.budget.release(self._stats_charged)
            self._stats_charged = 0
        if self._ledger_charged:
            self.budget.release(self._ledger_charged)
            self._ledger_charged = 0
        self._metric()

    def run(self) -> HeuristicsNet | None:
        """Full protocol: initialization, acquisition, computation."""
        self.run_initialization()
        self.run_acquisition()
        if self.compute_enabled:
            return self.run_computation()
        self.finish()
        return None


# ---------------------------------------------------------------------------
# HTTP callback receiver


class _ReceiverHandler(BaseHTTPRequestHandler):
    server_version = "confine-miner/0.1"

    def do_POST(self) -> None:  # noqa: N802 (http.server API)
        if self.path != "/segments":
            self._send(404, {"error": "not found"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length).decode("utf-8"))
            if not isinstance(body, dict):
                raise ValueError("body must be a JSON object")
        except ValueError as exc:
            self._send(400, {"error": f"bad JSON body: {exc}"})
            return
        self._send(200, self.server.session.enqueue(body))

    def _send(self, status: int, body: dict) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, fmt: str, *args) -> None:
        log.debug("%s %s", self.address_string(), fmt % args)


class MinerReceiver:
    """Threaded HTTP endpoint where provisioners push segment envelopes."""

    def __init__(self, session: MinerSession, host: str = "127.0.0.1", port: int = 0):
        self._httpd = ThreadingHTTPServer((host, port), _ReceiverHandler)
        self._httpd.session = session
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MinerReceiver":
        self._thread.start()
        return self

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)
