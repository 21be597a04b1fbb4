"""Message schemas, case segmentation and segment encryption.

Segments carry whole cases only. The wire payload is the headerless
canonical CSV of the segment's cases; payload size is measured on exactly
those bytes. Each segment is sealed with a fresh AES-256-GCM key, and the
key together with the GCM nonce is wrapped for the receiving enclave with
RSA-OAEP(SHA-256).
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .codec import b64u_decode, b64u_encode
from .eventlog import CaseView, Event, EventLog, LogParseError, event_row, parse_timestamp

__all__ = [
    "KIB",
    "MIB",
    "DEFAULT_SEG_SIZE",
    "parse_size",
    "UnknownCaseRefsError",
    "IntegrityError",
    "EnvelopeFormatError",
    "Segment",
    "SegmentEnvelope",
    "case_payload",
    "segment_log",
    "parse_segment_payload",
    "encrypt_segment",
    "decrypt_segment",
    "CaseRefResponse",
    "CaseRequest",
    "AttestationChallenge",
    "AttestationAnswer",
    "Ack",
]

KIB = 1024
MIB = 1024 * 1024
DEFAULT_SEG_SIZE = 2 * MIB

_GCM_KEY_BYTES = 32
_GCM_NONCE_BYTES = 12
_GCM_TAG_BYTES = 16

_OAEP = padding.OAEP(
    mgf=padding.MGF1(algorithm=hashes.SHA256()),
    algorithm=hashes.SHA256(),
    label=None,
)

_SIZE_UNITS = {
    "b": 1,
    "kb": KIB,
    "kib": KIB,
    "mb": MIB,
    "mib": MIB,
    "gb": 1024 * MIB,
    "gib": 1024 * MIB,
}


def parse_size(text: str | int) -> int:
    """Parse '2MiB', '100KB' or a bare byte count. Units are binary."""
    if isinstance(text, int):
        return text
    raw = text.strip().lower().replace(" ", "")
    for suffix in sorted(_SIZE_UNITS, key=len, reverse=True):
        if raw.endswith(suffix):
            number = raw[: -len(suffix)]
            break
    else:
        number, suffix = raw, "b"
    try:
        value = float(number) if "." in number else int(number)
    except ValueError:
        raise ValueError(f"bad size {text!r}") from None
    size = int(value * _SIZE_UNITS[suffix])
    if size <= 0:
        raise ValueError(f"size must be positive, got {text!r}")
    return size


class UnknownCaseRefsError(ValueError):
    """Requested refs that the log does not contain."""

    def __init__(self, refs: list[str]):
        self.refs = sorted(refs)
        super().__init__(f"unknown case ref(s): {', '.join(self.refs)}")


class IntegrityError(Exception):
    """Decryption failed authentication; the segment was tampered with."""


class EnvelopeFormatError(ValueError):
    """A segment envelope is missing fields or carries bad encodings."""


# ---------------------------------------------------------------------------
# payload serialization


def case_payload(view: CaseView) -> bytes:
    """Headerless canonical CSV rows of one case, in view order."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    for ev in view.events:
        writer.writerow(event_row(ev))
    return out.getvalue().encode("utf-8")


def parse_segment_payload(payload: bytes, source_org: str | None = None) -> EventLog:
    """Parse headerless rows back into a log (column order is fixed)."""
    events: list[Event] = []
    reader = csv.reader(io.StringIO(payload.decode("utf-8")))
    for seq, row in enumerate(reader):
        if not row:
            continue
        if len(row) != 4:
            raise LogParseError(f"payload row {seq}: expected 4 fields, got {len(row)}")
        case_ref, stamp, activity, org = row
        events.append(Event(case_ref, activity, parse_timestamp(stamp), org, seq_hint=seq))
    return EventLog.from_events(events, source_org=source_org)


# ---------------------------------------------------------------------------
# segmentation


@dataclass(frozen=True, slots=True)
class Segment:
    """Plaintext transmission unit: whole cases of one org."""

    org: str
    seq_no: int
    total: int
    case_refs: tuple[str, ...]
    payload: bytes

    def __post_init__(self) -> None:
        if self.total < 1 or not 0 <= self.seq_no < self.total:
            raise ValueError(f"segment index {self.seq_no} outside 0..{self.total - 1}")
        if not self.case_refs:
            raise ValueError("segment must contain at least one case")


def segment_log(log: EventLog, refs: list[str] | set[str], seg_size: int, org: str) -> list[Segment]:
    """Pack the selected cases into segments of at most seg_size bytes.

    Cases are taken in sorted ref order and appended to the open segment
    while its payload still fits; a single case larger than seg_size gets a
    segment of its own. Cases are never split.
    """
    if seg_size < 1:
        raise ValueError(f"seg_size must be >= 1, got {seg_size}")
    wanted = sorted(set(refs))
    unknown = [r for r in wanted if r not in log.cases]
    if unknown:
        raise UnknownCaseRefsError(unknown)

    packed: list[tuple[list[str], list[bytes]]] = []
    open_refs: list[str] = []
    open_chunks: list[bytes] = []
    open_size = 0
    for ref in wanted:
        chunk = case_payload(log.cases[ref])
        if open_refs and open_size + len(chunk) > seg_size:
            packed.append((open_refs, open_chunks))
            open_refs, open_chunks, open_size = [], [], 0
        open_refs.append(ref)
        open_chunks.append(chunk)
        open_size += len(chunk)
    if open_refs:
        packed.append((open_refs, open_chunks))

    total = len(packed)
    return [
        Segment(org=org, seq_no=i, total=total, case_refs=tuple(refs_), payload=b"".join(chunks))
        for i, (refs_, chunks) in enumerate(packed)
    ]


# ---------------------------------------------------------------------------
# hybrid encryption


@dataclass(frozen=True, slots=True)
class SegmentEnvelope:
    """Encrypted segment as it travels to the enclave."""

    org: str
    seq_no: int
    total: int
    wrapped_key: bytes
    ciphertext: bytes
    auth_tag: bytes

    def __post_init__(self) -> None:
        if self.total < 1 or not 0 <= self.seq_no < self.total:
            raise EnvelopeFormatError(
                f"segment index {self.seq_no} outside 0..{self.total - 1}"
            )

    def to_dict(self) -> dict:
        return {
            "org": self.org,
            "seq_no": self.seq_no,
            "total": self.total,
            "wrapped_key": b64u_encode(self.wrapped_key),
            "ciphertext": b64u_encode(self.ciphertext),
            "auth_tag": b64u_encode(self.auth_tag),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SegmentEnvelope":
        try:
            return cls(
                org=str(raw["org"]),
                seq_no=int(raw["seq_no"]),
                total=int(raw["total"]),
                wrapped_key=b64u_decode(raw["wrapped_key"]),
                ciphertext=b64u_decode(raw["ciphertext"]),
                auth_tag=b64u_decode(raw["auth_tag"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise EnvelopeFormatError(f"bad segment envelope: {exc}") from None


def encrypt_segment(segment: Segment, enc_pub_der: bytes) -> SegmentEnvelope:
    """Seal one segment: fresh AES-256-GCM key, key+nonce wrapped with OAEP."""
    key = os.urandom(_GCM_KEY_BYTES)
    nonce = os.urandom(_GCM_NONCE_BYTES)
    sealed = AESGCM(key).encrypt(nonce, segment.payload, None)
    ciphertext, tag = sealed[:-_GCM_TAG_BYTES], sealed[-_GCM_TAG_BYTES:]
    enc_pub = serialization.load_der_public_key(enc_pub_der)
    if not isinstance(enc_pub, rsa.RSAPublicKey):
        raise ValueError("enclave encryption key is not an RSA public key")
    wrapped = enc_pub.encrypt(key + nonce, _OAEP)
    return SegmentEnvelope(
        org=segment.org,
        seq_no=segment.seq_no,
        total=segment.total,
        wrapped_key=wrapped,
        ciphertext=ciphertext,
        auth_tag=tag,
    )


def decrypt_segment(envelope: SegmentEnvelope, enc_priv: rsa.RSAPrivateKey) -> bytes:
    """Unwrap and open an envelope; any tampering raises IntegrityError."""
    try:
        secret = enc_priv.decrypt(envelope.wrapped_key, _OAEP)
    except ValueError as exc:
        raise IntegrityError(f"key unwrap failed: {exc}") from None
    if len(secret) != _GCM_KEY_BYTES + _GCM_NONCE_BYTES:
        raise IntegrityError("key unwrap failed: wrong secret length")
    key, nonce = secret[:_GCM_KEY_BYTES], secret[_GCM_KEY_BYTES:]
    try:
        return AESGCM(key).decrypt(nonce, envelope.ciphertext + envelope.auth_tag, None)
    except InvalidTag:
        raise IntegrityError("segment failed authentication") from None


# ---------------------------------------------------------------------------
# protocol messages


@dataclass(frozen=True, slots=True)
class CaseRefResponse:
    org: str
    refs: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"org": self.org, "refs": list(self.refs)}

    @classmethod
    def from_dict(cls, raw: dict) -> "CaseRefResponse":
        return cls(org=str(raw["org"]), refs=tuple(raw["refs"]))


@dataclass(frozen=True, slots=True)
class CaseRequest:
    seg_size: int
    refs: tuple[str, ...]
    callback: str

    def to_dict(self) -> dict:
        return {"seg_size": self.seg_size, "refs": list(self.refs), "callback": self.callback}

    @classmethod
    def from_dict(cls, raw: dict) -> "CaseRequest":
        try:
            return cls(
                seg_size=int(raw["seg_size"]),
                refs=tuple(str(r) for r in raw["refs"]),
                callback=str(raw["callback"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"bad case request: {exc}") from None


@dataclass(frozen=True, slots=True)
class AttestationChallenge:
    nonce: bytes

    def to_dict(self) -> dict:
        return {"nonce": b64u_encode(self.nonce)}

    @classmethod
    def from_dict(cls, raw: dict) -> "AttestationChallenge":
        return cls(nonce=b64u_decode(raw["nonce"]))


@dataclass(frozen=True, slots=True)
class AttestationAnswer:
    report: dict

    def to_dict(self) -> dict:
        return {"report": dict(self.report)}

    @classmethod
    def from_dict(cls, raw: dict) -> "AttestationAnswer":
        report = raw.get("report")
        if not isinstance(report, dict):
            raise ValueError("attestation answer needs a report object")
        return cls(report=report)


@dataclass(frozen=True, slots=True)
class Ack:
    status: str
    reason: str | None = None

    def to_dict(self) -> dict:
        out: dict = {"status": self.status}
        if self.reason is not None:
            out["reason"] = self.reason
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "Ack":
        return cls(status=str(raw.get("status", "")), reason=raw.get("reason"))
