"""Remote attestation: enclave identity, evidence reports, verification.

The enclave measurement is the SHA-256 digest of a canonical manifest that
lists the trusted application's build inputs. A report binds the
measurement to a verifier-chosen nonce and to the enclave's encryption key,
under an RSA-3072 PSS signature. Verification is one-way: data holders
appraise the miner enclave, never the reverse.
"""

from __future__ import annotations

import hashlib
import importlib.resources
import json
import os
from dataclasses import dataclass
from pathlib import Path

from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from .codec import b64u_decode, b64u_encode

__all__ = [
    "NONCE_BYTES",
    "compute_measurement",
    "default_manifest",
    "default_measurement",
    "new_nonce",
    "EnclaveIdentity",
    "AttestationReport",
    "ReferenceRegistry",
    "Verdict",
    "make_report",
    "verify_report",
]

NONCE_BYTES = 16
_MEASUREMENT_BYTES = 32
_RSA_BITS = 3072
_REPORT_FIELDS = ("measurement", "nonce", "enc_pub", "att_pub", "sig")

_PSS = padding.PSS(
    mgf=padding.MGF1(hashes.SHA256()),
    salt_length=padding.PSS.DIGEST_LENGTH,
)


def compute_measurement(manifest: bytes) -> bytes:
    """SHA-256 digest of the code manifest, the enclave's identity value."""
    return hashlib.sha256(manifest).digest()


def default_manifest() -> bytes:
    """The manifest shipped with this package."""
    return importlib.resources.files(__package__).joinpath("trusted_manifest.txt").read_bytes()


def default_measurement() -> bytes:
    return compute_measurement(default_manifest())


def new_nonce() -> bytes:
    """Fresh 16-byte challenge; uniqueness defeats report replay."""
    return os.urandom(NONCE_BYTES)


def _pub_der(key: rsa.RSAPrivateKey) -> bytes:
    return key.public_key().public_bytes(
        serialization.Encoding.DER,
        serialization.PublicFormat.SubjectPublicKeyInfo,
    )


@dataclass(frozen=True)
class EnclaveIdentity:
    """Key material and measurement of one (simulated) enclave instance."""

    att_priv: rsa.RSAPrivateKey
    enc_priv: rsa.RSAPrivateKey
    measurement: bytes

    @classmethod
    def generate(cls, manifest: bytes | None = None) -> "EnclaveIdentity":
        if manifest is None:
            manifest = default_manifest()
        return cls(
            att_priv=rsa.generate_private_key(public_exponent=65537, key_size=_RSA_BITS),
            enc_priv=rsa.generate_private_key(public_exponent=65537, key_size=_RSA_BITS),
            measurement=compute_measurement(manifest),
        )

    @property
    def att_pub_der(self) -> bytes:
        return _pub_der(self.att_priv)

    @property
    def enc_pub_der(self) -> bytes:
        return _pub_der(self.enc_priv)


@dataclass(frozen=True, slots=True)
class AttestationReport:
    """Signed evidence: measurement, echoed nonce and both public keys."""

    measurement: bytes
    nonce: bytes
    enc_pub: bytes
    att_pub: bytes
    sig: bytes

    def to_dict(self) -> dict[str, str]:
        return {
            "measurement": b64u_encode(self.measurement),
            "nonce": b64u_encode(self.nonce),
            "enc_pub": b64u_encode(self.enc_pub),
            "att_pub": b64u_encode(self.att_pub),
            "sig": b64u_encode(self.sig),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "AttestationReport":
        missing = [f for f in _REPORT_FIELDS if f not in raw]
        if missing:
            raise ValueError(f"report misses field(s): {', '.join(missing)}")
        return cls(**{f: b64u_decode(raw[f]) for f in _REPORT_FIELDS})


def _signing_input(measurement: bytes, nonce: bytes, enc_pub: bytes) -> bytes:
    # measurement and nonce have fixed lengths, so plain concatenation is
    # unambiguous.
    return measurement + nonce + enc_pub


def make_report(identity: EnclaveIdentity, nonce: bytes) -> AttestationReport:
    """Produce signed evidence answering one challenge."""
    if len(nonce) != NONCE_BYTES:
        raise ValueError(f"nonce must be {NONCE_BYTES} bytes, got {len(nonce)}")
    enc_pub = identity.enc_pub_der
    sig = identity.att_priv.sign(
        _signing_input(identity.measurement, nonce, enc_pub), _PSS, hashes.SHA256()
    )
    return AttestationReport(
        measurement=identity.measurement,
        nonce=nonce,
        enc_pub=enc_pub,
        att_pub=identity.att_pub_der,
        sig=sig,
    )


@dataclass(frozen=True)
class ReferenceRegistry:
    """Measurements the verifier accepts as trustworthy builds."""

    measurements: frozenset[bytes]

    def __post_init__(self) -> None:
        bad = [m for m in self.measurements if len(m) != _MEASUREMENT_BYTES]
        if bad:
            raise ValueError(f"measurements must be {_MEASUREMENT_BYTES} bytes")

    @classmethod
    def of(cls, *measurements: bytes) -> "ReferenceRegistry":
        return cls(frozenset(measurements))

    def to_json(self) -> str:
        digests = sorted(m.hex() for m in self.measurements)
        return json.dumps({"accepted_measurements": digests}, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ReferenceRegistry":
        raw = json.loads(text)
        digests = raw.get("accepted_measurements")
        if not isinstance(digests, list):
            raise ValueError("registry needs an accepted_measurements list")
        return cls(frozenset(bytes.fromhex(d) for d in digests))

    @classmethod
    def load(cls, path: str | Path) -> "ReferenceRegistry":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


@dataclass(frozen=True, slots=True)
class Verdict:
    """Outcome of report appraisal; rejection is a value, never an exception."""

    trusted: bool
    reason: str | None = None


def verify_report(
    report: AttestationReport,
    expected_nonce: bytes,
    registry: ReferenceRegistry,
) -> Verdict:
    """Appraise evidence: genuine signature, fresh nonce, known measurement.

    Returns a rejected verdict with reason bad_signature, stale_nonce or
    unknown_measurement; malformed key or signature material counts as
    bad_signature.
    """
    try:
        att_pub = serialization.load_der_public_key(report.att_pub)
        if not isinstance(att_pub, rsa.RSAPublicKey):
            return Verdict(False, "bad_signature")
        att_pub.verify(
            report.sig,
            _signing_input(report.measurement, report.nonce, report.enc_pub),
            _PSS,
            hashes.SHA256(),
        )
    except Exception:
        return Verdict(False, "bad_signature")
    if report.nonce != expected_nonce:
        return Verdict(False, "stale_nonce")
    if report.measurement not in registry.measurements:
        return Verdict(False, "unknown_measurement")
    return Verdict(True, None)
