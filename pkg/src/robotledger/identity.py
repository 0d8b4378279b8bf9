"""Per-organization certificate authorities and attribute-bearing certificates.

Certificates bind a subject to an organization and a set of attribute names
under an Ed25519 signature from the issuing CA.  The signed payload is a
field-ordered, length-prefixed byte encoding, so the same certificate always
serializes to the same bytes.

Usage::

    ca = create_ca("Org1", seed=7)
    cert = issue_certificate(ca, "salma", {"turtlebot4", "husky", "optitrack"})
    assert verify_certificate(cert, ca.verification_key)
    assert assert_attribute(cert, "husky")
"""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import AuthenticationError, ValidationError

ATTRIBUTE_PATTERN = re.compile(r"[a-z0-9_.-]+")
_U32 = struct.Struct(">I")


def validate_attribute(name: str) -> str:
    if not isinstance(name, str) or not ATTRIBUTE_PATTERN.fullmatch(name):
        raise ValidationError(f"invalid attribute name: {name!r}")
    return name


def _derive_private_key(org_id: str, seed: int | None) -> Ed25519PrivateKey:
    if seed is None:
        return Ed25519PrivateKey.generate()
    material = hashlib.sha256(f"robotledger-ca/{seed}/{org_id}".encode()).digest()
    return Ed25519PrivateKey.from_private_bytes(material)


@dataclass(frozen=True)
class CertificateAuthority:
    org_id: str
    _private_key: Ed25519PrivateKey = field(repr=False, compare=False)

    @property
    def verification_key(self) -> bytes:
        """Raw 32-byte Ed25519 public key."""
        return self._private_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    def sign(self, message: bytes) -> bytes:
        return self._private_key.sign(message)


@dataclass(frozen=True)
class Certificate:
    subject_id: str
    org_id: str
    attributes: frozenset[str]
    issuer: str
    signature: bytes = field(repr=False)

    def payload(self) -> bytes:
        return canonical_payload(self.subject_id, self.org_id, self.issuer, self.attributes)

    def to_bytes(self) -> bytes:
        return self.payload() + _U32.pack(len(self.signature)) + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "Certificate":
        """Strict inverse of :meth:`to_bytes`; raises ValidationError on any defect."""
        try:
            reader = _Reader(bytes(data))
            subject_id = reader.text()
            org_id = reader.text()
            issuer = reader.text()
            count = reader.u32()
            if count > len(data):
                raise ValidationError("attribute count exceeds input size")
            attrs = [reader.text() for _ in range(count)]
            signature = reader.chunk()
            reader.finish()
        except (struct.error, UnicodeDecodeError, IndexError) as exc:
            raise ValidationError(f"malformed certificate bytes: {exc}") from exc
        if attrs != sorted(set(attrs)):
            raise ValidationError("attributes must be sorted and unique")
        for name in attrs:
            validate_attribute(name)
        return cls(subject_id, org_id, frozenset(attrs), issuer, signature)

    def to_text(self) -> str:
        lines = [
            f"subject: {self.subject_id}",
            f"org: {self.org_id}",
            f"issuer: {self.issuer}",
            f"signature: {self.signature.hex()}",
        ]
        lines += [f"attribute: {a}" for a in sorted(self.attributes)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Certificate":
        fields: dict[str, str] = {}
        attrs: list[str] = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            key, sep, value = line.partition(":")
            if not sep:
                raise ValidationError(f"line {lineno}: expected 'key: value'")
            key, value = key.strip(), value.strip()
            if key == "attribute":
                attrs.append(validate_attribute(value))
            elif key in ("subject", "org", "issuer", "signature"):
                fields[key] = value
            else:
                raise ValidationError(f"line {lineno}: unknown field {key!r}")
        missing = {"subject", "org", "issuer", "signature"} - fields.keys()
        if missing:
            raise ValidationError(f"missing fields: {', '.join(sorted(missing))}")
        try:
            signature = bytes.fromhex(fields["signature"])
        except ValueError as exc:
            raise ValidationError("signature is not hex") from exc
        return cls(fields["subject"], fields["org"], frozenset(attrs), fields["issuer"], signature)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def u32(self) -> int:
        (value,) = _U32.unpack_from(self.data, self.pos)
        self.pos += _U32.size
        return value

    def chunk(self) -> bytes:
        n = self.u32()
        end = self.pos + n
        if end > len(self.data):
            raise ValidationError("length prefix runs past end of input")
        out = self.data[self.pos:end]
        self.pos = end
        return out

    def text(self) -> str:
        return self.chunk().decode("utf-8", errors="strict")

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise ValidationError("trailing bytes after certificate")


def canonical_payload(subject_id: str, org_id: str, issuer: str, attributes: Iterable[str]) -> bytes:
    parts = [subject_id.encode(), org_id.encode(), issuer.encode()]
    attrs = sorted(set(attributes))
    out = bytearray()
    for p in parts:
        out += _U32.pack(len(p)) + p
    out += _U32.pack(len(attrs))
    for a in attrs:
        raw = a.encode()
        out += _U32.pack(len(raw)) + raw
    return bytes(out)


def create_ca(org_id: str, seed: int | None = None) -> CertificateAuthority:
    """Create a CA for ``org_id``; the key pair is derived from ``seed`` when given."""
    if not isinstance(org_id, str) or not org_id.strip():
        raise ValidationError("org_id must be a non-empty string")
    return CertificateAuthority(org_id, _derive_private_key(org_id, seed))


def issue_certificate(ca: CertificateAuthority, subject_id: str, attributes: Iterable[str] = ()) -> Certificate:
    if not isinstance(subject_id, str) or not subject_id:
        raise ValidationError("subject_id must be a non-empty string")
    attrs = frozenset(validate_attribute(a) for a in attributes)
    payload = canonical_payload(subject_id, ca.org_id, ca.org_id, attrs)
    return Certificate(subject_id, ca.org_id, attrs, ca.org_id, ca.sign(payload))


def verify_certificate(cert: Certificate, verification_key: bytes | Ed25519PublicKey) -> bool:
    """True iff ``cert``'s signature matches its canonical payload under the key.

    Never raises; malformed certificates or keys simply fail verification.
    """
    try:
        if isinstance(verification_key, (bytes, bytearray)):
            verification_key = Ed25519PublicKey.from_public_bytes(bytes(verification_key))
        for a in cert.attributes:
            validate_attribute(a)
        verification_key.verify(cert.signature, cert.payload())
    except (InvalidSignature, ValidationError, ValueError, TypeError, AttributeError):
        return False
    return True


def verify_certificate_bytes(data: bytes, verification_key: bytes | Ed25519PublicKey) -> bool:
    try:
        cert = Certificate.from_bytes(data)
    except ValidationError:
        return False
    return verify_certificate(cert, verification_key)


def assert_attribute(cert: Certificate, attr: str) -> bool:
    return attr in cert.attributes


class Membership:
    """The set of trusted CAs: maps org_id to verification key.

    Verified certificates are cached by their serialized bytes, which is
    sound because certificates are immutable.
    """

    def __init__(self, keys: Mapping[str, bytes] | None = None):
        self._keys: dict[str, bytes] = dict(keys or {})
        self._verified: set[bytes] = set()

    @classmethod
    def from_cas(cls, cas: Iterable[CertificateAuthority]) -> "Membership":
        m = cls()
        for ca in cas:
            m.add(ca.org_id, ca.verification_key)
        return m

    def add(self, org_id: str, verification_key: bytes) -> None:
        if org_id in self._keys and self._keys[org_id] != verification_key:
            raise ValidationError(f"org {org_id!r} already registered with a different key")
        self._keys[org_id] = verification_key

    @property
    def orgs(self) -> list[str]:
        return sorted(self._keys)

    def verify(self, cert: Certificate) -> bool:
        blob = cert.to_bytes()
        if blob in self._verified:
            return True
        key = self._keys.get(cert.issuer)
        if key is None or cert.issuer != cert.org_id:
            return False
        ok = verify_certificate(cert, key)
        if ok:
            self._verified.add(blob)
        return ok

    def authenticate(self, cert: Certificate) -> Certificate:
        if not self.verify(cert):
            raise AuthenticationError(f"certificate for {cert.subject_id!r} does not verify under a known CA")
        return cert
