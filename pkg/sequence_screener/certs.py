"""
Certificate chains for screening identities.

Certificates are canonical JSON objects with a detached Ed25519 signature. A
chain is a list ordered leaf first and ending at a self-signed root. Which role
may issue which is fixed by ``ISSUABLE``.
"""
import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .encoding import b64d, b64e, canonical_json
from .errors import (BrokenSignature, Expired, ExpiredIssuer, InvalidCertificate, RoleViolation,
                     UnknownRoot)

DAY = 86400


class Role(str, Enum):
    ROOT = 'root'
    NATIONAL_AUTHORITY = 'national-authority'
    BIOSAFETY_OFFICER = 'biosafety-officer'
    PRINCIPAL_INVESTIGATOR = 'principal-investigator'
    RESEARCHER = 'researcher'
    MANUFACTURER = 'manufacturer'
    PROVIDER = 'provider'
    MACHINE = 'machine'
    DATABASE = 'database'
    KEYSERVER = 'keyserver'
    OPERATOR = 'operator'


ISSUABLE = {
    Role.ROOT: {Role.NATIONAL_AUTHORITY, Role.MANUFACTURER, Role.PROVIDER, Role.DATABASE, Role.KEYSERVER,
                Role.OPERATOR},
    Role.NATIONAL_AUTHORITY: {Role.BIOSAFETY_OFFICER},
    Role.BIOSAFETY_OFFICER: {Role.PRINCIPAL_INVESTIGATOR},
    Role.PRINCIPAL_INVESTIGATOR: {Role.RESEARCHER},
    Role.MANUFACTURER: {Role.MACHINE},
}

# Roles allowed to approve exemption list tokens
OFFICER_ROLES = {Role.ROOT, Role.NATIONAL_AUTHORITY, Role.BIOSAFETY_OFFICER}


@dataclass(frozen=True)
class Certificate:
    subject: str
    role: Role
    public_key: str          # base64 raw Ed25519 key
    issuer: Optional[str]    # issuer fingerprint; None for a root
    not_before: int
    not_after: int
    attributes: Dict[str, Any] = field(default_factory=dict)
    signature: str = ''

    def body(self) -> Dict[str, Any]:
        return {
            'subject': self.subject,
            'role': self.role.value,
            'public_key': self.public_key,
            'issuer': self.issuer,
            'not_before': self.not_before,
            'not_after': self.not_after,
            'attributes': self.attributes,
        }

    def to_dict(self) -> Dict[str, Any]:
        data = self.body()
        data['signature'] = self.signature
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Certificate':
        try:
            return cls(
                subject=data['subject'],
                role=Role(data['role']),
                public_key=data['public_key'],
                issuer=data.get('issuer'),
                not_before=int(data['not_before']),
                not_after=int(data['not_after']),
                attributes=dict(data.get('attributes') or {}),
                signature=data.get('signature', ''),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise InvalidCertificate(f"Malformed certificate: {e}")

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict())).hexdigest()

    def verifying_key(self) -> Ed25519PublicKey:
        try:
            return Ed25519PublicKey.from_public_bytes(b64d(self.public_key))
        except ValueError as e:
            raise InvalidCertificate(f"Bad public key in certificate for {self.subject}: {e}")

    def valid_at(self, now: int) -> bool:
        return self.not_before <= now <= self.not_after


@dataclass
class SigningIdentity:
    """A certificate with its private key and the chain above it"""

    certificate: Certificate
    private_key: Ed25519PrivateKey
    chain: List[Certificate] = field(default_factory=list)  # leaf first, including the certificate

    def __post_init__(self):
        if not self.chain:
            self.chain = [self.certificate]

    @property
    def fingerprint(self) -> str:
        return self.certificate.fingerprint

    def sign(self, data: bytes) -> str:
        return b64e(self.private_key.sign(data))

    def chain_dicts(self) -> List[Dict[str, Any]]:
        return [c.to_dict() for c in self.chain]

    def save(self, chain_path, key_path, passphrase: Optional[bytes] = None):
        Path(chain_path).write_text(json.dumps(self.chain_dicts(), indent=2), encoding='utf-8')
        encryption = (serialization.BestAvailableEncryption(passphrase) if passphrase
                      else serialization.NoEncryption())
        Path(key_path).write_bytes(self.private_key.private_bytes(
            serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, encryption))

    @classmethod
    def load(cls, chain_path, key_path, passphrase: Optional[bytes] = None) -> 'SigningIdentity':
        chain = load_chain(chain_path)
        key = serialization.load_pem_private_key(Path(key_path).read_bytes(), password=passphrase)
        if not isinstance(key, Ed25519PrivateKey):
            raise InvalidCertificate("Signing key is not an Ed25519 key")
        return cls(chain[0], key, chain)


def load_chain(path) -> List[Certificate]:
    data = json.loads(Path(path).read_text(encoding='utf-8'))
    if isinstance(data, dict):
        data = [data]
    return [Certificate.from_dict(c) for c in data]


def load_certificate(path) -> Certificate:
    return load_chain(path)[0]


def parse_chain(data: Sequence[Dict[str, Any]]) -> List[Certificate]:
    if not isinstance(data, (list, tuple)) or not data:
        raise InvalidCertificate("Certificate chain must be a nonempty list")
    return [Certificate.from_dict(c) for c in data]


def generate_keypair() -> Ed25519PrivateKey:
    return Ed25519PrivateKey.generate()


def public_key_text(private_key: Ed25519PrivateKey) -> str:
    raw = private_key.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return b64e(raw)


def _signed(cert: Certificate, key: Ed25519PrivateKey) -> Certificate:
    return replace(cert, signature=b64e(key.sign(canonical_json(cert.body()))))


def create_root(subject: str, now: int, validity_days: int = 3650,
                private_key: Optional[Ed25519PrivateKey] = None) -> SigningIdentity:
    key = private_key or generate_keypair()
    cert = Certificate(subject, Role.ROOT, public_key_text(key), None, now, now + validity_days * DAY)
    return SigningIdentity(_signed(cert, key), key)


def issue_certificate(issuer: SigningIdentity, subject: str, role: Role, public_key: str, now: int,
                      validity_days: int = 365, attributes: Optional[Dict[str, Any]] = None) -> Certificate:
    """
    Issue a certificate for ``subject`` under ``issuer``.

    Raises:
        RoleViolation: issuer role may not issue ``role``
        ExpiredIssuer: issuer certificate not valid at ``now``
    """
    role = Role(role)
    parent = issuer.certificate
    if role not in ISSUABLE.get(parent.role, set()):
        raise RoleViolation(f"A {parent.role.value} may not issue a {role.value} certificate")
    if not parent.valid_at(now):
        raise ExpiredIssuer(f"Issuer {parent.subject} is not valid at {now}")
    cert = Certificate(subject, role, public_key, parent.fingerprint, now,
                       min(now + validity_days * DAY, parent.not_after), dict(attributes or {}))
    return _signed(cert, issuer.private_key)


def issue_identity(issuer: SigningIdentity, subject: str, role: Role, now: int,
                   validity_days: int = 365, attributes: Optional[Dict[str, Any]] = None,
                   private_key: Optional[Ed25519PrivateKey] = None) -> SigningIdentity:
    """Generate a key (unless given one) and issue a certificate for it in one step."""
    key = private_key or generate_keypair()
    cert = issue_certificate(issuer, subject, role, public_key_text(key), now, validity_days, attributes)
    return SigningIdentity(cert, key, [cert] + issuer.chain)


def _verify(cert: Certificate, key: Ed25519PublicKey) -> bool:
    try:
        key.verify(b64d(cert.signature), canonical_json(cert.body()))
        return True
    except (InvalidSignature, ValueError):
        return False


def validate_chain(chain: Sequence[Certificate], trust_root: Certificate, now: int) -> Certificate:
    """
    Validate a leaf-first chain up to ``trust_root``; returns the leaf.

    Links are checked from the root down so a tampered certificate is reported
    at its own position (0 = leaf).
    """
    if not chain:
        raise InvalidCertificate("Empty certificate chain")
    top = len(chain) - 1
    root = chain[top]
    if root.fingerprint != trust_root.fingerprint:
        if root.role == Role.ROOT and _verify(root, root.verifying_key()):
            raise UnknownRoot(f"Chain is anchored at an unknown root {root.subject}", link=top)
        raise BrokenSignature(f"Root certificate at link {top} does not verify", link=top)
    if not _verify(root, root.verifying_key()):
        raise BrokenSignature(f"Root certificate at link {top} does not verify", link=top)
    if not root.valid_at(now):
        raise Expired("Root certificate expired or not yet valid", link=top)

    for link in range(top - 1, -1, -1):
        cert, parent = chain[link], chain[link + 1]
        if cert.issuer != parent.fingerprint or not _verify(cert, parent.verifying_key()):
            raise BrokenSignature(f"Certificate {cert.subject} at link {link} does not verify", link=link)
        if cert.role not in ISSUABLE.get(parent.role, set()):
            raise RoleViolation(f"{parent.role.value} cannot issue {cert.role.value} (link {link})", link=link)
        if not cert.valid_at(now):
            raise Expired(f"Certificate {cert.subject} at link {link} is not valid at {now}", link=link)
    return chain[0]


# Signed requests

def sign_request(payload: Dict[str, Any], identity: SigningIdentity) -> Dict[str, Any]:
    """Return payload with an ``auth`` block proving possession of the leaf key."""
    body = {k: v for k, v in payload.items() if k != 'auth'}
    return dict(body, auth={'chain': identity.chain_dicts(), 'signature': identity.sign(canonical_json(body))})


def verify_request(payload: Dict[str, Any], trust_root: Certificate, now: int) -> List[Certificate]:
    """
    Check the ``auth`` block of a request.

    Returns:
        The validated chain (leaf first)
    """
    auth = payload.get('auth')
    if not isinstance(auth, dict):
        raise InvalidCertificate("Request carries no credentials")
    chain = parse_chain(auth.get('chain'))
    validate_chain(chain, trust_root, now)
    body = {k: v for k, v in payload.items() if k != 'auth'}
    try:
        chain[0].verifying_key().verify(b64d(auth.get('signature', '')), canonical_json(body))
    except (InvalidSignature, ValueError):
        raise InvalidCertificate("Request signature does not verify under the presented certificate")
    return chain
