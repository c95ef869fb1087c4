"""
Exemption list tokens (ELTs).

A biosafety officer (or higher) signs a one-time token listing hazard
accessions and/or digests of hashed windows that a named researcher or lab may
receive. The database verifies the token, consumes its nonce and records the
notification contacts.
"""
import hashlib
import json
import logging
import os
import re
import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Sequence

from cryptography.exceptions import InvalidSignature

from .certs import (DAY, OFFICER_ROLES, Certificate, Role, SigningIdentity, parse_chain,
                    validate_chain)
from .encoding import b64d, canonical_json
from .errors import (BindingMismatch, BrokenSignature, CertificateError, EltReplayed, EmptyExemptions,
                     Expired, InvalidOfficerChain)

logger = logging.getLogger(__name__)

SCOPES = ('individual', 'lab')
_ACCESSION_TOKEN = re.compile(r'^[A-Za-z0-9_.:\-]+$')


@dataclass
class ExemptionRequest:
    """What a researcher asks their biosafety officer to approve"""

    requester: str                                         # certificate fingerprint
    exemptions: List[str] = field(default_factory=list)    # hazard accessions
    sequence_digests: List[str] = field(default_factory=list)
    scope: str = 'individual'
    shipping_address: Optional[str] = None
    contacts: Dict[str, str] = field(default_factory=dict)  # principal_investigator, biosafety_officer, legal

    def to_dict(self) -> Dict[str, Any]:
        return {
            'requester': self.requester,
            'exemptions': list(self.exemptions),
            'sequence_digests': list(self.sequence_digests),
            'scope': self.scope,
            'shipping_address': self.shipping_address,
            'contacts': dict(self.contacts),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExemptionRequest':
        return cls(
            requester=data['requester'],
            exemptions=list(data.get('exemptions', [])),
            sequence_digests=list(data.get('sequence_digests', [])),
            scope=data.get('scope', 'individual'),
            shipping_address=data.get('shipping_address'),
            contacts=dict(data.get('contacts', {})),
        )


@dataclass
class ExemptionListToken:
    exemptions: List[str]
    sequence_digests: List[str]
    requester: str
    scope: str
    shipping_address: Optional[str]
    nonce: str
    contacts: Dict[str, str]
    not_before: int
    not_after: int
    issuer_chain: List[Dict[str, Any]]
    signature: str = ''

    def body(self) -> Dict[str, Any]:
        return {
            'exemptions': sorted(self.exemptions),
            'sequence_digests': sorted(self.sequence_digests),
            'requester': self.requester,
            'scope': self.scope,
            'shipping_address': self.shipping_address,
            'nonce': self.nonce,
            'contacts': self.contacts,
            'not_before': self.not_before,
            'not_after': self.not_after,
            'issuer_chain': self.issuer_chain,
        }

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.body(), signature=self.signature)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExemptionListToken':
        try:
            return cls(
                exemptions=list(data['exemptions']),
                sequence_digests=list(data.get('sequence_digests', [])),
                requester=data['requester'],
                scope=data.get('scope', 'individual'),
                shipping_address=data.get('shipping_address'),
                nonce=data['nonce'],
                contacts=dict(data.get('contacts', {})),
                not_before=int(data['not_before']),
                not_after=int(data['not_after']),
                issuer_chain=list(data['issuer_chain']),
                signature=data.get('signature', ''),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise BrokenSignature(f"Malformed exemption token: {e}")

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding='utf-8')

    @classmethod
    def load(cls, path) -> 'ExemptionListToken':
        return cls.from_dict(json.loads(Path(path).read_text(encoding='utf-8')))


@dataclass(frozen=True)
class ExemptionGrant:
    """Result of a successful verification"""

    accessions: FrozenSet[str]
    digests: FrozenSet[str]
    contacts: Dict[str, str]
    nonce: str
    requester: str


def sequence_digest(hashed_window: bytes) -> str:
    """Digest of a DOPRF output, as listed in raw-sequence exemptions"""
    return hashlib.sha256(hashed_window).hexdigest()


def extract_accessions(text: str) -> List[str]:
    """
    Pull accession tokens out of a plain-text registration document.

    Tokens are whitespace separated; '#' starts a comment. Duplicates are dropped,
    first occurrence order is kept.
    """
    seen, result = set(), []
    for line in text.splitlines():
        for token in line.split('#', 1)[0].replace(',', ' ').split():
            if _ACCESSION_TOKEN.match(token) and token not in seen:
                seen.add(token)
                result.append(token)
    return result


def create_and_approve_elt(request: ExemptionRequest, officer: SigningIdentity, trust_root: Certificate,
                          now: int, validity_days: int = 30, nonce: Optional[str] = None) -> ExemptionListToken:
    """
    Sign an exemption request as a biosafety officer or higher authority.

    Raises:
        EmptyExemptions: nothing to exempt
        InvalidOfficerChain: officer chain invalid or officer role too low
    """
    if not request.exemptions and not request.sequence_digests:
        raise EmptyExemptions("An exemption list token must exempt something")
    if request.scope not in SCOPES:
        raise BindingMismatch(f"Unknown exemption scope: {request.scope}")
    try:
        validate_chain(officer.chain, trust_root, now)
    except CertificateError as e:
        raise InvalidOfficerChain(f"Officer chain invalid: {e.message}")
    if officer.certificate.role not in OFFICER_ROLES:
        raise InvalidOfficerChain(f"A {officer.certificate.role.value} may not approve exemptions")

    contacts = dict(request.contacts)
    contacts.setdefault('biosafety_officer', officer.certificate.subject)
    token = ExemptionListToken(
        exemptions=sorted(set(request.exemptions)),
        sequence_digests=sorted(set(request.sequence_digests)),
        requester=request.requester,
        scope=request.scope,
        shipping_address=request.shipping_address,
        nonce=nonce or secrets.token_hex(16),
        contacts=contacts,
        not_before=now,
        not_after=min(now + validity_days * DAY, officer.certificate.not_after),
        issuer_chain=officer.chain_dicts(),
    )
    token.signature = officer.sign(canonical_json(token.body()))
    return token


class NonceStore:
    """Append-only log of consumed token nonces with atomic check-and-insert"""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._consumed = set()
        if self.path and self.path.exists():
            self._consumed.update(line.strip() for line in self.path.read_text(encoding='utf-8').splitlines()
                                  if line.strip())

    def __contains__(self, nonce: str) -> bool:
        return nonce in self._consumed

    def consume(self, nonce: str):
        with self._lock:
            if nonce in self._consumed:
                raise EltReplayed("Exemption token was already used")
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, 'a', encoding='utf-8') as f:
                    f.write(nonce + '\n')
                    f.flush()
                    os.fsync(f.fileno())
            self._consumed.add(nonce)


def check_binding(token: ExemptionListToken, presenter_chain: Sequence[Certificate]):
    """Individual tokens bind the presenting leaf; lab tokens bind the PI that issued it."""
    leaf = presenter_chain[0]
    if token.scope == 'individual':
        if leaf.fingerprint != token.requester:
            raise BindingMismatch("Token was issued to a different requester")
        return
    if leaf.role == Role.PRINCIPAL_INVESTIGATOR and leaf.fingerprint == token.requester:
        return
    if (leaf.role == Role.RESEARCHER and len(presenter_chain) > 1
            and presenter_chain[1].fingerprint == token.requester):
        return
    raise BindingMismatch("Presenter is not a member of the lab named on the token")


def verify_elt(elt: ExemptionListToken, presenter_chain: Sequence[Certificate], trust_root: Certificate,
               nonces: NonceStore, now: int, shipping_address: Optional[str] = None) -> ExemptionGrant:
    """
    Verify a token for one screening request and consume its nonce.

    Raises:
        BrokenSignature, Expired: token or its officer chain does not check out
        BindingMismatch: wrong presenter or shipping address
        EltReplayed: nonce already consumed
    """
    officer_chain = parse_chain(elt.issuer_chain)
    validate_chain(officer_chain, trust_root, now)
    officer = officer_chain[0]
    if officer.role not in OFFICER_ROLES:
        raise InvalidOfficerChain(f"A {officer.role.value} may not approve exemptions")
    try:
        officer.verifying_key().verify(b64d(elt.signature), canonical_json(elt.body()))
    except (InvalidSignature, ValueError):
        raise BrokenSignature("Exemption token signature does not verify")
    if not elt.not_before <= now <= elt.not_after:
        raise Expired("Exemption token is outside its validity window")
    check_binding(elt, presenter_chain)
    if elt.shipping_address is not None and elt.shipping_address != shipping_address:
        raise BindingMismatch("Shipping address differs from the one on the token")
    nonces.consume(elt.nonce)
    logger.info("Exemption token %s… consumed for %d accessions", elt.nonce[:8], len(elt.exemptions))
    return ExemptionGrant(frozenset(elt.exemptions), frozenset(elt.sequence_digests),
                          dict(elt.contacts), elt.nonce, elt.requester)


def present_elt(token: ExemptionListToken, presenter: SigningIdentity) -> Dict[str, Any]:
    """Wrap a token with the presenter's chain and a signature over its nonce."""
    return {
        'token': token.to_dict(),
        'presenter_chain': presenter.chain_dicts(),
        'signature': presenter.sign(token.nonce.encode('ascii')),
    }


def verify_presentation(presentation: Dict[str, Any], trust_root: Certificate, nonces: NonceStore,
                        now: int, shipping_address: Optional[str] = None) -> ExemptionGrant:
    """Check the presenter's chain and possession proof, then verify the token itself."""
    try:
        token = ExemptionListToken.from_dict(presentation['token'])
        chain = parse_chain(presentation['presenter_chain'])
        signature = b64d(presentation['signature'])
    except (KeyError, TypeError, ValueError) as e:
        raise BrokenSignature(f"Malformed exemption presentation: {e}")
    validate_chain(chain, trust_root, now)
    try:
        chain[0].verifying_key().verify(signature, token.nonce.encode('ascii'))
    except InvalidSignature:
        raise BindingMismatch("Presenter did not sign the token presentation")
    return verify_elt(token, chain, trust_root, nonces, now, shipping_address)
