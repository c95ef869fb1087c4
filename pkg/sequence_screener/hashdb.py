"""
Hashed database server.

Looks up hashed windows in the hazard table, decides accepted / alert / denied,
applies exemption list tokens, signs receipts and re-keys the table during a
key rotation without ever learning the update key.
"""
import json
import logging
import threading
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from .certs import Certificate, Role, SigningIdentity, load_certificate, verify_request
from .config import Config, HashDbConfig
from .doprf import DoprfClient
from .elt import NonceStore, sequence_digest, verify_presentation
from .encoding import b64d, b64e, canonical_json
from .errors import (CertificateError, EltInvalid, EpochMismatch, InvalidCertificate, MalformedHash,
                     ProtocolMismatch, ScreenerError, StaleKey, UnknownRound, VersionRegression)
from .group import GroupFactory, PrimeOrderGroup
from .table import HASH_SIZE, EntryMetadata, HashedTable
from .transport import HttpTransport, KeyserverHandle, Transport

logger = logging.getLogger(__name__)

ACCEPTED = 'accepted'
ALERT = 'alert'
DENIED = 'denied'


@dataclass(frozen=True)
class MatchRecord:
    query_index: int
    hash: bytes
    metadata: EntryMetadata
    exempted: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            'query_index': self.query_index,
            'hash': b64e(self.hash),
            'metadata': self.metadata.to_dict(),
            'exempted': self.exempted,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MatchRecord':
        return cls(int(data['query_index']), b64d(data['hash']), EntryMetadata.from_dict(data['metadata']),
                   bool(data.get('exempted', False)))


@dataclass
class Receipt:
    """Signed statement that a number of windows was screened against one database version"""

    window_count: int
    database_version: str
    timestamp: int
    requester: str
    decision: str
    signer: str
    signature: str = ''

    def body(self) -> Dict[str, Any]:
        return {
            'window_count': self.window_count,
            'database_version': self.database_version,
            'timestamp': self.timestamp,
            'requester': self.requester,
            'decision': self.decision,
            'signer': self.signer,
        }

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.body(), signature=self.signature)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Receipt':
        return cls(int(data['window_count']), data['database_version'], int(data['timestamp']),
                   data['requester'], data['decision'], data['signer'], data.get('signature', ''))

    def to_b64(self) -> str:
        return b64e(canonical_json(self.to_dict()))

    @classmethod
    def from_b64(cls, text: str) -> 'Receipt':
        return cls.from_dict(json.loads(b64d(text)))


@dataclass
class Verdict:
    decision: str
    matches: List[MatchRecord]
    exemptions_applied: List[str]
    receipt: Receipt

    def to_dict(self) -> Dict[str, Any]:
        return {
            'decision': self.decision,
            'matches': [m.to_dict() for m in self.matches],
            'exemptions_applied': list(self.exemptions_applied),
            'receipt': self.receipt.to_dict(),
            'receipt_b64': self.receipt.to_b64(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Verdict':
        return cls(data['decision'], [MatchRecord.from_dict(m) for m in data.get('matches', [])],
                   list(data.get('exemptions_applied', [])), Receipt.from_dict(data['receipt']))


# Verdict rule

def match_flags(metadata: EntryMetadata, region: str, exempted: bool) -> Tuple[bool, bool]:
    """
    Classify one match.

    Returns:
        (denies, alerts); at most one is true
    """
    if metadata.common:
        return False, False
    applicable = region in metadata.regions
    if not metadata.regulated_pass and applicable and not exempted:
        return True, False
    return False, True


def decide(flags: Iterable[Tuple[bool, bool]]) -> str:
    decision = ACCEPTED
    for denies, alerts in flags:
        if denies:
            return DENIED
        if alerts:
            decision = ALERT
    return decision


def is_exempted(match: MatchRecord, exemptions: Iterable[str]) -> bool:
    exemptions = set(exemptions)
    return match.metadata.accession in exemptions or sequence_digest(match.hash) in exemptions


def verdict_rule(matches: Sequence[MatchRecord], region: str, exemptions: Iterable[str] = ()) -> str:
    """
    Decide a request from its matches.

    Args:
        matches: Match records of the request
        region: Region code of the requester
        exemptions: Exempted hazard accessions and/or hashed-window digests

    Returns:
        'denied', 'alert' or 'accepted'
    """
    exemptions = set(exemptions)
    return decide(match_flags(m.metadata, region, m.exempted or is_exempted(m, exemptions)) for m in matches)


# Receipts

def issue_receipt(count: int, version: str, decision: str, requester: str, identity: SigningIdentity,
                  now: int) -> Receipt:
    receipt = Receipt(count, version, int(now), requester, decision, identity.fingerprint)
    receipt.signature = identity.sign(canonical_json(receipt.body()))
    return receipt


def verify_receipt(receipt: Receipt, public_key) -> bool:
    """
    Check a receipt signature.

    Args:
        receipt: Receipt to check
        public_key: Ed25519 public key or the database's certificate
    """
    if isinstance(public_key, Certificate):
        if receipt.signer != public_key.fingerprint:
            return False
        public_key = public_key.verifying_key()
    if not isinstance(public_key, Ed25519PublicKey):
        raise TypeError("verify_receipt needs an Ed25519 public key or a certificate")
    try:
        public_key.verify(b64d(receipt.signature), canonical_json(receipt.body()))
        return True
    except (InvalidSignature, TypeError, ValueError):
        return False


def verify_receipt_bytes(data: bytes, public_key) -> bool:
    """Verify a serialized receipt; any unparseable input fails."""
    try:
        receipt = Receipt.from_dict(json.loads(data))
    except (ValueError, KeyError, TypeError, UnicodeDecodeError):
        return False
    return canonical_json(receipt.to_dict()) == data and verify_receipt(receipt, public_key)


# Server

class HashDbServer:
    """Holds the hashed table and answers screening requests"""

    def __init__(self, table: HashedTable, identity: SigningIdentity, trust_root: Certificate,
                 nonces: Optional[NonceStore] = None, audit_log: Optional[Path] = None,
                 clock: Callable[[], float] = time.time, group: Optional[PrimeOrderGroup] = None,
                 keyservers: Sequence[KeyserverHandle] = (), t: int = 1, randomness=None,
                 doprf_options: Optional[Dict[str, Any]] = None, table_path: Optional[Path] = None):
        """
        Initialize the server.

        Args:
            table: Initial hashed table
            identity: Signing identity for receipts (role database)
            trust_root: Root certificate requesters must chain to
            nonces: Store of consumed ELT nonces
            audit_log: JSON-lines file for exemption notifications
            clock: Wall clock for receipts and certificate checks
            group: Group of the table hashes, needed for rekeying
            keyservers: Keyserver handles used for rekeying
            t: Threshold of the keyservers
            randomness: Random source for rekey blinding
            doprf_options: Extra DoprfClient arguments for rekeying
            table_path: Where a re-keyed table is written, if anywhere
        """
        self._table = table
        self.identity = identity
        self.trust_root = trust_root
        self.nonces = nonces if nonces is not None else NonceStore()
        self.audit_log = Path(audit_log) if audit_log else None
        self.clock = clock
        self.group = group or GroupFactory.get(Config.GROUP)
        self.keyservers = list(keyservers)
        self.t = t
        self.randomness = randomness
        self.doprf_options = dict(doprf_options or {})
        self.table_path = Path(table_path) if table_path else None
        self.notifications: List[Dict[str, Any]] = []
        self._counters: Dict[str, Dict[str, int]] = defaultdict(lambda: {'screens': 0, 'windows': 0, 'matches': 0})
        self._write_lock = threading.Lock()
        self._stats_lock = threading.Lock()

    @classmethod
    def from_config(cls, cfg: HashDbConfig, transport: Optional[Transport] = None) -> 'HashDbServer':
        transport = transport or HttpTransport()
        identity = SigningIdentity.load(cfg.certificate, cfg.signing_key)
        return cls(HashedTable.read(cfg.table), identity, load_certificate(cfg.trust_root),
                   nonces=NonceStore(cfg.nonce_path), audit_log=cfg.audit_path,
                   group=GroupFactory.get(cfg.group),
                   keyservers=[KeyserverHandle(e, transport) for e in cfg.keyservers], t=cfg.t,
                   table_path=Path(cfg.table))

    @property
    def table(self) -> HashedTable:
        return self._table

    def version(self) -> Dict[str, Any]:
        table = self._table
        return {'version': table.version_label, 'version_number': table.version, 'key_id': table.key_id,
                'epoch': table.epoch, 'entries': len(table)}

    def certificate(self) -> Dict[str, Any]:
        return {'chain': self.identity.chain_dicts()}

    def counters(self) -> Dict[str, Dict[str, int]]:
        with self._stats_lock:
            return {k: dict(v) for k, v in sorted(self._counters.items())}

    # Screening

    def _requester(self, payload: Dict, now: int) -> Certificate:
        try:
            return verify_request(payload, self.trust_root, now)[0]
        except InvalidCertificate:
            raise
        except CertificateError as e:
            raise InvalidCertificate(f"Requester certificate rejected: {e.message}")

    def _operator(self, payload: Dict) -> Certificate:
        requester = self._requester(payload, int(self.clock()))
        if requester.role != Role.OPERATOR:
            raise InvalidCertificate(f"Table management needs an operator certificate, got {requester.role.value}")
        return requester

    @staticmethod
    def _decode_hashes(items) -> List[bytes]:
        if not isinstance(items, list):
            raise MalformedHash("hashes must be a list")
        hashes = []
        for position, item in enumerate(items):
            text = item.get('hash') if isinstance(item, dict) else item
            try:
                digest = b64d(text)
            except (TypeError, ValueError):
                raise MalformedHash(f"Hash {position} is not valid base64")
            if len(digest) != HASH_SIZE:
                raise MalformedHash(f"Hash {position} has {len(digest)} bytes, expected {HASH_SIZE}")
            hashes.append(digest)
        return hashes

    def _grant(self, presentation: Dict, requester: Certificate, now: int, shipping_address: Optional[str]):
        try:
            presenter = Certificate.from_dict(presentation['presenter_chain'][0])
        except (KeyError, IndexError, TypeError, ValueError):
            raise EltInvalid("Malformed exemption presentation")
        if presenter.fingerprint != requester.fingerprint:
            raise EltInvalid("Exemption token presented by a different certificate than the request")
        try:
            return verify_presentation(presentation, self.trust_root, self.nonces, now, shipping_address)
        except CertificateError as e:
            raise EltInvalid(f"Exemption token rejected: {e.message}", reason=e.code)

    def screen(self, payload: Dict, peer: str = '') -> Verdict:
        """
        Screen a list of hashed windows for one requester.

        Raises:
            InvalidCertificate, MalformedHash, EltInvalid, EltReplayed
        """
        if payload.get('version', Config.PROTOCOL_VERSION) != Config.PROTOCOL_VERSION:
            raise ProtocolMismatch(f"Unsupported protocol version {payload.get('version')}")
        now = int(self.clock())
        requester = self._requester(payload, now)
        region = payload.get('region')
        if not isinstance(region, str) or not region:
            raise ProtocolMismatch("Screen request carries no region")
        hashes = self._decode_hashes(payload.get('hashes'))

        table = self._table
        key_id = payload.get('key_id')
        if key_id is not None and key_id != table.key_id:
            raise EpochMismatch(f"Windows hashed under {key_id}, database is keyed under {table.key_id}",
                                key_id=table.key_id)

        grant = None
        if payload.get('elt'):
            grant = self._grant(payload['elt'], requester, now, payload.get('shipping_address'))
        exemptions = (grant.accessions | grant.digests) if grant else frozenset()

        matches = []
        for position, digest in enumerate(hashes):
            for metadata in table.lookup(digest):
                matches.append(MatchRecord(position, digest, metadata, bool(exemptions) and
                                           (metadata.accession in exemptions or
                                            sequence_digest(digest) in exemptions)))

        decision = decide(match_flags(m.metadata, region, m.exempted) for m in matches)
        applied = sorted({m.metadata.accession for m in matches
                          if m.exempted and not m.metadata.common and not m.metadata.regulated_pass})
        if applied:
            self._notify(grant, requester, applied, table.version_label, now)

        with self._stats_lock:
            counter = self._counters[requester.fingerprint]
            counter['screens'] += 1
            counter['windows'] += len(hashes)
            counter['matches'] += len(matches)

        receipt = issue_receipt(len(hashes), table.version_label, decision, requester.fingerprint,
                                self.identity, now)
        logger.info("Screened %d windows for %s…: %s (%d matches, %s)",
                    len(hashes), requester.fingerprint[:12], decision, len(matches), table.version_label)
        return Verdict(decision, matches, applied, receipt)

    def _notify(self, grant, requester: Certificate, accessions: List[str], version: str, now: int):
        record = {
            'timestamp': now,
            'requester': requester.fingerprint,
            'requester_subject': requester.subject,
            'nonce': grant.nonce,
            'accessions': accessions,
            'database_version': version,
            'notify': {role: grant.contacts[role] for role in
                       ('principal_investigator', 'biosafety_officer', 'legal') if role in grant.contacts},
        }
        with self._stats_lock:
            self.notifications.append(record)
            if self.audit_log:
                self.audit_log.parent.mkdir(parents=True, exist_ok=True)
                with open(self.audit_log, 'a', encoding='utf-8') as f:
                    f.write(json.dumps(record, sort_keys=True) + '\n')
        logger.info("Exemption applied for %s; notifications recorded", ', '.join(accessions))

    # Table management

    def swap_version(self, source) -> Dict[str, Any]:
        """
        Replace the table with a newer version.

        Args:
            source: HashedTable or path of a table file

        Raises:
            VersionRegression: new version not greater than the current one
            CorruptTable: file does not parse
        """
        new = source if isinstance(source, HashedTable) else HashedTable.read(source)
        with self._write_lock:
            current = self._table
            if new.version <= current.version:
                raise VersionRegression(f"Table {new.version_label} does not supersede {current.version_label}")
            self._table = new
        logger.info("Swapped table %s -> %s (%d entries)", current.version_label, new.version_label, len(new))
        return self.version()

    def rekey_table(self, update_key_id: str, update_epoch: int, key_id: str, epoch: int) -> HashedTable:
        """
        Raise every stored hash to the update key through the keyservers.

        Each hash goes out blinded by a fresh exponent, so keyservers never see
        a stored hash and the database never learns the update key.

        Raises:
            StaleKey: the update key is the table's key, active somewhere, or not pending on t keyservers
        """
        if not self.keyservers:
            raise ScreenerError("No keyservers configured for rekeying")
        with self._write_lock:
            current = self._table
            if current.key_id in (update_key_id, key_id):
                raise StaleKey(f"Re-keying needs a fresh update key and target, table is under {current.key_id}")
            self._require_pending(update_key_id, update_epoch)
            rows = list(current)
            client = DoprfClient(self.group, self.keyservers, self.t, randomness=self.randomness,
                                 identity=self.identity, **self.doprf_options)
            elements = [self.group.decode(digest) for digest, _ in rows]
            logger.info("Re-keying %d hashes under %s (epoch %d)", len(rows), update_key_id, update_epoch)
            outputs = client.eval_elements(elements, key_id=update_key_id, epoch=update_epoch)
            new = HashedTable([(y.encode(), metadata) for y, (_, metadata) in zip(outputs, rows)],
                              current.version + 1, key_id, epoch)
            if self.table_path:
                new.write(self.table_path)
            self._table = new
        logger.info("Table re-keyed to %s as %s", key_id, new.version_label)
        return new

    def _require_pending(self, key_id: str, epoch: int):
        holders = 0
        for handle in self.keyservers:
            try:
                status = handle.status()
            except ScreenerError:
                continue
            if status.get('key_id') == key_id:
                raise StaleKey(f"Update key {key_id} is active on keyserver {status.get('index')}")
            if status.get('keys', {}).get(key_id) == epoch:
                holders += 1
        if holders < self.t:
            raise StaleKey(f"Update key {key_id} epoch {epoch} is pending on {holders} keyservers, need {self.t}")

    # Routing

    def dispatch(self, method: str, path: str, payload: Optional[Dict], peer: str) -> Dict:
        route = (method.upper(), path)
        payload = payload or {}
        if route == ('POST', '/screen'):
            return self.screen(payload, peer).to_dict()
        if route == ('GET', '/version'):
            return self.version()
        if route == ('GET', '/certificate'):
            return self.certificate()
        if route == ('POST', '/admin/swap'):
            operator = self._operator(payload)
            logger.info("Table swap requested by %s", operator.subject)
            return self.swap_version(payload['path'])
        if route == ('POST', '/admin/rekey'):
            operator = self._operator(payload)
            logger.info("Re-key to %s requested by %s", payload.get('key_id'), operator.subject)
            new = self.rekey_table(payload['update_key_id'], int(payload['update_epoch']),
                                   payload['key_id'], int(payload['epoch']))
            return {'version': new.version_label, 'key_id': new.key_id, 'epoch': new.epoch, 'entries': len(new)}
        if route == ('GET', '/admin/counters'):
            return {'counters': self.counters()}
        raise UnknownRound(f"No route {method} {path}")
