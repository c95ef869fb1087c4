"""
Keyserver service.

Holds this server's shares (one per key id), answers batched evaluation
requests for the active key and takes part in key management rounds. HTTP
routing lives in ``http_app``; everything here is transport agnostic and is
reached through ``dispatch``.
"""
import logging
import secrets
import threading
import time
from typing import Callable, Dict, Iterable, List, Optional

from .certs import Certificate, Role, SigningIdentity, load_certificate, verify_request
from .config import Config, KeyserverConfig
from .doprf import decode_points, encode_points, evaluation_exponent
from .errors import (BadConfig, CertificateError, DuplicateIndex, EpochMismatch, InvalidCertificate,
                     MalformedPoint, NotInEvaluationSet, ProtocolMismatch, UnknownRound)
from .group import GroupFactory, PrimeOrderGroup
from .ratelimit import ClientRateLimiter
from .rounds import RoundHandler
from .shares_store import EncryptedShareFile
from .sharing import KeyShare
from .transport import HttpTransport, KeyserverHandle, Transport

logger = logging.getLogger(__name__)


class Keyserver:
    """One of the n keyservers"""

    def __init__(self, index: int, n: int, t: int, group: PrimeOrderGroup,
                 peers: Optional[Dict[int, KeyserverHandle]] = None,
                 rate_limit: float = None, trust_root: Optional[Certificate] = None,
                 clock: Callable[[], float] = time.time,
                 monotonic: Callable[[], float] = time.monotonic,
                 randomness=None, share_file: Optional[EncryptedShareFile] = None,
                 identity: Optional[SigningIdentity] = None):
        """
        Initialize the keyserver.

        Args:
            index: This server's evaluation point, 1..n
            n, t: Sharing parameters
            group: Group the shared keys live in
            peers: Handles of the other keyservers, by index
            rate_limit: Windows per second per client (default from Config)
            trust_root: Root certificate clients and operators must chain to. Without one,
                clients are anonymous, only the active key is evaluable and admin rounds are refused
            clock: Wall clock for certificate validity
            monotonic: Clock driving the rate limiter
            randomness: Random source for dealing sub-shares
            share_file: Encrypted persistence for shares
            identity: This server's keyserver certificate, used to sign sub-shares sent to peers
        """
        self.index = index
        self.n = n
        self.t = t
        self.group = group
        self.peers = dict(peers or {})
        self.trust_root = trust_root
        self.clock = clock
        self.randomness = randomness if randomness is not None else secrets.SystemRandom()
        self.share_file = share_file
        self.identity = identity
        self.limiter = ClientRateLimiter(rate_limit or Config.RATE_LIMIT, clock=monotonic)
        self.rounds = RoundHandler(self)

        self._lock = threading.RLock()
        self._keys: Dict[str, KeyShare] = {}
        self._active: Optional[str] = None
        if share_file is not None:
            shares, active = share_file.load(group.order)
            self._keys = {s.key_id: s for s in shares if s.server_index == index}
            self._active = active if active in self._keys else None
            if self._keys:
                logger.info("Keyserver %d loaded %d shares from %s", index, len(self._keys), share_file.path)

    @classmethod
    def from_config(cls, cfg: KeyserverConfig, transport: Optional[Transport] = None) -> 'Keyserver':
        transport = transport or HttpTransport()
        identity = SigningIdentity.load(cfg.certificate, cfg.signing_key) if cfg.certificate else None
        peers = {i: KeyserverHandle(endpoint, transport, identity) for i, endpoint in cfg.peer_endpoints.items()
                 if i != cfg.index}
        trust_root = load_certificate(cfg.trust_root) if cfg.trust_root else None
        share_file = None
        if cfg.share_file:
            if not cfg.passphrase:
                raise BadConfig(f"Set {cfg.passphrase_env} to unlock {cfg.share_file}")
            share_file = EncryptedShareFile(cfg.share_file, cfg.passphrase)
        return cls(cfg.index, cfg.n, cfg.t, GroupFactory.get(cfg.group), peers=peers,
                   rate_limit=cfg.rate_limit, trust_root=trust_root, share_file=share_file,
                   identity=identity)

    # Share state

    @property
    def active(self) -> Optional[KeyShare]:
        with self._lock:
            return self._keys.get(self._active) if self._active else None

    def key(self, key_id: str) -> Optional[KeyShare]:
        with self._lock:
            return self._keys.get(key_id)

    def peer(self, index: int) -> KeyserverHandle:
        try:
            return self.peers[index]
        except KeyError:
            raise UnknownRound(f"Keyserver {self.index} has no route to server {index}")

    def install(self, share: KeyShare, activate: bool = False):
        """Store a share, replacing any older share of the same key id."""
        with self._lock:
            previous = self._keys.get(share.key_id)
            if previous is not None and previous.epoch > share.epoch:
                raise EpochMismatch(f"Refusing to move {share.key_id} back from epoch {previous.epoch} to {share.epoch}")
            keys = dict(self._keys)
            keys[share.key_id] = share
            self._keys = keys
            if activate:
                self._active = share.key_id
            self._persist()

    def activate(self, key_id: str, drop: Iterable[str] = ()):
        with self._lock:
            if key_id not in self._keys:
                raise EpochMismatch(f"Keyserver {self.index} holds no share of {key_id}")
            keys = {k: v for k, v in self._keys.items() if k == key_id or k not in set(drop)}
            self._keys = keys
            self._active = key_id
            self._persist()
        logger.info("Keyserver %d now serving key %s", self.index, key_id)

    def drop(self, key_id: str):
        with self._lock:
            if key_id == self._active or key_id not in self._keys:
                return
            self._keys = {k: v for k, v in self._keys.items() if k != key_id}
            self._persist()

    def _persist(self):
        if self.share_file is not None:
            self.share_file.save(list(self._keys.values()), self._active)

    def status(self) -> Dict:
        with self._lock:
            active = self._keys.get(self._active) if self._active else None
            return {
                'index': self.index,
                'key_id': active.key_id if active else None,
                'epoch': active.epoch if active else None,
                'keys': {k: s.epoch for k, s in sorted(self._keys.items())},
                'rate_limit': self.limiter.describe(),
                'version': Config.PROTOCOL_VERSION,
            }

    # Evaluation

    def _client(self, request: Dict, peer: str):
        """Return (client id, role) of the requester."""
        if self.trust_root is None:
            return peer, None
        chain = verify_request(request, self.trust_root, int(self.clock()))
        return chain[0].fingerprint, chain[0].role

    def handle_eval(self, request: Dict, client_id: str, role: Optional[Role] = None) -> Dict:
        """
        Raise each blinded point to k_i * lambda_i for the evaluation set L.

        Returns:
            {'server_index': i, 'points': [...]} in request order
        """
        if request.get('version', Config.PROTOCOL_VERSION) != Config.PROTOCOL_VERSION:
            raise ProtocolMismatch(f"Unsupported protocol version {request.get('version')}")

        key_id, epoch = request.get('key_id'), request.get('epoch')
        with self._lock:
            share, active_id = self._keys.get(key_id), self._active
        if share is None or share.epoch != epoch:
            held = f"epoch {share.epoch}" if share else "no share"
            raise EpochMismatch(f"Keyserver {self.index} has {held} for key {key_id}, request asked for epoch {epoch}",
                                key_id=key_id, epoch=share.epoch if share else None)
        if key_id != active_id and role != Role.DATABASE:
            raise InvalidCertificate(f"Key {key_id} is pending and only evaluable by an authenticated database")

        L = request.get('L')
        if not isinstance(L, list) or not all(isinstance(i, int) for i in L):
            raise NotInEvaluationSet("Evaluation set must be a list of server indices")
        if len(set(L)) != len(L):
            raise DuplicateIndex(f"Duplicate index in evaluation set {L}")
        if len(L) != self.t or self.index not in L:
            raise NotInEvaluationSet(f"Server {self.index} cannot evaluate for set {L} (t={self.t})")

        encoded = request.get('points')
        if not isinstance(encoded, list):
            raise MalformedPoint("points must be a list")
        self.limiter.acquire(client_id, len(encoded))

        points = decode_points(encoded, self.group)
        for position, point in enumerate(points):
            if point.is_identity():
                raise MalformedPoint(f"Point {position} is the identity element")

        exponent = evaluation_exponent(L, self.index, share.value)
        evaluated = [point ** exponent for point in points]
        logger.debug("Keyserver %d evaluated %d points for %s", self.index, len(points), client_id)
        return {'server_index': self.index, 'points': encode_points(evaluated)}

    def participate(self, message: Dict) -> Dict:
        return self.rounds.participate(message)

    def _authorize_round(self, message: Dict):
        """
        Check who sent an admin round message.

        Sub-shares must come from the keyserver whose index is the dealer;
        every other step must come from an operator.
        """
        if self.trust_root is None:
            raise InvalidCertificate(f"Keyserver {self.index} has no trust root and refuses admin rounds")
        try:
            leaf = verify_request(message, self.trust_root, int(self.clock()))[0]
        except CertificateError as e:
            raise InvalidCertificate(f"Round message sender rejected: {e.message}")
        if str(message.get('round', '')).endswith('.subshare'):
            if leaf.role != Role.KEYSERVER or str(leaf.attributes.get('index')) != str(message.get('dealer')):
                raise InvalidCertificate(f"Sub-share for dealer {message.get('dealer')} not sent by that keyserver")
        elif leaf.role != Role.OPERATOR:
            raise InvalidCertificate(f"Round {message.get('round')} needs an operator certificate, got {leaf.role.value}")

    # Routing

    def dispatch(self, method: str, path: str, payload: Optional[Dict], peer: str) -> Dict:
        route = (method.upper(), path)
        if route == ('GET', '/status'):
            return self.status()
        if route == ('POST', '/eval'):
            client_id, role = self._client(payload or {}, peer)
            return self.handle_eval(payload or {}, client_id, role)
        if route == ('POST', '/admin/round'):
            self._authorize_round(payload or {})
            return self.participate(payload or {})
        raise UnknownRound(f"No route {method} {path}")

    def __repr__(self):
        return f"Keyserver(index={self.index}, n={self.n}, t={self.t}, active={self._active!r})"


def keyserver_handles(endpoints: List[str], transport: Transport) -> List[KeyserverHandle]:
    return [KeyserverHandle(endpoint, transport) for endpoint in endpoints]
