"""
Request/response transports between clients, keyservers and the database.

``HttpTransport`` talks to the FastAPI surfaces over HTTP. ``InMemoryNetwork``
calls service objects directly, records every message in a ``Transcript`` and
can take endpoints down for fault injection. Both raise the same error classes.
"""
import itertools
import json
import logging
import threading
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional, Protocol, Set

import requests

from .certs import SigningIdentity, sign_request
from .config import Config
from .encoding import canonical_json
from .errors import DatabaseUnreachable, ScreenerError, Unreachable, from_payload, is_error_payload

logger = logging.getLogger(__name__)


class Transport(Protocol):
    """Protocol for transports"""

    def request(self, endpoint: str, method: str, path: str, payload: Optional[Dict] = None) -> Dict:
        """Send one request and return the decoded JSON response"""
        ...


class Service(Protocol):
    """Anything an in-memory transport can deliver to"""

    def dispatch(self, method: str, path: str, payload: Optional[Dict], peer: str) -> Dict:
        ...


class HttpTransport:
    """JSON over HTTP with a shared requests session"""

    def __init__(self, timeout: float = None, session: requests.Session = None):
        self.timeout = timeout or Config.HTTP_TIMEOUT
        self.session = session or requests.Session()

    def request(self, endpoint: str, method: str, path: str, payload: Optional[Dict] = None) -> Dict:
        url = endpoint.rstrip('/') + path
        try:
            response = self.session.request(method, url, json=payload, timeout=self.timeout)
        except requests.RequestException as e:
            raise Unreachable(f"{url}: {e}", endpoint=endpoint)

        try:
            body = response.json()
        except ValueError:
            body = None

        if response.status_code >= 400:
            if is_error_payload(body):
                raise from_payload(body)
            if response.status_code >= 500:
                raise Unreachable(f"{url} answered HTTP {response.status_code}", endpoint=endpoint)
            try:
                response.raise_for_status()
            except requests.HTTPError as e:
                raise ScreenerError(str(e))
        if not isinstance(body, dict):
            raise Unreachable(f"{url} returned a non-JSON body", endpoint=endpoint)
        return body


@dataclass(frozen=True)
class TranscriptRecord:
    seq: int
    src: str
    dst: str
    path: str
    direction: str    # request | response | dropped
    payload: bytes

    def to_dict(self) -> Dict[str, Any]:
        return {
            'seq': self.seq,
            'src': self.src,
            'dst': self.dst,
            'path': self.path,
            'direction': self.direction,
            'payload': self.payload.decode('utf-8'),
        }


class Transcript:
    """Ordered log of messages, verdicts and harness events"""

    def __init__(self):
        self.records: List[TranscriptRecord] = []
        self.events: List[Dict[str, Any]] = []
        self._counter = itertools.count()
        self._lock = threading.Lock()

    def record(self, src: str, dst: str, path: str, direction: str, payload: bytes):
        with self._lock:
            self.records.append(TranscriptRecord(next(self._counter), src, dst, path, direction, payload))

    def note(self, event: Dict[str, Any]):
        with self._lock:
            self.events.append(dict(event, seq=next(self._counter)))

    @property
    def verdicts(self) -> List[Dict[str, Any]]:
        return [e['verdict'] for e in self.events if 'verdict' in e]

    def messages(self, direction: Optional[str] = None, dst_prefix: str = '') -> Iterator[TranscriptRecord]:
        for r in self.records:
            if (direction is None or r.direction == direction) and r.dst.startswith(dst_prefix):
                yield r

    def to_jsonl(self) -> str:
        rows = [r.to_dict() for r in self.records] + self.events
        rows.sort(key=lambda row: row['seq'])
        return ''.join(canonical_json(row).decode('utf-8') + '\n' for row in rows)


class InMemoryNetwork:
    """Endpoints wired to service objects in one process"""

    def __init__(self, transcript: Optional[Transcript] = None):
        self.transcript = transcript if transcript is not None else Transcript()
        self.services: Dict[str, Service] = {}
        self.down: Set[str] = set()

    def register(self, endpoint: str, service: Service):
        self.services[endpoint] = service

    def set_down(self, endpoint: str, down: bool = True):
        if down:
            self.down.add(endpoint)
        else:
            self.down.discard(endpoint)

    def transport(self, sender: str) -> 'InMemoryTransport':
        return InMemoryTransport(self, sender)


class InMemoryTransport:
    """Transport bound to one sender name on an InMemoryNetwork"""

    def __init__(self, network: InMemoryNetwork, sender: str):
        self.network = network
        self.sender = sender

    def request(self, endpoint: str, method: str, path: str, payload: Optional[Dict] = None) -> Dict:
        transcript = self.network.transcript
        route = f'{method} {path}'
        body = canonical_json(payload) if payload is not None else b''
        if endpoint in self.network.down or endpoint not in self.network.services:
            transcript.record(self.sender, endpoint, route, 'dropped', body)
            raise Unreachable(f"{endpoint} is unreachable", endpoint=endpoint)
        transcript.record(self.sender, endpoint, route, 'request', body)
        service = self.network.services[endpoint]
        try:
            response = service.dispatch(method, path, json.loads(body) if body else None, self.sender)
        except ScreenerError as e:
            error_body = canonical_json(e.to_payload())
            transcript.record(endpoint, self.sender, route, 'response', error_body)
            raise from_payload(json.loads(error_body))
        response_body = canonical_json(response)
        transcript.record(endpoint, self.sender, route, 'response', response_body)
        return json.loads(response_body)


def _signed(message: Dict, identity: Optional[SigningIdentity]) -> Dict:
    if identity is None:
        return message
    return sign_request(message, identity)


class KeyserverHandle:
    """Client-side view of one keyserver

    Admin round messages are signed with ``identity`` when one is given.
    """

    def __init__(self, endpoint: str, transport: Transport, identity: Optional[SigningIdentity] = None):
        self.endpoint = endpoint
        self.transport = transport
        self.identity = identity

    def status(self) -> Dict:
        return self.transport.request(self.endpoint, 'GET', '/status')

    def evaluate(self, payload: Dict) -> Dict:
        return self.transport.request(self.endpoint, 'POST', '/eval', payload)

    def round(self, message: Dict) -> Dict:
        return self.transport.request(self.endpoint, 'POST', '/admin/round', _signed(message, self.identity))

    def __repr__(self):
        return f"KeyserverHandle({self.endpoint})"


class DatabaseHandle:
    """Client-side view of the hashed database server"""

    def __init__(self, endpoint: str, transport: Transport, identity: Optional[SigningIdentity] = None):
        self.endpoint = endpoint
        self.transport = transport
        self.identity = identity

    def _call(self, method: str, path: str, payload: Optional[Dict] = None) -> Dict:
        try:
            return self.transport.request(self.endpoint, method, path, payload)
        except Unreachable as e:
            raise DatabaseUnreachable(e.message)

    def screen(self, payload: Dict) -> Dict:
        return self._call('POST', '/screen', payload)

    def version(self) -> Dict:
        return self._call('GET', '/version')

    def certificate(self) -> Dict:
        return self._call('GET', '/certificate')

    def swap(self, path: str) -> Dict:
        return self._call('POST', '/admin/swap', _signed({'path': path}, self.identity))

    def rekey(self, message: Dict) -> Dict:
        return self._call('POST', '/admin/rekey', _signed(message, self.identity))

    def counters(self) -> Dict:
        return self._call('GET', '/admin/counters')
