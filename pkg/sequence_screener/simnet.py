"""
In-process network of keyservers, a database server and clients.

Everything runs over an ``InMemoryNetwork`` whose transcript records every
message. Randomness comes from one seeded generator and time from a virtual
clock, so a scenario replays to a byte-identical transcript.
"""
import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from .builder import DatabaseBuilder, HazardSource
from .certs import Role, SigningIdentity, create_root, issue_identity
from .config import ClientConfig
from .doprf import DoprfClient
from .elt import NonceStore
from .encoding import b64e
from .errors import ScenarioInvalid, ScreenerError
from .group import GroupFactory
from .hashdb import HashDbServer
from .keyserver import Keyserver
from .main import ReceiptStore, SynthClient
from .report import ScreeningReport
from .rounds import distributed_keygen, proactive_reshare, rotate_key
from .sequences import SequenceRecord, query_windows, reverse_complement
from .sharing import KeyShare, SharingConfig, combine, reconstruct
from .transport import DatabaseHandle, InMemoryNetwork, KeyserverHandle, Transcript

logger = logging.getLogger(__name__)

EVENTS = ('kill', 'revive', 'reshare', 'rotate', 'screen', 'capture', 'advance_clock')
DATABASE = 'db'
START_TIME = 1_700_000_000
SIM_RATE_LIMIT = 1e12

_DNA_RUN = re.compile(r'[ACGT]{30,}')
_PEPTIDE_RUN = re.compile(r'[ACDEFGHIKLMNPQRSTVWY]{20,}')


class VirtualClock:
    """Scenario time in seconds"""

    def __init__(self, start: float = START_TIME):
        self.now = float(start)

    def time(self) -> float:
        return self.now

    def advance(self, seconds: float):
        if seconds < 0:
            raise ScenarioInvalid("The clock cannot run backwards")
        self.now += seconds


@dataclass
class Scenario:
    seed: int
    n: int
    t: int
    group: str = 'modp-127'
    region: str = 'US'
    hazards: List[Dict[str, Any]] = field(default_factory=list)
    orders: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    events: List[Dict[str, Any]] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Scenario':
        try:
            scenario = cls(
                seed=int(data['seed']),
                n=int(data['n']),
                t=int(data['t']),
                group=data.get('group', 'modp-127'),
                region=data.get('region', 'US'),
                hazards=list(data.get('hazards', [])),
                orders=dict(data.get('orders', {})),
                events=list(data.get('events', [])),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioInvalid(f"Malformed scenario: {e}")
        scenario.validate()
        return scenario

    @classmethod
    def from_file(cls, path) -> 'Scenario':
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding='utf-8')))
        except (OSError, json.JSONDecodeError) as e:
            raise ScenarioInvalid(f"Cannot read scenario {path}: {e}")

    def validate(self):
        if not 0 < self.t <= self.n:
            raise ScenarioInvalid(f"Threshold t={self.t} must satisfy 0 < t <= n={self.n}")
        accessions = {h.get('accession') for h in self.hazards}
        for name, order in self.orders.items():
            if 'hazard' in order and order['hazard'] not in accessions:
                raise ScenarioInvalid(f"Order {name} refers to unknown hazard {order['hazard']}")
        for position, event in enumerate(self.events):
            op = event.get('op')
            if op not in EVENTS:
                raise ScenarioInvalid(f"Event {position}: unknown op {op!r}")
            if op in ('kill', 'revive', 'capture') and not 1 <= event.get('server', 0) <= self.n:
                raise ScenarioInvalid(f"Event {position}: server index outside [1, {self.n}]")
            if op == 'screen' and event.get('order') not in self.orders:
                raise ScenarioInvalid(f"Event {position}: unknown order {event.get('order')!r}")
        return True


class SimNet:
    """n keyservers, one database server and a provider client wired in memory"""

    def __init__(self, n: int, t: int, group: str = 'modp-127', seed: int = 0, region: str = 'US',
                 start_time: float = START_TIME, rate_limit: float = SIM_RATE_LIMIT):
        self.group = GroupFactory.get(group)
        self.cfg = SharingConfig(n, t, self.group.order).validate()
        self.rng = random.Random(seed)
        self.clock = VirtualClock(start_time)
        self.region = region
        self.network = InMemoryNetwork()
        self.captured: List[KeyShare] = []
        self.seen_shares: Dict[tuple, KeyShare] = {}
        self.table = None

        now = int(self.clock.time())
        self.root = create_root('root', now, private_key=self._private_key())
        self.keyservers: Dict[int, Keyserver] = {}
        for i in self.cfg.indices:
            name = self.endpoint(i)
            identity = self.issue(Role.KEYSERVER, name, attributes={'index': i})
            peers = {j: KeyserverHandle(self.endpoint(j), self.network.transport(name), identity)
                     for j in self.cfg.indices if j != i}
            server = Keyserver(i, n, t, self.group, peers=peers, rate_limit=rate_limit,
                               trust_root=self.root.certificate, clock=self.clock.time,
                               monotonic=self.clock.time, randomness=self._fork(), identity=identity)
            self.keyservers[i] = server
            self.network.register(name, server)

        self.database_identity = self.issue(Role.DATABASE, 'hazard-database')
        self.provider_identity = self.issue(Role.PROVIDER, 'provider')
        self.operator_identity = self.issue(Role.OPERATOR, 'operator')
        self.admin = self.handles('admin', self.operator_identity)
        self.database = None

    # Plumbing

    @staticmethod
    def endpoint(index: int) -> str:
        return f'ks{index}'

    def _fork(self) -> random.Random:
        return random.Random(self.rng.getrandbits(64))

    def _private_key(self) -> Ed25519PrivateKey:
        return Ed25519PrivateKey.from_private_bytes(self.rng.randbytes(32))

    def issue(self, role: Role, subject: str, issuer: Optional[SigningIdentity] = None,
              attributes: Optional[Dict[str, Any]] = None) -> SigningIdentity:
        return issue_identity(issuer or self.root, subject, role, int(self.clock.time()),
                              attributes=attributes, private_key=self._private_key())

    @property
    def transcript(self) -> Transcript:
        return self.network.transcript

    def handles(self, sender: str, identity: Optional[SigningIdentity] = None) -> Dict[int, KeyserverHandle]:
        transport = self.network.transport(sender)
        return {i: KeyserverHandle(self.endpoint(i), transport, identity) for i in self.cfg.indices}

    def database_admin(self) -> DatabaseHandle:
        return DatabaseHandle(DATABASE, self.network.transport('admin'), self.operator_identity)

    def doprf_client(self, sender: str, identity: SigningIdentity) -> DoprfClient:
        return DoprfClient(self.group, list(self.handles(sender).values()), self.cfg.t,
                           randomness=self._fork(), identity=identity, prefer_latency=False, max_workers=1)

    def _observe(self):
        for server in self.keyservers.values():
            for key_id in server.status()['keys']:
                held = server.key(key_id)
                self.seen_shares[(held.server_index, held.key_id, held.epoch)] = held

    # Setup

    def keygen(self, key_id: str = 'k0'):
        distributed_keygen(self.admin, self.cfg, key_id=key_id)
        self._observe()

    def build_database(self, sources: Sequence[HazardSource], version: int = 1, seed: int = 0, **builder_options):
        """Build the hazard table through the keyservers and start the database server."""
        client = self.doprf_client(DATABASE, self.database_identity)
        builder = DatabaseBuilder(client, seed=seed, verbose=False, **builder_options)
        self.table = builder.run(sources, version)
        self.database = HashDbServer(self.table, self.database_identity, self.root.certificate,
                                     nonces=NonceStore(), clock=self.clock.time, group=self.group,
                                     keyservers=list(self.handles(DATABASE).values()), t=self.cfg.t,
                                     randomness=self._fork(),
                                     doprf_options={'prefer_latency': False, 'max_workers': 1})
        self.network.register(DATABASE, self.database)
        return self.table

    def client(self, identity: Optional[SigningIdentity] = None, region: Optional[str] = None,
               mode: str = 'provider', sender: str = 'client', **config) -> SynthClient:
        cfg = ClientConfig(keyservers=[self.endpoint(i) for i in self.cfg.indices], database=DATABASE,
                           t=self.cfg.t, n=self.cfg.n, region=region or self.region, mode=mode,
                           group=self.group.name, **config)
        cfg.validate()
        return SynthClient(cfg, transport=self.network.transport(sender),
                           identity=identity or self.provider_identity, trust_root=self.root.certificate,
                           clock=self.clock.time, randomness=self._fork(),
                           doprf_options={'prefer_latency': False, 'max_workers': 1},
                           receipts=ReceiptStore())

    # Events

    def kill(self, index: int):
        self.network.set_down(self.endpoint(index))

    def revive(self, index: int):
        self.network.set_down(self.endpoint(index), False)

    def reshare(self):
        result = proactive_reshare(self.admin, self.cfg)
        self._observe()
        return result

    def rotate(self):
        if self.database is None:
            raise ScenarioInvalid("Rotation needs a database")
        result = rotate_key(self.admin, self.cfg, self.database_admin())
        self.table = self.database.table
        self._observe()
        return result

    def capture(self, index: int) -> KeyShare:
        """Adversary copies the active share of one server."""
        share = self.keyservers[index].active
        if share is None:
            raise ScenarioInvalid(f"Server {index} holds no active share")
        self.captured.append(share)
        return share

    def screen(self, records: Sequence[SequenceRecord], **client_options) -> ScreeningReport:
        return self.client(**client_options).screen_records(records)

    # Oracles

    def reconstruct_key(self):
        """The active key, interpolated from t live servers' shares."""
        shares = [s.active for s in self.keyservers.values() if s.active is not None]
        top = max(s.epoch for s in shares)
        current = [s for s in shares if s.epoch == top]
        return reconstruct(current[:self.cfg.t], self.cfg)

    def captured_reconstructs(self) -> bool:
        """Whether interpolating the captured shares, epochs ignored, yields the key."""
        by_index = {s.server_index: s for s in self.captured}
        if len(by_index) < self.cfg.t:
            return False
        points = [(s.server_index, s.value) for s in list(by_index.values())[:self.cfg.t]]
        return combine(points) == self.reconstruct_key()

    def all_shares(self) -> List[KeyShare]:
        self._observe()
        return list(self.seen_shares.values())

    # Scenarios

    def random_dna(self, length: int) -> str:
        return ''.join(self.rng.choice('ACGT') for _ in range(length))

    def run(self, scenario: Scenario) -> Transcript:
        hazards = self._hazards(scenario)
        self.keygen()
        self.build_database(hazards, seed=scenario.seed)
        orders = {name: self._order(name, item, hazards) for name, item in sorted(scenario.orders.items())}
        for position, event in enumerate(scenario.events):
            self._apply(position, event, orders)
        return self.transcript

    def _hazards(self, scenario: Scenario) -> List[HazardSource]:
        sources = []
        for item in scenario.hazards:
            residues = item.get('residues') or self.random_dna(int(item.get('length', 300)))
            sources.append(HazardSource(
                accession=item['accession'], residues=residues, kind=item.get('kind', 'toxin'),
                region_tags=tuple(item.get('regions', [scenario.region])), common=item.get('common', False),
                genus=item.get('genus'), defend_mutants=item.get('defend'),
            ))
        return sources

    def _order(self, name: str, item: Dict[str, Any], hazards: Sequence[HazardSource]) -> List[SequenceRecord]:
        if 'residues' in item:
            residues = item['residues']
        elif 'random' in item:
            residues = self.random_dna(int(item['random']))
        else:
            source = next(h for h in hazards if h.accession == item['hazard'])
            start = int(item.get('start', 0))
            residues = source.residues[start:start + int(item.get('length', len(source.residues)))]
            if item.get('reverse'):
                residues = reverse_complement(residues)
        return [SequenceRecord(name, residues)]

    def _apply(self, position: int, event: Dict[str, Any], orders: Dict[str, List[SequenceRecord]]):
        op = event['op']
        note = {'event': op, 'position': position}
        if op == 'kill':
            self.kill(event['server'])
        elif op == 'revive':
            self.revive(event['server'])
        elif op == 'advance_clock':
            self.clock.advance(float(event.get('seconds', 0)))
        elif op == 'capture':
            share = self.capture(event['server'])
            note.update(server=share.server_index, epoch=share.epoch)
        elif op in ('reshare', 'rotate'):
            try:
                key_id, epoch = self.reshare() if op == 'reshare' else self.rotate()
                note.update(key_id=key_id, epoch=epoch)
            except ScreenerError as e:
                note.update(error=e.code)
        elif op == 'screen':
            note['order'] = event['order']
            try:
                report = self.screen(orders[event['order']], region=event.get('region'))
                note['verdict'] = {'order': event['order'], 'decision': report.decision,
                                   'matches': len(report.matches), 'version': report.database_version}
                outcome = report.decision
            except ScreenerError as e:
                note['verdict'] = {'order': event['order'], 'error': e.code}
                outcome = e.code
            if 'expect' in event:
                note['ok'] = outcome == event['expect']
        self.transcript.note(note)
        logger.info("Scenario event %d: %s", position, op)


def run_scenario(scenario: Scenario) -> Transcript:
    net = SimNet(scenario.n, scenario.t, scenario.group, scenario.seed, scenario.region)
    return net.run(scenario)


# Transcript predicates

def _string_leaves(value) -> Iterable[str]:
    if isinstance(value, str):
        yield value
    elif isinstance(value, dict):
        for k, v in value.items():
            yield k
            yield from _string_leaves(v)
    elif isinstance(value, list):
        for v in value:
            yield from _string_leaves(v)


def _payloads(transcript: Transcript, dst_prefix: str = ''):
    for record in transcript.messages(dst_prefix=dst_prefix):
        if record.direction == 'response':
            continue
        yield record


def plaintext_windows(sequences: Iterable[str]) -> set:
    """Every window payload a client or builder would derive from the given sequences."""
    found = set()
    for residues in sequences:
        for strand in (residues, reverse_complement(residues)):
            found.update(w.payload for w in query_windows(SequenceRecord('', strand)))
    return found


def no_plaintext_windows(transcript: Transcript, sequences: Iterable[str]) -> bool:
    known = plaintext_windows(sequences)
    for record in transcript.records:
        if not record.payload:
            continue
        for leaf in _string_leaves(json.loads(record.payload)):
            for run in _DNA_RUN.findall(leaf):
                if any(run[i:i + 30] in known for i in range(len(run) - 29)):
                    return False
            for run in _PEPTIDE_RUN.findall(leaf):
                if any(run[i:i + 20] in known for i in range(len(run) - 19)):
                    return False
    return True


def no_share_values(transcript: Transcript, shares: Iterable[KeyShare]) -> bool:
    secrets_on_wire = set()
    for share in shares:
        raw = share.value.to_bytes()
        secrets_on_wire.update({b64e(raw).encode('ascii'), raw.hex().encode('ascii')})
    return not any(secret in record.payload for record in transcript.records for secret in secrets_on_wire)


def no_table_hashes(transcript: Transcript, hashes: Iterable[bytes], dst_prefix: str = 'ks') -> bool:
    encoded = {b64e(h).encode('ascii') for h in hashes}
    return not any(h in record.payload for record in _payloads(transcript, dst_prefix) for h in encoded)


PREDICATES = {
    'no_plaintext_windows': no_plaintext_windows,
    'no_share_values': no_share_values,
    'no_table_hashes': no_table_hashes,
}


def transcript_assert(transcript: Transcript, predicate, **context) -> bool:
    """
    Evaluate a privacy predicate over every recorded payload.

    Args:
        transcript: Recorded messages
        predicate: Name in PREDICATES or a callable taking the transcript
        **context: Extra arguments of the predicate (sequences, shares, hashes)
    """
    check = PREDICATES[predicate] if isinstance(predicate, str) else predicate
    return bool(check(transcript, **context))
