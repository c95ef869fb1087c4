"""
Shared fixtures: toy groups, seeded randomness, certificate hierarchies and
small keyserver networks wired in memory.
"""
import random

import pytest
from hypothesis import settings

from sequence_screener.certs import Role, create_root, issue_identity
from sequence_screener.doprf import DoprfClient
from sequence_screener.group import GroupFactory
from sequence_screener.keyserver import Keyserver
from sequence_screener.rounds import distributed_keygen
from sequence_screener.sharing import SharingConfig
from sequence_screener.simnet import SimNet
from sequence_screener.transport import InMemoryNetwork, KeyserverHandle

settings.register_profile('screener', max_examples=30, deadline=None)
settings.load_profile('screener')

NOW = 1_700_000_000


@pytest.fixture
def small_group():
    return GroupFactory.get('modp-small')


@pytest.fixture
def tiny_group():
    return GroupFactory.get('modp-11')


@pytest.fixture
def group():
    return GroupFactory.get('modp-127')


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def pki():
    """Root plus one identity per commonly used role."""
    root = create_root('root', NOW)
    authority = issue_identity(root, 'authority', Role.NATIONAL_AUTHORITY, NOW)
    officer = issue_identity(authority, 'officer', Role.BIOSAFETY_OFFICER, NOW)
    pi = issue_identity(officer, 'pi', Role.PRINCIPAL_INVESTIGATOR, NOW)
    return {
        'root': root,
        'authority': authority,
        'officer': officer,
        'pi': pi,
        'researcher': issue_identity(pi, 'researcher', Role.RESEARCHER, NOW),
        'provider': issue_identity(root, 'provider', Role.PROVIDER, NOW),
        'database': issue_identity(root, 'database', Role.DATABASE, NOW),
    }


class KeyserverNet:
    """n keyservers on an InMemoryNetwork under one root, with operator-signed admin handles"""

    def __init__(self, n: int, t: int, group, seed: int = 0, keygen: bool = True):
        self.cfg = SharingConfig(n, t, group.order)
        self.group = group
        self.rng = random.Random(seed)
        self.network = InMemoryNetwork()
        self.root = create_root('root', NOW)
        self.operator = issue_identity(self.root, 'operator', Role.OPERATOR, NOW)
        self.provider = issue_identity(self.root, 'provider', Role.PROVIDER, NOW)
        self.database = issue_identity(self.root, 'database', Role.DATABASE, NOW)
        self.servers = {}
        self.identities = {}
        for i in self.cfg.indices:
            identity = issue_identity(self.root, f'ks{i}', Role.KEYSERVER, NOW, attributes={'index': i})
            self.identities[i] = identity
            transport = self.network.transport(f'ks{i}')
            peers = {j: KeyserverHandle(f'ks{j}', transport, identity) for j in self.cfg.indices if j != i}
            self.servers[i] = Keyserver(i, n, t, group, peers=peers, rate_limit=1e12,
                                        trust_root=self.root.certificate, clock=lambda: NOW,
                                        randomness=random.Random(self.rng.getrandbits(64)), identity=identity)
            self.network.register(f'ks{i}', self.servers[i])
        self.admin = self.handles('admin', self.operator)
        if keygen:
            distributed_keygen(self.admin, self.cfg)

    def handles(self, sender: str = 'client', identity=None):
        transport = self.network.transport(sender)
        return {i: KeyserverHandle(f'ks{i}', transport, identity) for i in self.cfg.indices}

    def client(self, sender: str = 'client', **options) -> DoprfClient:
        options.setdefault('prefer_latency', False)
        options.setdefault('max_workers', 1)
        options.setdefault('identity', self.provider)
        return DoprfClient(self.group, list(self.handles(sender).values()), self.cfg.t,
                           randomness=random.Random(self.rng.getrandbits(64)), **options)

    def active_shares(self):
        return [s.active for s in self.servers.values() if s.active is not None]

    def kill(self, *indices):
        for i in indices:
            self.network.set_down(f'ks{i}')

    def revive(self, *indices):
        for i in indices:
            self.network.set_down(f'ks{i}', False)


@pytest.fixture
def keyserver_net(group):
    def make(n: int = 5, t: int = 3, seed: int = 0, keygen: bool = True):
        return KeyserverNet(n, t, group, seed, keygen)
    return make


@pytest.fixture
def simnet():
    def make(n: int = 5, t: int = 3, seed: int = 7, **options):
        return SimNet(n, t, 'modp-127', seed, **options)
    return make
