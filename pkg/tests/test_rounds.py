import itertools

import pytest

from sequence_screener.builder import HazardSource
from sequence_screener.certs import sign_request
from sequence_screener.errors import (DegreeReductionImpossible, DkgAborted, InvalidCertificate, ReshareImpossible,
                                      RotationIncomplete, UnknownRound, Unreachable)
from sequence_screener.rounds import (distributed_keygen, finish_rotation, next_key_id, proactive_reshare, rotate_key,
                                      share_mul_reduce)
from sequence_screener.sequences import SequenceRecord
from sequence_screener.sharing import reconstruct


def _key(net, key_id=None):
    shares = [s.key(key_id) if key_id else s.active for s in net.servers.values()]
    return reconstruct([s for s in shares if s is not None], net.cfg)


def test_keygen_gives_every_server_a_consistent_share(keyserver_net):
    net = keyserver_net()
    shares = net.active_shares()
    assert {(s.key_id, s.epoch) for s in shares} == {('k0', 0)}
    keys = {reconstruct(list(subset), net.cfg) for subset in itertools.combinations(shares, net.cfg.t)}
    assert len(keys) == 1


def test_keygen_acknowledgements_carry_no_share_values(keyserver_net):
    net = keyserver_net(keygen=False)
    results = distributed_keygen(net.admin, net.cfg, key_id='k7')
    assert set(results) == set(net.cfg.indices)
    assert all(set(ack) == {'ok', 'server_index', 'key_id', 'epoch'} for ack in results.values())


def test_keygen_needs_every_participant(keyserver_net):
    net = keyserver_net(keygen=False)
    with pytest.raises(DkgAborted):
        distributed_keygen({i: h for i, h in net.admin.items() if i != 3}, net.cfg)
    net.kill(3)
    with pytest.raises(DkgAborted):
        distributed_keygen(net.admin, net.cfg)
    assert all(s.active is None for s in net.servers.values())


def test_reshare_keeps_key_and_outputs(keyserver_net):
    net = keyserver_net()
    x = b'dna30:' + b'ACGTTGCAAC' * 3
    before_key, before_output = _key(net), net.client().doprf_eval(x).data
    old_values = [s.value for s in net.active_shares()]

    assert proactive_reshare(net.admin, net.cfg) == ('k0', 1)
    assert {s.epoch for s in net.active_shares()} == {1}
    assert _key(net) == before_key
    assert [s.value for s in net.active_shares()] != old_values
    assert net.client().doprf_eval(x).data == before_output


def test_reshare_while_servers_are_offline(keyserver_net):
    net = keyserver_net()
    x = b'aa20:MKTIIALSYIFCLVFADYKD'
    expected = net.client().doprf_eval(x).data
    net.kill(2, 5)
    assert proactive_reshare(net.admin, net.cfg) == ('k0', 1)
    net.revive(2, 5)
    # the stale servers are ignored until the next reshare reaches them
    assert net.client().doprf_eval(x).data == expected
    assert proactive_reshare(net.admin, net.cfg) == ('k0', 2)
    assert {s.epoch for s in net.active_shares()} == {2}
    assert net.client(subset=[2, 4, 5]).doprf_eval(x).data == expected


def test_reshare_needs_t_live_holders(keyserver_net):
    net = keyserver_net()
    net.kill(1, 2, 3)
    with pytest.raises(ReshareImpossible):
        proactive_reshare(net.admin, net.cfg)


def test_share_multiplication(keyserver_net):
    net = keyserver_net()
    distributed_keygen(net.admin, net.cfg, key_id='delta', activate=False)
    recipients = share_mul_reduce(net.admin, net.cfg, ('k0', 0), ('delta', 0), 'product', 1)
    assert recipients == net.cfg.indices
    assert _key(net, 'product') == _key(net, 'k0') * _key(net, 'delta')
    assert all(s.status()['key_id'] == 'k0' for s in net.servers.values())


def test_share_multiplication_needs_2t_minus_1(keyserver_net):
    net = keyserver_net(n=4, t=3)
    with pytest.raises(DegreeReductionImpossible):
        share_mul_reduce(net.admin, net.cfg, ('k0', 0), ('k0', 0), 'square', 1)


def test_round_messages_are_checked(keyserver_net):
    net = keyserver_net()
    with pytest.raises(UnknownRound):
        net.admin[1].round({'round': 'dkg.steal', 'to': 1})
    with pytest.raises(UnknownRound):
        net.admin[1].round({'round': 'dkg.finalize', 'to': 2})


def test_admin_rounds_need_an_operator(keyserver_net):
    net = keyserver_net()
    before = {i: s.active for i, s in net.servers.items()}
    finalize = {'round': 'dkg.finalize', 'to': 1, 'session': 'x', 'key_id': 'evil', 'epoch': 9,
                'dealers': [], 'activate': True}
    with pytest.raises(InvalidCertificate):
        net.handles('mallory')[1].round(finalize)
    with pytest.raises(InvalidCertificate):
        net.handles('mallory', net.provider)[1].round(finalize)
    with pytest.raises(InvalidCertificate):
        net.handles('ks2', net.identities[2])[1].round(finalize)
    assert {i: s.active for i, s in net.servers.items()} == before


def test_subshares_must_come_from_their_dealer(keyserver_net):
    net = keyserver_net()
    subshare = {'round': 'dkg.subshare', 'to': 1, 'session': 'x', 'dealer': 2, 'value': ''}
    with pytest.raises(InvalidCertificate):
        net.handles('admin', net.operator)[1].round(subshare)
    with pytest.raises(InvalidCertificate):
        net.handles('ks3', net.identities[3])[1].round(subshare)
    server = net.servers[1]
    with pytest.raises(InvalidCertificate):
        server.dispatch('POST', '/admin/round', sign_request(dict(subshare, dealer=3), net.identities[2]), 'ks2')


def test_finalize_refuses_empty_dealer_set(keyserver_net):
    net = keyserver_net()
    before = net.servers[1].active
    with pytest.raises(DkgAborted):
        net.admin[1].round({'round': 'dkg.finalize', 'to': 1, 'session': 'x', 'key_id': 'evil',
                            'epoch': 9, 'dealers': [], 'activate': True})
    assert net.servers[1].active == before
    assert 'evil' not in net.servers[1].status()['keys']


def test_finalize_refuses_short_or_mismatched_dealers(keyserver_net):
    net = keyserver_net()
    indices = net.cfg.indices
    for dealer in (1, 2, 3, 4):
        net.admin[dealer].round({'round': 'dkg.deal', 'to': dealer, 'session': 's', 't': net.cfg.t,
                                 'recipients': indices})
    finalize = {'round': 'dkg.finalize', 'session': 's', 'key_id': 'k5', 'epoch': 0, 'activate': True}
    with pytest.raises(DkgAborted):
        net.admin[1].round(dict(finalize, to=1, dealers=[1]))
    with pytest.raises(DkgAborted):
        net.admin[2].round(dict(finalize, to=2, dealers=[1, 2, 3]))
    with pytest.raises(DkgAborted):
        net.admin[3].round(dict(finalize, to=3, dealers=[1, 1, 2, 3, 4]))
    assert all(s.active.key_id == 'k0' for s in net.servers.values())


def test_next_key_id():
    assert next_key_id('k0') == 'k1'
    assert next_key_id('key-41') == 'key-42'
    assert next_key_id('main') == 'main1'


@pytest.fixture
def rotated(simnet):
    net = simnet()
    toxin = HazardSource('HZ1', net.random_dna(120), 'toxin', ('US',))
    net.keygen()
    net.build_database([toxin], version=1, peptide_stride=10)
    return net, toxin


def test_rotation_rekeys_table_and_keeps_screening(rotated):
    net, toxin = rotated
    old_key = net.reconstruct_key()
    old_hashes = set(net.database.table.hashes())

    assert net.rotate() == ('k1', 1)
    assert net.reconstruct_key() != old_key
    table = net.database.table
    assert (table.key_id, table.epoch, table.version) == ('k1', 1, 2)
    assert not old_hashes & set(table.hashes())
    assert all(set(s.status()['keys']) == {'k1'} for s in net.keyservers.values())

    report = net.screen([SequenceRecord('order', toxin.residues[:90])])
    assert report.decision == 'denied'
    assert report.database_version == 'v2'


def test_rotation_needs_every_keyserver(rotated):
    net, _ = rotated
    net.kill(4)
    with pytest.raises(DkgAborted):
        net.rotate()
    net.revive(4)
    assert all(set(s.status()['keys']) == {'k0'} for s in net.keyservers.values())
    assert net.database.table.key_id == 'k0'


class _KillsAfterRekey:
    """Database handle that takes a keyserver down once the table is re-keyed"""

    def __init__(self, net, victim):
        self.net = net
        self.victim = victim
        self.inner = net.database_admin()

    def rekey(self, message):
        result = self.inner.rekey(message)
        self.net.kill(self.victim)
        return result


class _FlakyCommit:
    def __init__(self, handle, failures=1):
        self.handle = handle
        self.failures = failures

    def status(self):
        return self.handle.status()

    def round(self, message):
        if message['round'] == 'rotate.commit' and self.failures:
            self.failures -= 1
            raise Unreachable("commit lost", endpoint=self.handle.endpoint)
        return self.handle.round(message)


def test_rotation_retries_a_lost_commit(rotated):
    net, _ = rotated
    participants = dict(net.admin)
    participants[3] = _FlakyCommit(participants[3])
    assert rotate_key(participants, net.cfg, net.database_admin()) == ('k1', 1)
    assert all(set(s.status()['keys']) == {'k1'} for s in net.keyservers.values())


def test_server_lost_between_rekey_and_commit_catches_up(rotated):
    net, toxin = rotated
    with pytest.raises(RotationIncomplete) as info:
        rotate_key(net.admin, net.cfg, _KillsAfterRekey(net, 2))
    assert info.value.pending == [2]
    assert net.database.table.key_id == 'k1'
    assert [i for i, s in net.keyservers.items() if s.status()['key_id'] == 'k1'] == [1, 3, 4, 5]

    # the four committed servers already answer under the new key
    assert net.screen([SequenceRecord('order', toxin.residues[:90])]).decision == 'denied'

    net.revive(2)
    assert finish_rotation(net.admin) == ('k1', [2])
    assert all(set(s.status()['keys']) == {'k1'} for s in net.keyservers.values())
    assert finish_rotation(net.admin) == ('k1', [])
    net.kill(1)
    net.kill(3)
    assert net.screen([SequenceRecord('order', toxin.residues[:90])]).decision == 'denied'
