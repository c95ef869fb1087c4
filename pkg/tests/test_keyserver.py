import pytest

from sequence_screener.certs import sign_request
from sequence_screener.doprf import encode_points
from sequence_screener.errors import (BadConfig, DuplicateIndex, EpochMismatch, InvalidCertificate, MalformedPoint,
                                      NotInEvaluationSet, ProtocolMismatch, RateLimited, UnknownRound)
from sequence_screener.keyserver import Keyserver
from sequence_screener.rounds import distributed_keygen
from sequence_screener.shares_store import EncryptedShareFile
from sequence_screener.sharing import KeyShare


class FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now


@pytest.fixture
def server(group):
    clock = FakeClock()
    ks = Keyserver(1, 3, 2, group, rate_limit=10, monotonic=clock)
    ks.install(KeyShare(1, group.scalar(5), 0, 'k0'), activate=True)
    ks.test_clock = clock
    return ks


def _request(group, count=1, **overrides):
    points = [group.hash_to_group(f'dna30:{i}'.encode()) for i in range(count)]
    request = {'version': 1, 'key_id': 'k0', 'epoch': 0, 'L': [1, 2], 'points': encode_points(points)}
    request.update(overrides)
    return request


def test_status_reports_keys_not_values(server):
    status = server.status()
    assert status['index'] == 1
    assert (status['key_id'], status['epoch']) == ('k0', 0)
    assert status['keys'] == {'k0': 0}
    assert status['rate_limit'] == {'rate': 10, 'capacity': 10}


def test_evaluation_raises_points_to_weighted_share(server, group):
    response = server.handle_eval(_request(group), 'client')
    assert response['server_index'] == 1
    # lambda_1 for L = {1, 2} at 0 is 2
    expected = group.hash_to_group(b'dna30:0') ** group.scalar(10)
    assert response['points'] == encode_points([expected])


@pytest.mark.parametrize('overrides, error', [
    ({'version': 2}, ProtocolMismatch),
    ({'epoch': 1}, EpochMismatch),
    ({'key_id': 'k9'}, EpochMismatch),
    ({'L': [2, 3]}, NotInEvaluationSet),
    ({'L': [1, 2, 3]}, NotInEvaluationSet),
    ({'L': [1, 1]}, DuplicateIndex),
    ({'L': 'all'}, NotInEvaluationSet),
    ({'points': ['%%%']}, MalformedPoint),
    ({'points': 'nope'}, MalformedPoint),
])
def test_bad_requests(server, group, overrides, error):
    with pytest.raises(error):
        server.handle_eval(_request(group, **overrides), 'client')


def test_identity_point_is_rejected(server, group):
    identity = group.generator() ** group.scalar(0)
    with pytest.raises(MalformedPoint):
        server.handle_eval(_request(group, points=encode_points([identity])), 'client')


def test_rate_limit_per_client(server, group):
    server.handle_eval(_request(group, 8), 'alice')
    with pytest.raises(RateLimited) as info:
        server.handle_eval(_request(group, 8), 'alice')
    assert info.value.retry_after == pytest.approx(0.6)
    server.handle_eval(_request(group, 8), 'bob')

    server.test_clock.now += 1
    server.handle_eval(_request(group, 8), 'alice')
    with pytest.raises(RateLimited) as info:
        server.handle_eval(_request(group, 11), 'carol')
    assert info.value.retry_after is None


def test_install_refuses_epoch_regression(server, group):
    server.install(KeyShare(1, group.scalar(7), 3, 'k0'))
    with pytest.raises(EpochMismatch):
        server.install(KeyShare(1, group.scalar(8), 2, 'k0'))
    assert server.active.epoch == 3


def test_unknown_route(server):
    with pytest.raises(UnknownRound):
        server.dispatch('GET', '/shares', None, 'client')


def test_shares_persist_encrypted(group, tmp_path):
    path = tmp_path / 'ks1.shares'
    first = Keyserver(1, 3, 2, group, share_file=EncryptedShareFile(path, 'correct horse'))
    first.install(KeyShare(1, group.scalar(12345), 2, 'k4'), activate=True)
    assert b'12345' not in path.read_bytes()

    second = Keyserver(1, 3, 2, group, share_file=EncryptedShareFile(path, 'correct horse'))
    assert second.active.key_id == 'k4'
    assert second.active.value.value == 12345
    with pytest.raises(BadConfig):
        Keyserver(1, 3, 2, group, share_file=EncryptedShareFile(path, 'wrong'))


def test_signed_requests_required_with_trust_root(simnet):
    net = simnet()
    net.keygen()
    request = _request(net.group, L=[1, 2, 3])
    with pytest.raises(InvalidCertificate):
        net.keyservers[1].dispatch('POST', '/eval', request, 'client')
    response = net.keyservers[1].dispatch('POST', '/eval', sign_request(request, net.provider_identity), 'client')
    assert response['server_index'] == 1


def test_pending_key_is_only_evaluable_by_database(simnet):
    net = simnet()
    net.keygen()
    distributed_keygen(net.admin, net.cfg, key_id='pending', activate=False)
    assert net.keyservers[1].status()['key_id'] == 'k0'
    request = _request(net.group, key_id='pending', L=[1, 2, 3])
    with pytest.raises(InvalidCertificate):
        net.keyservers[1].dispatch('POST', '/eval', sign_request(request, net.provider_identity), 'client')
    response = net.keyservers[1].dispatch('POST', '/eval', sign_request(request, net.database_identity), 'db')
    assert len(response['points']) == 1


def test_pending_key_refused_without_trust_root(server, group):
    server.install(KeyShare(1, group.scalar(9), 0, 'k1'))
    request = _request(group, key_id='k1')
    with pytest.raises(InvalidCertificate):
        server.dispatch('POST', '/eval', request, 'db')
    with pytest.raises(InvalidCertificate):
        server.handle_eval(request, 'client')
    assert server.dispatch('POST', '/eval', _request(group), 'client')['server_index'] == 1


def test_admin_rounds_refused_without_trust_root(server):
    with pytest.raises(InvalidCertificate):
        server.dispatch('POST', '/admin/round', {'round': 'dkg.finalize', 'to': 1, 'session': 's',
                                                 'key_id': 'evil', 'epoch': 5, 'dealers': [], 'activate': True},
                        'anyone')
    assert server.active.key_id == 'k0'
    assert server.status()['keys'] == {'k0': 0}
