import itertools
import random

import pytest

from sequence_screener.doprf import (DoprfClient, EvaluatedShare, blind, combine_shares, evaluate_share,
                                     unblind_combine)
from sequence_screener.errors import (EpochMismatch, NotInEvaluationSet, QuorumUnavailable, ShareCountMismatch,
                                      Unreachable, ZeroBlind)
from sequence_screener.group import GroupFactory, Scalar
from sequence_screener.sharing import SharingConfig, reconstruct, share

from .conftest import KeyserverNet


def test_protocol_steps_give_the_prf_output(small_group, rng):
    """Every t-subset unblinds to M(x)^k, checked against the discrete-log oracle."""
    cfg = SharingConfig(5, 3, small_group.order)
    k = small_group.scalar(rng.randrange(1, small_group.order))
    shares = {s.server_index: s for s in share(k, cfg, rng)}
    x = b'dna30:' + b'ACGT' * 7 + b'AC'
    expected = small_group.hash_to_group(x) ** k

    for L in itertools.combinations(cfg.indices, 3):
        beta = small_group.random_scalar(rng)
        X = blind(x, beta, small_group)
        answers = [evaluate_share(X, L, i, shares[i].value) for i in L]
        assert unblind_combine(answers, beta, 'dna30').data == expected.encode()


def test_zero_blind_is_rejected(small_group):
    with pytest.raises(ZeroBlind):
        blind(b'x', small_group.scalar(0), small_group)


def test_server_outside_set_refuses(small_group):
    X = small_group.hash_to_group(b'x')
    with pytest.raises(NotInEvaluationSet):
        evaluate_share(X, [1, 2, 3], 4, small_group.scalar(5))


def test_combine_checks_share_count(small_group):
    Y = small_group.generator()
    with pytest.raises(ShareCountMismatch):
        combine_shares([EvaluatedShare(1, Y), EvaluatedShare(2, Y)], [1, 2, 3])
    with pytest.raises(ShareCountMismatch):
        combine_shares([EvaluatedShare(1, Y), EvaluatedShare(1, Y), EvaluatedShare(2, Y)], [1, 2, 3])


def _expected(net, x: bytes):
    k = reconstruct(net.active_shares(), net.cfg)
    return (net.group.hash_to_group(x) ** k).encode()


def test_client_matches_reconstructed_key(keyserver_net):
    net = keyserver_net()
    client = net.client()
    x = b'aa20:MKTIIALSYIFCLVFADYKD'
    assert client.doprf_eval(x, 'aa20').data == _expected(net, x)


def test_all_server_subsets_agree(keyserver_net):
    net = keyserver_net()
    x = b'dna42:' + b'ACGTTGCA' * 5 + b'AC'
    outputs = {net.client(subset=list(L)).doprf_eval(x).data
               for L in itertools.combinations(net.cfg.indices, net.cfg.t)}
    assert outputs == {_expected(net, x)}


def test_evaluation_survives_n_minus_t_outages(keyserver_net):
    net = keyserver_net()
    x = b'dna30:' + b'GATTACA' * 4 + b'GA'
    baseline = net.client().doprf_eval(x).data
    net.kill(2, 4)
    assert net.client().doprf_eval(x).data == baseline


def test_too_many_outages_raise_quorum_unavailable(keyserver_net):
    net = keyserver_net()
    net.kill(1, 2, 3)
    with pytest.raises(QuorumUnavailable):
        net.client().doprf_eval(b'dna30:x')


class _FailsOnEvaluate:
    """Handle whose status answers but whose evaluation is lost"""

    def __init__(self, handle):
        self.handle = handle
        self.endpoint = handle.endpoint

    def status(self):
        return self.handle.status()

    def evaluate(self, payload):
        raise Unreachable(f"{self.endpoint} dropped the request", endpoint=self.endpoint)


def test_failed_server_is_replaced_by_a_retry(keyserver_net):
    net = keyserver_net()
    x = b'dna30:' + b'CCGGTTAA' * 3 + b'CCGGTT'
    handles = net.handles()
    handles[1] = _FailsOnEvaluate(handles[1])
    client = DoprfClient(net.group, list(handles.values()), net.cfg.t, randomness=random.Random(3),
                         identity=net.provider, prefer_latency=False, max_workers=1)
    assert client.doprf_eval(x).data == _expected(net, x)


def test_batch_equals_single_evaluations(keyserver_net):
    net = keyserver_net()
    inputs = [f'dna30:{i:030d}'.encode() for i in range(7)]
    batched = net.client(batch_size=3).eval_batch(inputs)
    single = [net.client().doprf_eval(x).data for x in inputs]
    assert [h.data for h in batched] == single


def test_concurrent_fan_out_gives_same_result(keyserver_net):
    net = keyserver_net()
    x = b'aa20:ACDEFGHIKLMNPQRSTVWY'
    assert net.client(max_workers=3).doprf_eval(x).data == _expected(net, x)


def test_quorum_requires_agreeing_epoch(keyserver_net):
    net = keyserver_net(n=3, t=3)
    share_2 = net.servers[2].active
    net.servers[2]._keys = {'k0': type(share_2)(2, share_2.value, share_2.epoch + 1, 'k0')}
    with pytest.raises(EpochMismatch):
        net.client().doprf_eval(b'dna30:x')


def test_ristretto_end_to_end():
    group = GroupFactory.get('ristretto255')
    rnd = random.Random(9)
    cfg = SharingConfig(3, 2, group.order)
    k = group.random_scalar(rnd)
    shares = share(k, cfg, rnd)
    x = b'dna30:' + b'A' * 30
    beta = group.random_scalar(rnd)
    X = blind(x, beta, group)
    answers = [evaluate_share(X, [1, 3], s.server_index, s.value) for s in shares if s.server_index in (1, 3)]
    assert unblind_combine(answers, beta).data == (group.hash_to_group(x) ** k).encode()
    assert isinstance(k, Scalar)


def _discrete_logs(group):
    g = group.generator()
    return {(g ** group.scalar(i)).encode(): i for i in range(group.order)}


@pytest.mark.slow
def test_oracle_over_many_inputs_and_every_subset(small_group):
    net = KeyserverNet(5, 3, small_group, seed=11)
    k = reconstruct(net.active_shares(), net.cfg).value
    logs = _discrete_logs(small_group)
    g = small_group.generator()
    rnd = random.Random(500)
    inputs = [b'dna30:' + ''.join(rnd.choice('ACGT') for _ in range(30)).encode() for _ in range(500)]
    expected = [(g ** small_group.scalar(logs[small_group.hash_to_group(x).encode()] * k)).encode() for x in inputs]

    subsets = list(itertools.combinations(net.cfg.indices, 3))
    assert len(subsets) == 10
    for L in subsets:
        outputs = net.client(subset=list(L), batch_size=128).eval_batch(inputs)
        assert [h.data for h in outputs] == expected
