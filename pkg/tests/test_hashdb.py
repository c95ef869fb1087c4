from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import pytest

from sequence_screener.builder import HazardSource
from sequence_screener.certs import Role, sign_request
from sequence_screener.elt import ExemptionRequest, create_and_approve_elt, sequence_digest
from sequence_screener.encoding import b64e, canonical_json
from sequence_screener.errors import (EltInvalid, EltReplayed, InvalidCertificate, MalformedHash, StaleKey,
                                      UnknownRound, VersionRegression)
from sequence_screener.hashdb import (MatchRecord, decide, issue_receipt, match_flags, verdict_rule,
                                      verify_receipt, verify_receipt_bytes)
from sequence_screener.main import order_hash
from sequence_screener.rounds import distributed_keygen
from sequence_screener.sequences import SequenceRecord
from sequence_screener.table import COMMON, REGULATED_PASS, EntryMetadata, HashedTable

from .conftest import NOW


def _meta(*tags, accession='HZ1'):
    return EntryMetadata(accession, 'dna30', 0, 'fwd', None, 'wild-type', tuple(sorted(tags)))


@pytest.mark.parametrize('tags, region, exempted, expected', [
    (('US',), 'US', False, (True, False)),
    (('US',), 'US', True, (False, True)),
    (('EU',), 'US', False, (False, True)),
    (('US', COMMON), 'US', False, (False, False)),
    (('US', REGULATED_PASS), 'US', False, (False, True)),
    ((COMMON, REGULATED_PASS), 'US', False, (False, False)),
])
def test_match_flags(tags, region, exempted, expected):
    assert match_flags(_meta(*tags), region, exempted) == expected


def test_decision_precedence():
    assert decide([]) == 'accepted'
    assert decide([(False, False)]) == 'accepted'
    assert decide([(False, True), (False, False)]) == 'alert'
    assert decide([(False, True), (True, False)]) == 'denied'


def test_verdict_rule_applies_exemptions():
    digest = bytes(32)
    matches = [MatchRecord(0, digest, _meta('US')), MatchRecord(3, digest, _meta('US', accession='HZ2'))]
    assert verdict_rule(matches, 'US') == 'denied'
    assert verdict_rule(matches, 'US', {'HZ1'}) == 'denied'
    assert verdict_rule(matches, 'US', {'HZ1', 'HZ2'}) == 'alert'
    assert verdict_rule(matches, 'US', {sequence_digest(digest)}) == 'alert'
    assert verdict_rule(matches, 'EU') == 'alert'


def test_receipts_verify_and_detect_tampering(pki):
    database = pki['database']
    receipt = issue_receipt(12, 'v3', 'accepted', pki['provider'].fingerprint, database, NOW)
    assert verify_receipt(receipt, database.certificate)
    assert verify_receipt(receipt, database.certificate.verifying_key())
    assert not verify_receipt(replace(receipt, decision='denied'), database.certificate)
    assert not verify_receipt(receipt, pki['provider'].certificate)

    data = canonical_json(receipt.to_dict())
    assert verify_receipt_bytes(data, database.certificate)
    assert not verify_receipt_bytes(data.replace(b'"v3"', b'"v4"'), database.certificate)
    assert not verify_receipt_bytes(b'\xff not json', database.certificate)
    assert not verify_receipt_bytes(b'{"window_count": 1}', database.certificate)


@pytest.fixture
def screening(simnet):
    net = simnet()
    hazards = {
        'HZ1': HazardSource('HZ1', net.random_dna(150), 'toxin', ('US',)),
        'HZ2': HazardSource('HZ2', net.random_dna(150), 'virus', ('EU',)),
        'HZC': HazardSource('HZC', net.random_dna(90), 'virus', ('US',), common=True),
    }
    net.keygen()
    net.build_database(list(hazards.values()), version=1, peptide_stride=10)
    return net, hazards


def test_benign_order_is_accepted(screening):
    net, _ = screening
    report = net.screen([SequenceRecord('plasmid', net.random_dna(150))])
    assert report.decision == 'accepted'
    assert report.matches == []
    assert report.database_version == 'v1'


def test_hazard_fragment_is_denied_with_coordinates(screening):
    net, hazards = screening
    fragment = hazards['HZ1'].residues[20:110]
    report = net.screen([SequenceRecord('order', 'A' * 10 + fragment)])
    assert report.decision == 'denied'
    assert report.records[0].decision == 'denied'
    dna_offsets = {m.offset for m in report.matches if m.kind == 'dna30' and m.accession == 'HZ1'}
    assert 10 in dna_offsets
    assert report.window_count == report.receipt['window_count']


def test_hazard_controlled_elsewhere_alerts(screening):
    net, hazards = screening
    records = [SequenceRecord('order', hazards['HZ2'].residues[:90])]
    assert net.screen(records).decision == 'alert'
    assert net.screen(records, region='EU').decision == 'denied'


def test_common_sequence_is_accepted(screening):
    net, hazards = screening
    report = net.screen([SequenceRecord('order', hazards['HZC'].residues)])
    assert report.decision == 'accepted'
    assert report.matches


def test_per_record_verdicts(screening):
    net, hazards = screening
    records = [SequenceRecord('safe', net.random_dna(90)), SequenceRecord('bad', hazards['HZ1'].residues[:60])]
    report = net.screen(records)
    assert [(r.record_id, r.decision) for r in report.records] == [('safe', 'accepted'), ('bad', 'denied')]


def _researcher(net):
    authority = net.issue(Role.NATIONAL_AUTHORITY, 'authority')
    officer = net.issue(Role.BIOSAFETY_OFFICER, 'officer', issuer=authority)
    pi = net.issue(Role.PRINCIPAL_INVESTIGATOR, 'pi', issuer=officer)
    return officer, net.issue(Role.RESEARCHER, 'researcher', issuer=pi)


def test_exemption_token_turns_denial_into_alert(screening):
    net, hazards = screening
    officer, researcher = _researcher(net)
    request = ExemptionRequest(requester=researcher.fingerprint, exemptions=['HZ1'],
                               contacts={'legal': 'counsel'})
    token = create_and_approve_elt(request, officer, net.root.certificate, int(net.clock.time()))
    records = [SequenceRecord('order', hazards['HZ1'].residues[:90])]

    client = net.client(identity=researcher)
    report = client.screen_records(records, elt=token)
    assert report.decision == 'alert'
    assert report.exemptions_applied == ['HZ1']
    assert all(m.exempted for m in report.matches if m.accession == 'HZ1')
    notice = net.database.notifications[-1]
    assert notice['accessions'] == ['HZ1']
    assert notice['notify'] == {'biosafety_officer': 'officer', 'legal': 'counsel'}

    with pytest.raises(EltReplayed):
        client.screen_records(records, elt=token)


def test_token_of_someone_else_is_invalid(screening):
    net, hazards = screening
    officer, researcher = _researcher(net)
    request = ExemptionRequest(requester=researcher.fingerprint, exemptions=['HZ1'])
    token = create_and_approve_elt(request, officer, net.root.certificate, int(net.clock.time()))
    with pytest.raises(EltInvalid):
        net.client().screen_records([SequenceRecord('order', hazards['HZ1'].residues[:90])], elt=token)


def test_unsigned_and_malformed_requests(screening):
    net, _ = screening
    with pytest.raises(InvalidCertificate):
        net.database.screen({'region': 'US', 'hashes': []})
    signed = sign_request({'region': 'US', 'hashes': [b64e(b'short')]}, net.provider_identity)
    with pytest.raises(MalformedHash):
        net.database.screen(signed)
    with pytest.raises(UnknownRound):
        net.database.dispatch('GET', '/nope', None, 'test')


def test_screen_counts_windows_per_requester(screening):
    net, _ = screening
    report = net.screen([SequenceRecord('plasmid', net.random_dna(60))])
    counters = net.database.counters()[net.provider_identity.fingerprint]
    assert counters == {'screens': 1, 'windows': report.window_count, 'matches': 0}


def test_receipt_is_stored_and_verifies(screening):
    net, _ = screening
    client = net.client()
    records = [SequenceRecord('plasmid', net.random_dna(60))]
    client.screen_records(records)
    (receipt,) = client.receipts.get(order_hash(records))
    assert client.verify_receipt(receipt)


def test_swap_requires_newer_version(screening, tmp_path):
    net, _ = screening
    current = net.database.table
    with pytest.raises(VersionRegression):
        net.database.swap_version(HashedTable(list(current), current.version, current.key_id, current.epoch))
    newer = HashedTable(list(current), current.version + 1, current.key_id, current.epoch).write(tmp_path / 't.tbl')
    signed = sign_request({'path': str(newer)}, net.operator_identity)
    assert net.database.dispatch('POST', '/admin/swap', signed, 'admin')['version'] == 'v2'


def test_table_management_needs_an_operator(screening, tmp_path):
    net, _ = screening
    current = net.database.table
    newer = HashedTable(list(current), current.version + 1, current.key_id, current.epoch).write(tmp_path / 't.tbl')
    with pytest.raises(InvalidCertificate):
        net.database.dispatch('POST', '/admin/swap', {'path': str(newer)}, 'admin')
    with pytest.raises(InvalidCertificate):
        net.database.dispatch('POST', '/admin/swap', sign_request({'path': str(newer)}, net.provider_identity), 'x')
    rekey = {'update_key_id': 'k0', 'update_epoch': 0, 'key_id': 'k9', 'epoch': 1}
    with pytest.raises(InvalidCertificate):
        net.database.dispatch('POST', '/admin/rekey', rekey, 'admin')
    with pytest.raises(InvalidCertificate):
        net.database.dispatch('POST', '/admin/rekey', sign_request(rekey, net.database_identity), 'db')
    assert net.database.table is current


def test_rekey_refuses_the_active_key(screening):
    """Raising the table to the active key would make every lookup miss."""
    net, hazards = screening
    current = net.database.table
    for update in ({'update_key_id': 'k0', 'update_epoch': 0, 'key_id': 'k9', 'epoch': 1},
                   {'update_key_id': 'ghost', 'update_epoch': 0, 'key_id': 'k9', 'epoch': 1},
                   {'update_key_id': 'ghost', 'update_epoch': 0, 'key_id': 'k0', 'epoch': 0}):
        with pytest.raises(StaleKey):
            net.database.dispatch('POST', '/admin/rekey', sign_request(update, net.operator_identity), 'admin')
    assert net.database.table is current
    report = net.screen([SequenceRecord('order', hazards['HZ1'].residues[:90])])
    assert report.decision == 'denied'


def test_rekey_refuses_a_key_active_on_keyservers(screening):
    net, _ = screening
    distributed_keygen(net.admin, net.cfg, key_id='other', epoch=0)
    update = {'update_key_id': 'other', 'update_epoch': 0, 'key_id': 'k9', 'epoch': 1}
    with pytest.raises(StaleKey):
        net.database.dispatch('POST', '/admin/rekey', sign_request(update, net.operator_identity), 'admin')
    assert net.database.table.key_id == 'k0'


def test_swaps_during_concurrent_screens_keep_each_verdict_whole(screening):
    net, hazards = screening
    current = net.database.table
    fragment = [SequenceRecord('order', hazards['HZ1'].residues[10:100])]
    clients = [net.client() for _ in range(8)]
    with ThreadPoolExecutor(max_workers=4) as pool:
        futures = [pool.submit(client.screen_records, fragment) for client in clients]
        for version in range(2, 7):
            net.database.swap_version(HashedTable(list(current), version, current.key_id, current.epoch))
        reports = [future.result() for future in futures]
    assert {r.decision for r in reports} == {'denied'}
    assert {r.database_version for r in reports} <= {f'v{v}' for v in range(1, 7)}
    assert net.database.version()['version'] == 'v6'
