from dataclasses import replace

import pytest

from sequence_screener.certs import (DAY, Role, SigningIdentity, create_root, issue_identity, load_chain,
                                     sign_request, validate_chain, verify_request)
from sequence_screener.errors import (BrokenSignature, Expired, ExpiredIssuer, InvalidCertificate, RoleViolation,
                                      UnknownRoot)

from .conftest import NOW


def test_researcher_chain_validates(pki):
    researcher = pki['researcher']
    assert [c.role for c in researcher.chain] == [Role.RESEARCHER, Role.PRINCIPAL_INVESTIGATOR,
                                                  Role.BIOSAFETY_OFFICER, Role.NATIONAL_AUTHORITY, Role.ROOT]
    leaf = validate_chain(researcher.chain, pki['root'].certificate, NOW + DAY)
    assert leaf.subject == 'researcher'


@pytest.mark.parametrize('issuer, role', [
    ('root', Role.RESEARCHER),
    ('pi', Role.BIOSAFETY_OFFICER),
    ('provider', Role.MACHINE),
    ('authority', Role.PRINCIPAL_INVESTIGATOR),
])
def test_role_violations(pki, issuer, role):
    with pytest.raises(RoleViolation):
        issue_identity(pki[issuer], 'x', role, NOW)


def test_expired_issuer_cannot_issue(pki):
    with pytest.raises(ExpiredIssuer):
        issue_identity(pki['pi'], 'late', Role.RESEARCHER, NOW + 400 * DAY)


def test_child_validity_is_capped_by_parent(pki):
    child = issue_identity(pki['pi'], 'long', Role.RESEARCHER, NOW, validity_days=5000)
    assert child.certificate.not_after == pki['pi'].certificate.not_after


def test_expired_chain(pki):
    with pytest.raises(Expired):
        validate_chain(pki['researcher'].chain, pki['root'].certificate, NOW + 400 * DAY)


def test_tampered_leaf_reports_link_zero(pki):
    chain = list(pki['researcher'].chain)
    chain[0] = replace(chain[0], subject='mallory')
    with pytest.raises(BrokenSignature) as info:
        validate_chain(chain, pki['root'].certificate, NOW)
    assert info.value.link == 0


def test_tampered_middle_link(pki):
    chain = list(pki['researcher'].chain)
    chain[1] = replace(chain[1], attributes={'lab': 'elsewhere'})
    with pytest.raises(BrokenSignature) as info:
        validate_chain(chain, pki['root'].certificate, NOW)
    assert info.value.link == 1


def test_unknown_root(pki):
    other = create_root('other', NOW)
    provider = issue_identity(other, 'provider', Role.PROVIDER, NOW)
    with pytest.raises(UnknownRoot):
        validate_chain(provider.chain, pki['root'].certificate, NOW)


def test_signed_request_round_trip(pki):
    payload = sign_request({'points': ['abc'], 'epoch': 0}, pki['provider'])
    chain = verify_request(payload, pki['root'].certificate, NOW)
    assert chain[0].role == Role.PROVIDER

    tampered = dict(payload, epoch=1)
    with pytest.raises(InvalidCertificate):
        verify_request(tampered, pki['root'].certificate, NOW)
    with pytest.raises(InvalidCertificate):
        verify_request({'points': []}, pki['root'].certificate, NOW)


def test_identity_save_and_load(pki, tmp_path):
    identity = pki['researcher']
    identity.save(tmp_path / 'chain.json', tmp_path / 'key.pem', passphrase=b'secret')
    loaded = SigningIdentity.load(tmp_path / 'chain.json', tmp_path / 'key.pem', passphrase=b'secret')
    assert loaded.fingerprint == identity.fingerprint
    assert [c.fingerprint for c in load_chain(tmp_path / 'chain.json')] == [c.fingerprint for c in identity.chain]
    verify_request(sign_request({'x': 1}, loaded), pki['root'].certificate, NOW)
