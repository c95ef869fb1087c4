#!/usr/bin/env python3
"""
Example usage of the Sequence Screener.

This script runs the whole system in one process: five keyservers, the hazard
database and a synthesis provider, wired together by the in-memory network.
"""

from sequence_screener.builder import HazardSource
from sequence_screener.certs import Role
from sequence_screener.elt import ExemptionRequest, create_and_approve_elt
from sequence_screener.report import render_report
from sequence_screener.sequences import SequenceRecord
from sequence_screener.simnet import SimNet


def example_basic_screening(net: SimNet, toxin: HazardSource):
    """Screen a harmless order and one carrying a hazard fragment"""
    print("=== Basic Screening Example ===\n")

    benign = [SequenceRecord('plasmid', net.random_dna(240))]
    print(render_report(net.screen(benign), 'text').decode())

    fragment = [SequenceRecord('order-7', toxin.residues[40:160])]
    print(render_report(net.screen(fragment), 'text').decode())


def example_keyserver_outage(net: SimNet, toxin: HazardSource):
    """Two of five keyservers go down; screening continues and a reshare restores them"""
    print("\n=== Keyserver Outage Example ===\n")

    net.kill(2)
    net.kill(4)
    report = net.screen([SequenceRecord('order-8', toxin.residues[0:90])])
    print(f"With servers 2 and 4 offline: {report.decision}")

    key_id, epoch = net.reshare()
    net.revive(2)
    net.revive(4)
    key_id, epoch = net.reshare()
    print(f"After resharing: {key_id} at epoch {epoch}, every server holds a fresh share")


def example_exemption(net: SimNet, toxin: HazardSource):
    """A researcher presents an exemption list token for the toxin"""
    print("\n=== Exemption Example ===\n")

    now = int(net.clock.time())
    authority = net.issue(Role.NATIONAL_AUTHORITY, 'National Authority')
    officer = net.issue(Role.BIOSAFETY_OFFICER, 'Biosafety Officer', issuer=authority)
    request = ExemptionRequest(requester=net.provider_identity.fingerprint, exemptions=[toxin.accession])
    token = create_and_approve_elt(request, officer, net.root.certificate, now)

    client = net.client()
    report = client.screen_records([SequenceRecord('order-9', toxin.residues[40:160])], elt=token)
    print(render_report(report, 'text').decode())


def example_key_rotation(net: SimNet, toxin: HazardSource):
    """Rotate the key; the database re-keys its table without learning any window"""
    print("\n=== Key Rotation Example ===\n")

    before = net.database.table.key_id
    key_id, epoch = net.rotate()
    print(f"Rotated {before} -> {key_id} (epoch {epoch}), table {net.database.table.version_label}")
    report = net.screen([SequenceRecord('order-10', toxin.residues[100:220])])
    print(f"Same fragment after rotation: {report.decision}")


if __name__ == "__main__":
    print("Sequence Screener - Example Usage\n")

    net = SimNet(n=5, t=3, group='modp-127', seed=7)
    toxin = HazardSource('HZ-TOX1', net.random_dna(300), 'toxin', ('US', 'EU'))
    net.keygen()
    net.build_database([toxin], version=1, seed=7)
    print(f"Database {net.database.table.version_label} holds {len(net.database.table)} hashed windows\n")

    example_basic_screening(net, toxin)
    example_keyserver_outage(net, toxin)
    example_exemption(net, toxin)
    example_key_rotation(net, toxin)

    print("\n✓ Examples complete!")
