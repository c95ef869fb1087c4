"""
Synthesis client.
Parses an order, hashes its windows through the keyservers, screens the hashes
with the database and assembles a report with a verified receipt.
"""
import argparse
import hashlib
import json
import logging
import sys
import time
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .certs import Certificate, SigningIdentity, load_certificate, parse_chain, sign_request, validate_chain
from .config import ClientConfig, Config
from .doprf import DoprfClient
from .elt import ExemptionListToken, present_elt
from .encoding import b64e, canonical_json
from .errors import BadConfig, InvalidCertificate, ParseError, ScreenerError
from .group import GroupFactory
from .hashdb import Receipt, Verdict, decide, match_flags, verify_receipt
from .report import MatchCoordinate, RecordVerdict, ScreeningReport, render_report
from .sequences import SequenceRecord, parse_fasta, window_sets
from .transport import DatabaseHandle, HttpTransport, KeyserverHandle, Transport

logger = logging.getLogger(__name__)

EXIT_CODES = {'accepted': 0, 'alert': 2, 'denied': 3}


def order_hash(records: Sequence[SequenceRecord]) -> str:
    """Digest identifying an order in the receipt store"""
    return hashlib.sha256(canonical_json([[r.id, r.residues] for r in records])).hexdigest()


class ReceiptStore:
    """Append-only JSON-lines store of receipts keyed by order hash; in memory when no path is given"""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._memory: List[Dict[str, Any]] = []

    def append(self, key: str, receipt: Receipt, database_chain: List[Dict[str, Any]]):
        row = {'order_hash': key, 'receipt': receipt.to_dict(), 'database_chain': database_chain}
        if self.path is None:
            self._memory.append(row)
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, 'a', encoding='utf-8') as f:
            f.write(json.dumps(row, sort_keys=True) + '\n')

    def rows(self) -> List[Dict[str, Any]]:
        if self.path is None:
            return list(self._memory)
        if not self.path.exists():
            return []
        return [json.loads(line) for line in self.path.read_text(encoding='utf-8').splitlines() if line.strip()]

    def get(self, key: str) -> List[Receipt]:
        return [Receipt.from_dict(row['receipt']) for row in self.rows() if row['order_hash'] == key]


class SynthClient:
    """Main orchestrator class of the synthesis client"""

    def __init__(self, config: ClientConfig, transport: Optional[Transport] = None,
                 identity: Optional[SigningIdentity] = None, trust_root: Optional[Certificate] = None,
                 clock=time.time, randomness=None, doprf_options: Optional[Dict[str, Any]] = None,
                 receipts: Optional[ReceiptStore] = None):
        """
        Initialize the client.

        Args:
            config: Client configuration
            transport: Transport to keyservers and database (default HTTP)
            identity: Signing identity; loaded from the config paths when omitted
            trust_root: Root certificate; loaded from the config path when omitted
            clock: Wall clock for certificate checks
            randomness: Random source for blinding
            doprf_options: Extra DoprfClient arguments
            receipts: Receipt store (default: the configured JSON-lines file)
        """
        self.config = config
        self.transport = transport or HttpTransport()
        if identity is None and config.certificate and config.signing_key:
            identity = SigningIdentity.load(config.certificate, config.signing_key)
        if trust_root is None and config.trust_root:
            trust_root = load_certificate(config.trust_root)
        self.identity = identity
        self.trust_root = trust_root
        self.clock = clock
        self.group = GroupFactory.get(config.group)
        self.keyservers = [KeyserverHandle(endpoint, self.transport) for endpoint in config.keyservers]
        self.database = DatabaseHandle(config.database, self.transport)
        self.doprf = DoprfClient(self.group, self.keyservers, config.t, batch_size=config.batch_size,
                                 randomness=randomness, subset=config.keyserver_subset, identity=identity,
                                 **(doprf_options or {}))
        self.receipts = receipts if receipts is not None else ReceiptStore(config.receipt_path)

    def database_certificate(self) -> Certificate:
        """Fetch the database chain and check it against the trust root."""
        chain = parse_chain(self.database.certificate()['chain'])
        if self.trust_root is not None:
            validate_chain(chain, self.trust_root, int(self.clock()))
        return chain[0]

    def screen_records(self, records: Sequence[SequenceRecord], elt: Optional[ExemptionListToken] = None,
                       parse_time: float = 0.0) -> ScreeningReport:
        """
        Screen parsed records.

        Returns:
            ScreeningReport with per-record verdicts and match coordinates
        """
        if not records:
            raise ParseError("Order contains no sequences")
        if self.identity is None:
            raise BadConfig("A client certificate and signing key are required to screen")

        started = time.perf_counter()
        sets = window_sets(records, self.config.mode)
        flat = [(record, window) for record, ws in zip(records, sets) for window in ws]
        key_id, epoch, _ = self.doprf.select_quorum()
        elements = [self.group.hash_to_group(window.hash_input()) for _, window in flat]
        hashed = [y.encode() for y in self.doprf.eval_elements(elements, key_id=key_id, epoch=epoch)]
        hash_time = time.perf_counter() - started

        started = time.perf_counter()
        payload = {
            'version': Config.PROTOCOL_VERSION,
            'region': self.config.region,
            'key_id': key_id,
            'hashes': [{'hash': b64e(h), 'kind': w.kind} for h, (_, w) in zip(hashed, flat)],
        }
        if self.config.shipping_address:
            payload['shipping_address'] = self.config.shipping_address
        if elt is not None:
            payload['elt'] = present_elt(elt, self.identity)
        verdict = Verdict.from_dict(self.database.screen(sign_request(payload, self.identity)))
        lookup_time = time.perf_counter() - started

        database_cert = self.database_certificate()
        if not verify_receipt(verdict.receipt, database_cert):
            raise InvalidCertificate("Database receipt signature does not verify")
        if verdict.receipt.window_count != len(hashed):
            raise InvalidCertificate(f"Receipt covers {verdict.receipt.window_count} windows, sent {len(hashed)}")
        self.receipts.append(order_hash(records), verdict.receipt, [database_cert.to_dict()])

        return self._assemble(records, sets, flat, verdict, {
            'parse': round(parse_time, 6), 'hash': round(hash_time, 6), 'lookup': round(lookup_time, 6),
        })

    def _assemble(self, records, sets, flat, verdict: Verdict, timings: Dict[str, float]) -> ScreeningReport:
        per_record = defaultdict(list)
        coordinates = []
        notes: Dict[str, List[str]] = {}
        for match in verdict.matches:
            record, window = flat[match.query_index]
            per_record[record.id].append(match)
            origin = window.origin
            coordinates.append(MatchCoordinate(
                record_id=record.id, offset=origin.offset, strand=origin.strand, frame=origin.frame,
                kind=window.kind, accession=match.metadata.accession, variant_kind=match.metadata.variant_kind,
                permutation=origin.permutation, tags=list(match.metadata.tags), exempted=match.exempted,
            ))
            if not match.metadata.common:
                notes[match.metadata.accession] = list(match.metadata.regions)

        region = self.config.region
        verdicts = [RecordVerdict(record.id, decide(match_flags(m.metadata, region, m.exempted)
                                                    for m in per_record[record.id]), len(ws))
                    for record, ws in zip(records, sets)]
        coordinates.sort(key=MatchCoordinate.sort_key)
        return ScreeningReport(
            decision=verdict.decision,
            database_version=verdict.receipt.database_version,
            window_count=verdict.receipt.window_count,
            records=verdicts,
            matches=coordinates,
            exemptions_applied=list(verdict.exemptions_applied),
            region_notes=notes,
            receipt=verdict.receipt.to_dict(),
            timings=timings,
        )

    def screen_file(self, path, elt_path=None) -> ScreeningReport:
        started = time.perf_counter()
        try:
            data = Path(path).read_bytes()
        except FileNotFoundError:
            raise ParseError(f"FASTA file not found: {path}")
        records = parse_fasta(data)
        parse_time = time.perf_counter() - started
        elt_path = elt_path or self.config.elt
        elt = ExemptionListToken.load(elt_path) if elt_path else None
        return self.screen_records(records, elt, parse_time)

    def verify_receipt(self, receipt: Receipt) -> bool:
        return verify_receipt(receipt, self.database_certificate())


def _load_receipt(path) -> Receipt:
    text = Path(path).read_text(encoding='utf-8').strip()
    if text.startswith('{'):
        data = json.loads(text)
        return Receipt.from_dict(data.get('receipt', data))
    return Receipt.from_b64(text)


def main(argv=None):
    """CLI entry point"""
    parser = argparse.ArgumentParser(
        description='Screen DNA synthesis orders against the hashed hazard database',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Screen an order and print a JSON report
  python synthclient.py screen --config client.json --fasta order.fasta

  # Benchtop mode, human-readable output
  python synthclient.py screen --config client.json --fasta order.fasta --mode benchtop --format text

  # Present an exemption list token
  python synthclient.py screen --config client.json --fasta order.fasta --elt token.json

  # Check a stored receipt
  python synthclient.py verify-receipt --config client.json --receipt receipt.json

Exit codes: 0 accepted, 2 alert, 3 denied, 4 keyserver quorum unavailable,
5 database unreachable, 6 parse error, 7 epoch mismatch, 8 certificate/ELT error,
9 configuration error, 10 other screening error.
        """
    )
    parser.add_argument('--verbose', action='store_true', help='Debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    screen = sub.add_parser('screen', help='Screen a FASTA file')
    screen.add_argument('--config', required=True, help='Client config JSON file')
    screen.add_argument('--fasta', required=True, help='Order in FASTA format')
    screen.add_argument('--elt', help='Exemption list token JSON file')
    screen.add_argument('--mode', choices=['provider', 'benchtop'], help='Override the configured mode')
    screen.add_argument('--format', choices=['json', 'text'], help='Override the configured output format')
    screen.add_argument('--output', help='Write the report here instead of stdout')

    check = sub.add_parser('verify-receipt', help='Verify a stored receipt')
    check.add_argument('--config', required=True, help='Client config JSON file')
    check.add_argument('--receipt', required=True, help='Receipt as JSON or base64')

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format='%(asctime)s [%(levelname)s] [%(name)s] %(message)s',
    )

    try:
        config = ClientConfig.from_file(args.config)
        if args.command == 'verify-receipt':
            client = SynthClient(config)
            receipt = _load_receipt(args.receipt)
            if client.verify_receipt(receipt):
                print(f"✓ Receipt verifies: {receipt.window_count} windows against {receipt.database_version}, "
                      f"decision {receipt.decision}")
                sys.exit(0)
            print("✗ Receipt does not verify", file=sys.stderr)
            sys.exit(InvalidCertificate.exit_code)

        if args.mode:
            config.mode = args.mode
        if args.format:
            config.output_format = args.format
        client = SynthClient(config)
        report = client.screen_file(args.fasta, args.elt)
        rendered = render_report(report, config.output_format)
        if args.output:
            Path(args.output).write_bytes(rendered)
            print(f"✓ Report saved to: {args.output}", file=sys.stderr)
        else:
            sys.stdout.write(rendered.decode('utf-8'))
            if config.output_format == 'json':
                sys.stdout.write('\n')
        sys.exit(EXIT_CODES[report.decision])

    except KeyboardInterrupt:
        print("\n\n⚠ Interrupted by user", file=sys.stderr)
        sys.exit(1)
    except ScreenerError as e:
        print(f"✗ {e.code}: {e.message}", file=sys.stderr)
        sys.exit(e.exit_code)


if __name__ == '__main__':
    main()
