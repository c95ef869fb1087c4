#!/usr/bin/env python3
"""
Prepare an exemption list token request.

Accessions come from the command line or a plain-text registration document.
Raw sequences are hashed through the keyservers first, so the request (and the
token later signed from it) carries only digests of DOPRF outputs.
"""
import argparse
import json
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent))

from sequence_screener.certs import load_chain
from sequence_screener.config import ClientConfig
from sequence_screener.elt import SCOPES, ExemptionRequest, extract_accessions, sequence_digest
from sequence_screener.errors import ParseError, ScreenerError
from sequence_screener.main import SynthClient
from sequence_screener.sequences import parse_fasta, window_sets


def sequence_digests(config_path: str, fasta_path: str):
    """Hash every window of the given sequences through the keyservers and digest the outputs."""
    config = ClientConfig.from_file(config_path)
    client = SynthClient(config)
    try:
        records = parse_fasta(Path(fasta_path).read_bytes())
    except FileNotFoundError:
        raise ParseError(f"FASTA file not found: {fasta_path}")
    windows = [w for ws in window_sets(records, config.mode) for w in ws]
    key_id, epoch, _ = client.doprf.select_quorum()
    elements = [client.group.hash_to_group(w.hash_input()) for w in windows]
    outputs = client.doprf.eval_elements(elements, key_id=key_id, epoch=epoch)
    return sorted({sequence_digest(y.encode()) for y in outputs})


def main():
    """Main entry point"""
    parser = argparse.ArgumentParser(
        description='Create an exemption list token request',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Exempt two hazards by accession
  python eltr.py --requester researcher.json --accessions NC_001611 NC_045512 --out request.json

  # Accessions listed in a registration document, delivery bound to an address
  python eltr.py --requester researcher.json --document registration.txt \\
      --shipping-address "1 Lab Way, Springfield" --out request.json

  # Exempt custom sequences (hashed through the keyservers)
  python eltr.py --requester researcher.json --fasta construct.fasta --config client.json --out request.json

Pass the request to your biosafety officer, who approves it with eltsign.py.
        """
    )
    parser.add_argument('--requester', required=True, help='Requester certificate chain JSON')
    parser.add_argument('--accessions', nargs='*', default=[], help='Hazard accessions to exempt')
    parser.add_argument('--document', help='Plain-text document to extract accessions from')
    parser.add_argument('--fasta', help='Raw sequences to exempt (needs --config)')
    parser.add_argument('--config', help='Client config JSON, for hashing --fasta')
    parser.add_argument('--scope', choices=SCOPES, default='individual')
    parser.add_argument('--shipping-address', help='Bind the token to this delivery address')
    parser.add_argument('--contact', action='append', help='Contact role=name (repeatable)')
    parser.add_argument('--out', default='elt_request.json', help='Output file (default: elt_request.json)')
    args = parser.parse_args()

    try:
        accessions = list(args.accessions)
        if args.document:
            accessions += extract_accessions(Path(args.document).read_text(encoding='utf-8'))
        digests = []
        if args.fasta:
            if not args.config:
                parser.error('--fasta needs --config')
            digests = sequence_digests(args.config, args.fasta)

        contacts = dict(c.split('=', 1) for c in args.contact or [] if '=' in c)
        request = ExemptionRequest(
            requester=load_chain(args.requester)[0].fingerprint,
            exemptions=sorted(set(accessions)),
            sequence_digests=digests,
            scope=args.scope,
            shipping_address=args.shipping_address,
            contacts=contacts,
        )
        Path(args.out).write_text(json.dumps(request.to_dict(), indent=2), encoding='utf-8')
        print(f"✓ Request for {len(request.exemptions)} accessions and {len(digests)} sequence digests "
              f"saved to: {args.out}")

    except KeyboardInterrupt:
        print("\n\n⚠ Interrupted by user")
        sys.exit(1)
    except ScreenerError as e:
        print(f"✗ {e.code}: {e.message}")
        sys.exit(e.exit_code)


if __name__ == '__main__':
    main()
