#!/usr/bin/env python3
"""
Approve an exemption list token request as a biosafety officer.
"""
import argparse
import json
import sys
import time
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent))

from sequence_screener.certs import SigningIdentity, load_certificate
from sequence_screener.elt import ExemptionRequest, create_and_approve_elt
from sequence_screener.errors import ScreenerError


def main():
    """Main entry point"""
    parser = argparse.ArgumentParser(
        description='Sign an exemption list token',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python eltsign.py --request request.json --officer-chain bso.json --officer-key bso.pem \\
      --root root.json --out token.json

  # Shorter validity
  python eltsign.py --request request.json --officer-chain bso.json --officer-key bso.pem \\
      --root root.json --days 7 --out token.json
        """
    )
    parser.add_argument('--request', required=True, help='Request JSON from eltr.py')
    parser.add_argument('--officer-chain', required=True, help='Officer certificate chain JSON')
    parser.add_argument('--officer-key', required=True, help='Officer private key PEM')
    parser.add_argument('--root', required=True, help='Root certificate JSON')
    parser.add_argument('--days', type=int, default=30, help='Token validity in days (default: 30)')
    parser.add_argument('--out', default='elt.json', help='Output token file (default: elt.json)')
    args = parser.parse_args()

    try:
        request = ExemptionRequest.from_dict(json.loads(Path(args.request).read_text(encoding='utf-8')))
        officer = SigningIdentity.load(args.officer_chain, args.officer_key)

        print(f"\n{'='*60}")
        print("EXEMPTION REQUEST")
        print(f"{'='*60}")
        print(f"Requester:   {request.requester[:16]}…")
        print(f"Scope:       {request.scope}")
        print(f"Accessions:  {', '.join(request.exemptions) or '-'}")
        print(f"Sequences:   {len(request.sequence_digests)} digests")
        if request.shipping_address:
            print(f"Ship to:     {request.shipping_address}")
        print(f"{'='*60}\n")

        token = create_and_approve_elt(request, officer, load_certificate(args.root), int(time.time()), args.days)
        token.save(args.out)
        print(f"✓ Token signed by {officer.certificate.subject}, valid until {token.not_after}")
        print(f"✓ Saved to: {args.out}")

    except KeyboardInterrupt:
        print("\n\n⚠ Interrupted by user")
        sys.exit(1)
    except ScreenerError as e:
        print(f"✗ {e.code}: {e.message}")
        sys.exit(e.exit_code)


if __name__ == '__main__':
    main()
