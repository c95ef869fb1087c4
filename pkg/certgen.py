#!/usr/bin/env python3
"""
Create the root certificate and issue certificates down the role hierarchy.
"""
import argparse
import json
import sys
import time
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent))

from sequence_screener.certs import Role, SigningIdentity, create_root, issue_identity, load_chain, validate_chain
from sequence_screener.errors import ScreenerError


def parse_attributes(pairs):
    """Turn key=value arguments into a dict"""
    attributes = {}
    for pair in pairs or []:
        if '=' not in pair:
            raise ValueError(f"Attribute must look like key=value: {pair}")
        key, value = pair.split('=', 1)
        attributes[key] = value
    return attributes


def main():
    """Main entry point"""
    parser = argparse.ArgumentParser(
        description='Manage screening certificates',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # New root
  python certgen.py root --subject "Screening Root" --chain root.json --key root.pem

  # Provider certificate under the root
  python certgen.py issue --issuer-chain root.json --issuer-key root.pem \\
      --subject "Acme Synthesis" --role provider --chain acme.json --key acme.pem

  # Biosafety officer under a national authority, with contact attributes
  python certgen.py issue --issuer-chain na.json --issuer-key na.pem --subject "Dr. Officer" \\
      --role biosafety-officer --attr email=officer@example.org --chain bso.json --key bso.pem

  # Check a chain against the root
  python certgen.py verify --chain acme.json --root root.json

Roles: """ + ', '.join(r.value for r in Role)
    )
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('root', help='Create a self-signed root')
    p.add_argument('--subject', required=True)
    p.add_argument('--days', type=int, default=3650, help='Validity in days (default: 3650)')
    p.add_argument('--chain', required=True, help='Output certificate JSON')
    p.add_argument('--key', required=True, help='Output private key PEM')

    p = sub.add_parser('issue', help='Issue a certificate')
    p.add_argument('--issuer-chain', required=True, help='Issuer chain JSON (leaf first)')
    p.add_argument('--issuer-key', required=True, help='Issuer private key PEM')
    p.add_argument('--subject', required=True)
    p.add_argument('--role', required=True, choices=[r.value for r in Role])
    p.add_argument('--days', type=int, default=365, help='Validity in days (default: 365)')
    p.add_argument('--attr', action='append', help='Attribute key=value (repeatable)')
    p.add_argument('--chain', required=True, help='Output chain JSON')
    p.add_argument('--key', required=True, help='Output private key PEM')

    p = sub.add_parser('verify', help='Validate a chain against a root')
    p.add_argument('--chain', required=True)
    p.add_argument('--root', required=True)

    args = parser.parse_args()
    now = int(time.time())

    try:
        if args.command == 'root':
            identity = create_root(args.subject, now, args.days)
            identity.save(args.chain, args.key)
            print(f"✓ Root {args.subject} ({identity.fingerprint[:16]}…) saved to: {args.chain}")

        elif args.command == 'issue':
            issuer = SigningIdentity.load(args.issuer_chain, args.issuer_key)
            identity = issue_identity(issuer, args.subject, Role(args.role), now, args.days,
                                      parse_attributes(args.attr))
            identity.save(args.chain, args.key)
            print(f"✓ Issued {args.role} certificate for {args.subject} ({identity.fingerprint[:16]}…)")
            print(f"  Chain: {args.chain}")
            print(f"  Key:   {args.key}")

        else:
            root = load_chain(args.root)[0]
            leaf = validate_chain(load_chain(args.chain), root, now)
            print(f"✓ {leaf.subject} ({leaf.role.value}) chains to {root.subject}")
            print(json.dumps(leaf.attributes, indent=2))

    except ValueError as e:
        print(f"✗ {e}")
        sys.exit(2)
    except ScreenerError as e:
        print(f"✗ {e.code}: {e.message}")
        sys.exit(e.exit_code)


if __name__ == '__main__':
    main()
