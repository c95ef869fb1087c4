#!/usr/bin/env python3
"""
Build and maintain the hashed hazard table.
Hazard windows are hashed through the keyservers, so the curator never holds the key.
"""
import argparse
import logging
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent))

from sequence_screener.builder import (DatabaseBuilder, build_hashed_table, load_corpus, load_hazards,
                                       stopgap_entries)
from sequence_screener.certs import SigningIdentity
from sequence_screener.config import Config, HashDbConfig, load_keywords
from sequence_screener.doprf import DoprfClient
from sequence_screener.errors import ScreenerError
from sequence_screener.group import GroupFactory
from sequence_screener.table import HashedTable
from sequence_screener.transport import HttpTransport, KeyserverHandle
from sequence_screener.variants import ScorerFactory


def make_client(config: HashDbConfig) -> DoprfClient:
    """DOPRF client acting with the database certificate"""
    if not config.keyservers:
        raise ScreenerError("The database config lists no keyservers")
    transport = HttpTransport()
    identity = SigningIdentity.load(config.certificate, config.signing_key)
    return DoprfClient(GroupFactory.get(config.group), [KeyserverHandle(e, transport) for e in config.keyservers],
                       config.t, identity=identity)


def build(args, config: HashDbConfig):
    client = make_client(config)
    sources = load_hazards(args.hazards)
    print(f"Loaded {len(sources)} hazard sources from {args.hazards}")

    if args.stopgap:
        entries = [e for src in sources for e in stopgap_entries(src)]
        table = build_hashed_table(entries, client, args.version)
        table.write(args.out)
        print(f"✓ Stopgap table ({len(table)} hashes, {table.version_label}) saved to: {args.out}")
        return

    builder = DatabaseBuilder(
        client,
        corpus=load_corpus(args.corpus),
        seed=args.seed,
        scorer=ScorerFactory.get(args.scorer),
        relatedness_threshold=args.relatedness_threshold,
        keywords=load_keywords(Path(args.keywords) if args.keywords else None),
        peptide_stride=args.peptide_stride,
    )
    builder.run(sources, args.version, Path(args.out))


def add(args, config: HashDbConfig):
    client = make_client(config)
    table = HashedTable.read(args.table)
    builder = DatabaseBuilder(client, corpus=load_corpus(args.corpus), verbose=False)
    for src in load_hazards(args.hazards):
        table = builder.add_emerging(src, table, stopgap=not args.full)
        print(f"  ✓ {src.accession} added ({'full' if args.full else 'stopgap'})")
    table.write(args.out)
    print(f"\n✓ Table {table.version_label} saved to: {args.out}")


def retag(args):
    table = DatabaseBuilder.retag_hazard(HashedTable.read(args.table), args.accession, args.regions)
    table.write(args.out)
    print(f"✓ {args.accession} now tagged {', '.join(args.regions)}; {table.version_label} saved to: {args.out}")


def remove(args):
    table = DatabaseBuilder.remove_hazard(HashedTable.read(args.table), args.accession)
    table.write(args.out)
    print(f"✓ {args.accession} removed; {table.version_label} ({len(table)} hashes) saved to: {args.out}")


def main():
    """Main entry point"""
    parser = argparse.ArgumentParser(
        description='Build the hashed hazard table through the keyservers',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Full build with curation against a harmless corpus
  python dbbuild.py build --config db.json --hazards hazards/ --corpus corpus/ --out table.hztb --version 1 --seed 7

  # Quick stopgap build (wild-type 30-mers only)
  python dbbuild.py build --config db.json --hazards hazards/ --out table.hztb --version 1 --stopgap

  # Add an emerging hazard to an existing table
  python dbbuild.py add --config db.json --hazards emerging.fasta --table table.hztb --out table2.hztb

  # Update export-control regions or drop a hazard
  python dbbuild.py retag --table table.hztb --accession NC_001 --regions US EU --out table2.hztb
  python dbbuild.py remove --table table.hztb --accession NC_001 --out table2.hztb

Hazard FASTA headers:
  >ACCESSION kind=virus regions=US,EU common=false genus=Variola defend=true description
        """
    )
    parser.add_argument('--verbose', action='store_true', help='Debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('build', help='Build a new table')
    p.add_argument('--config', required=True, help='Database config JSON (keyservers, certificate, key)')
    p.add_argument('--hazards', required=True, help='Hazard FASTA file or directory')
    p.add_argument('--corpus', help='Harmless corpus FASTA file or directory')
    p.add_argument('--out', required=True, help='Output table file')
    p.add_argument('--version', type=int, required=True, help='Database version number')
    p.add_argument('--seed', type=int, default=0, help='Seed for regulated-but-pass sampling')
    p.add_argument('--stopgap', action='store_true', help='Wild-type 30-mers only, no variants or curation')
    p.add_argument('--scorer', default='blosum62', help='Peptide variant scorer (default: blosum62)')
    p.add_argument('--relatedness-threshold', type=int, default=Config.RELATEDNESS_THRESHOLD,
                   help=f'Corpus matches before a harmless record counts as related '
                        f'(default: {Config.RELATEDNESS_THRESHOLD})')
    p.add_argument('--keywords', help='Curation keyword file (one per line)')
    p.add_argument('--peptide-stride', type=int, default=1, help='Stride between peptide windows')

    p = sub.add_parser('add', help='Add emerging hazards to a table')
    p.add_argument('--config', required=True, help='Database config JSON')
    p.add_argument('--hazards', required=True, help='Hazard FASTA file or directory')
    p.add_argument('--corpus', help='Harmless corpus for full mode')
    p.add_argument('--table', required=True, help='Existing table file')
    p.add_argument('--out', required=True, help='Output table file')
    p.add_argument('--full', action='store_true', help='Full entries with variants instead of a stopgap')

    p = sub.add_parser('retag', help='Replace the region tags of a hazard')
    p.add_argument('--table', required=True)
    p.add_argument('--accession', required=True)
    p.add_argument('--regions', nargs='+', required=True)
    p.add_argument('--out', required=True)

    p = sub.add_parser('remove', help='Remove a hazard')
    p.add_argument('--table', required=True)
    p.add_argument('--accession', required=True)
    p.add_argument('--out', required=True)

    args = parser.parse_args()
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s [%(levelname)s] [%(name)s] %(message)s',
    )

    try:
        Config.validate()
        if args.command == 'retag':
            retag(args)
        elif args.command == 'remove':
            remove(args)
        else:
            config = HashDbConfig.from_file(args.config)
            if args.command == 'build':
                build(args, config)
            else:
                add(args, config)
    except KeyboardInterrupt:
        print("\n\n⚠ Interrupted by user")
        sys.exit(1)
    except ScreenerError as e:
        print(f"\n✗ {e.code}: {e.message}")
        sys.exit(e.exit_code)


if __name__ == '__main__':
    main()
