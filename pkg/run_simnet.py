#!/usr/bin/env python3
"""
Run a simulation scenario and write its transcript.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent))

from sequence_screener.errors import ScreenerError
from sequence_screener.simnet import Scenario, run_scenario


def print_summary(transcript):
    """Print the verdicts and expectation results of a run"""
    print(f"\n{'='*60}")
    print("SCENARIO RESULTS")
    print(f"{'='*60}")
    print(f"Messages recorded: {len(transcript.records)}")
    failed = 0
    for event in transcript.events:
        line = f"[{event['position']}] {event['event']}"
        if 'verdict' in event:
            verdict = event['verdict']
            line += f" {verdict['order']}: {verdict.get('decision', verdict.get('error'))}"
        elif 'error' in event:
            line += f": {event['error']}"
        elif 'epoch' in event:
            line += f": {event.get('key_id')} epoch {event['epoch']}"
        if 'ok' in event:
            line = ('  ✓ ' if event['ok'] else '  ✗ ') + line
            failed += not event['ok']
        else:
            line = '    ' + line
        print(line)
    print(f"{'='*60}\n")
    return failed


def main():
    """Main entry point"""
    parser = argparse.ArgumentParser(
        description='Run a deterministic in-memory screening scenario',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python run_simnet.py run scenario.json
  python run_simnet.py run scenario.json --transcript run.jsonl

Scenario file:
  {"seed": 7, "n": 5, "t": 3, "region": "US",
   "hazards": [{"accession": "HZ1", "kind": "toxin", "regions": ["US"], "length": 300}],
   "orders": {"bad": {"hazard": "HZ1", "start": 10, "length": 120}, "benign": {"random": 200}},
   "events": [{"op": "screen", "order": "bad", "expect": "denied"},
              {"op": "kill", "server": 2}, {"op": "reshare"},
              {"op": "screen", "order": "benign", "expect": "accepted"}]}

Exit code is 0 when every expectation holds, 1 otherwise.
        """
    )
    parser.add_argument('--verbose', action='store_true', help='Debug logging')
    sub = parser.add_subparsers(dest='command', required=True)
    p = sub.add_parser('run', help='Run one scenario')
    p.add_argument('scenario', help='Scenario JSON file')
    p.add_argument('--transcript', help='Write the JSON-lines transcript here (default: stdout)')
    args = parser.parse_args()

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format='%(asctime)s [%(levelname)s] [%(name)s] %(message)s',
    )

    try:
        transcript = run_scenario(Scenario.from_file(args.scenario))
    except ScreenerError as e:
        print(f"✗ {e.code}: {e.message}", file=sys.stderr)
        sys.exit(e.exit_code)

    if args.transcript:
        Path(args.transcript).write_text(transcript.to_jsonl(), encoding='utf-8')
        failed = print_summary(transcript)
        print(f"✓ Transcript saved to: {args.transcript}")
    else:
        sys.stdout.write(transcript.to_jsonl())
        failed = sum(1 for e in transcript.events if e.get('ok') is False)
    sys.exit(1 if failed else 0)


if __name__ == '__main__':
    main()
