#!/usr/bin/env python3
"""
Serve a keyserver or the hashed database over HTTP.
"""
import argparse
import logging
import sys
from pathlib import Path

import uvicorn

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent))

from sequence_screener.config import Config, HashDbConfig, KeyserverConfig
from sequence_screener.errors import ScreenerError
from sequence_screener.hashdb import HashDbServer
from sequence_screener.http_app import create_hashdb_app, create_keyserver_app
from sequence_screener.keyserver import Keyserver


def main():
    """Main entry point"""
    parser = argparse.ArgumentParser(
        description='Run a screening service',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Keyserver 1 of 5 (share file unlocked by SCREENER_SHARE_PASSPHRASE)
  export SCREENER_SHARE_PASSPHRASE=...
  python serve.py keyserver --config ks1.json

  # Database server
  python serve.py hashdb --config db.json
        """
    )
    parser.add_argument('service', choices=['keyserver', 'hashdb'])
    parser.add_argument('--config', required=True, help='Service config JSON')
    parser.add_argument('--verbose', action='store_true', help='Debug logging')
    args = parser.parse_args()

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s [%(levelname)s] [%(name)s] %(message)s',
    )

    try:
        Config.validate()
        if args.service == 'keyserver':
            config = KeyserverConfig.from_file(args.config)
            server = Keyserver.from_config(config)
            app = create_keyserver_app(server)
            print(f"✓ Keyserver {config.index}/{config.n} (t={config.t}) on {config.host}:{config.port}")
        else:
            config = HashDbConfig.from_file(args.config)
            server = HashDbServer.from_config(config)
            app = create_hashdb_app(server)
            print(f"✓ Database {server.table.version_label} ({len(server.table)} hashes) "
                  f"on {config.host}:{config.port}")
    except ScreenerError as e:
        print(f"✗ {e.code}: {e.message}")
        sys.exit(e.exit_code)

    uvicorn.run(app, host=config.host, port=config.port, log_level='debug' if args.verbose else 'info')


if __name__ == '__main__':
    main()
