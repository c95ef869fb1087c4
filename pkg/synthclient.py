#!/usr/bin/env python3
"""
Screen a DNA synthesis order against the hashed hazard database.
"""
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent))

from sequence_screener.main import main


if __name__ == '__main__':
    main()
