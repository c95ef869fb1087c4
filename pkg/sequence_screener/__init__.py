"""
Sequence Screener - Privacy-preserving screening of DNA synthesis orders against a hashed hazard database.
"""

__version__ = "1.0.0"
