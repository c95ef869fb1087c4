"""
Configuration module for the sequence screener.
Manages defaults, environment overrides and the JSON config files of each service.
"""
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from .errors import BadConfig

load_dotenv()


class Config:
    """Configuration class for the sequence screener"""

    # Group used for hashing; modp-* groups are test/simulation groups
    GROUP = os.getenv('SCREENER_GROUP', 'ristretto255')

    # Protocol
    PROTOCOL_VERSION = 1
    BATCH_SIZE = int(os.getenv('SCREENER_BATCH_SIZE', '4096'))  # blinded points per eval request

    # Keyserver rate limit in windows/second per client certificate
    RATE_LIMIT = float(os.getenv('SCREENER_RATE_LIMIT', '50000'))

    # Database building
    RELATEDNESS_THRESHOLD = int(os.getenv('SCREENER_RELATEDNESS_THRESHOLD', '20'))
    PEPTIDE_SCORE_FLOOR = float(os.getenv('SCREENER_PEPTIDE_SCORE_FLOOR', '1'))
    MATRIX = os.getenv('SCREENER_MATRIX', 'BLOSUM62')
    ENTROPY_FLOOR = 1.6  # bits
    REGULATED_PASS_STRIDE = (39, 45)
    CURATION_KEYWORDS_FILE = Path(__file__).parent / 'data' / 'curation_keywords.txt'

    # Network
    HTTP_TIMEOUT = float(os.getenv('SCREENER_HTTP_TIMEOUT', '30'))
    COMMIT_ATTEMPTS = int(os.getenv('SCREENER_COMMIT_ATTEMPTS', '3'))  # rotation commit rounds before giving up

    # Receipt store, nonce log, audit log and share files default here
    DATA_DIR = Path(os.getenv('SCREENER_DATA_DIR', 'screener_data'))

    @classmethod
    def validate(cls):
        """Validate configuration"""
        if cls.BATCH_SIZE < 1:
            raise BadConfig("SCREENER_BATCH_SIZE must be at least 1")
        if cls.RATE_LIMIT <= 0:
            raise BadConfig("SCREENER_RATE_LIMIT must be positive")
        if cls.RELATEDNESS_THRESHOLD < 0:
            raise BadConfig("SCREENER_RELATEDNESS_THRESHOLD must not be negative")
        if cls.HTTP_TIMEOUT <= 0:
            raise BadConfig("SCREENER_HTTP_TIMEOUT must be positive")
        if cls.COMMIT_ATTEMPTS < 1:
            raise BadConfig("SCREENER_COMMIT_ATTEMPTS must be at least 1")

        # Create data folder if it doesn't exist
        cls.DATA_DIR.mkdir(parents=True, exist_ok=True)

        return True


def load_keywords(path: Optional[Path] = None) -> List[str]:
    """Read the curation keyword list, one keyword per line, '#' comments allowed."""
    path = Path(path) if path else Config.CURATION_KEYWORDS_FILE
    keywords = []
    for line in path.read_text(encoding='utf-8').splitlines():
        line = line.split('#', 1)[0].strip().lower()
        if line:
            keywords.append(line)
    return keywords


class _FileConfig:
    """Shared JSON loading for the dataclass configs below"""

    @classmethod
    def from_dict(cls, data: Dict[str, Any]):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise BadConfig(f"Unknown config keys for {cls.__name__}: {', '.join(unknown)}")
        try:
            config = cls(**data)
        except TypeError as e:
            raise BadConfig(f"Invalid {cls.__name__}: {e}")
        config.validate()
        return config

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
        except FileNotFoundError:
            raise BadConfig(f"Config file not found: {path}")
        except json.JSONDecodeError as e:
            raise BadConfig(f"Config file {path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise BadConfig(f"Config file {path} must hold a JSON object")
        return cls.from_dict(data)

    def validate(self):
        return True


@dataclass
class ClientConfig(_FileConfig):
    """Settings of a synthesis client (provider or benchtop)"""

    keyservers: List[str]
    database: str
    t: int
    n: int
    region: str
    mode: str = 'provider'
    certificate: Optional[str] = None     # JSON chain, leaf first
    signing_key: Optional[str] = None     # PEM private key of the leaf
    trust_root: Optional[str] = None      # root certificate JSON
    elt: Optional[str] = None
    batch_size: int = Config.BATCH_SIZE
    output_format: str = 'json'
    keyserver_subset: Optional[List[int]] = None
    receipt_store: Optional[str] = None
    shipping_address: Optional[str] = None
    group: str = Config.GROUP

    def validate(self):
        if not 0 < self.t <= self.n:
            raise BadConfig(f"Threshold t={self.t} must satisfy 0 < t <= n={self.n}")
        if len(self.keyservers) < self.t:
            raise BadConfig(f"Need at least t={self.t} keyserver endpoints, got {len(self.keyservers)}")
        if not self.region:
            raise BadConfig("region must not be empty")
        if self.mode not in ('provider', 'benchtop'):
            raise BadConfig(f"Unknown mode: {self.mode}")
        if self.output_format not in ('json', 'text'):
            raise BadConfig(f"Unknown output format: {self.output_format}")
        if self.batch_size < 1:
            raise BadConfig("batch_size must be at least 1")
        if self.keyserver_subset is not None and len(self.keyserver_subset) != self.t:
            raise BadConfig("keyserver_subset must name exactly t servers")
        return True

    @property
    def receipt_path(self) -> Path:
        return Path(self.receipt_store) if self.receipt_store else Config.DATA_DIR / 'receipts.jsonl'


@dataclass
class KeyserverConfig(_FileConfig):
    """Settings of one keyserver"""

    index: int
    n: int
    t: int
    peers: Dict[str, str] = field(default_factory=dict)  # index -> endpoint
    share_file: Optional[str] = None
    passphrase_env: str = 'SCREENER_SHARE_PASSPHRASE'
    rate_limit: float = Config.RATE_LIMIT
    trust_root: Optional[str] = None
    certificate: Optional[str] = None    # keyserver chain, signs sub-shares to peers
    signing_key: Optional[str] = None
    host: str = '127.0.0.1'
    port: int = 8100
    group: str = Config.GROUP

    def validate(self):
        if not 0 < self.t <= self.n:
            raise BadConfig(f"Threshold t={self.t} must satisfy 0 < t <= n={self.n}")
        if not 1 <= self.index <= self.n:
            raise BadConfig(f"Keyserver index {self.index} outside [1, {self.n}]")
        if self.rate_limit <= 0:
            raise BadConfig("rate_limit must be positive")
        if bool(self.certificate) != bool(self.signing_key):
            raise BadConfig("certificate and signing_key must be given together")
        return True

    @property
    def peer_endpoints(self) -> Dict[int, str]:
        return {int(index): endpoint for index, endpoint in self.peers.items()}

    @property
    def passphrase(self) -> Optional[str]:
        return os.getenv(self.passphrase_env)


@dataclass
class HashDbConfig(_FileConfig):
    """Settings of the hashed database server"""

    table: str
    certificate: str
    signing_key: str
    trust_root: str
    nonce_log: Optional[str] = None
    audit_log: Optional[str] = None
    keyservers: List[str] = field(default_factory=list)
    t: int = 1
    host: str = '127.0.0.1'
    port: int = 8200
    group: str = Config.GROUP

    def validate(self):
        if self.keyservers and len(self.keyservers) < self.t:
            raise BadConfig(f"Need at least t={self.t} keyserver endpoints for rekeying")
        return True

    @property
    def nonce_path(self) -> Path:
        return Path(self.nonce_log) if self.nonce_log else Config.DATA_DIR / 'elt_nonces.log'

    @property
    def audit_path(self) -> Path:
        return Path(self.audit_log) if self.audit_log else Config.DATA_DIR / 'exemption_audit.jsonl'
