"""Encrypted on-disk persistence of a keyserver's shares."""
import base64
import json
import logging
import os
import secrets
import tempfile
from pathlib import Path
from typing import List, Optional

from cryptography.fernet import Fernet, InvalidToken
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from .encoding import b64d, b64e
from .errors import BadConfig
from .sharing import KeyShare

logger = logging.getLogger(__name__)


class EncryptedShareFile:
    """Fernet-encrypted JSON list of share records, key derived from a passphrase with Scrypt"""

    def __init__(self, path, passphrase: str):
        if not passphrase:
            raise BadConfig("A passphrase is required to persist key shares")
        self.path = Path(path)
        self._passphrase = passphrase.encode('utf-8')

    def _fernet(self, salt: bytes) -> Fernet:
        kdf = Scrypt(salt=salt, length=32, n=2 ** 14, r=8, p=1)
        return Fernet(base64.urlsafe_b64encode(kdf.derive(self._passphrase)))

    def save(self, shares: List[KeyShare], active_key_id: Optional[str]):
        """Replace the file atomically; previous contents are not kept."""
        salt = secrets.token_bytes(16)
        plaintext = json.dumps({'active': active_key_id, 'shares': [s.to_record() for s in shares]}).encode('utf-8')
        envelope = {'salt': b64e(salt), 'token': self._fernet(salt).encrypt(plaintext).decode('ascii')}
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=self.path.name, suffix='.tmp')
        try:
            with os.fdopen(fd, 'w', encoding='utf-8') as f:
                json.dump(envelope, f)
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        logger.debug("Persisted %d shares to %s", len(shares), self.path)

    def load(self, modulus: int):
        """
        Returns:
            (list of KeyShare, active key id); empty if the file does not exist
        """
        if not self.path.exists():
            return [], None
        try:
            envelope = json.loads(self.path.read_text(encoding='utf-8'))
            plaintext = self._fernet(b64d(envelope['salt'])).decrypt(envelope['token'].encode('ascii'))
        except InvalidToken:
            raise BadConfig(f"Wrong passphrase for share file {self.path}")
        except (KeyError, ValueError) as e:
            raise BadConfig(f"Share file {self.path} is corrupt: {e}")
        data = json.loads(plaintext)
        return [KeyShare.from_record(r, modulus) for r in data['shares']], data.get('active')
