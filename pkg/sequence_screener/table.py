"""
Hashed hazard table: DOPRF outputs mapped to entry metadata.

File layout (big-endian):
    b'HZTB' | format u8 | version u64 | key_id (u16 length + UTF-8) | epoch u32 | count u64
    then `count` records sorted by hash: hash[32] | u32 length | canonical JSON metadata list
"""
import bisect
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Tuple

from .encoding import canonical_json
from .errors import CorruptTable

MAGIC = b'HZTB'
FORMAT = 1
HASH_SIZE = 32

COMMON = 'Common'
REGULATED_PASS = 'RegulatedButPass'
STOPGAP = 'Stopgap'
SPECIAL_TAGS = frozenset({COMMON, REGULATED_PASS, STOPGAP})


@dataclass(frozen=True)
class EntryMetadata:
    accession: str
    kind: str
    offset: int
    strand: str
    frame: Optional[int]
    variant_kind: str
    tags: Tuple[str, ...]

    @property
    def common(self) -> bool:
        return COMMON in self.tags

    @property
    def regulated_pass(self) -> bool:
        return REGULATED_PASS in self.tags

    @property
    def stopgap(self) -> bool:
        return STOPGAP in self.tags

    @property
    def regions(self) -> Tuple[str, ...]:
        return tuple(t for t in self.tags if t not in SPECIAL_TAGS)

    def to_dict(self) -> Dict:
        return {
            'accession': self.accession,
            'kind': self.kind,
            'offset': self.offset,
            'strand': self.strand,
            'frame': self.frame,
            'variant_kind': self.variant_kind,
            'tags': list(self.tags),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'EntryMetadata':
        return cls(data['accession'], data['kind'], int(data['offset']), data['strand'],
                   data.get('frame'), data['variant_kind'], tuple(sorted(data['tags'])))


def _metadata_key(m: EntryMetadata):
    return (m.accession, m.kind, m.offset, m.strand, -1 if m.frame is None else m.frame, m.variant_kind, m.tags)


class HashedTable:
    """Immutable sorted table; lookups by binary search"""

    def __init__(self, records: Iterable[Tuple[bytes, Iterable[EntryMetadata]]],
                 version: int, key_id: str, epoch: int):
        merged: Dict[bytes, set] = {}
        for digest, metadata in records:
            if len(digest) != HASH_SIZE:
                raise CorruptTable(f"Hash of {len(digest)} bytes in table")
            merged.setdefault(bytes(digest), set()).update(metadata)
        self._hashes: List[bytes] = sorted(h for h, m in merged.items() if m)
        self._metadata: List[Tuple[EntryMetadata, ...]] = [
            tuple(sorted(merged[h], key=_metadata_key)) for h in self._hashes
        ]
        self.version = int(version)
        self.key_id = key_id
        self.epoch = int(epoch)

    def __len__(self):
        return len(self._hashes)

    def __contains__(self, digest: bytes) -> bool:
        return bool(self.lookup(digest))

    def __iter__(self) -> Iterator[Tuple[bytes, Tuple[EntryMetadata, ...]]]:
        return iter(zip(self._hashes, self._metadata))

    @property
    def version_label(self) -> str:
        return f'v{self.version}'

    def hashes(self) -> List[bytes]:
        return list(self._hashes)

    def lookup(self, digest: bytes) -> Tuple[EntryMetadata, ...]:
        position = bisect.bisect_left(self._hashes, digest)
        if position < len(self._hashes) and self._hashes[position] == digest:
            return self._metadata[position]
        return ()

    def accessions(self) -> List[str]:
        return sorted({m.accession for metadata in self._metadata for m in metadata})

    def map_metadata(self, fn: Callable[[EntryMetadata], Optional[EntryMetadata]],
                     version: Optional[int] = None) -> 'HashedTable':
        """New table with fn applied to each entry; entries mapped to None are dropped."""
        records = []
        for digest, metadata in self:
            kept = [m2 for m2 in (fn(m) for m in metadata) if m2 is not None]
            records.append((digest, kept))
        return HashedTable(records, self.version if version is None else version, self.key_id, self.epoch)

    def merged_with(self, records: Iterable[Tuple[bytes, Iterable[EntryMetadata]]], version: int) -> 'HashedTable':
        return HashedTable(list(self) + list(records), version, self.key_id, self.epoch)

    # Serialization

    def to_bytes(self) -> bytes:
        key_id = self.key_id.encode('utf-8')
        parts = [MAGIC, struct.pack('>BQH', FORMAT, self.version, len(key_id)), key_id,
                 struct.pack('>IQ', self.epoch, len(self._hashes))]
        for digest, metadata in self:
            blob = canonical_json([m.to_dict() for m in metadata])
            parts.extend([digest, struct.pack('>I', len(blob)), blob])
        return b''.join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> 'HashedTable':
        try:
            if data[:4] != MAGIC:
                raise CorruptTable("Not a hazard table file")
            fmt, version, key_len = struct.unpack_from('>BQH', data, 4)
            if fmt != FORMAT:
                raise CorruptTable(f"Unsupported table format {fmt}")
            position = 4 + struct.calcsize('>BQH')
            key_id = data[position:position + key_len].decode('utf-8')
            position += key_len
            epoch, count = struct.unpack_from('>IQ', data, position)
            position += struct.calcsize('>IQ')
            records = []
            previous = b''
            for _ in range(count):
                digest = data[position:position + HASH_SIZE]
                (length,) = struct.unpack_from('>I', data, position + HASH_SIZE)
                position += HASH_SIZE + 4
                blob = data[position:position + length]
                if len(digest) != HASH_SIZE or len(blob) != length:
                    raise CorruptTable("Truncated table record")
                if digest <= previous:
                    raise CorruptTable("Table records are not sorted")
                previous = digest
                position += length
                records.append((digest, [EntryMetadata.from_dict(m) for m in json.loads(blob)]))
            if position != len(data):
                raise CorruptTable("Trailing bytes after table records")
        except CorruptTable:
            raise
        except (struct.error, UnicodeDecodeError, ValueError, KeyError, TypeError) as e:
            raise CorruptTable(f"Unreadable table: {e}")
        return cls(records, version, key_id, epoch)

    def write(self, path) -> Path:
        """Atomically write the table file."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix='.tmp')
        try:
            with os.fdopen(fd, 'wb') as f:
                f.write(self.to_bytes())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    @classmethod
    def read(cls, path) -> 'HashedTable':
        try:
            return cls.from_bytes(Path(path).read_bytes())
        except FileNotFoundError:
            raise CorruptTable(f"Table file not found: {path}")

