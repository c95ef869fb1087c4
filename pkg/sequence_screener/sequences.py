"""
FASTA parsing and decomposition of sequences into screening windows.

Window kinds:
    dna30, dna42 -- DNA substrings at stride 1
    aa20         -- 20-residue peptides from the six reading frames
"""
import collections
import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple, Union

from Bio.Seq import translate as bio_translate

from .errors import FrameError, ParseError

KIND_LENGTH = {'dna30': 30, 'dna42': 42, 'aa20': 20}
KIND_ORDER = {'dna30': 0, 'dna42': 1, 'aa20': 2}
DNA_KINDS = ('dna30', 'dna42')
STRAND_ORDER = {'fwd': 0, 'rev': 1}
PEPTIDE_SPAN = 60  # bases behind one aa20 window

CANONICAL = set('ACGT')
AMBIGUOUS = set('NRYSWKMBDHV')
ALLOWED = CANONICAL | AMBIGUOUS | {'U'}

_COMPLEMENT = str.maketrans('ACGTNRYSWKMBDHV', 'TGCANYRSWMKVHDB')
_CANONICAL_RUN = re.compile(r'[ACGT]+')
_AMBIGUOUS_CODON = re.compile(r'[^ACGT]')

# Canonical enumeration of the 24 relabelings of {A,C,G,T}; identity first
PERMUTATIONS: List[str] = [''.join(p) for p in itertools.permutations('ACGT')]
_PERMUTATION_TABLES = [str.maketrans('ACGT', p) for p in PERMUTATIONS]


@dataclass
class SequenceRecord:
    id: str
    residues: str


@dataclass(frozen=True)
class WindowOrigin:
    record_id: str
    offset: int
    strand: str = 'fwd'
    frame: Optional[int] = None
    permutation: Optional[int] = None


@dataclass(frozen=True)
class Window:
    kind: str
    payload: str
    origin: WindowOrigin

    def __post_init__(self):
        if len(self.payload) != KIND_LENGTH[self.kind]:
            raise ValueError(f"{self.kind} window needs {KIND_LENGTH[self.kind]} symbols, got {len(self.payload)}")

    def hash_input(self) -> bytes:
        """Domain-separated input to hash_to_group"""
        return f'{self.kind}:{self.payload}'.encode('ascii')

    def sort_key(self):
        o = self.origin
        return (KIND_ORDER[self.kind], o.offset, STRAND_ORDER[o.strand],
                -1 if o.frame is None else o.frame,
                -1 if o.permutation is None else o.permutation)


@dataclass
class WindowSet:
    windows: List[Window] = field(default_factory=list)
    source_length: int = 0

    def __len__(self):
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)

    def count(self, kind: str) -> int:
        return sum(1 for w in self.windows if w.kind == kind)

    def dump(self) -> str:
        """One tab-separated line per window"""
        def show(value):
            return '-' if value is None else str(value)

        return ''.join(
            f'{w.kind}\t{w.origin.offset}\t{w.origin.strand}\t{show(w.origin.frame)}\t'
            f'{show(w.origin.permutation)}\t{w.payload}\n'
            for w in self.windows
        )


def parse_fasta(text: Union[bytes, str]) -> List[SequenceRecord]:
    """
    Parse multi-record FASTA.

    Residues are uppercased, U becomes T and whitespace is dropped. Ambiguity
    codes are kept; windows overlapping them are skipped later.

    Raises:
        ParseError: on any other character, with the 1-based line number
    """
    if isinstance(text, bytes):
        try:
            text = text.decode('ascii')
        except UnicodeDecodeError as e:
            line = text[:e.start].count(b'\n') + 1
            raise ParseError(f"Non-ASCII byte on line {line}", line=line)

    records: List[SequenceRecord] = []
    header: Optional[str] = None
    chunks: List[str] = []
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith('>'):
            if header is not None:
                records.append(SequenceRecord(header, ''.join(chunks)))
            header, chunks = line[1:].strip(), []
            continue
        if line.startswith(';'):
            continue
        residues = ''.join(line.split()).upper()
        bad = next((c for c in residues if c not in ALLOWED), None)
        if bad is not None:
            raise ParseError(f"Invalid character {bad!r} on line {line_no}", line=line_no)
        if header is None:
            raise ParseError(f"Sequence data before the first header on line {line_no}", line=line_no)
        chunks.append(residues.replace('U', 'T'))
    if header is not None:
        records.append(SequenceRecord(header, ''.join(chunks)))
    return records


def reverse_complement(dna: str) -> str:
    return dna.translate(_COMPLEMENT)[::-1]


def windows(seq: str, size: int) -> List[Tuple[int, str]]:
    """All stride-1 substrings of ``size`` made only of canonical bases."""
    if size not in (30, 42, 60):
        raise ValueError(f"Unsupported window size: {size}")
    result = []
    for run in _CANONICAL_RUN.finditer(seq):
        start, end = run.span()
        for offset in range(start, end - size + 1):
            result.append((offset, seq[offset:offset + size]))
    return result


def translate(dna: str) -> str:
    """Standard genetic code; stops are '*' and codons with ambiguity codes are 'X'."""
    if len(dna) % 3:
        raise FrameError(f"Length {len(dna)} is not a multiple of 3")
    codons = (dna[i:i + 3] for i in range(0, len(dna), 3))
    masked = ''.join('NNN' if _AMBIGUOUS_CODON.search(c) else c for c in codons)
    return bio_translate(masked)


def six_frame_peptides(seq: str) -> Iterator[Tuple[str, int, int, str]]:
    """
    Yield (strand, frame, forward offset, peptide) for every aa20 window.

    The offset is the forward-strand coordinate of the first base of the
    window's 60-base span, on either strand.
    """
    length = len(seq)
    for strand, strand_seq in (('fwd', seq), ('rev', reverse_complement(seq))):
        for frame in range(3):
            usable = (length - frame) // 3 * 3
            if usable < PEPTIDE_SPAN:
                continue
            protein = translate(strand_seq[frame:frame + usable])
            for residue in range(len(protein) - KIND_LENGTH['aa20'] + 1):
                peptide = protein[residue:residue + KIND_LENGTH['aa20']]
                if 'X' in peptide:
                    continue
                start = frame + 3 * residue
                offset = start if strand == 'fwd' else length - (start + PEPTIDE_SPAN)
                yield strand, frame, offset, peptide


def base_permutations(payload: str) -> List[str]:
    return [payload.translate(table) for table in _PERMUTATION_TABLES]


def invert_permutation(index: int) -> int:
    """Index of the bijection undoing PERMUTATIONS[index]."""
    mapping = PERMUTATIONS[index]
    inverse = ''.join('ACGT'[mapping.index(b)] for b in 'ACGT')
    return PERMUTATIONS.index(inverse)


def shannon_entropy(payload: str) -> float:
    if not payload:
        return 0.0
    total = len(payload)
    return max(0.0, -sum(c / total * math.log2(c / total) for c in collections.Counter(payload).values()))


def query_windows(record: SequenceRecord, mode: str = 'provider') -> WindowSet:
    """Windows a client submits for one record: forward DNA windows plus six-frame peptides."""
    if mode not in ('provider', 'benchtop'):
        raise ValueError(f"Unknown mode: {mode}")
    seq = record.residues
    result: List[Window] = []
    for kind in DNA_KINDS:
        for offset, payload in windows(seq, KIND_LENGTH[kind]):
            if mode == 'benchtop':
                for perm_id, permuted in enumerate(base_permutations(payload)):
                    result.append(Window(kind, permuted, WindowOrigin(record.id, offset, 'fwd', None, perm_id)))
            else:
                result.append(Window(kind, payload, WindowOrigin(record.id, offset, 'fwd')))
    for strand, frame, offset, peptide in six_frame_peptides(seq):
        result.append(Window('aa20', peptide, WindowOrigin(record.id, offset, strand, frame)))
    result.sort(key=Window.sort_key)
    return WindowSet(result, len(seq))


def window_sets(records: Sequence[SequenceRecord], mode: str = 'provider') -> List[WindowSet]:
    return [query_windows(r, mode) for r in records]
