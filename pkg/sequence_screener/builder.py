"""
Hazard database builder.
Extracts hazard windows, adds mutants and peptide variants, filters and curates
them, then hashes everything through the keyservers into a HashedTable.
"""
import logging
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from .config import Config, load_keywords
from .doprf import DoprfClient
from .errors import ParseError, StaleKey, TooShort
from .sequences import (DNA_KINDS, KIND_LENGTH, SequenceRecord, Window, WindowOrigin, parse_fasta,
                        query_windows, reverse_complement, shannon_entropy, six_frame_peptides, windows)
from .table import COMMON, REGULATED_PASS, STOPGAP, EntryMetadata, HashedTable
from .variants import ScorerFactory, VariantScorer, dna_point_mutants, peptide_substitutions

logger = logging.getLogger(__name__)

HAZARD_KINDS = ('virus', 'toxin', 'toxin-gene', 'microbe-nontoxic')
WILD_TYPE = 'wild-type'
DNA_MUTANT = 'dna-mutant'
PEPTIDE_VARIANT = 'peptide-variant'
FASTA_SUFFIXES = ('.fa', '.fasta', '.fna', '.faa')


@dataclass
class HazardSource:
    accession: str
    residues: str
    kind: str
    region_tags: Tuple[str, ...]
    common: bool = False
    genus: Optional[str] = None
    defend_mutants: Optional[bool] = None
    description: str = ''

    def __post_init__(self):
        if self.kind not in HAZARD_KINDS:
            raise ParseError(f"{self.accession}: unknown hazard kind {self.kind!r}")
        self.region_tags = tuple(sorted(set(self.region_tags)))
        if not self.region_tags:
            raise ParseError(f"{self.accession}: a hazard needs at least one region tag")
        if self.defend_mutants is None:
            self.defend_mutants = self.kind == 'toxin-gene'

    @property
    def tags(self) -> FrozenSet[str]:
        return frozenset(self.region_tags) | ({COMMON} if self.common else frozenset())

    @classmethod
    def from_record(cls, record: SequenceRecord) -> 'HazardSource':
        """
        Build a source from a FASTA record whose header reads
        ``ACC kind=toxin regions=US,EU [common=true] [genus=X] [defend=false] description``.
        """
        accession, *tokens = record.id.split()
        options, words = {}, []
        for token in tokens:
            key, sep, value = token.partition('=')
            if sep and key in ('kind', 'regions', 'common', 'genus', 'defend'):
                options[key] = value
            else:
                words.append(token)
        if 'kind' not in options:
            raise ParseError(f"{accession}: header carries no kind=")
        defend = options.get('defend')
        return cls(
            accession=accession,
            residues=record.residues,
            kind=options['kind'],
            region_tags=tuple(r for r in options.get('regions', '').split(',') if r),
            common=options.get('common', 'false').lower() == 'true',
            genus=options.get('genus'),
            defend_mutants=None if defend is None else defend.lower() == 'true',
            description=' '.join(words),
        )


@dataclass(frozen=True)
class PlainEntry:
    window: Window
    hazard_accession: str
    variant_kind: str
    tags: FrozenSet[str]

    @property
    def key(self) -> Tuple[str, str]:
        return self.window.kind, self.window.payload

    def metadata(self) -> EntryMetadata:
        origin = self.window.origin
        return EntryMetadata(self.hazard_accession, self.window.kind, origin.offset, origin.strand,
                             origin.frame, self.variant_kind, tuple(sorted(self.tags)))


@dataclass
class CorpusRecord:
    accession: str
    description: str
    residues: str
    genus: Optional[str] = None


@dataclass
class HarmlessCorpus:
    records: List[CorpusRecord] = field(default_factory=list)

    @classmethod
    def from_records(cls, records: Iterable[SequenceRecord]) -> 'HarmlessCorpus':
        """Headers read ``ACC [genus=X] description``."""
        result = []
        for record in records:
            accession, *tokens = record.id.split()
            genus = None
            words = []
            for token in tokens:
                if token.startswith('genus='):
                    genus = token[len('genus='):]
                else:
                    words.append(token)
            result.append(CorpusRecord(accession, ' '.join(words), record.residues, genus))
        return cls(result)


def _fasta_files(path) -> List[Path]:
    path = Path(path)
    if path.is_file():
        return [path]
    return sorted(p for p in path.iterdir() if p.suffix.lower() in FASTA_SUFFIXES)


def load_hazards(path) -> List[HazardSource]:
    sources = []
    for file_path in _fasta_files(path):
        sources.extend(HazardSource.from_record(r) for r in parse_fasta(file_path.read_bytes()))
    seen = set()
    for src in sources:
        if src.accession in seen:
            raise ParseError(f"Duplicate hazard accession {src.accession}")
        seen.add(src.accession)
    return sources


def load_corpus(path) -> HarmlessCorpus:
    if path is None:
        return HarmlessCorpus()
    records = []
    for file_path in _fasta_files(path):
        records.extend(parse_fasta(file_path.read_bytes()))
    return HarmlessCorpus.from_records(records)


# Window extraction

def _dedupe(entries: Iterable[PlainEntry]) -> List[PlainEntry]:
    seen, result = set(), []
    for entry in entries:
        if entry.key not in seen:
            seen.add(entry.key)
            result.append(entry)
    return result


def _dna_windows(accession: str, seq: str, kinds: Sequence[str]) -> List[Window]:
    length = len(seq)
    rc = reverse_complement(seq)
    result = []
    for kind in kinds:
        size = KIND_LENGTH[kind]
        for offset, payload in windows(seq, size):
            result.append(Window(kind, payload, WindowOrigin(accession, offset, 'fwd')))
        for offset, payload in windows(rc, size):
            result.append(Window(kind, payload, WindowOrigin(accession, length - offset - size, 'rev')))
    return result


def extract_hazard_windows(src: HazardSource) -> List[PlainEntry]:
    """
    Wild-type dna30, dna42 and aa20 windows from both strands of a source.

    Raises:
        TooShort: fewer than 30 residues
    """
    if len(src.residues) < KIND_LENGTH['dna30']:
        raise TooShort(f"{src.accession} has {len(src.residues)} bases; at least 30 are needed")
    tags = src.tags
    found = [PlainEntry(w, src.accession, WILD_TYPE, tags) for w in _dna_windows(src.accession, src.residues, DNA_KINDS)]
    for strand, frame, offset, peptide in six_frame_peptides(src.residues):
        window = Window('aa20', peptide, WindowOrigin(src.accession, offset, strand, frame))
        found.append(PlainEntry(window, src.accession, WILD_TYPE, tags))
    return _dedupe(found)


def single_mutants_42(entry: PlainEntry) -> List[PlainEntry]:
    if entry.window.kind != 'dna42':
        raise ValueError("Single mutants are generated for dna42 entries only")
    return [PlainEntry(Window('dna42', mutant, entry.window.origin), entry.hazard_accession, DNA_MUTANT, entry.tags)
            for mutant in dna_point_mutants(entry.window.payload)]


def peptide_variants(entry: PlainEntry, score_floor: float,
                     scorer: Optional[VariantScorer] = None) -> List[PlainEntry]:
    if entry.window.kind != 'aa20':
        raise ValueError("Peptide variants are generated for aa20 entries only")
    scorer = scorer or ScorerFactory.get()
    return [PlainEntry(Window('aa20', variant, entry.window.origin), entry.hazard_accession, PEPTIDE_VARIANT,
                       entry.tags)
            for variant in peptide_substitutions(entry.window.payload, score_floor, scorer)]


def regulated_pass_sample(src: HazardSource, seed: int,
                          stride: Tuple[int, int] = Config.REGULATED_PASS_STRIDE) -> List[PlainEntry]:
    """
    One 42-mer every 39-45 bases of a non-toxic regulated microbe, tagged RegulatedButPass.

    Each sampled window is also added as its reverse complement, so the result holds two
    entries per sampled position; clients send forward windows only.
    """
    rng = random.Random(f'{seed}:{src.accession}')
    seq, size = src.residues, KIND_LENGTH['dna42']
    tags = src.tags | {REGULATED_PASS}
    sampled = []
    position = 0
    while position + size <= len(seq):
        payload = seq[position:position + size]
        if set(payload) <= set('ACGT'):
            sampled.append(PlainEntry(Window('dna42', payload, WindowOrigin(src.accession, position, 'fwd')),
                                      src.accession, WILD_TYPE, tags))
            sampled.append(PlainEntry(Window('dna42', reverse_complement(payload),
                                             WindowOrigin(src.accession, position, 'rev')),
                                      src.accession, WILD_TYPE, tags))
        position += rng.randint(*stride)
    return _dedupe(sampled)


def entropy_filter(entries: Iterable[PlainEntry], floor: float = Config.ENTROPY_FLOOR) -> List[PlainEntry]:
    """Drop low-complexity DNA entries; peptide entries pass through."""
    return [e for e in entries if e.window.kind not in DNA_KINDS or shannon_entropy(e.window.payload) >= floor]


def curate(entries: Sequence[PlainEntry], corpus: HarmlessCorpus, relatedness_threshold: Optional[int] = None,
           keywords: Optional[Sequence[str]] = None, genera: Optional[Dict[str, str]] = None) -> List[PlainEntry]:
    """
    Remove entries that also occur in harmless sequences.

    Corpus records described with a curation keyword, or from the hazard's own
    genus, are skipped. A record with more than ``relatedness_threshold``
    matches against a single hazard, all window kinds counted together, is
    treated as related to that hazard and ignored for it.

    Args:
        entries: Candidate entries
        corpus: Harmless sequences
        relatedness_threshold: Matches above which a record counts as related
        keywords: Description keywords marking engineered records
        genera: Hazard accession to genus

    Returns:
        The surviving entries, in input order
    """
    threshold = Config.RELATEDNESS_THRESHOLD if relatedness_threshold is None else relatedness_threshold
    keywords = [k.lower() for k in (load_keywords() if keywords is None else keywords)]
    genera = genera or {}

    by_hazard: Dict[str, Dict[Tuple[str, str], List[int]]] = defaultdict(lambda: defaultdict(list))
    for position, entry in enumerate(entries):
        by_hazard[entry.hazard_accession][entry.key].append(position)

    removed: Set[int] = set()
    for record in corpus.records:
        description = record.description.lower()
        if any(k in description for k in keywords):
            logger.debug("Corpus record %s skipped: engineered", record.accession)
            continue
        present = set()
        for residues in (record.residues, reverse_complement(record.residues)):
            present.update((w.kind, w.payload) for w in query_windows(SequenceRecord(record.accession, residues)))
        for accession, keyed in by_hazard.items():
            if record.genus and genera.get(accession) == record.genus:
                continue
            hits = [key for key in keyed if key in present]
            if len(hits) > threshold:
                kinds = Counter(kind for kind, _ in hits)
                logger.debug("Corpus record %s related to %s (%d matches: %s)", record.accession, accession,
                             len(hits), dict(sorted(kinds.items())))
                continue
            for key in hits:
                removed.update(keyed[key])
    if removed:
        logger.info("Curation removed %d of %d entries", len(removed), len(entries))
    return [e for position, e in enumerate(entries) if position not in removed]


# Hashing

def hash_entries(entries: Sequence[PlainEntry], client: DoprfClient, key_id: str,
                 epoch: int) -> List[Tuple[bytes, List[EntryMetadata]]]:
    grouped: Dict[bytes, List[EntryMetadata]] = {}
    for entry in entries:
        grouped.setdefault(entry.window.hash_input(), []).append(entry.metadata())
    inputs = sorted(grouped)
    elements = [client.group.hash_to_group(x) for x in inputs]
    outputs = client.eval_elements(elements, key_id=key_id, epoch=epoch)
    return [(y.encode(), grouped[x]) for x, y in zip(inputs, outputs)]


def build_hashed_table(entries: Sequence[PlainEntry], client: DoprfClient, db_version: int) -> HashedTable:
    """Hash every entry window through the keyservers into a new table."""
    key_id, epoch, _ = client.select_quorum()
    table = HashedTable(hash_entries(entries, client, key_id, epoch), db_version, key_id, epoch)
    logger.info("Built table v%d: %d hashes from %d entries under %s", db_version, len(table), len(entries), key_id)
    return table


def stopgap_entries(src: HazardSource) -> List[PlainEntry]:
    if len(src.residues) < KIND_LENGTH['dna30']:
        raise TooShort(f"{src.accession} has {len(src.residues)} bases; at least 30 are needed")
    tags = src.tags | {STOPGAP}
    return _dedupe(PlainEntry(w, src.accession, WILD_TYPE, tags)
                   for w in _dna_windows(src.accession, src.residues, ('dna30',)))


def incremental_add(src: HazardSource, table: HashedTable, client: DoprfClient, stopgap: bool = True,
                    entries: Optional[Sequence[PlainEntry]] = None) -> HashedTable:
    """
    Add one source to an existing table.

    Stopgap mode adds wild-type 30-mers only. Full mode first drops every
    entry of the accession, then adds ``entries`` (or a plain extraction).

    Raises:
        StaleKey: the keyservers no longer serve the table's key
    """
    key_id, epoch, _ = client.select_quorum()
    if key_id != table.key_id:
        raise StaleKey(f"Table is keyed under {table.key_id}, keyservers serve {key_id}")
    if stopgap:
        base = table
        new_entries = stopgap_entries(src)
    else:
        base = table.map_metadata(lambda m: None if m.accession == src.accession else m)
        new_entries = list(entries) if entries is not None else extract_hazard_windows(src)
    updated = base.merged_with(hash_entries(new_entries, client, table.key_id, epoch), table.version + 1)
    logger.info("Added %s (%s): %d -> %d hashes, %s", src.accession, 'stopgap' if stopgap else 'full',
                len(table), len(updated), updated.version_label)
    return updated


class DatabaseBuilder:
    """Runs the whole build pipeline for a set of hazard sources"""

    def __init__(self, client: DoprfClient, corpus: Optional[HarmlessCorpus] = None, seed: int = 0,
                 scorer: Optional[VariantScorer] = None, score_floor: float = None,
                 relatedness_threshold: int = None, keywords: Optional[Sequence[str]] = None,
                 peptide_stride: int = 1, verbose: bool = True):
        """
        Initialize the builder.

        Args:
            client: DOPRF client bound to the keyservers
            corpus: Harmless sequences used for curation
            seed: Seed for regulated-pass sampling
            scorer: Variant scorer for peptide variants (default BLOSUM62)
            score_floor: Minimum substitution score (default from Config)
            relatedness_threshold: Curation threshold (default from Config)
            keywords: Curation keywords (default from the keyword file)
            peptide_stride: Take variants of every n-th aa20 window
            verbose: Print progress
        """
        self.client = client
        self.corpus = corpus or HarmlessCorpus()
        self.seed = seed
        self.scorer = scorer or ScorerFactory.get()
        self.score_floor = Config.PEPTIDE_SCORE_FLOOR if score_floor is None else score_floor
        self.relatedness_threshold = relatedness_threshold
        self.keywords = keywords
        self.peptide_stride = max(1, peptide_stride)
        self.verbose = verbose

    def _print(self, text: str):
        if self.verbose:
            print(text)

    def entries_for(self, src: HazardSource) -> List[PlainEntry]:
        """Uncurated entries of one source."""
        if src.kind == 'microbe-nontoxic':
            return regulated_pass_sample(src, self.seed)
        entries = extract_hazard_windows(src)
        if src.common:
            return entries
        variants = []
        if src.defend_mutants:
            for entry in entries:
                if entry.window.kind == 'dna42':
                    variants.extend(single_mutants_42(entry))
        peptides = [e for e in entries if e.window.kind == 'aa20']
        for entry in peptides[::self.peptide_stride]:
            variants.extend(peptide_variants(entry, self.score_floor, self.scorer))
        return _dedupe(entries + variants)

    def plan(self, sources: Sequence[HazardSource]) -> List[PlainEntry]:
        """Extract, filter and curate the entries of every source."""
        entries = []
        for i, src in enumerate(sources, 1):
            found = self.entries_for(src)
            self._print(f"[{i}/{len(sources)}] {src.accession} ({src.kind}): {len(found)} entries")
            entries.extend(found)
        filtered = entropy_filter(entries)
        self._print(f"  ✓ Entropy filter kept {len(filtered)} of {len(entries)}")
        genera = {s.accession: s.genus for s in sources if s.genus}
        curated = curate(filtered, self.corpus, self.relatedness_threshold, self.keywords, genera)
        self._print(f"  ✓ Curation kept {len(curated)} of {len(filtered)}")
        return curated

    def run(self, sources: Sequence[HazardSource], version: int, output: Optional[Path] = None) -> HashedTable:
        self._print(f"\n{'='*60}")
        self._print("BUILDING HAZARD DATABASE")
        self._print(f"{'='*60}\n")
        entries = self.plan(sources)
        if not entries:
            self._print("\n⚠ No entries survived filtering; the table will be empty.")
        table = build_hashed_table(entries, self.client, version)
        self._print(f"  ✓ Hashed {len(entries)} entries into {len(table)} table rows ({table.version_label})")
        if output:
            table.write(output)
            self._print(f"\n✓ Table saved to: {output}")
        return table

    def add_emerging(self, src: HazardSource, table: HashedTable, stopgap: bool = True) -> HashedTable:
        entries = None
        if not stopgap:
            genera = {src.accession: src.genus} if src.genus else {}
            entries = curate(entropy_filter(self.entries_for(src)), self.corpus, self.relatedness_threshold,
                             self.keywords, genera)
        return incremental_add(src, table, self.client, stopgap=stopgap, entries=entries)

    @staticmethod
    def retag_hazard(table: HashedTable, accession: str, regions: Iterable[str]) -> HashedTable:
        """Replace the region tags of one accession; special tags are kept."""
        regions = set(regions)

        def retag(m: EntryMetadata) -> EntryMetadata:
            if m.accession != accession:
                return m
            special = {t for t in m.tags if t in (COMMON, REGULATED_PASS, STOPGAP)}
            return EntryMetadata(m.accession, m.kind, m.offset, m.strand, m.frame, m.variant_kind,
                                 tuple(sorted(special | regions)))

        return table.map_metadata(retag, version=table.version + 1)

    @staticmethod
    def remove_hazard(table: HashedTable, accession: str) -> HashedTable:
        return table.map_metadata(lambda m: None if m.accession == accession else m, version=table.version + 1)
