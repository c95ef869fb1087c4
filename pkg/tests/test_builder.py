import random

import pytest

from sequence_screener.builder import (DatabaseBuilder, HarmlessCorpus, HazardSource, PlainEntry, curate,
                                       entropy_filter, extract_hazard_windows, incremental_add, load_corpus,
                                       load_hazards, peptide_variants, regulated_pass_sample, single_mutants_42)
from sequence_screener.errors import ParseError, StaleKey, TooShort
from sequence_screener.sequences import SequenceRecord, Window, WindowOrigin, query_windows, reverse_complement
from sequence_screener.table import REGULATED_PASS, STOPGAP, HashedTable


def _dna(length, seed):
    rnd = random.Random(seed)
    return ''.join(rnd.choice('ACGT') for _ in range(length))


def _source(length=120, seed=1, **options):
    options.setdefault('kind', 'toxin')
    options.setdefault('region_tags', ('US',))
    return HazardSource(options.pop('accession', 'HZ1'), _dna(length, seed), **options)


def test_header_parsing():
    record = SequenceRecord('HZ9 kind=toxin-gene regions=US,EU genus=Clostridium botulinum toxin A', 'ACGT' * 10)
    src = HazardSource.from_record(record)
    assert src.accession == 'HZ9'
    assert src.region_tags == ('EU', 'US')
    assert src.genus == 'Clostridium'
    assert src.defend_mutants
    assert src.description == 'botulinum toxin A'


def test_header_without_kind_is_rejected():
    with pytest.raises(ParseError):
        HazardSource.from_record(SequenceRecord('HZ9 regions=US', 'ACGT'))


def test_load_hazards_rejects_duplicates(tmp_path):
    seq = _dna(60, 2)
    (tmp_path / 'a.fasta').write_text(f">HZ1 kind=virus regions=US\n{seq}\n")
    (tmp_path / 'b.fasta').write_text(f">HZ1 kind=virus regions=EU\n{seq}\n")
    with pytest.raises(ParseError):
        load_hazards(tmp_path)
    assert [s.accession for s in load_hazards(tmp_path / 'a.fasta')] == ['HZ1']


def test_load_corpus_reads_genus(tmp_path):
    (tmp_path / 'corpus.fa').write_text(f">C1 genus=Bacillus soil isolate\n{_dna(50, 3)}\n")
    corpus = load_corpus(tmp_path)
    assert corpus.records[0].genus == 'Bacillus'
    assert corpus.records[0].description == 'soil isolate'


def test_too_short_source():
    with pytest.raises(TooShort):
        extract_hazard_windows(_source(length=29))


def test_wild_type_windows_cover_both_strands():
    src = _source(length=40)
    entries = extract_hazard_windows(src)
    assert {e.window.kind for e in entries} == {'dna30'}
    assert len(entries) == 22
    reverse = [e for e in entries if e.window.origin.strand == 'rev']
    for e in reverse:
        offset = e.window.origin.offset
        assert e.window.payload == reverse_complement(src.residues[offset:offset + 30])


def test_single_mutants():
    src = _source(length=42)
    entry = next(e for e in extract_hazard_windows(src) if e.window.kind == 'dna42')
    mutants = single_mutants_42(entry)
    assert len(mutants) == 126
    assert len({m.window.payload for m in mutants}) == 126
    assert all(sum(a != b for a, b in zip(m.window.payload, entry.window.payload)) == 1 for m in mutants)


def test_peptide_variants_differ_in_one_residue():
    window = Window('aa20', 'MKTIIALSYIFCLVFADYKD', WindowOrigin('HZ1', 0))
    entry = PlainEntry(window, 'HZ1', 'wild-type', frozenset({'US'}))
    variants = peptide_variants(entry, score_floor=1)
    assert variants
    for v in variants:
        assert sum(a != b for a, b in zip(v.window.payload, window.payload)) == 1
    assert len(peptide_variants(entry, score_floor=0)) > len(variants)


def test_regulated_pass_sample_is_seeded():
    src = _source(length=400, kind='microbe-nontoxic')
    first = regulated_pass_sample(src, seed=3)
    assert first == regulated_pass_sample(src, seed=3)
    assert all(REGULATED_PASS in e.tags for e in first)
    forward = [e for e in first if e.window.origin.strand == 'fwd']
    offsets = [e.window.origin.offset for e in forward]
    assert all(39 <= b - a <= 45 for a, b in zip(offsets, offsets[1:]))
    assert len(first) == 2 * len(forward)


@pytest.mark.parametrize('seed', range(5))
def test_regulated_pass_sample_counts_forward_positions(seed):
    src = _source(length=420, seed=seed, kind='microbe-nontoxic')
    sample = regulated_pass_sample(src, seed=seed)
    forward = [e for e in sample if e.window.origin.strand == 'fwd']
    assert 9 <= len(forward) <= 10
    assert len(sample) == 2 * len(forward)
    assert {reverse_complement(e.window.payload) for e in forward} == \
        {e.window.payload for e in sample if e.window.origin.strand == 'rev'}
    assert regulated_pass_sample(_source(length=41, kind='microbe-nontoxic'), seed=seed) == []


def test_entropy_filter_drops_repeats_only_for_dna():
    origin = WindowOrigin('HZ1', 0)
    repeat = PlainEntry(Window('dna30', 'A' * 30, origin), 'HZ1', 'wild-type', frozenset({'US'}))
    varied = PlainEntry(Window('dna30', _dna(30, 4), origin), 'HZ1', 'wild-type', frozenset({'US'}))
    peptide = PlainEntry(Window('aa20', 'K' * 20, origin), 'HZ1', 'wild-type', frozenset({'US'}))
    assert entropy_filter([repeat, varied, peptide]) == [varied, peptide]


def _corpus(residues, description='plasmid', genus=None):
    return HarmlessCorpus.from_records([SequenceRecord(f"C1 {'genus=' + genus + ' ' if genus else ''}{description}",
                                                       residues)])


def test_curation_removes_windows_found_in_harmless_sequences():
    src = _source(length=120)
    entries = extract_hazard_windows(src)
    corpus = _corpus(src.residues[:40])
    kept = curate(entries, corpus, relatedness_threshold=100, keywords=[])
    # eleven forward windows and their eleven reverse complements
    assert len(entries) - len(kept) == 22
    assert all(e.window.payload not in src.residues[:40] for e in kept)


def test_curation_ignores_related_records():
    src = _source(length=120)
    entries = extract_hazard_windows(src)
    corpus = _corpus(src.residues[:40])
    assert curate(entries, corpus, relatedness_threshold=5, keywords=[]) == entries


def test_curation_counts_related_matches_across_window_kinds():
    residues = _dna(51, 6)
    tags = frozenset({'US'})
    entries = [PlainEntry(Window('dna30', residues[i:i + 30], WindowOrigin('HZ1', i)), 'HZ1', 'wild-type', tags)
               for i in range(15)]
    entries += [PlainEntry(Window('dna42', residues[i:i + 42], WindowOrigin('HZ1', i)), 'HZ1', 'wild-type', tags)
                for i in range(10)]
    corpus = _corpus(residues)
    # 15 + 10 matches exceed 20 even though neither kind does alone
    assert curate(entries, corpus, relatedness_threshold=20, keywords=[]) == entries
    assert curate(entries, corpus, relatedness_threshold=25, keywords=[]) == []


def test_curation_skips_keywords_and_same_genus():
    src = _source(length=120, genus='Clostridium')
    entries = extract_hazard_windows(src)
    engineered = _corpus(src.residues[:40], description='synthetic construct')
    assert curate(entries, engineered, relatedness_threshold=100, keywords=['synthetic construct']) == entries
    relative = _corpus(src.residues[:40], genus='Clostridium')
    assert curate(entries, relative, relatedness_threshold=100, keywords=[],
                  genera={'HZ1': 'Clostridium'}) == entries


def test_built_table_matches_client_hashes(keyserver_net):
    net = keyserver_net()
    src = _source(length=90)
    builder = DatabaseBuilder(net.client(), peptide_stride=10, verbose=False)
    table = builder.run([src], version=1)
    assert (table.key_id, table.epoch, table.version) == ('k0', 0, 1)

    window = next(e.window for e in extract_hazard_windows(src) if e.window.kind == 'dna42')
    digest = net.client().doprf_eval(window.hash_input()).data
    assert any(m.accession == 'HZ1' for m in table.lookup(digest))
    assert net.client().doprf_eval(b'dna30:' + b'A' * 30).data not in table


def test_common_sources_skip_variants(keyserver_net):
    net = keyserver_net()
    builder = DatabaseBuilder(net.client(), verbose=False)
    src = _source(length=90, kind='toxin-gene', common=True)
    assert builder.entries_for(src) == extract_hazard_windows(src)


def test_incremental_add_stopgap(keyserver_net):
    net = keyserver_net()
    table = DatabaseBuilder(net.client(), peptide_stride=10, verbose=False).run([_source(length=90)], version=1)
    emerging = _source(length=60, seed=9, accession='HZ2', kind='virus')
    updated = incremental_add(emerging, table, net.client())
    assert updated.version == 2
    added = [m for _, metadata in updated for m in metadata if m.accession == 'HZ2']
    assert added and all(STOPGAP in m.tags and m.kind == 'dna30' for m in added)


def test_incremental_add_under_old_key_is_stale(keyserver_net):
    net = keyserver_net()
    with pytest.raises(StaleKey):
        incremental_add(_source(length=60), HashedTable([], 1, 'retired', 0), net.client())


def test_retag_and_remove(keyserver_net):
    net = keyserver_net()
    sources = [_source(length=60), _source(length=60, seed=2, accession='HZ2', kind='virus', common=True)]
    table = DatabaseBuilder(net.client(), peptide_stride=10, verbose=False).run(sources, version=3)

    retagged = DatabaseBuilder.retag_hazard(table, 'HZ2', ['EU'])
    assert retagged.version == 4
    assert {m.tags for _, metadata in retagged for m in metadata if m.accession == 'HZ2'} == {('Common', 'EU')}

    removed = DatabaseBuilder.remove_hazard(table, 'HZ1')
    assert removed.accessions() == ['HZ2']


def test_entropy_filter_keeps_random_dna():
    rnd = random.Random(42)
    origin = WindowOrigin('R', 0)
    entries = [PlainEntry(Window('dna42', ''.join(rnd.choice('ACGT') for _ in range(42)), origin), 'R',
                          'wild-type', frozenset({'US'}))
               for _ in range(10_000)]
    assert len(entropy_filter(entries)) > 0.99 * len(entries)


def _storage_dna(length, seed):
    """Random payload written in a rotating code: each trit picks one of the three bases unlike the last."""
    rnd = random.Random(seed)
    previous, bases = 'A', []
    while len(bases) < length:
        choices = [b for b in 'ACGT' if b != previous]
        previous = choices[rnd.randrange(3)]
        bases.append(previous)
    return ''.join(bases)


@pytest.mark.slow
def test_random_and_storage_dna_never_match_hazards(keyserver_net):
    builder = DatabaseBuilder(keyserver_net().client(), peptide_stride=10, verbose=False)
    hazards = [_source(length=5000, seed=100 + i, accession=f'HZ{i}', kind='virus') for i in range(3)]
    keys = {entry.key for src in hazards for entry in builder.entries_for(src)}

    records = [SequenceRecord(f'rand{i}', _dna(10_000, 1000 + i)) for i in range(100)]
    records.append(SequenceRecord('storage', _storage_dna(100_000, 7)))
    hits = 0
    for record in records:
        for strand in (record, SequenceRecord(record.id, reverse_complement(record.residues))):
            hits += sum((w.kind, w.payload) in keys for w in query_windows(strand).windows)
    assert hits == 0
