"""
Variant generators for hazard entries.
Scorers are pluggable so other substitution predictors can replace BLOSUM62.
"""
from pathlib import Path
from typing import Dict, List, Protocol, Type

from Bio.Align import substitution_matrices

from .config import Config

AMINO_ACIDS = 'ACDEFGHIKLMNPQRSTVWY'
BASES = 'ACGT'


class VariantScorer(Protocol):
    """Protocol for amino-acid substitution scorers"""

    def score(self, original: str, replacement: str) -> float:
        """Score for replacing one residue with another"""
        ...


class SubstitutionMatrixScorer:
    """Scores substitutions from a published substitution matrix"""

    def __init__(self, matrix: str = None):
        matrix = matrix or Config.MATRIX
        if Path(matrix).is_file():
            self.matrix = substitution_matrices.read(matrix)
        else:
            self.matrix = substitution_matrices.load(matrix)
        self.name = matrix

    def score(self, original: str, replacement: str) -> float:
        try:
            return float(self.matrix[original][replacement])
        except (KeyError, IndexError):
            return float('-inf')


class ScorerFactory:
    """Factory for creating variant scorers by name"""

    SCORERS: Dict[str, Type] = {
        'blosum62': SubstitutionMatrixScorer,
    }

    @classmethod
    def get(cls, name: str = 'blosum62') -> VariantScorer:
        key = name.lower()
        if key in cls.SCORERS:
            return cls.SCORERS[key]()
        # Any other name is taken as a matrix name or file
        return SubstitutionMatrixScorer(name)

    @classmethod
    def register_scorer(cls, name: str, scorer_class: Type):
        """Register a new scorer"""
        cls.SCORERS[name.lower()] = scorer_class


def dna_point_mutants(payload: str) -> List[str]:
    """Every single-base substitution, position-major, bases in ACGT order."""
    mutants = []
    for position, base in enumerate(payload):
        for replacement in BASES:
            if replacement != base:
                mutants.append(payload[:position] + replacement + payload[position + 1:])
    return mutants


def peptide_substitutions(peptide: str, score_floor: float, scorer: VariantScorer) -> List[str]:
    """Single-residue substitutions scoring at least score_floor; identity excluded."""
    variants = []
    for position, residue in enumerate(peptide):
        if residue not in AMINO_ACIDS:
            continue
        for replacement in AMINO_ACIDS:
            if replacement != residue and scorer.score(residue, replacement) >= score_floor:
                variants.append(peptide[:position] + replacement + peptide[position + 1:])
    return variants
