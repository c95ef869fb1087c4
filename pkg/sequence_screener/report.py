"""
Screening reports and their JSON / text renderings.
"""
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

from .encoding import canonical_json

STRAND_SIGN = {'fwd': '+', 'rev': '-'}


@dataclass(frozen=True)
class MatchCoordinate:
    """Where in the order a hazard matched"""

    record_id: str
    offset: int
    strand: str
    frame: Optional[int]
    kind: str
    accession: str
    variant_kind: str
    permutation: Optional[int] = None
    tags: List[str] = field(default_factory=list)
    exempted: bool = False

    def sort_key(self):
        return (self.record_id, self.offset, self.strand, self.kind, self.accession, self.variant_kind)

    def to_text(self) -> str:
        line = f"{self.record_id}:{self.offset}{STRAND_SIGN.get(self.strand, '?')} {self.kind} {self.accession} {self.variant_kind}"
        if self.exempted:
            line += ' (exempted)'
        return line


@dataclass
class RecordVerdict:
    record_id: str
    decision: str
    window_count: int


@dataclass
class ScreeningReport:
    decision: str
    database_version: str
    window_count: int
    records: List[RecordVerdict] = field(default_factory=list)
    matches: List[MatchCoordinate] = field(default_factory=list)
    exemptions_applied: List[str] = field(default_factory=list)
    region_notes: Dict[str, List[str]] = field(default_factory=dict)
    receipt: Dict[str, Any] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['matches'] = [asdict(m) for m in sorted(self.matches, key=MatchCoordinate.sort_key)]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScreeningReport':
        return cls(
            decision=data['decision'],
            database_version=data['database_version'],
            window_count=int(data['window_count']),
            records=[RecordVerdict(**r) for r in data.get('records', [])],
            matches=[MatchCoordinate(**m) for m in data.get('matches', [])],
            exemptions_applied=list(data.get('exemptions_applied', [])),
            region_notes={k: list(v) for k, v in data.get('region_notes', {}).items()},
            receipt=dict(data.get('receipt', {})),
            timings=dict(data.get('timings', {})),
        )


def render_report(report: ScreeningReport, fmt: str = 'json') -> bytes:
    """
    Render a report.

    Args:
        report: Report to render
        fmt: 'json' (canonical, round-trips through ScreeningReport.from_dict) or 'text'
    """
    if fmt == 'json':
        return canonical_json(report.to_dict())
    if fmt != 'text':
        raise ValueError(f"Unknown report format: {fmt}")

    headline = f"{report.decision} ({report.window_count} windows, db {report.database_version})"
    if report.decision == 'accepted':
        return (headline + '\n').encode('utf-8')
    lines = [headline]
    for record in report.records:
        if record.decision != 'accepted':
            lines.append(f"  record {record.record_id}: {record.decision}")
    lines.extend(m.to_text() for m in sorted(report.matches, key=MatchCoordinate.sort_key))
    if report.exemptions_applied:
        lines.append(f"exemptions applied: {', '.join(report.exemptions_applied)}")
    for accession, regions in sorted(report.region_notes.items()):
        lines.append(f"note: {accession} is controlled in {', '.join(regions) if regions else 'no listed region'}")
    return ('\n'.join(lines) + '\n').encode('utf-8')
