from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Dict, List, Optional, Tuple


# ---------- Registered metadata ----------
@dataclass
class ReferenceEntry:
    key: str
    doi: Optional[str]
    unstructured: Optional[str]
    structured: Dict[str, str]
    position: int


@dataclass
class CrossrefRecord:
    doi: str
    prefix: str
    work_type: str
    created: Optional[datetime]
    container_title: Optional[str]
    member_id: Optional[str]
    references: List[ReferenceEntry]
    authors: List[str] = field(default_factory=list)
    title: Optional[str] = None
    reference_count: Optional[int] = None


# ---------- Document side ----------
@dataclass
class ExtractedRef:
    raw: str
    doi: Optional[str]
    position: int


@dataclass
class FullText:
    text: str
    page_count: int
    extraction_warnings: List[str] = field(default_factory=list)


# ---------- Detection ----------
class Case(str, Enum):
    CASE1 = "Case1"
    CASE2 = "Case2"
    CASE3 = "Case3"
    NODATA = "NoData"


@dataclass
class M0Estimate:
    registered_count: int
    extracted_count: int
    estimate: int
    flagged: bool


@dataclass
class M0Screen:
    processed: int = 0
    flagged: int = 0
    in_band: int = 0
    max_excess: int = 0


@dataclass
class M1Verdict:
    case_id: Case
    ghost: List[ReferenceEntry]
    cleaned_away: int = 0
    warnings: List[str] = field(default_factory=list)
    # position of the registered entry equal to Last_G (Case 1 / Case 2)
    matched_position: Optional[int] = None
    backward_rescued: int = 0

    @property
    def case2_cleaned(self) -> bool:
        return self.case_id is Case.CASE2 and self.cleaned_away > 0


@dataclass
class EntryScore:
    position: int
    score: float
    span: Tuple[int, int]


@dataclass
class M2Verdict:
    ghost: List[ReferenceEntry]
    undecidable: List[ReferenceEntry]
    found: List[ReferenceEntry]
    scores: List[EntryScore]
    warnings: List[str] = field(default_factory=list)


@dataclass
class AgreementRecord:
    doi: str
    n_m1: int
    n_m2: int
    agreement: bool
    delta: int
    large_disagreement: bool


@dataclass
class GhostRef:
    position: int
    doi: Optional[str]
    snippet: str


@dataclass
class DetectionVerdict:
    """Serializable per-DOI outcome of one detection method."""

    doi: str
    method: str
    case: Optional[str]
    status: str
    n_registered: int
    n_extracted: Optional[int]
    ghost: List[GhostRef]
    undecidable_count: int = 0
    cleaned_away: int = 0
    backward_rescued: int = 0
    estimate: Optional[int] = None
    flagged: bool = False
    created: Optional[datetime] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def n_ghost(self) -> int:
        if self.method == "m0":
            return self.estimate or 0
        return len(self.ghost)


# ---------- Duplicate analytics ----------
@dataclass
class DupDocStats:
    doi: str
    nbrefdup_plus: int
    nbrefdup: int


@dataclass
class BenefStats:
    cited_doi: str
    benef_plus: int
    benef: int


@dataclass
class AuthorJournalScore:
    journal: str
    author: str
    dup_to_author: int
    dup_total: int
    ref_to_author: int
    ref_total: int
    s1a: float
    s1b: float
    s1: float


@dataclass
class SnapshotSummary:
    documents: int = 0
    excluded_documents: int = 0
    entries: int = 0
    entries_without_doi: int = 0
    distinct: int = 0
    duplicated_refs: int = 0
    surplus: int = 0

    @property
    def derived_distinct(self) -> int:
        return self.entries - self.surplus

    @property
    def avg_duplicates(self) -> float:
        return self.surplus / self.duplicated_refs if self.duplicated_refs else 0.0

    @property
    def duplicate_entry_share(self) -> float:
        return self.surplus / self.entries if self.entries else 0.0

    @property
    def duplicated_share(self) -> float:
        return self.duplicated_refs / self.entries if self.entries else 0.0


# ---------- Reporting ----------
@dataclass
class BeneficiaryRecord:
    cited_doi: str
    undue_count: int
    cited_created: Optional[datetime] = None
    cited_type: Optional[str] = None
    container_level: bool = False


@dataclass
class TemporalPair:
    citing_doi: str
    cited_doi: str
    citing_created: datetime
    cited_created: datetime
    delta_days: int


@dataclass
class TemporalSummary:
    count: int = 0
    excluded: int = 0
    negative: int = 0
    min_days: Optional[int] = None
    max_days: Optional[int] = None
    median_days: Optional[float] = None
    mode_days: Optional[int] = None


@dataclass
class CorpusSummary:
    method: str
    processed: int = 0
    no_references: int = 0
    no_pdf: int = 0
    no_extraction: int = 0
    errors: int = 0
    flagged: int = 0
    total_sneaked: int = 0
    min_sneaked: int = 0
    max_sneaked: int = 0
    mean_sneaked: float = 0.0
    cases: Dict[str, int] = field(default_factory=dict)
    case2_cleaned: int = 0
    cleaned_away: int = 0
    backward_rescued: int = 0


@dataclass
class AgreementSummary:
    compared: int = 0
    agreed: int = 0
    disagreed: int = 0
    large_disagreements: int = 0
    m1_total: int = 0
    m2_total: int = 0


@dataclass
class Bin:
    lower: float
    upper: float
    count: int
