"""
Duplicate-reference analytics over registered metadata.

All counters live in one mergeable value, `DupAggregates`, so snapshot
batches can be aggregated independently and summed afterwards.
"""

from __future__ import annotations

import csv
import logging
import re
import unicodedata
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import (
    Any,
    Callable,
    Dict,
    Iterable,
    List,
    Optional,
    Sequence,
    Tuple,
)

import pandas as pd

from errors import InvalidInput
from ingest import stream_snapshot
from matchcore import normalize
from types_ import (
    AuthorJournalScore,
    BenefStats,
    CrossrefRecord,
    DupDocStats,
    SnapshotSummary,
)

log = logging.getLogger(__name__)

NO_JOURNAL = "(none)"
EXCLUDED_TYPES = ("book", "book-chapter")

_NON_ALNUM_RE = re.compile(r"[\W_]+")


def normalize_author(name: str) -> str:
    """'Dávid F. Hendry' -> 'david f hendry'"""
    decomposed = unicodedata.normalize("NFKD", name)
    stripped = "".join(c for c in decomposed if not unicodedata.combining(c))
    return _NON_ALNUM_RE.sub(" ", stripped.lower()).strip()


def journal_key(title: Optional[str]) -> str:
    key = normalize(title or "")
    return key or NO_JOURNAL


def _multiplicities(record: CrossrefRecord) -> Counter:
    return Counter(r.doi for r in record.references if r.doi)


def doc_dup_stats(record: CrossrefRecord) -> DupDocStats:
    mult = _multiplicities(record)
    dups = [n for n in mult.values() if n > 1]
    return DupDocStats(
        doi=record.doi,
        nbrefdup_plus=sum(n - 1 for n in dups),
        nbrefdup=len(dups),
    )


def s1_score(
    dup_to_author: int, dup_total: int, ref_to_author: int, ref_total: int
) -> Tuple[float, float, float]:
    """(s1a, s1b, s1); an empty denominator makes its share 0."""
    s1a = ref_to_author / ref_total if ref_total else 0.0
    s1b = dup_to_author / dup_total if dup_total else 0.0
    return s1a, s1b, (s1b - s1a) * dup_to_author


def _merge_authors(
    a: Dict[str, Tuple[str, ...]], b: Dict[str, Tuple[str, ...]]
) -> Dict[str, Tuple[str, ...]]:
    out = dict(a)
    for doi, names in b.items():
        # the same DOI in two batches: keep the smaller tuple so merge order is irrelevant
        out[doi] = min(out[doi], names) if doi in out else names
    return out


@dataclass
class DupAggregates:
    benef_plus: Counter = field(default_factory=Counter)
    benef: Counter = field(default_factory=Counter)
    doc_plus: Counter = field(default_factory=Counter)
    doc_dup: Counter = field(default_factory=Counter)
    journal_plus: Counter = field(default_factory=Counter)
    journal_dup: Counter = field(default_factory=Counter)
    # (journal, cited doi) -> citing documents / citing documents with a duplicate
    pair_refs: Counter = field(default_factory=Counter)
    pair_dups: Counter = field(default_factory=Counter)
    authors: Dict[str, Tuple[str, ...]] = field(default_factory=dict)
    totals: Counter = field(default_factory=Counter)

    # ---------- building ----------
    def add_record(
        self, record: CrossrefRecord, excluded_types: Sequence[str] = EXCLUDED_TYPES
    ):
        names = tuple(k for k in (normalize_author(a) for a in record.authors) if k)
        if names:
            known = self.authors.get(record.doi)
            self.authors[record.doi] = min(known, names) if known else names
        if record.work_type in excluded_types:
            self.totals["excluded_documents"] += 1
            return
        self.totals["documents"] += 1

        mult = _multiplicities(record)
        self.totals["entries"] += sum(mult.values())
        self.totals["entries_without_doi"] += sum(1 for r in record.references if not r.doi)
        self.totals["distinct"] += len(mult)

        journal = journal_key(record.container_title)
        plus = dup = 0
        for cited, n in mult.items():
            self.pair_refs[(journal, cited)] += 1
            if n > 1:
                plus += n - 1
                dup += 1
                self.benef_plus[cited] += n - 1
                self.benef[cited] += 1
                self.pair_dups[(journal, cited)] += 1
        self.totals["duplicated_refs"] += dup
        self.totals["surplus"] += plus
        if dup:
            self.doc_plus[record.doi] += plus
            self.doc_dup[record.doi] += dup
            self.journal_plus[journal] += plus
            self.journal_dup[journal] += 1

    # ---------- merging ----------
    def __add__(self, other: "DupAggregates") -> "DupAggregates":
        out = DupAggregates()
        out += self
        out += other
        return out

    def __iadd__(self, other: "DupAggregates") -> "DupAggregates":
        for f in fields(self):
            if f.name == "authors":
                self.authors = _merge_authors(self.authors, other.authors)
            else:
                getattr(self, f.name).update(getattr(other, f.name))
        return self

    # ---------- views ----------
    def benef_stats(self) -> Dict[str, BenefStats]:
        return {
            doi: BenefStats(cited_doi=doi, benef_plus=self.benef_plus[doi], benef=n)
            for doi, n in self.benef.items()
        }

    def doc_stats(self) -> Dict[str, DupDocStats]:
        return {
            doi: DupDocStats(doi=doi, nbrefdup_plus=self.doc_plus[doi], nbrefdup=n)
            for doi, n in self.doc_dup.items()
        }

    def journal_stats(self) -> Dict[str, Tuple[int, int]]:
        return {j: (self.journal_plus[j], n) for j, n in self.journal_dup.items()}

    def summary(self) -> SnapshotSummary:
        return SnapshotSummary(
            **{f.name: self.totals[f.name] for f in fields(SnapshotSummary)}
        )

    def author_scores(self, min_dup_refs: int = 20) -> List[AuthorJournalScore]:
        ref_total: Counter = Counter()
        dup_total: Counter = Counter()
        ref_to: Counter = Counter()
        dup_to: Counter = Counter()
        for (journal, cited), n in self.pair_refs.items():
            ref_total[journal] += n
            d = self.pair_dups[(journal, cited)]
            dup_total[journal] += d
            for author in set(self.authors.get(cited, ())):
                ref_to[(journal, author)] += n
                dup_to[(journal, author)] += d

        scores = []
        for (journal, author), refs in ref_to.items():
            if dup_total[journal] < min_dup_refs:
                continue
            dups = dup_to[(journal, author)]
            s1a, s1b, s1 = s1_score(dups, dup_total[journal], refs, ref_total[journal])
            scores.append(
                AuthorJournalScore(
                    journal=journal,
                    author=author,
                    dup_to_author=dups,
                    dup_total=dup_total[journal],
                    ref_to_author=refs,
                    ref_total=ref_total[journal],
                    s1a=s1a,
                    s1b=s1b,
                    s1=s1,
                )
            )
        scores.sort(key=lambda s: (-s.s1, s.journal, s.author))
        return scores


def accumulate(
    records: Iterable[CrossrefRecord], excluded_types: Sequence[str] = EXCLUDED_TYPES
) -> DupAggregates:
    agg = DupAggregates()
    for record in records:
        agg.add_record(record, excluded_types)
    return agg


def aggregate_benef(records: Iterable[CrossrefRecord]) -> Dict[str, BenefStats]:
    return accumulate(records).benef_stats()


def aggregate_journal(records: Iterable[CrossrefRecord]) -> Dict[str, Tuple[int, int]]:
    return accumulate(records).journal_stats()


def score_author_journal(
    records: Iterable[CrossrefRecord], min_dup_refs: int = 20
) -> List[AuthorJournalScore]:
    return accumulate(records).author_scores(min_dup_refs)


def snapshot_summary(records: Iterable[CrossrefRecord]) -> SnapshotSummary:
    return accumulate(records).summary()


def top_k(
    metric_map: Dict[str, Any], k: int, metric: Callable[[Any], Any] = lambda v: v
) -> List[Tuple[str, Any]]:
    """k largest entries by `metric`, ties by key ascending."""
    if k < 1:
        raise InvalidInput(f"k must be >= 1, got {k}")
    by_key = sorted(metric_map.items(), key=lambda kv: kv[0])
    # sort is stable under reverse=True, so equal metrics stay in key order
    return sorted(by_key, key=lambda kv: metric(kv[1]), reverse=True)[:k]


# ---------- sharded runs ----------
def _aggregate_file(path: str, excluded_types: Tuple[str, ...]) -> DupAggregates:
    return accumulate(stream_snapshot(Path(path)), excluded_types)


def aggregate_files(
    paths: Sequence[Path],
    jobs: int = 1,
    excluded_types: Sequence[str] = EXCLUDED_TYPES,
) -> DupAggregates:
    """One partial aggregate per batch file, summed in file order."""
    excluded = tuple(excluded_types)
    total = DupAggregates()
    if jobs <= 1:
        for p in paths:
            total += _aggregate_file(str(p), excluded)
        return total
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        names = [str(p) for p in paths]
        for part in pool.map(_aggregate_file, names, [excluded] * len(names)):
            total += part
    return total


# ---------- persistence ----------
_TSV = dict(sep="\t", header=False, index=False, lineterminator="\n", quoting=csv.QUOTE_NONE)

AGGREGATE_FILES = (
    "benef.tsv",
    "docs.tsv",
    "journals.tsv",
    "pairs.tsv",
    "authors.tsv",
    "summary.tsv",
)


def _write_tsv(path: Path, rows: List[Tuple]):
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    pd.DataFrame(sorted(rows)).to_csv(path, **_TSV)


def _read_tsv(path: Path) -> List[List[str]]:
    if not path.exists() or path.stat().st_size == 0:
        return []
    df = pd.read_csv(
        path,
        sep="\t",
        header=None,
        dtype=str,
        keep_default_na=False,
        quoting=csv.QUOTE_NONE,
    )
    return df.values.tolist()


def write_aggregates(agg: DupAggregates, out_dir: Path):
    """One sorted tab-separated file per metric."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_tsv(
        out_dir / "benef.tsv",
        [(d, agg.benef_plus[d], n) for d, n in agg.benef.items()],
    )
    _write_tsv(
        out_dir / "docs.tsv",
        [(d, agg.doc_plus[d], n) for d, n in agg.doc_dup.items()],
    )
    _write_tsv(
        out_dir / "journals.tsv",
        [(j, agg.journal_plus[j], n) for j, n in agg.journal_dup.items()],
    )
    _write_tsv(
        out_dir / "pairs.tsv",
        [(j, c, n, agg.pair_dups[(j, c)]) for (j, c), n in agg.pair_refs.items()],
    )
    _write_tsv(
        out_dir / "authors.tsv",
        [(d, "|".join(names)) for d, names in agg.authors.items()],
    )
    _write_tsv(out_dir / "summary.tsv", list(agg.totals.items()))


def read_aggregates(in_dir: Path) -> DupAggregates:
    in_dir = Path(in_dir)
    agg = DupAggregates()
    for doi, plus, n in _read_tsv(in_dir / "benef.tsv"):
        agg.benef_plus[doi] += int(plus)
        agg.benef[doi] += int(n)
    for doi, plus, n in _read_tsv(in_dir / "docs.tsv"):
        agg.doc_plus[doi] += int(plus)
        agg.doc_dup[doi] += int(n)
    for journal, plus, n in _read_tsv(in_dir / "journals.tsv"):
        agg.journal_plus[journal] += int(plus)
        agg.journal_dup[journal] += int(n)
    for journal, cited, n, d in _read_tsv(in_dir / "pairs.tsv"):
        agg.pair_refs[(journal, cited)] += int(n)
        if int(d):
            agg.pair_dups[(journal, cited)] += int(d)
    for doi, names in _read_tsv(in_dir / "authors.tsv"):
        agg.authors[doi] = tuple(names.split("|")) if names else ()
    for name, value in _read_tsv(in_dir / "summary.tsv"):
        agg.totals[name] += int(value)
    return agg


# ---------- leaderboards ----------
def write_leaderboards(
    agg: DupAggregates, out_dir: Path, top: int = 10, min_dup_refs: int = 20
) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}

    def emit(name: str, rows: List[Dict[str, Any]], columns: List[str]):
        path = out_dir / f"leaderboard_{name}.csv"
        pd.DataFrame(rows, columns=columns).to_csv(path, index=False, lineterminator="\n")
        paths[name] = path

    benef = top_k(agg.benef_stats(), top, lambda b: (b.benef_plus, b.benef))
    emit(
        "benef",
        [{"doi": d, "benef_plus": b.benef_plus, "benef": b.benef} for d, b in benef],
        ["doi", "benef_plus", "benef"],
    )
    docs = top_k(agg.doc_stats(), top, lambda s: (s.nbrefdup_plus, s.nbrefdup))
    emit(
        "docs",
        [
            {"doi": d, "nbrefdup_plus": s.nbrefdup_plus, "nbrefdup": s.nbrefdup}
            for d, s in docs
        ],
        ["doi", "nbrefdup_plus", "nbrefdup"],
    )
    journals = top_k(agg.journal_stats(), top)
    emit(
        "journals",
        [
            {
                "journal": j,
                "jourdup_plus": plus,
                "jourdup": n,
                "ratio": round(plus / n, 1) if n else 0.0,
            }
            for j, (plus, n) in journals
        ],
        ["journal", "jourdup_plus", "jourdup", "ratio"],
    )
    authors = agg.author_scores(min_dup_refs)[:top]
    emit(
        "authors",
        [
            {
                "journal": s.journal,
                "author": s.author,
                "dup_to_author": s.dup_to_author,
                "dup_total": s.dup_total,
                "ref_to_author": s.ref_to_author,
                "ref_total": s.ref_total,
                "s1a": round(s.s1a, 6),
                "s1b": round(s.s1b, 6),
                "s1": round(s.s1, 1),
            }
            for s in authors
        ],
        [
            "journal",
            "author",
            "dup_to_author",
            "dup_total",
            "ref_to_author",
            "ref_total",
            "s1a",
            "s1b",
            "s1",
        ],
    )
    log.info("Leaderboards written to %s", out_dir)
    return paths
