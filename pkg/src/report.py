"""
Corpus-level tallies, beneficiary and temporal analyses, histograms and the
writers that turn them into summary.json / CSV files.
"""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import asdict
from datetime import date, datetime, timezone
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

import numpy as np
import pandas as pd

from detectors import screen_m0
from errors import InvalidInput
from types_ import (
    AgreementRecord,
    AgreementSummary,
    BeneficiaryRecord,
    Bin,
    CorpusSummary,
    CrossrefRecord,
    DetectionVerdict,
    M0Estimate,
    TemporalPair,
    TemporalSummary,
)

log = logging.getLogger(__name__)

NO_DOI = "(no-doi)"
CONTAINER_TYPES = ("journal", "journal-volume", "journal-issue")
# statuses for which no comparison between methods is possible
UNCOMPARABLE = ("no-references", "no-pdf", "error")

Lookup = Callable[[str], Optional[CrossrefRecord]]


def iso(dt: Optional[datetime]) -> Optional[str]:
    if dt is None:
        return None
    return _utc(dt).strftime("%Y-%m-%dT%H:%M:%SZ")


def _utc(dt: datetime) -> datetime:
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def _utc_day(dt: datetime) -> date:
    return _utc(dt).date()


# ---------- Tallies ----------
def tally_corpus(
    verdicts: Iterable[DetectionVerdict], method: Optional[str] = None
) -> CorpusSummary:
    """
    Totals for one detector. A DOI counts as flagged when its sneaked count
    is positive, so mean_sneaked * flagged == total_sneaked.
    """
    summary = CorpusSummary(method=method or "")
    counts: List[int] = []
    cases: Counter = Counter()
    for v in verdicts:
        if method is not None and v.method != method:
            continue
        summary.method = v.method
        summary.processed += 1
        if v.status == "no-references":
            summary.no_references += 1
        elif v.status == "no-pdf":
            summary.no_pdf += 1
        elif v.status == "no-extraction":
            summary.no_extraction += 1
        elif v.status == "error":
            summary.errors += 1
        if v.case:
            cases[v.case] += 1
        if v.case == "Case2" and v.cleaned_away > 0:
            summary.case2_cleaned += 1
        summary.cleaned_away += v.cleaned_away
        summary.backward_rescued += v.backward_rescued
        if v.n_ghost > 0:
            counts.append(v.n_ghost)

    summary.cases = dict(sorted(cases.items()))
    if counts:
        summary.flagged = len(counts)
        summary.total_sneaked = sum(counts)
        summary.min_sneaked = min(counts)
        summary.max_sneaked = max(counts)
        summary.mean_sneaked = summary.total_sneaked / summary.flagged
    return summary


def agreements_from_verdicts(
    verdicts: Iterable[DetectionVerdict], large_delta: int = 10
) -> List[AgreementRecord]:
    """Pair m1 and m2 verdicts of the same DOI, in first-seen DOI order."""
    by_doi: Dict[str, Dict[str, DetectionVerdict]] = {}
    for v in verdicts:
        if v.method in ("m1", "m2"):
            by_doi.setdefault(v.doi, {})[v.method] = v
    out = []
    for doi, pair in by_doi.items():
        m1, m2 = pair.get("m1"), pair.get("m2")
        if m1 is None or m2 is None:
            continue
        if m1.status in UNCOMPARABLE or m2.status in UNCOMPARABLE:
            continue
        n1, n2 = len(m1.ghost), len(m2.ghost)
        out.append(
            AgreementRecord(
                doi=doi,
                n_m1=n1,
                n_m2=n2,
                agreement=n1 == n2,
                delta=n2 - n1,
                large_disagreement=abs(n2 - n1) > large_delta,
            )
        )
    return out


def tally_agreement(records: Iterable[AgreementRecord]) -> AgreementSummary:
    s = AgreementSummary()
    for r in records:
        s.compared += 1
        if r.agreement:
            s.agreed += 1
        else:
            s.disagreed += 1
        if r.large_disagreement:
            s.large_disagreements += 1
        s.m1_total += r.n_m1
        s.m2_total += r.n_m2
    return s


# ---------- Beneficiaries ----------
def beneficiaries(
    verdicts: Iterable[DetectionVerdict],
    method: str = "m1",
    lookup: Optional[Lookup] = None,
) -> List[BeneficiaryRecord]:
    counts: Counter = Counter()
    for v in verdicts:
        if v.method != method:
            continue
        for g in v.ghost:
            counts[g.doi or NO_DOI] += 1

    out = []
    for doi, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        record = lookup(doi) if lookup and doi != NO_DOI else None
        cited_type = record.work_type if record else None
        out.append(
            BeneficiaryRecord(
                cited_doi=doi,
                undue_count=n,
                cited_created=record.created if record else None,
                cited_type=cited_type,
                container_level=cited_type in CONTAINER_TYPES,
            )
        )
    return out


# ---------- Temporal coherence ----------
GhostPair = Tuple[str, str, Optional[datetime], Optional[datetime]]


def ghost_pairs(
    verdicts: Iterable[DetectionVerdict],
    method: str = "m1",
    lookup: Optional[Lookup] = None,
) -> List[GhostPair]:
    """
    (citing doi, cited doi, citing created, cited created) per sneaked reference.
    References without a DOI get NO_DOI and no cited date, so they are counted
    as excluded by temporal_coherence.
    """
    pairs: List[GhostPair] = []
    for v in verdicts:
        if v.method != method:
            continue
        for g in v.ghost:
            if not g.doi:
                pairs.append((v.doi, NO_DOI, v.created, None))
                continue
            cited = lookup(g.doi) if lookup else None
            pairs.append((v.doi, g.doi, v.created, cited.created if cited else None))
    return pairs


def temporal_coherence(
    pairs: Iterable[GhostPair],
) -> Tuple[List[TemporalPair], TemporalSummary]:
    out: List[TemporalPair] = []
    summary = TemporalSummary()
    for citing_doi, cited_doi, citing, cited in pairs:
        if citing is None or cited is None:
            summary.excluded += 1
            continue
        delta = (_utc_day(citing) - _utc_day(cited)).days
        out.append(
            TemporalPair(
                citing_doi=citing_doi,
                cited_doi=cited_doi,
                citing_created=citing,
                cited_created=cited,
                delta_days=delta,
            )
        )

    if out:
        deltas = [p.delta_days for p in out]
        counts = Counter(deltas)
        top = max(counts.values())
        summary.count = len(deltas)
        summary.negative = sum(1 for d in deltas if d < 0)
        summary.min_days = min(deltas)
        summary.max_days = max(deltas)
        summary.median_days = float(np.median(deltas))
        summary.mode_days = min(d for d, n in counts.items() if n == top)
    if summary.negative:
        log.warning("%d sneaked references predate their cited work", summary.negative)
    return out, summary


def citing_timeline(verdicts: Iterable[DetectionVerdict]) -> List[Dict[str, Any]]:
    """Per citing creation day: DOIs with sneaked references and their count range."""
    days: Dict[date, List[int]] = defaultdict(list)
    for v in verdicts:
        if v.created is None or v.n_ghost <= 0:
            continue
        days[_utc_day(v.created)].append(v.n_ghost)
    return [
        {
            "day": d.isoformat(),
            "dois": len(ns),
            "min_sneaked": min(ns),
            "max_sneaked": max(ns),
            "total_sneaked": sum(ns),
        }
        for d, ns in sorted(days.items())
    ]


# ---------- Histograms ----------
def histogram(
    values: Sequence[float],
    bin_width: Optional[float] = None,
    bin_edges: Optional[Sequence[float]] = None,
) -> List[Bin]:
    """
    Bins [lower, upper) with inclusive lower edges. With `bin_width` the
    edges start at the multiple of the width at or below the minimum and
    cover every value; empty intermediate bins are kept.
    """
    if (bin_width is None) == (bin_edges is None):
        raise InvalidInput("give exactly one of bin_width and bin_edges")
    if bin_width is not None and bin_width <= 0:
        raise InvalidInput(f"bin width must be positive, got {bin_width}")
    if len(values) == 0:
        return []

    data = np.asarray(values, dtype=float)
    if bin_width is not None:
        lower = np.floor(data.min() / bin_width) * bin_width
        n = int(np.floor((data.max() - lower) / bin_width)) + 1
        edges = lower + bin_width * np.arange(n + 1)
    else:
        edges = np.asarray(bin_edges, dtype=float)
        if edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise InvalidInput("bin edges must be strictly increasing")

    idx = np.searchsorted(edges, data, side="right") - 1
    idx = idx[(idx >= 0) & (idx < edges.size - 1)]
    counts = np.bincount(idx, minlength=edges.size - 1)
    return [
        Bin(lower=float(edges[i]), upper=float(edges[i + 1]), count=int(counts[i]))
        for i in range(edges.size - 1)
    ]


# ---------- Writers ----------
def write_csv(path: Path, rows: List[Dict[str, Any]], columns: List[str]):
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, lineterminator="\n")


def write_json(path: Path, obj: Any):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_histogram(path: Path, bins: List[Bin]):
    write_csv(path, [asdict(b) for b in bins], ["lower", "upper", "count"])


def primary_method(verdicts: Sequence[DetectionVerdict]) -> Optional[str]:
    present = {v.method for v in verdicts}
    for m in ("m1", "m2", "m0"):
        if m in present:
            return m
    return None


def build_reports(
    verdicts: Sequence[DetectionVerdict],
    out_dir: Path,
    lookup: Optional[Lookup] = None,
    agreements: Optional[List[AgreementRecord]] = None,
    large_delta: int = 10,
    m0_band: Tuple[int, int] = (5, 500),
) -> Dict[str, Any]:
    """
    Write summary.json, beneficiaries.csv, temporal.csv, timeline.csv,
    agreement.csv and hist_*.csv to `out_dir`; return the summary object.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    methods = sorted({v.method for v in verdicts})
    main = primary_method(verdicts)
    if agreements is None:
        agreements = agreements_from_verdicts(verdicts, large_delta)

    summary: Dict[str, Any] = {
        "methods": {m: asdict(tally_corpus(verdicts, m)) for m in methods},
        "primary_method": main,
    }
    if "m0" in methods:
        estimates = [
            M0Estimate(v.n_registered, v.n_extracted or 0, v.estimate or 0, v.flagged)
            for v in verdicts
            if v.method == "m0" and v.status == "ok"
        ]
        summary["m0_screen"] = asdict(screen_m0(estimates, m0_band))
    if "m1" in methods and "m2" in methods:
        summary["agreement"] = asdict(tally_agreement(agreements))
    write_csv(
        out_dir / "agreement.csv",
        [asdict(a) for a in agreements],
        ["doi", "n_m1", "n_m2", "agreement", "delta", "large_disagreement"],
    )

    main_verdicts = [v for v in verdicts if v.method == main]
    benef = beneficiaries(main_verdicts, main or "", lookup)
    write_csv(
        out_dir / "beneficiaries.csv",
        [
            {
                "cited_doi": b.cited_doi,
                "undue_count": b.undue_count,
                "cited_created": iso(b.cited_created),
                "cited_type": b.cited_type,
                "container_level": b.container_level,
            }
            for b in benef
        ],
        ["cited_doi", "undue_count", "cited_created", "cited_type", "container_level"],
    )
    summary["beneficiaries"] = {
        "count": len(benef),
        "single_citation": sum(1 for b in benef if b.undue_count == 1),
        "container_level": sum(1 for b in benef if b.container_level),
    }

    pairs, temporal = temporal_coherence(ghost_pairs(main_verdicts, main or "", lookup))
    write_csv(
        out_dir / "temporal.csv",
        [
            {
                "citing_doi": p.citing_doi,
                "cited_doi": p.cited_doi,
                "citing_created": iso(p.citing_created),
                "cited_created": iso(p.cited_created),
                "delta_days": p.delta_days,
            }
            for p in pairs
        ],
        ["citing_doi", "cited_doi", "citing_created", "cited_created", "delta_days"],
    )
    summary["temporal"] = asdict(temporal)

    write_csv(
        out_dir / "timeline.csv",
        citing_timeline(main_verdicts),
        ["day", "dois", "min_sneaked", "max_sneaked", "total_sneaked"],
    )

    extracted = [v for v in main_verdicts if v.n_extracted is not None]
    hists = {
        "sneaked_per_doi": [v.n_ghost for v in main_verdicts if v.n_ghost > 0],
        "undue_per_beneficiary": [b.undue_count for b in benef],
        "delta_days": [p.delta_days for p in pairs],
        "registered_len": [v.n_registered for v in main_verdicts],
        "extracted_len": [v.n_extracted for v in extracted],
        "length_diff": [v.n_registered - v.n_extracted for v in extracted],
    }
    for name, values in hists.items():
        write_histogram(out_dir / f"hist_{name}.csv", histogram(values, bin_width=1))

    write_json(out_dir / "summary.json", summary)
    return summary
