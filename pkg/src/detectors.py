"""
Sneaked-reference detection for one document.

m0  compares the lengths of the registered and extracted reference lists.
m1  aligns the last extracted reference with the registered list.
m2  looks every registered reference up in the document text.
"""

from __future__ import annotations

import logging
from collections import Counter
from datetime import datetime
from typing import Iterable, List, Optional, Sequence, Tuple

from config import DetectConfig
from errors import InvalidInput, Undecidable
from matchcore import doi_prefix, has_prefix, normalize, partial_ratio, refs_equal, text_of
from types_ import (
    AgreementRecord,
    Case,
    CrossrefRecord,
    DetectionVerdict,
    EntryScore,
    ExtractedRef,
    FullText,
    GhostRef,
    M0Estimate,
    M0Screen,
    M1Verdict,
    M2Verdict,
    ReferenceEntry,
)

log = logging.getLogger(__name__)

SNIPPET_LEN = 80


# ---------- M0 ----------
def m0_estimate(r_c: Sequence, r_g: Sequence, factor: float = 0.95) -> M0Estimate:
    n_c, n_g = len(r_c), len(r_g)
    return M0Estimate(
        registered_count=n_c,
        extracted_count=n_g,
        estimate=max(0, n_c - n_g),
        flagged=n_c > 0 and n_g < factor * n_c,
    )


def screen_m0(
    estimates: Iterable[M0Estimate], band: Tuple[int, int] = (5, 500)
) -> M0Screen:
    """Length-comparison screening over many documents."""
    out = M0Screen()
    for e in estimates:
        out.processed += 1
        if not e.flagged:
            continue
        out.flagged += 1
        if band[0] <= e.estimate <= band[1]:
            out.in_band += 1
        out.max_excess = max(out.max_excess, e.estimate)
    return out


# ---------- M1 ----------
def _equal(entry: ReferenceEntry, last_g: ExtractedRef, theta_eq: float) -> bool:
    try:
        return refs_equal(entry, last_g, theta_eq)
    except Undecidable:
        return False


def infer_benefit_prefix(
    r_c: Sequence[ReferenceEntry], r_g: Sequence[ExtractedRef], theta_eq: float = 90.0
) -> Optional[str]:
    """
    Heuristic: most common DOI prefix among the registered entries that follow
    the last one matching any extracted reference. Ties go to the smaller prefix.
    """
    last_match = -1
    for i in range(len(r_c) - 1, -1, -1):
        if any(_equal(r_c[i], g, theta_eq) for g in r_g):
            last_match = i
            break
    counts = Counter(p for p in (doi_prefix(e) for e in r_c[last_match + 1 :]) if p)
    if not counts:
        return None
    top = max(counts.values())
    return min(p for p, n in counts.items() if n == top)


def m1_classify(
    r_c: Sequence[ReferenceEntry],
    r_g: Sequence[ExtractedRef],
    benefit_prefix: str,
    theta_eq: float = 90.0,
) -> M1Verdict:
    if not benefit_prefix:
        raise InvalidInput("benefit_prefix is required")
    if not r_c or not r_g:
        return M1Verdict(case_id=Case.NODATA, ghost=[])

    last_g = r_g[-1]
    n = len(r_c)
    if _equal(r_c[-1], last_g, theta_eq):
        return M1Verdict(case_id=Case.CASE1, ghost=[], matched_position=r_c[-1].position)

    # greatest position wins when several registered entries equal Last_G
    match = next((i for i in range(n - 2, -1, -1) if _equal(r_c[i], last_g, theta_eq)), None)
    if match is not None:
        candidates = list(r_c[match + 1 :])
        cut = next(
            (k for k, e in enumerate(candidates) if has_prefix(e, benefit_prefix)),
            len(candidates),
        )
        return M1Verdict(
            case_id=Case.CASE2,
            ghost=candidates[cut:],
            cleaned_away=cut,
            matched_position=r_c[match].position,
        )

    # backward check
    k = n
    while k > 0 and has_prefix(r_c[k - 1], benefit_prefix):
        k -= 1
    ghost = list(r_c[k:])
    warnings = ["all-prefix list"] if k == 0 else []
    return M1Verdict(
        case_id=Case.CASE3,
        ghost=ghost,
        warnings=warnings,
        backward_rescued=len(ghost),
    )


# ---------- M2 ----------
def m2_detect(
    r_c: Sequence[ReferenceEntry],
    fulltext: FullText,
    theta: float = 60.0,
    min_needle: int = 30,
    exact_limit: int = 512,
) -> M2Verdict:
    verdict = M2Verdict(ghost=[], undecidable=[], found=[], scores=[])
    if not r_c:
        return verdict
    haystack = normalize(fulltext.text)
    if not haystack:
        verdict.undecidable.extend(r_c)
        verdict.warnings.append("empty full text")
        return verdict

    for entry in r_c:
        needle = normalize(text_of(entry))
        if len(needle) < min_needle:
            verdict.undecidable.append(entry)
            continue
        try:
            score, span = partial_ratio(needle, haystack, exact_limit=exact_limit)
        except Exception as e:
            verdict.undecidable.append(entry)
            verdict.warnings.append(f"position {entry.position}: {e}")
            continue
        verdict.scores.append(EntryScore(position=entry.position, score=score, span=span))
        if score < theta:
            verdict.ghost.append(entry)
        else:
            verdict.found.append(entry)
    return verdict


# ---------- Agreement ----------
def compare_verdicts(
    m1: M1Verdict, m2: M2Verdict, doi: str = "", large_delta: int = 10
) -> AgreementRecord:
    n1, n2 = len(m1.ghost), len(m2.ghost)
    delta = n2 - n1
    return AgreementRecord(
        doi=doi,
        n_m1=n1,
        n_m2=n2,
        agreement=n1 == n2,
        delta=delta,
        large_disagreement=abs(delta) > large_delta,
    )


# ---------- Per-document driver ----------
def _ghost_refs(entries: Iterable[ReferenceEntry]) -> List[GhostRef]:
    return [
        GhostRef(
            position=e.position,
            doi=e.doi,
            snippet=normalize(text_of(e))[:SNIPPET_LEN],
        )
        for e in entries
    ]


def _verdict(
    record: CrossrefRecord,
    method: str,
    status: str,
    n_extracted: Optional[int],
    created: Optional[datetime],
    **fields,
) -> DetectionVerdict:
    return DetectionVerdict(
        doi=record.doi,
        method=method,
        status=status,
        n_registered=len(record.references),
        n_extracted=n_extracted,
        created=created,
        case=fields.pop("case", None),
        ghost=fields.pop("ghost", []),
        **fields,
    )


def detect_document(
    record: CrossrefRecord,
    refs: Optional[List[ExtractedRef]],
    fulltext: Optional[FullText],
    methods: Sequence[str],
    cfg: DetectConfig = DetectConfig(),
    has_pdf: bool = True,
) -> Tuple[List[DetectionVerdict], Optional[AgreementRecord]]:
    """
    Run the requested methods on one document. `refs` / `fulltext` are None
    when the corresponding extraction is unavailable; `has_pdf` tells a missing
    PDF ("no-pdf") apart from a PDF the extractors failed on ("no-extraction").
    """
    r_c = record.references
    n_g = len(refs) if refs is not None else None
    missing = "no-extraction" if has_pdf else "no-pdf"
    verdicts: List[DetectionVerdict] = []
    m1v: Optional[M1Verdict] = None
    m2v: Optional[M2Verdict] = None

    for method in methods:
        if not r_c:
            verdicts.append(_verdict(record, method, "no-references", n_g, record.created))
            continue

        if method == "m0":
            if refs is None:
                verdicts.append(_verdict(record, method, missing, n_g, record.created))
                continue
            est = m0_estimate(r_c, refs, cfg.m0_factor)
            verdicts.append(
                _verdict(
                    record,
                    method,
                    "ok",
                    n_g,
                    record.created,
                    estimate=est.estimate,
                    flagged=est.flagged,
                )
            )

        elif method == "m1":
            if refs is None:
                verdicts.append(_verdict(record, method, missing, n_g, record.created))
                continue
            prefix = cfg.benefit_prefix
            warnings: List[str] = []
            if not prefix and cfg.infer_prefix:
                prefix = infer_benefit_prefix(r_c, refs, cfg.theta_eq)
                if prefix:
                    warnings.append(f"inferred benefit prefix {prefix}")
            if not prefix:
                m1v = M1Verdict(
                    case_id=Case.NODATA, ghost=[], warnings=["no benefit prefix"]
                )
            else:
                m1v = m1_classify(r_c, refs, prefix, cfg.theta_eq)
            status = "ok" if refs else "no-extraction"
            verdicts.append(
                _verdict(
                    record,
                    method,
                    status,
                    n_g,
                    record.created,
                    case=m1v.case_id.value,
                    ghost=_ghost_refs(m1v.ghost),
                    cleaned_away=m1v.cleaned_away,
                    backward_rescued=m1v.backward_rescued,
                    flagged=bool(m1v.ghost),
                    warnings=warnings + m1v.warnings,
                )
            )

        elif method == "m2":
            if fulltext is None or not fulltext.text:
                if fulltext is not None:
                    m2v = M2Verdict(ghost=[], undecidable=list(r_c), found=[], scores=[])
                verdicts.append(_verdict(record, method, missing, n_g, record.created))
                continue
            m2v = m2_detect(r_c, fulltext, cfg.theta, cfg.min_needle, cfg.exact_limit)
            verdicts.append(
                _verdict(
                    record,
                    method,
                    "ok",
                    n_g,
                    record.created,
                    ghost=_ghost_refs(m2v.ghost),
                    undecidable_count=len(m2v.undecidable),
                    flagged=bool(m2v.ghost),
                    warnings=list(m2v.warnings),
                )
            )
        else:
            raise InvalidInput(f"unknown detector: {method}")

    agreement = None
    if r_c and "m1" in methods and "m2" in methods and has_pdf:
        agreement = compare_verdicts(
            m1v or M1Verdict(case_id=Case.NODATA, ghost=[]),
            m2v or M2Verdict(ghost=[], undecidable=[], found=[], scores=[]),
            doi=record.doi,
            large_delta=cfg.large_delta,
        )
    summary = ", ".join(f"{v.method}={v.status}/{v.n_ghost}" for v in verdicts)
    log.debug("%s: %s", record.doi, summary)
    return verdicts, agreement
