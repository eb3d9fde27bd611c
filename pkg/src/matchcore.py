"""
String primitives used by the detectors: text normalization, the indel
similarity ratio, best-substring search and the reference equality predicate.
All functions are pure.
"""

from __future__ import annotations

import re
import unicodedata
from typing import Dict, List, Optional, Tuple, Union

from rapidfuzz import fuzz
from rapidfuzz.distance import Indel

from errors import InvalidInput, Undecidable
from types_ import ExtractedRef, ReferenceEntry

EXACT_SEARCH_LIMIT = 512

_WS_RE = re.compile(r"\s+")
_DOI_RE = re.compile(r"^10\.\d{4,9}/\S+$")
_DOI_URL_RE = re.compile(r"^(?:https?://)?(?:dx\.)?doi\.org/", re.IGNORECASE)
_DOI_LABEL_RE = re.compile(r"^doi:\s*", re.IGNORECASE)

# structured fields joined, in this order, when a reference has no unstructured text
SYNTH_FIELDS: Tuple[Tuple[str, ...], ...] = (
    ("author",),
    ("article-title", "volume-title", "series-title"),
    ("journal-title",),
    ("year",),
)


def normalize(text: str) -> str:
    # lowercasing can leave compatibility characters behind; fold to a fixed point
    for _ in range(4):
        folded = unicodedata.normalize("NFKC", text).lower()
        if folded == text:
            break
        text = folded
    return _WS_RE.sub(" ", text).strip()


def normalize_doi(raw: Optional[str]) -> Optional[str]:
    """Bare lowercase DOI, or None when `raw` is not DOI-shaped."""
    if not raw:
        return None
    s = _DOI_URL_RE.sub("", raw.strip())
    s = _DOI_LABEL_RE.sub("", s).strip().lower()
    return s if _DOI_RE.match(s) else None


def ratio(a: str, b: str) -> float:
    total = len(a) + len(b)
    if total == 0:
        return 100.0
    return 100.0 * (1.0 - Indel.distance(a, b) / total)


# ---------- best-substring search ----------
def _char_masks(needle: str) -> Dict[str, int]:
    masks: Dict[str, int] = {}
    for i, ch in enumerate(needle):
        masks[ch] = masks.get(ch, 0) | (1 << i)
    return masks


def _better(lcs: int, length: int, best_lcs: int, best_len: int, m: int) -> bool:
    # 2*lcs/(m+length) > 2*best_lcs/(m+best_len), in integers
    return lcs * (m + best_len) > best_lcs * (m + length)


def _exact_search(needle: str, haystack: str) -> Tuple[int, int]:
    """
    Span of the substring of `haystack` with the highest indel ratio to
    `needle`. Bit-parallel LCS is extended one character at a time from every
    start; window lengths that cannot beat the current best are cut.
    """
    m, n = len(needle), len(haystack)
    masks = _char_masks(needle)
    full = (1 << m) - 1
    best_lcs, best_len, best_span = 0, 1, (0, 0)

    for i in range(n):
        if haystack[i] not in masks:
            continue
        # with lcs <= m, a window longer than m*(m+best_len)/best_lcs - m loses
        if best_lcs:
            max_len = (m * (m + best_len)) // best_lcs - m
        else:
            max_len = n
        s = full
        for j in range(i, min(n, i + max_len)):
            mask = masks.get(haystack[j])
            if mask is None:
                continue
            u = s & mask
            s = ((s + u) | (s - u)) & full
            lcs = m - s.bit_count()
            length = j - i + 1
            if _better(lcs, length, best_lcs, best_len, m):
                best_lcs, best_len, best_span = lcs, length, (i, j + 1)
                if lcs == m and length == m:
                    return best_span
    return best_span


def partial_ratio(
    needle: str, haystack: str, exact_limit: int = EXACT_SEARCH_LIMIT
) -> Tuple[float, Tuple[int, int]]:
    """
    Highest ratio between `needle` and a substring of `haystack`, and the span
    of that substring. When the haystack is shorter than the needle the plain
    ratio of both strings is returned with the whole haystack as span.
    """
    if not needle:
        raise InvalidInput("needle must be non-empty")
    if len(haystack) < len(needle):
        return ratio(needle, haystack), (0, len(haystack))

    at = haystack.find(needle)
    if at >= 0:
        return 100.0, (at, at + len(needle))

    if len(haystack) <= exact_limit:
        start, end = _exact_search(needle, haystack)
        if end == start:
            return ratio(needle, haystack), (0, len(haystack))
        return ratio(needle, haystack[start:end]), (start, end)

    best = (ratio(needle, haystack), (0, len(haystack)))
    aligned = fuzz.partial_ratio_alignment(needle, haystack)
    if aligned is not None:
        start, end = aligned.dest_start, aligned.dest_end
        score = ratio(needle, haystack[start:end])
        if score > best[0]:
            best = (score, (start, end))
    return best


# ---------- references ----------
def text_of(entry: Union[ReferenceEntry, ExtractedRef]) -> str:
    """
    Comparable text of a reference: the unstructured string when registered,
    otherwise "author. title. container. year. doi" from the structured fields.
    """
    if isinstance(entry, ExtractedRef):
        return entry.raw
    if entry.unstructured and entry.unstructured.strip():
        return entry.unstructured
    parts: List[str] = []
    for names in SYNTH_FIELDS:
        for name in names:
            value = (entry.structured.get(name) or "").strip()
            if value:
                parts.append(value)
                break
    if entry.doi:
        parts.append(entry.doi)
    return ". ".join(parts)


def refs_equal(a: ReferenceEntry, b: ExtractedRef, theta_eq: float = 90.0) -> bool:
    if not 0 < theta_eq <= 100:
        raise InvalidInput(f"theta_eq out of range: {theta_eq}")
    if a.doi and b.doi and a.doi == b.doi:
        return True
    ta = normalize(text_of(a))
    tb = normalize(b.raw)
    if not ta or not tb:
        if a.doi and b.doi:
            return False
        raise Undecidable(f"nothing to compare at position {a.position}")
    return ratio(ta, tb) >= theta_eq


def doi_prefix(entry: Union[ReferenceEntry, ExtractedRef, str, None]) -> Optional[str]:
    doi = entry if isinstance(entry, str) or entry is None else entry.doi
    if not doi or "/" not in doi:
        return None
    return doi.split("/", 1)[0].lower()


def has_prefix(entry: Union[ReferenceEntry, ExtractedRef], prefix: str) -> bool:
    """
    True when the entry's DOI belongs to `prefix`. A bare registrant prefix
    ("10.38124") is compared to the DOI prefix; a longer stem
    ("10.38124/ijisrt") is a plain string prefix of the DOI, so it also covers
    suffixes such as "10.38124/ijisrt24apr651".
    """
    if not entry.doi:
        return False
    prefix = prefix.strip().lower().rstrip("/")
    if "/" in prefix:
        return entry.doi.startswith(prefix)
    return doi_prefix(entry) == prefix
