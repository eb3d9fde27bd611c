from __future__ import annotations

import io
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import requests
from lxml import etree
from pypdf import PdfReader
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from config import ServiceConfig
from errors import ExtractionServiceError, MalformedTei, UnreadablePdf
from ingest import atomic_write, encode_doi
from matchcore import normalize_doi
from types_ import ExtractedRef, FullText

log = logging.getLogger(__name__)

_WS_RE = re.compile(r"\s+")
_EOL_HYPHEN_RE = re.compile(r"(\w)-[ \t]*\r?\n\s*(\w)")


# ---------- Text normalization ----------
def normalize_text(text: str) -> str:
    """
    Soft hyphens dropped, end-of-line hyphenation joined ("exam-\\nple" ->
    "example"), whitespace runs collapsed. Fixed point on its own output.
    """
    text = text.replace("\u00ad", "")
    text = _EOL_HYPHEN_RE.sub(r"\1\2", text)
    return _WS_RE.sub(" ", text).strip()


# ---------- Grobid / TEI ----------
def _local(tag) -> str:
    return etree.QName(tag).localname if isinstance(tag, str) else ""


def _flatten(el) -> str:
    return _WS_RE.sub(" ", " ".join(t for t in el.itertext())).strip()


def _bibl_entry(bibl) -> Tuple[str, Optional[str]]:
    raw_note = None
    doi = None
    for child in bibl.iter():
        name = _local(child.tag)
        if name == "note" and child.get("type") == "raw_reference":
            raw_note = _flatten(child)
        elif name == "idno" and (child.get("type") or "").upper() == "DOI":
            doi = doi or normalize_doi(_flatten(child))
    return raw_note or _flatten(bibl), doi


def parse_tei(tei: str | bytes) -> List[ExtractedRef]:
    """
    Bibliographic entries of a TEI document (full-text or references-only
    response), in document order, each flattened to one line.
    """
    data = tei.encode("utf-8") if isinstance(tei, str) else tei
    parser = etree.XMLParser(resolve_entities=False, no_network=True, huge_tree=True)
    try:
        root = etree.fromstring(data, parser=parser)
    except etree.XMLSyntaxError as e:
        raise MalformedTei(str(e)) from e
    if root is None:
        raise MalformedTei("empty document")

    refs: List[ExtractedRef] = []
    for bibl in root.xpath("//*[local-name()='listBibl']/*[local-name()='biblStruct']"):
        raw, doi = _bibl_entry(bibl)
        if not raw:
            raw = doi or ""
        if not raw:
            continue
        refs.append(ExtractedRef(raw=raw, doi=doi, position=len(refs)))
    return refs


def make_session(service_config: ServiceConfig) -> requests.Session:
    session = requests.Session()
    retries = Retry(
        total=service_config.retries,
        backoff_factor=2,
        status_forcelist=[500, 502, 503, 504],
        allowed_methods=None,
    )
    adapter = HTTPAdapter(
        max_retries=retries,
        pool_connections=service_config.pool_size,
        pool_maxsize=service_config.pool_size,
    )
    session.mount("http://", adapter)
    session.mount("https://", adapter)
    return session


def request_tei(
    pdf_bytes: bytes,
    service_config: ServiceConfig = ServiceConfig(),
    session: Optional[requests.Session] = None,
) -> str:
    if not pdf_bytes:
        raise ExtractionServiceError("empty PDF")
    session = session or make_session(service_config)
    url = service_config.url.rstrip("/") + service_config.path
    try:
        resp = session.post(
            url,
            files={"input": ("document.pdf", pdf_bytes, "application/pdf")},
            data={"consolidateCitations": "0", "includeRawCitations": "1"},
            timeout=service_config.timeout,
        )
    except requests.RequestException as e:
        raise ExtractionServiceError(f"service unreachable: {e}") from e
    if not 200 <= resp.status_code < 300:
        raise ExtractionServiceError(f"service answered HTTP {resp.status_code}")
    return resp.text


def extract_structured_refs(
    pdf_bytes: bytes,
    service_config: ServiceConfig = ServiceConfig(),
    session: Optional[requests.Session] = None,
) -> List[ExtractedRef]:
    return parse_tei(request_tei(pdf_bytes, service_config, session))


def service_version(
    service_config: ServiceConfig, session: Optional[requests.Session] = None
) -> Optional[str]:
    session = session or requests.Session()
    try:
        resp = session.get(service_config.url.rstrip("/") + "/api/version", timeout=10)
        if 200 <= resp.status_code < 300:
            return resp.text.strip() or None
    except requests.RequestException:
        pass
    return None


# ---------- Full text ----------
def extract_fulltext(pdf_bytes: bytes) -> FullText:
    try:
        reader = PdfReader(io.BytesIO(pdf_bytes))
        if reader.is_encrypted:
            # many publisher PDFs are "encrypted" with an empty user password
            if not reader.decrypt(""):
                raise UnreadablePdf("encrypted PDF")
        pages = reader.pages
        page_count = len(pages)
    except UnreadablePdf:
        raise
    except Exception as e:
        raise UnreadablePdf(f"{type(e).__name__}: {e}") from e
    if page_count == 0:
        raise UnreadablePdf("PDF has no pages")

    texts: List[str] = []
    warnings: List[str] = []
    for i in range(page_count):
        try:
            texts.append(pages[i].extract_text() or "")
        except Exception as e:
            warnings.append(f"page {i + 1}: {type(e).__name__}: {e}")
    return FullText(
        text=normalize_text("\n".join(texts)),
        page_count=page_count,
        extraction_warnings=warnings,
    )


# ---------- Corpus cache ----------
@dataclass
class ExtractStats:
    cache_hits: int = 0
    tei_extracted: int = 0
    text_extracted: int = 0
    no_pdf: int = 0
    tei_failed: int = 0
    text_failed: int = 0
    cache_write_failed: int = 0


class Corpus:
    """
    corpus/pdf/<enc-doi>.pdf, corpus/tei/<enc-doi>.tei.xml,
    corpus/txt/<enc-doi>.txt, corpus/meta/<enc-doi>.json
    """

    def __init__(self, root: Path):
        self.root = Path(root)

    def pdf(self, doi: str) -> Path:
        return self.root / "pdf" / f"{encode_doi(doi)}.pdf"

    def tei(self, doi: str) -> Path:
        return self.root / "tei" / f"{encode_doi(doi)}.tei.xml"

    def txt(self, doi: str) -> Path:
        return self.root / "txt" / f"{encode_doi(doi)}.txt"

    def meta(self, doi: str) -> Path:
        return self.root / "meta" / f"{encode_doi(doi)}.json"

    def read_meta(self, doi: str) -> dict:
        p = self.meta(doi)
        if not p.exists():
            return {}
        try:
            return json.loads(p.read_text(encoding="utf-8"))
        except (OSError, ValueError):
            return {}

    def load_text(self, doi: str) -> Optional[FullText]:
        p = self.txt(doi)
        if not p.exists():
            return None
        meta = self.read_meta(doi)
        return FullText(
            text=p.read_text(encoding="utf-8"),
            page_count=int(meta.get("page_count") or 1),
            extraction_warnings=list(meta.get("extraction_warnings") or []),
        )

    def load_tei(self, doi: str) -> Optional[List[ExtractedRef]]:
        p = self.tei(doi)
        if not p.exists():
            return None
        return parse_tei(p.read_bytes())


def _write(path: Path, data: bytes, stats: ExtractStats) -> None:
    try:
        atomic_write(path, data)
    except OSError as e:
        stats.cache_write_failed += 1
        log.warning("cannot write cache file %s: %s", path, e)


def load_or_extract(
    doi: str,
    corpus_dir: Path,
    service_config: ServiceConfig = ServiceConfig(),
    session: Optional[requests.Session] = None,
    stats: Optional[ExtractStats] = None,
    version: Union[str, Callable[[], Optional[str]], None] = None,
) -> Tuple[Optional[List[ExtractedRef]], Optional[FullText]]:
    """
    Extracted reference list and full text of one DOI. Cached artifacts are
    used when present; extractors run only for what is missing and their output
    is written back. A DOI without cache and without PDF gives (None, None).

    `version` is the service version or a callable producing it; it is only
    resolved after the service has produced a TEI.
    """
    stats = stats if stats is not None else ExtractStats()
    corpus = Corpus(corpus_dir)
    if not corpus.root.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {corpus.root}")

    refs: Optional[List[ExtractedRef]] = None
    tei_cached = corpus.tei(doi).exists()
    if tei_cached:
        try:
            refs = corpus.load_tei(doi)
        except MalformedTei as e:
            log.warning("%s: cached TEI unreadable (%s), extracting again", doi, e)
            tei_cached = False
    fulltext = corpus.load_text(doi)
    if tei_cached and fulltext is not None:
        stats.cache_hits += 1
        return refs, fulltext

    pdf_path = corpus.pdf(doi)
    if not pdf_path.exists():
        if not tei_cached and fulltext is None:
            stats.no_pdf += 1
        return refs, fulltext
    pdf_bytes = pdf_path.read_bytes()
    meta = corpus.read_meta(doi)

    if not tei_cached:
        try:
            tei = request_tei(pdf_bytes, service_config, session)
            refs = parse_tei(tei)
            stats.tei_extracted += 1
            _write(corpus.tei(doi), tei.encode("utf-8"), stats)
            if callable(version):
                version = version()
            if version:
                meta["service_version"] = version
        except (ExtractionServiceError, MalformedTei) as e:
            stats.tei_failed += 1
            log.warning("%s: reference extraction failed: %s", doi, e)

    if fulltext is None:
        try:
            fulltext = extract_fulltext(pdf_bytes)
            stats.text_extracted += 1
            _write(corpus.txt(doi), fulltext.text.encode("utf-8"), stats)
            meta["page_count"] = fulltext.page_count
            meta["extraction_warnings"] = fulltext.extraction_warnings
        except UnreadablePdf as e:
            stats.text_failed += 1
            log.warning("%s: text extraction failed: %s", doi, e)

    if meta:
        _write(
            corpus.meta(doi),
            json.dumps(meta, sort_keys=True, indent=2).encode("utf-8"),
            stats,
        )
    return refs, fulltext
