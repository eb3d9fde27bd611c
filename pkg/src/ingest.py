from __future__ import annotations

import gzip
import json
import logging
import os
import tarfile
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Tuple, Union
from urllib.parse import quote, unquote

import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from config import EndpointConfig
from errors import NotRegistered, ParseError, TransportError
from matchcore import normalize_doi
from types_ import CrossrefRecord, ReferenceEntry

log = logging.getLogger(__name__)

# reference keys that are not bibliographic fields
_NON_FIELDS = {"key", "DOI", "unstructured", "doi-asserted-by"}
RETRY_STATUS = {429, 500, 502, 503, 504}
CITED = "cited"


# ---------- Parsing ----------
def _first(value: Any) -> Optional[str]:
    if isinstance(value, list):
        value = value[0] if value else None
    if value is None:
        return None
    value = str(value).strip()
    return value or None


def _parse_created(msg: Dict[str, Any]) -> Optional[datetime]:
    created = msg.get("created")
    stamp = created.get("date-time") if isinstance(created, dict) else None
    if not stamp:
        return None
    try:
        dt = datetime.fromisoformat(str(stamp).replace("Z", "+00:00"))
    except ValueError:
        log.warning("unparseable creation date %r for %s", stamp, msg.get("DOI"))
        return None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def _parse_reference(raw: Any, position: int) -> ReferenceEntry:
    if not isinstance(raw, dict):
        raw = {"unstructured": str(raw)}
    structured: Dict[str, str] = {}
    for name, value in raw.items():
        if name in _NON_FIELDS or value is None:
            continue
        structured[name] = _first(value) or ""
    structured = {k: v for k, v in structured.items() if v}

    doi = None
    if raw.get("DOI"):
        doi = normalize_doi(str(raw["DOI"]))
        if doi is None:
            structured["doi-raw"] = str(raw["DOI"])
    unstructured = raw.get("unstructured")
    unstructured = str(unstructured) if unstructured and str(unstructured).strip() else None
    return ReferenceEntry(
        key=str(raw.get("key") or f"ref{position}"),
        doi=doi,
        unstructured=unstructured,
        structured=structured,
        position=position,
    )


def _author_name(author: Dict[str, Any]) -> Optional[str]:
    if author.get("name"):
        return str(author["name"]).strip() or None
    name = f"{author.get('given') or ''} {author.get('family') or ''}".strip()
    return name or None


def parse_message(msg: Dict[str, Any]) -> CrossrefRecord:
    """Build a CrossrefRecord from one work message (API `message` or snapshot item)."""
    if not isinstance(msg, dict):
        raise ParseError("work message is not an object")
    if "message" in msg and isinstance(msg["message"], dict):
        msg = msg["message"]
    doi = normalize_doi(str(msg.get("DOI") or ""))
    if not doi:
        raise ParseError(f"missing or invalid DOI: {msg.get('DOI')!r}")

    refs_raw = msg.get("reference") or []
    if not isinstance(refs_raw, list):
        raise ParseError(f"{doi}: reference is not an array")
    references = [_parse_reference(r, i) for i, r in enumerate(refs_raw)]

    authors = []
    for a in msg.get("author") or []:
        if isinstance(a, dict):
            name = _author_name(a)
            if name:
                authors.append(name)

    ref_count = msg.get("reference-count")
    return CrossrefRecord(
        doi=doi,
        prefix=doi.split("/", 1)[0],
        work_type=str(msg.get("type") or "unknown"),
        created=_parse_created(msg),
        container_title=_first(msg.get("container-title")),
        member_id=_first(msg.get("member")),
        references=references,
        authors=authors,
        title=_first(msg.get("title")),
        reference_count=int(ref_count) if isinstance(ref_count, int) else None,
    )


def parse_record(raw: Union[bytes, str, Dict[str, Any]]) -> CrossrefRecord:
    if isinstance(raw, dict):
        return parse_message(raw)
    data = raw if isinstance(raw, bytes) else raw.encode("utf-8")
    try:
        doc = json.loads(data)
    except UnicodeDecodeError as e:
        raise ParseError(f"invalid UTF-8: {e.reason}", offset=e.start) from e
    except json.JSONDecodeError as e:
        offset = len(e.doc[: e.pos].encode("utf-8"))
        raise ParseError(f"malformed JSON: {e.msg}", offset=offset) from e
    return parse_message(doc)


def record_to_message(record: CrossrefRecord) -> Dict[str, Any]:
    """Snapshot item form of a record; `parse_message` reads it back unchanged."""
    refs = []
    for r in record.references:
        item: Dict[str, Any] = {"key": r.key}
        item.update({k: v for k, v in r.structured.items() if k != "doi-raw"})
        if r.doi:
            item["DOI"] = r.doi
        elif "doi-raw" in r.structured:
            item["DOI"] = r.structured["doi-raw"]
        if r.unstructured is not None:
            item["unstructured"] = r.unstructured
        refs.append(item)

    msg: Dict[str, Any] = {
        "DOI": record.doi,
        "prefix": record.prefix,
        "type": record.work_type,
        "reference": refs,
    }
    if record.created is not None:
        msg["created"] = {
            "date-time": record.created.astimezone(timezone.utc).strftime(
                "%Y-%m-%dT%H:%M:%SZ"
            )
        }
    if record.container_title:
        msg["container-title"] = [record.container_title]
    if record.member_id:
        msg["member"] = record.member_id
    if record.title:
        msg["title"] = [record.title]
    if record.authors:
        msg["author"] = [{"name": a} for a in record.authors]
    if record.reference_count is not None:
        msg["reference-count"] = record.reference_count
    return msg


# ---------- Crossref REST API ----------
def make_client_session(endpoint: EndpointConfig) -> requests.Session:
    """Session whose adapter retries 429 and 5xx answers, honoring Retry-After."""
    session = requests.Session()
    retries = Retry(
        total=endpoint.retries,
        backoff_factor=endpoint.backoff,
        status_forcelist=sorted(RETRY_STATUS),
        allowed_methods={"GET"},
        respect_retry_after_header=True,
        raise_on_status=False,
    )
    adapter = HTTPAdapter(max_retries=retries)
    session.mount("http://", adapter)
    session.mount("https://", adapter)
    session.headers.update(
        {"User-Agent": endpoint.user_agent, "Accept": "application/json"}
    )
    return session


class CrossrefClient:
    """
    Single-record client for `{api_base}/works/{doi}`. Requests are spaced by
    the configured politeness delay; retries live in the session's adapter.
    """

    def __init__(
        self,
        endpoint: EndpointConfig = EndpointConfig(),
        session: Optional[requests.Session] = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.endpoint = endpoint
        self.session = session or make_client_session(endpoint)
        self._sleep = sleep
        self._clock = clock
        self._last: Optional[float] = None

    def _headers(self) -> Dict[str, str]:
        return {"User-Agent": self.endpoint.user_agent, "Accept": "application/json"}

    def _wait_turn(self):
        if self._last is not None and self.endpoint.delay > 0:
            wait = self.endpoint.delay - (self._clock() - self._last)
            if wait > 0:
                self._sleep(wait)

    def get_raw(self, doi: str) -> bytes:
        url = f"{self.endpoint.api_base.rstrip('/')}/works/{quote(doi)}"
        self._wait_turn()
        try:
            resp = self.session.get(
                url, headers=self._headers(), timeout=self.endpoint.timeout
            )
        except requests.RequestException as e:
            raise TransportError(doi, f"request failed: {e}") from e
        finally:
            self._last = self._clock()
        if resp.status_code == 404:
            raise NotRegistered(doi)
        if not 200 <= resp.status_code < 300:
            raise TransportError(doi, f"HTTP {resp.status_code}")
        return resp.content

    def fetch(self, doi: str) -> CrossrefRecord:
        return parse_record(self.get_raw(doi))


def fetch_record(
    doi: str,
    endpoint_config: EndpointConfig = EndpointConfig(),
    client: Optional[CrossrefClient] = None,
) -> CrossrefRecord:
    doi = normalize_doi(doi) or doi
    client = client or CrossrefClient(endpoint_config)
    return client.fetch(doi)


# ---------- On-disk record cache ----------
def encode_doi(doi: str) -> str:
    return quote(doi.lower(), safe="")


def decode_doi(name: str) -> str:
    return unquote(name)


def atomic_write(path: Path, data: bytes):
    """Write `data` next to `path` and rename it into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


class RecordCache:
    """
    One JSON work message per DOI under `<cache_dir>/<kind>/`. Citing documents
    live in `records/`; cited works resolved for reports live in `cited/`, so
    they never become detection input.
    """

    def __init__(self, cache_dir: Path, kind: str = "records"):
        self.root = Path(cache_dir) / kind

    def path_for(self, doi: str) -> Path:
        return self.root / f"{encode_doi(doi)}.json"

    def has(self, doi: str) -> bool:
        return self.path_for(doi).exists()

    def load(self, doi: str) -> Optional[CrossrefRecord]:
        p = self.path_for(doi)
        if not p.exists():
            return None
        return parse_record(p.read_bytes())

    def store_raw(self, doi: str, raw: bytes):
        atomic_write(self.path_for(doi), raw)

    def store(self, record: CrossrefRecord):
        data = json.dumps(record_to_message(record), ensure_ascii=False, sort_keys=True)
        self.store_raw(record.doi, data.encode("utf-8"))

    def dois(self) -> List[str]:
        if not self.root.exists():
            return []
        return sorted(decode_doi(p.name[: -len(".json")]) for p in self.root.glob("*.json"))

    def records(self) -> Iterator[CrossrefRecord]:
        for doi in self.dois():
            try:
                rec = self.load(doi)
            except ParseError as e:
                log.warning("cached record %s unreadable: %s", doi, e)
                continue
            if rec is not None:
                yield rec

    def load_or_fetch(self, doi: str, client: CrossrefClient) -> CrossrefRecord:
        doi = normalize_doi(doi) or doi
        cached = self.load(doi)
        if cached is not None:
            return cached
        raw = client.get_raw(doi)
        record = parse_record(raw)
        self.store_raw(record.doi, raw)
        return record


# ---------- Snapshot streaming ----------
@dataclass
class SnapshotStats:
    files: int = 0
    skipped_files: int = 0
    items: int = 0
    skipped_items: int = 0


def _decode_batch(
    name: str, data: Optional[bytes]
) -> Tuple[List[CrossrefRecord], int, Optional[str]]:
    """Records of one batch file, number of bad items, and a file-level error."""
    try:
        if data is None:
            data = Path(name).read_bytes()
        doc = json.loads(gzip.decompress(data) if name.endswith(".gz") else data)
        items = doc["items"] if isinstance(doc, dict) else doc
        if not isinstance(items, list):
            raise ValueError("items is not an array")
    except Exception as e:
        return [], 0, f"{type(e).__name__}: {e}"

    records: List[CrossrefRecord] = []
    bad = 0
    for item in items:
        try:
            records.append(parse_message(item))
        except ParseError:
            bad += 1
    return records, bad, None


def _batch_sources(source: Path) -> Iterator[Tuple[str, Optional[bytes]]]:
    if source.is_dir():
        for p in batch_files(source):
            yield str(p), None
    elif tarfile.is_tarfile(source):
        with tarfile.open(source) as tar:
            for member in tar:
                if member.isfile() and member.name.endswith((".json.gz", ".json")):
                    f = tar.extractfile(member)
                    yield member.name, f.read() if f else b""
    else:
        yield str(source), None


def stream_snapshot(
    source: Path, jobs: int = 1, stats: Optional[SnapshotStats] = None
) -> Iterator[CrossrefRecord]:
    """
    Yield every record of a snapshot (directory, tar, or single batch file) in
    file order. Corrupt batch files and unparseable items are skipped and
    counted in `stats`.
    """
    source = Path(source)
    if not source.exists():
        raise FileNotFoundError(f"snapshot source not found: {source}")
    stats = stats if stats is not None else SnapshotStats()

    def consume(name, result):
        records, bad, error = result
        stats.files += 1
        if error:
            stats.skipped_files += 1
            log.warning("skipping corrupt batch %s (%s)", name, error)
            return []
        stats.items += len(records)
        stats.skipped_items += bad
        return records

    if jobs <= 1:
        for name, data in _batch_sources(source):
            yield from consume(name, _decode_batch(name, data))
        return

    # bounded window of in-flight batches keeps memory flat
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        pending = []
        for name, data in _batch_sources(source):
            pending.append((name, pool.submit(_decode_batch, name, data)))
            if len(pending) >= 2 * jobs:
                n, fut = pending.pop(0)
                yield from consume(n, fut.result())
        for n, fut in pending:
            yield from consume(n, fut.result())


def read_doi_list(path: Path) -> List[str]:
    dois = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        doi = normalize_doi(line.strip())
        if doi:
            dois.append(doi)
        elif line.strip() and not line.strip().startswith("#"):
            log.warning("not a DOI: %r", line.strip())
    return dois


def iter_records(source: Path, jobs: int = 1) -> Iterable[CrossrefRecord]:
    """Records from a record cache directory or from a snapshot."""
    source = Path(source)
    cache = RecordCache(source.parent if source.name == "records" else source)
    if cache.root.is_dir():
        return cache.records()
    return stream_snapshot(source, jobs=jobs)


def batch_files(source: Path) -> List[Path]:
    """Batch files of a snapshot directory, or the source itself (file or tar)."""
    source = Path(source)
    if not source.exists():
        raise FileNotFoundError(f"snapshot source not found: {source}")
    if not source.is_dir():
        return [source]
    return [
        p
        for p in sorted(source.rglob("*"))
        if p.is_file() and p.name.endswith((".json.gz", ".json"))
    ]
