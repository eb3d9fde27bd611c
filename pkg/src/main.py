from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from tqdm import tqdm

from config import AppConfig, apply_values, load_config_file
from data_store import VerdictRepository, read_verdicts
from detectors import detect_document
from dupmetrics import (
    aggregate_files,
    read_aggregates,
    write_aggregates,
    write_leaderboards,
)
from errors import (
    ConfigError,
    NotRegistered,
    ParseError,
    SneakrefError,
    TransportError,
)
from extract import ExtractStats, load_or_extract, make_session, service_version
from ingest import (
    CITED,
    CrossrefClient,
    RecordCache,
    batch_files,
    iter_records,
    read_doi_list,
)
from report import build_reports, tally_corpus
from synthetic import DEFAULT_PREFIX, write_corpus
from types_ import AgreementRecord, CrossrefRecord, DetectionVerdict

log = logging.getLogger("sneakref")


# ---------- shared helpers ----------
def make_lookup(cfg: AppConfig):
    """
    Cited-work records by DOI: fetched citing records, then the cited-work
    cache, then the registry when allowed (stored in the cited-work cache).
    """
    citing = RecordCache(cfg.cache_dir)
    cited = RecordCache(cfg.cache_dir, CITED)
    client = CrossrefClient(cfg.endpoint) if cfg.resolve_cited else None

    @lru_cache(maxsize=None)
    def lookup(doi: str) -> Optional[CrossrefRecord]:
        try:
            record = citing.load(doi)
            if record is not None:
                return record
            if client is not None:
                return cited.load_or_fetch(doi, client)
            return cited.load(doi)
        except (NotRegistered, TransportError, ParseError) as e:
            log.warning("cannot resolve cited work %s: %s", doi, e)
            return None

    return lookup


def _sum_stats(parts: List[ExtractStats]) -> ExtractStats:
    total = ExtractStats()
    for p in parts:
        for f in fields(ExtractStats):
            setattr(total, f.name, getattr(total, f.name) + getattr(p, f.name))
    return total


def _lazy_version(cfg: AppConfig, session) -> Callable[[], Optional[str]]:
    @lru_cache(maxsize=None)
    def version() -> Optional[str]:
        return service_version(cfg.service, session)

    return version


def _records(cfg: AppConfig) -> List[CrossrefRecord]:
    source = cfg.records or cfg.cache_dir
    return list(iter_records(source, jobs=cfg.jobs))


# ---------- pipeline ----------
DocResult = Tuple[
    List[DetectionVerdict], Optional[AgreementRecord], ExtractStats, Optional[str]
]


def process_document(record: CrossrefRecord, cfg: AppConfig, session, version) -> DocResult:
    stats = ExtractStats()
    try:
        refs, fulltext = None, None
        if record.references:
            refs, fulltext = load_or_extract(
                record.doi, cfg.corpus, cfg.service, session, stats, version
            )
        verdicts, agreement = detect_document(
            record, refs, fulltext, cfg.methods, cfg.detect, has_pdf=stats.no_pdf == 0
        )
        return verdicts, agreement, stats, None
    except (SneakrefError, OSError) as e:
        log.warning("%s: %s", record.doi, e)
        verdicts = [
            DetectionVerdict(
                doi=record.doi,
                method=m,
                case=None,
                status="error",
                n_registered=len(record.references),
                n_extracted=None,
                ghost=[],
                created=record.created,
                warnings=[str(e)],
            )
            for m in cfg.methods
        ]
        return verdicts, None, stats, str(e)


def run_pipeline(cfg: AppConfig) -> int:
    """ingest -> extract -> detect -> report. Returns the process exit status."""
    if cfg.corpus is None or not Path(cfg.corpus).is_dir():
        print(f"Corpus directory not found: {cfg.corpus}", file=sys.stderr)
        return 2
    if "m1" in cfg.methods and not cfg.detect.benefit_prefix and not cfg.detect.infer_prefix:
        print("Method m1 needs --prefix or --infer-prefix", file=sys.stderr)
        return 2
    try:
        records = _records(cfg)
    except FileNotFoundError as e:
        print(str(e), file=sys.stderr)
        return 2

    session = make_session(cfg.service)
    version = _lazy_version(cfg, session)

    repo = VerdictRepository()
    agreements: List[AgreementRecord] = []
    stats: List[ExtractStats] = []
    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        results = pool.map(lambda r: process_document(r, cfg, session, version), records)
        for record, (verdicts, agreement, st, error) in tqdm(
            zip(records, results), total=len(records), desc="Detecting", disable=None
        ):
            for v in verdicts:
                repo.add(v)
            if agreement is not None:
                agreements.append(agreement)
            stats.append(st)
            if error:
                repo.skip(record.doi, error)
            elif verdicts and verdicts[0].status in ("no-pdf", "no-extraction"):
                repo.skip(record.doi, verdicts[0].status)

    try:
        repo.write_reports(cfg.out)
        build_reports(
            repo.items(),
            cfg.out,
            lookup=make_lookup(cfg),
            agreements=agreements,
            large_delta=cfg.detect.large_delta,
        )
    except OSError as e:
        print(f"Cannot write outputs to {cfg.out}: {e}", file=sys.stderr)
        return 1

    es = _sum_stats(stats)
    log.info("Extraction: %s", asdict(es))
    for m in cfg.methods:
        s = tally_corpus(repo.items(), m)
        print(
            f"[{m}] Processed: {s.processed}, Flagged: {s.flagged}, "
            f"Sneaked: {s.total_sneaked}, No references: {s.no_references}, "
            f"No PDF: {s.no_pdf}, Errors: {s.errors}"
        )
    print(f"Verdicts and reports written to {cfg.out}")
    print(f"Skipped list at {Path(cfg.out) / 'skipped.txt'}")
    return 0


# ---------- commands ----------
def cmd_fetch(cfg: AppConfig, args) -> int:
    try:
        dois = read_doi_list(Path(args.doi_list))
    except OSError as e:
        print(f"Cannot read DOI list: {e}", file=sys.stderr)
        return 2
    cache = RecordCache(cfg.cache_dir)
    client = CrossrefClient(cfg.endpoint)
    cached = fetched = failed = 0
    for doi in tqdm(dois, desc="Fetching", disable=None):
        if cache.has(doi):
            cached += 1
            continue
        try:
            cache.load_or_fetch(doi, client)
            fetched += 1
        except (NotRegistered, TransportError, ParseError) as e:
            failed += 1
            log.warning("%s: %s", doi, e)
    print(f"DOIs: {len(dois)}, Cached: {cached}, Fetched: {fetched}, Failed: {failed}")
    print(f"Records in {cache.root}")
    return 0


def cmd_extract(cfg: AppConfig, args) -> int:
    if cfg.corpus is None or not Path(cfg.corpus).is_dir():
        print(f"Corpus directory not found: {cfg.corpus}", file=sys.stderr)
        return 2
    try:
        records = _records(cfg)
    except FileNotFoundError as e:
        print(str(e), file=sys.stderr)
        return 2
    session = make_session(cfg.service)
    version = _lazy_version(cfg, session)

    def one(record: CrossrefRecord) -> ExtractStats:
        st = ExtractStats()
        load_or_extract(record.doi, cfg.corpus, cfg.service, session, st, version)
        return st

    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        parts = list(
            tqdm(pool.map(one, records), total=len(records), desc="Extracting", disable=None)
        )
    s = _sum_stats(parts)
    print(
        f"Documents: {len(records)}, Cached: {s.cache_hits}, "
        f"References extracted: {s.tei_extracted}, Texts extracted: {s.text_extracted}, "
        f"No PDF: {s.no_pdf}, Failed: {s.tei_failed + s.text_failed}"
    )
    return 0


def cmd_dups(cfg: AppConfig, args) -> int:
    try:
        paths = batch_files(Path(args.snapshot))
    except FileNotFoundError as e:
        print(str(e), file=sys.stderr)
        return 2
    agg = aggregate_files(paths, jobs=cfg.jobs, excluded_types=cfg.dups.excluded_types)
    if args.merge_with:
        agg += read_aggregates(Path(args.merge_with))
    out = Path(cfg.out)
    try:
        write_aggregates(agg, out / "aggregates")
        write_leaderboards(agg, out, top=cfg.dups.top, min_dup_refs=cfg.dups.min_dup_refs)
    except OSError as e:
        print(f"Cannot write outputs to {out}: {e}", file=sys.stderr)
        return 1
    s = agg.summary()
    print(
        f"Documents: {s.documents}, Excluded: {s.excluded_documents}, "
        f"Entries: {s.entries}, Duplicated references: {s.duplicated_refs}, "
        f"Surplus: {s.surplus}, Average duplicates: {s.avg_duplicates:.2f}"
    )
    print(f"Aggregates written to {out / 'aggregates'}")
    return 0


def cmd_report(cfg: AppConfig, args) -> int:
    src = Path(args.verdicts_dir)
    try:
        verdicts = read_verdicts(src)
    except (OSError, ParseError) as e:
        print(f"Cannot read verdicts from {src}: {e}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    try:
        build_reports(
            verdicts, out, lookup=make_lookup(cfg), large_delta=cfg.detect.large_delta
        )
    except OSError as e:
        print(f"Cannot write outputs to {out}: {e}", file=sys.stderr)
        return 1
    print(f"Verdicts: {len(verdicts)}, Reports written to {out}")
    return 0


def cmd_demo(cfg: AppConfig, args) -> int:
    root = Path(cfg.out) / "demo-corpus"
    truth = write_corpus(root, n_docs=args.docs, seed=args.seed, prefix=DEFAULT_PREFIX)
    demo = replace(
        cfg,
        corpus=root / "corpus",
        records=root / "snapshot",
        cache_dir=root / "cache",
        methods=("m0", "m1", "m2"),
        detect=replace(cfg.detect, benefit_prefix=cfg.detect.benefit_prefix or DEFAULT_PREFIX),
    )
    print(f"Demo corpus: {len(truth)} documents, {sum(truth.values())} injected references")
    return run_pipeline(demo)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sneakref", description="Detect sneaked references in registered metadata"
    )
    parser.add_argument("--config", type=str, default=None, help="key=value config file")
    parser.add_argument("--out", type=str, default=None, help="Output directory")
    parser.add_argument("--jobs", type=int, default=None, help="Parallel workers")
    parser.add_argument("--cache", type=str, default=None, help="Record cache directory")
    parser.add_argument(
        "--records", type=str, default=None, help="Record source (cache dir or snapshot)"
    )
    parser.add_argument("--mailto", type=str, default=None, help="Contact for the registry")
    parser.add_argument("--grobid-url", type=str, default=None, help="Grobid service URL")
    parser.add_argument("--verbose", action="store_true", help="Verbose logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="Fetch registered records for a DOI list")
    p.add_argument("doi_list")

    p = sub.add_parser("extract", help="Extract references and text from corpus PDFs")
    p.add_argument("corpus")

    p = sub.add_parser("detect", help="Run sneaked-reference detection")
    p.add_argument("corpus")
    p.add_argument("--method", choices=["m0", "m1", "m2", "all"], default=None)
    p.add_argument("--prefix", type=str, default=None, help="Benefiting DOI prefix")
    p.add_argument(
        "--infer-prefix",
        dest="infer_prefix",
        action="store_true",
        default=None,
        help="Guess the benefiting prefix per document (heuristic)",
    )
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--theta-eq", dest="theta_eq", type=float, default=None)
    p.add_argument("--min-needle", dest="min_needle", type=int, default=None)
    p.add_argument(
        "--resolve-cited",
        dest="resolve_cited",
        action="store_true",
        default=None,
        help="Fetch cited works missing from the cache",
    )

    p = sub.add_parser("dups", help="Duplicate-reference analytics over a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--min-dup-refs", dest="min_dup_refs", type=int, default=None)
    p.add_argument("--top", type=int, default=None)
    p.add_argument("--merge-with", dest="merge_with", default=None, help="Aggregates to add")

    p = sub.add_parser("report", help="Rebuild reports from verdicts.jsonl")
    p.add_argument("verdicts_dir")

    p = sub.add_parser("demo", help="Run on a synthetic corpus (no network)")
    p.add_argument("--docs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cli_values(args) -> Dict[str, Any]:
    get = vars(args).get
    values = {
        "out": get("out"),
        "jobs": get("jobs"),
        "cache": get("cache"),
        "records": get("records"),
        "mailto": get("mailto"),
        "grobid-url": get("grobid_url"),
        "method": get("method"),
        "prefix": get("prefix"),
        "infer-prefix": get("infer_prefix"),
        "theta": get("theta"),
        "theta-eq": get("theta_eq"),
        "min-needle": get("min_needle"),
        "resolve-cited": get("resolve_cited"),
        "min-dup-refs": get("min_dup_refs"),
        "top": get("top"),
    }
    if args.command in ("extract", "detect"):
        values["corpus"] = args.corpus
    return values


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        cfg = AppConfig()
        if args.config:
            cfg = load_config_file(Path(args.config), cfg)
        cfg = apply_values(cfg, _cli_values(args))
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return 2

    commands = {
        "fetch": cmd_fetch,
        "extract": cmd_extract,
        "detect": lambda c, a: run_pipeline(c),
        "dups": cmd_dups,
        "report": cmd_report,
        "demo": cmd_demo,
    }
    return commands[args.command](cfg, args)


if __name__ == "__main__":
    raise SystemExit(main())
