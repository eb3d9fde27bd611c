"""
Synthetic documents with known sneaked references.

Genuine content (body text, genuine references) is drawn from the letters
a-m, injected references from n-z by default, so an injected reference never
resembles anything in the document. `make_document(injected_letters=...)`
draws them from the document's own letters instead. Every genuine reference appears verbatim in the
text and in the extracted list.
"""

from __future__ import annotations

import json
import random
import string
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from lxml import etree

from extract import Corpus
from ingest import CITED, RecordCache, atomic_write, record_to_message
from types_ import CrossrefRecord, ExtractedRef, FullText, ReferenceEntry

GENUINE_LETTERS = string.ascii_lowercase[:13]
ALIEN_LETTERS = string.ascii_lowercase[13:]
DEFAULT_PREFIX = "10.38124"
CITING_PREFIX = "10.5555"
TEI_NS = "http://www.tei-c.org/ns/1.0"

_EPOCH = datetime(2024, 3, 1, tzinfo=timezone.utc)


def _word(rng: random.Random, letters: str, lo: int = 4, hi: int = 9) -> str:
    return "".join(rng.choice(letters) for _ in range(rng.randint(lo, hi)))


def _words(rng: random.Random, letters: str, n: int) -> str:
    return " ".join(_word(rng, letters) for _ in range(n))


def _reference(rng: random.Random, letters: str, doi: str, position: int) -> ReferenceEntry:
    author = f"{_word(rng, letters).title()} {_word(rng, letters).title()}"
    title = _words(rng, letters, rng.randint(5, 9)).capitalize()
    journal = _words(rng, letters, 3).title()
    year = rng.randint(1990, 2023)
    return ReferenceEntry(
        key=f"ref{position}",
        doi=doi,
        unstructured=f"{author}. {title}. {journal}, {year}.",
        structured={"author": author, "article-title": title, "year": str(year)},
        position=position,
    )


def _genuine_doi(rng: random.Random, prefix: str) -> str:
    while True:
        registrant = f"10.{rng.randint(1000, 9999)}"
        if registrant != prefix:
            return f"{registrant}/{_word(rng, GENUINE_LETTERS)}.{rng.randint(1, 99999)}"


@dataclass
class SyntheticDocument:
    record: CrossrefRecord
    extracted: List[ExtractedRef]
    text: str
    injected: List[ReferenceEntry] = field(default_factory=list)

    @property
    def fulltext(self) -> FullText:
        return FullText(text=self.text, page_count=1)

    @property
    def genuine(self) -> List[ReferenceEntry]:
        return self.record.references[: len(self.record.references) - len(self.injected)]


def make_pool(
    rng: random.Random, size: int, prefix: str = DEFAULT_PREFIX
) -> List[CrossrefRecord]:
    """Works that benefit from injections: alien text, benefit-prefix DOIs."""
    pool = []
    for i in range(size):
        doi = f"{prefix}/synth.{i:04d}"
        ref = _reference(rng, ALIEN_LETTERS, doi, 0)
        pool.append(
            CrossrefRecord(
                doi=doi,
                prefix=prefix,
                work_type="journal-article",
                created=datetime(2024, 1, 1, tzinfo=timezone.utc)
                + timedelta(days=rng.randint(0, 58)),
                container_title=_words(rng, ALIEN_LETTERS, 3).title(),
                member_id="1",
                references=[],
                authors=[ref.structured["author"]],
                title=ref.unstructured,
            )
        )
    return pool


def make_document(
    rng: random.Random,
    n_genuine: int,
    k_injected: int,
    prefix: str = DEFAULT_PREFIX,
    doi: Optional[str] = None,
    pool: Optional[Sequence[CrossrefRecord]] = None,
    injected_letters: str = ALIEN_LETTERS,
) -> SyntheticDocument:
    """
    One citing document: `n_genuine` references present in the text and the
    extracted list, followed in the registered list by `k_injected` alien
    references carrying `prefix`. With a `pool`, injected references point
    at pool works.
    """
    doi = doi or f"{CITING_PREFIX}/synth.{rng.randint(0, 10**8):08d}"
    genuine = [
        _reference(rng, GENUINE_LETTERS, _genuine_doi(rng, prefix), i)
        for i in range(n_genuine)
    ]
    injected = []
    for j in range(k_injected):
        position = n_genuine + j
        if pool:
            cited = rng.choice(pool)
            injected.append(
                ReferenceEntry(
                    key=f"ref{position}",
                    doi=cited.doi,
                    unstructured=cited.title,
                    structured={},
                    position=position,
                )
            )
        else:
            cited_doi = f"{prefix}/synth.{rng.randint(0, 10**6):06d}"
            injected.append(_reference(rng, injected_letters, cited_doi, position))

    body = " ".join(
        _words(rng, GENUINE_LETTERS, rng.randint(40, 80)).capitalize() + "."
        for _ in range(rng.randint(3, 6))
    )
    text = " ".join([body, "References"] + [r.unstructured for r in genuine])
    extracted = [
        ExtractedRef(raw=r.unstructured, doi=r.doi, position=r.position) for r in genuine
    ]
    record = CrossrefRecord(
        doi=doi,
        prefix=doi.split("/", 1)[0],
        work_type="journal-article",
        created=_EPOCH + timedelta(days=rng.randint(0, 270)),
        container_title=_words(rng, GENUINE_LETTERS, 3).title(),
        member_id="2",
        references=genuine + injected,
        authors=[f"{_word(rng, GENUINE_LETTERS).title()} {_word(rng, GENUINE_LETTERS).title()}"],
        title=_words(rng, GENUINE_LETTERS, 6).capitalize(),
        reference_count=n_genuine + k_injected,
    )
    return SyntheticDocument(record=record, extracted=extracted, text=text, injected=injected)


def to_tei(refs: Sequence[ExtractedRef]) -> str:
    """Minimal TEI with one biblStruct per extracted reference."""
    tei = etree.Element(f"{{{TEI_NS}}}TEI", nsmap={None: TEI_NS})
    back = etree.SubElement(etree.SubElement(tei, f"{{{TEI_NS}}}text"), f"{{{TEI_NS}}}back")
    list_bibl = etree.SubElement(back, f"{{{TEI_NS}}}listBibl")
    for r in refs:
        bibl = etree.SubElement(list_bibl, f"{{{TEI_NS}}}biblStruct")
        if r.doi:
            idno = etree.SubElement(bibl, f"{{{TEI_NS}}}idno", type="DOI")
            idno.text = r.doi
        note = etree.SubElement(bibl, f"{{{TEI_NS}}}note", type="raw_reference")
        note.text = r.raw
    return etree.tostring(tei, encoding="unicode", pretty_print=True)


def write_corpus(
    root: Path,
    n_docs: int = 10,
    seed: int = 0,
    prefix: str = DEFAULT_PREFIX,
    genuine_range: Tuple[int, int] = (5, 40),
    injected: Optional[Sequence[int]] = None,
    pool_size: int = 12,
) -> Dict[str, int]:
    """
    Lay out a ready-to-run corpus under `root`:

        root/snapshot/batch-0000.json   citing records
        root/cache/cited/               records of the cited (benefiting) works
        root/corpus/tei, root/corpus/txt

    `injected` gives the number of sneaked references per document (cycled);
    by default it is drawn at random. Returns DOI -> injected count.
    """
    root = Path(root)
    rng = random.Random(seed)
    pool = make_pool(rng, pool_size, prefix)
    cache = RecordCache(root / "cache", CITED)
    for work in pool:
        cache.store(work)

    corpus = Corpus(root / "corpus")
    truth: Dict[str, int] = {}
    items = []
    for i in range(n_docs):
        k = injected[i % len(injected)] if injected else rng.choice([0, 0, rng.randint(1, 30)])
        doc = make_document(
            rng,
            rng.randint(*genuine_range),
            k,
            prefix,
            doi=f"{CITING_PREFIX}/synth.{seed:03d}.{i:05d}",
            pool=pool,
        )
        truth[doc.record.doi] = k
        items.append(record_to_message(doc.record))
        atomic_write(corpus.tei(doc.record.doi), to_tei(doc.extracted).encode("utf-8"))
        atomic_write(corpus.txt(doc.record.doi), doc.text.encode("utf-8"))

    batch = json.dumps({"items": items}, ensure_ascii=False, sort_keys=True, indent=1)
    atomic_write(root / "snapshot" / "batch-0000.json", batch.encode("utf-8"))
    return truth
