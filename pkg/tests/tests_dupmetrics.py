import json
import random

import pandas as pd
import pytest
from conftest import work_message

from dupmetrics import (
    DupAggregates,
    accumulate,
    aggregate_benef,
    aggregate_files,
    aggregate_journal,
    doc_dup_stats,
    normalize_author,
    read_aggregates,
    s1_score,
    score_author_journal,
    snapshot_summary,
    top_k,
    write_aggregates,
    write_leaderboards,
)
from errors import InvalidInput
from types_ import CrossrefRecord, ReferenceEntry


def record(doi, cited=(), journal="Journal A", work_type="journal-article", authors=()):
    refs = [
        ReferenceEntry(key=f"r{i}", doi=c, unstructured=None, structured={}, position=i)
        for i, c in enumerate(cited)
    ]
    return CrossrefRecord(
        doi=doi,
        prefix=doi.split("/", 1)[0],
        work_type=work_type,
        created=None,
        container_title=journal,
        member_id=None,
        references=refs,
        authors=list(authors),
    )


def random_graph(rng, n_docs=40, n_cited=25):
    docs = []
    for i in range(n_docs):
        cited = [f"10.9999/c{rng.randrange(n_cited)}" for _ in range(rng.randint(0, 30))]
        docs.append(record(f"10.1111/d{i}", cited, journal=f"J{rng.randrange(4)}"))
    return docs


# ---------- oracles on tiny graphs ----------
def test_single_document_counts():
    doc = record("10.1111/d", ["10.9999/r1", "10.9999/r1", "10.9999/r2", "10.9999/r1"])
    s = snapshot_summary([doc])
    assert (s.entries, s.distinct, s.duplicated_refs, s.surplus) == (4, 2, 1, 2)
    assert s.avg_duplicates == 2.0
    assert s.derived_distinct == s.distinct
    stats = doc_dup_stats(doc)
    assert (stats.nbrefdup_plus, stats.nbrefdup) == (2, 1)


def test_references_without_doi_are_counted_apart():
    doc = record("10.1111/d", ["10.9999/r1", None, None])
    s = snapshot_summary([doc])
    assert s.entries == 1
    assert s.entries_without_doi == 2


def test_benef():
    docs = [
        record("10.1111/c1", ["10.9999/d", "10.9999/d", "10.9999/d"]),
        record("10.1111/c2", ["10.9999/d"]),
    ]
    b = aggregate_benef(docs)["10.9999/d"]
    assert (b.benef_plus, b.benef) == (2, 1)


def test_journal():
    docs = [
        record("10.1111/a", ["10.9999/x"] * 3),
        record("10.1111/b", ["10.9999/x", "10.9999/y"]),
        record("10.1111/c", ["10.9999/z"] * 6),
    ]
    assert aggregate_journal(docs) == {"journal a": (7, 2)}


def test_books_are_excluded():
    book = record("10.1111/b", ["10.9999/x"] * 5, work_type="book", authors=["Ann Lee"])
    agg = accumulate([book])
    assert agg.benef == {}
    assert agg.summary().documents == 0
    assert agg.summary().excluded_documents == 1
    assert agg.authors == {"10.1111/b": ("ann lee",)}


# ---------- author-journal score ----------
@pytest.mark.parametrize(
    "counts, expected",
    [
        ((76, 104, 204, 1391), 44.4),
        ((35, 49, 58, 1273), 23.4),
        ((142, 981, 213, 18990), 19.0),
        ((142, 981, 242, 18990), 18.7),
        ((75, 315, 75, 7653), 17.1),
        ((25, 49, 57, 1273), 11.6),
        ((199, 2650, 283, 10303), 9.5),
        ((54, 182, 551, 4154), 8.9),
        ((213, 3901, 1027, 56035), 7.7),
        ((36, 164, 64, 2224), 6.9),
        ((49, 216, 227, 2455), 6.6),
        ((114, 1071, 249, 4602), 6.0),
    ],
)
def test_s1_score_reference_values(counts, expected):
    _, _, s1 = s1_score(*counts)
    assert s1 == pytest.approx(expected, abs=0.05)


def test_s1_score_empty_denominators():
    assert s1_score(0, 0, 0, 0) == (0.0, 0.0, 0.0)


def _citation_graph(rng, targeted):
    """200 documents of one journal citing 50 works; works 0-4 share one author."""
    works = [
        record(
            f"10.9999/w{i}",
            journal="Cited",
            authors=["Target T"] if i < 5 else [f"Author {i}"],
        )
        for i in range(50)
    ]
    docs = []
    for d in range(200):
        cited = [f"10.9999/w{i}" for i in rng.sample(range(50), 10)]
        if targeted:
            cited += [f"10.9999/w{rng.randrange(5)}"] * 2
        elif rng.random() < 0.5:
            cited.append(rng.choice(cited))
        docs.append(record(f"10.1111/d{d}", cited, journal="Journal A"))
    return works + docs


def test_targeted_duplication_stands_out():
    null = score_author_journal(_citation_graph(random.Random(1), False), 20)
    targeted = score_author_journal(_citation_graph(random.Random(1), True), 20)
    assert targeted[0].author == "target t"
    assert targeted[0].journal == "journal a"
    assert targeted[0].dup_to_author == 200
    assert targeted[0].s1 > 5 * max(s.s1 for s in null)
    assert max(s.s1 for s in null) < 5


def test_min_dup_refs_filters_journals():
    docs = _citation_graph(random.Random(2), True)
    assert score_author_journal(docs, 201) == []


# ---------- invariants ----------
def test_conservation_on_random_graphs():
    rng = random.Random(42)
    for _ in range(50):
        agg = accumulate(random_graph(rng))
        s = agg.summary()
        assert sum(agg.benef_plus.values()) == s.surplus
        assert sum(agg.doc_plus.values()) == s.surplus
        assert sum(agg.journal_plus.values()) == s.surplus
        assert sum(agg.benef.values()) == s.duplicated_refs
        assert s.entries - s.surplus == s.distinct


@pytest.mark.parametrize("shards", [1, 2, 7])
def test_shards_merge_to_the_whole(shards):
    docs = random_graph(random.Random(shards), n_docs=60)
    whole = accumulate(docs)
    parts = [accumulate(docs[i::shards]) for i in range(shards)]
    merged = DupAggregates()
    for p in reversed(parts):
        merged += p
    assert merged == whole
    assert sum(parts, DupAggregates()) == whole


def test_aggregate_files(tmp_path):
    docs = random_graph(random.Random(3), n_docs=30)
    paths = []
    for i in range(3):
        items = [
            work_message(
                d.doi,
                [{"key": r.key, "DOI": r.doi} for r in d.references],
                **{"container-title": [d.container_title]},
            )
            for d in docs[i::3]
        ]
        p = tmp_path / f"batch-{i}.json"
        p.write_text(json.dumps({"items": items}))
        paths.append(p)
    expected = accumulate(docs).summary()
    assert aggregate_files(paths).summary() == expected
    assert aggregate_files(paths, jobs=2).summary() == expected


def test_top_k():
    assert top_k({"b": 3, "a": 3, "c": 5}, 2) == [("c", 5), ("a", 3)]
    assert top_k({"x": 1}, 10) == [("x", 1)]
    with pytest.raises(InvalidInput):
        top_k({"x": 1}, 0)


def test_normalize_author():
    assert normalize_author("Dávid F. Hendry") == "david f hendry"
    assert normalize_author("  O'Neil,  J.-P. ") == "o neil j p"


# ---------- persistence ----------
def test_aggregates_round_trip(tmp_path):
    docs = random_graph(random.Random(9))
    docs.append(record("10.9999/c1", authors=["Ann Lee", "Bo Chen"], journal=None))
    agg = accumulate(docs)
    write_aggregates(agg, tmp_path)
    assert read_aggregates(tmp_path) == agg


def test_empty_aggregates_round_trip(tmp_path):
    write_aggregates(DupAggregates(), tmp_path)
    assert read_aggregates(tmp_path) == DupAggregates()


def test_write_leaderboards(tmp_path):
    agg = accumulate(_citation_graph(random.Random(1), True))
    paths = write_leaderboards(agg, tmp_path, top=3, min_dup_refs=20)
    assert set(paths) == {"benef", "docs", "journals", "authors"}
    authors = pd.read_csv(paths["authors"])
    assert len(authors) == 3
    assert authors.loc[0, "author"] == "target t"
    journals = pd.read_csv(paths["journals"])
    assert list(journals.columns) == ["journal", "jourdup_plus", "jourdup", "ratio"]
    assert journals.loc[0, "jourdup"] == 200
    assert len(pd.read_csv(paths["benef"])) == 3
