import json
import random
from datetime import datetime, timedelta, timezone

import pandas as pd
import pytest

from data_store import VerdictRepository, read_verdicts
from errors import InvalidInput, ParseError
from report import (
    NO_DOI,
    agreements_from_verdicts,
    beneficiaries,
    build_reports,
    citing_timeline,
    ghost_pairs,
    histogram,
    tally_agreement,
    tally_corpus,
    temporal_coherence,
)
from types_ import CrossrefRecord, DetectionVerdict, GhostRef

UTC = timezone.utc
CREATED = datetime(2024, 5, 22, 10, 0, tzinfo=UTC)


def verdict(doi, method="m1", ghosts=(), status="ok", **kw):
    ghost = [GhostRef(position=10 + i, doi=g, snippet=f"ref {g}") for i, g in enumerate(ghosts)]
    kw.setdefault("case", "Case2" if ghost and method == "m1" else None)
    kw.setdefault("created", CREATED)
    return DetectionVerdict(
        doi=doi,
        method=method,
        status=status,
        n_registered=kw.pop("n_registered", 20 + len(ghost)),
        n_extracted=kw.pop("n_extracted", 20),
        ghost=ghost,
        flagged=kw.pop("flagged", bool(ghost)),
        **kw,
    )


def cited(doi, created, work_type="journal-article"):
    return CrossrefRecord(
        doi=doi,
        prefix=doi.split("/", 1)[0],
        work_type=work_type,
        created=created,
        container_title=None,
        member_id=None,
        references=[],
    )


# ---------- tallies ----------
def test_tally_empty():
    s = tally_corpus([], "m1")
    assert (s.processed, s.flagged, s.total_sneaked, s.mean_sneaked) == (0, 0, 0, 0.0)


def test_tally_known_injections():
    verdicts = [
        verdict("10.5555/a"),
        verdict("10.5555/b", ghosts=["10.38124/x"] * 2),
        verdict("10.5555/c", ghosts=["10.38124/y"] * 5, cleaned_away=1),
        verdict("10.5555/d", status="no-pdf", n_extracted=None),
        verdict("10.5555/e", method="m2", ghosts=["10.38124/z"]),
    ]
    s = tally_corpus(verdicts, "m1")
    assert s.processed == 4
    assert s.flagged == 2
    assert s.total_sneaked == 7
    assert (s.min_sneaked, s.max_sneaked) == (2, 5)
    assert s.mean_sneaked == 3.5
    assert s.mean_sneaked * s.flagged == s.total_sneaked
    assert s.no_pdf == 1
    assert s.cases == {"Case2": 2}
    assert s.case2_cleaned == 1


def test_tally_m0_uses_estimates():
    verdicts = [
        verdict("10.5555/a", method="m0", estimate=6, n_registered=100, n_extracted=94),
        verdict("10.5555/b", method="m0", estimate=0),
    ]
    s = tally_corpus(verdicts, "m0")
    assert (s.flagged, s.total_sneaked) == (1, 6)


# ---------- beneficiaries ----------
def test_beneficiaries_ranked():
    verdicts = [
        verdict("10.5555/a", ghosts=["10.38124/b", "10.38124/a", None]),
        verdict("10.5555/b", ghosts=["10.38124/a", "10.38124/c", "10.38124/c"]),
        verdict("10.5555/c", ghosts=["10.38124/a", "10.38124/c"]),
    ]
    works = {"10.38124/a": cited("10.38124/a", CREATED, work_type="journal")}
    out = beneficiaries(verdicts, "m1", works.get)
    assert [(b.cited_doi, b.undue_count) for b in out] == [
        ("10.38124/a", 3),
        ("10.38124/c", 3),
        (NO_DOI, 1),
        ("10.38124/b", 1),
    ]
    assert out[0].container_level is True
    assert out[1].cited_type is None


# ---------- temporal coherence ----------
def test_temporal_same_day_is_zero():
    citing = datetime(2024, 5, 22, 23, 30, tzinfo=UTC)
    cited_at = datetime(2024, 5, 22, 1, 0, tzinfo=UTC)
    pairs, summary = temporal_coherence([("10.5555/a", "10.38124/x", citing, cited_at)])
    assert pairs[0].delta_days == 0
    assert summary.count == 1 and summary.negative == 0


def test_temporal_calendar_days_in_utc():
    citing = datetime(2024, 5, 23, 0, 30, tzinfo=timezone(timedelta(hours=2)))
    cited_at = datetime(2024, 5, 21, 23, 0, tzinfo=UTC)
    pairs, _ = temporal_coherence([("c", "d", citing, cited_at)])
    assert pairs[0].delta_days == 1


def test_temporal_summary_and_negative_deltas():
    base = datetime(2024, 1, 1, tzinfo=UTC)
    rows = [
        ("c1", "d1", base + timedelta(days=10), base),
        ("c2", "d2", base + timedelta(days=10), base),
        ("c3", "d3", base + timedelta(days=4), base),
        ("c4", "d4", base + timedelta(days=4), base),
        ("c5", "d5", base, base + timedelta(days=3)),
        ("c6", "d6", base, None),
    ]
    pairs, s = temporal_coherence(rows)
    assert len(pairs) == 5
    assert s.excluded == 1
    assert s.negative == 1
    assert (s.min_days, s.max_days) == (-3, 10)
    assert s.median_days == 4.0
    assert s.mode_days == 4


def test_ghost_pairs_use_lookup():
    works = {"10.38124/a": cited("10.38124/a", CREATED - timedelta(days=40))}
    verdicts = [verdict("10.5555/a", ghosts=["10.38124/a", "10.38124/b", None])]
    pairs = ghost_pairs(verdicts, "m1", works.get)
    assert [(p[1], p[3] is not None) for p in pairs] == [
        ("10.38124/a", True),
        ("10.38124/b", False),
        (NO_DOI, False),
    ]
    out, s = temporal_coherence(pairs)
    assert len(out) == 1
    assert out[0].delta_days == 40
    assert s.excluded == 2


def test_citing_timeline():
    day2 = CREATED + timedelta(days=1)
    verdicts = [
        verdict("10.5555/a", ghosts=["x"] * 2),
        verdict("10.5555/b", ghosts=["x"] * 7),
        verdict("10.5555/c", ghosts=["x"], created=day2),
        verdict("10.5555/d"),
    ]
    assert citing_timeline(verdicts) == [
        {"day": "2024-05-22", "dois": 2, "min_sneaked": 2, "max_sneaked": 7, "total_sneaked": 9},
        {"day": "2024-05-23", "dois": 1, "min_sneaked": 1, "max_sneaked": 1, "total_sneaked": 1},
    ]


# ---------- histograms ----------
def test_histogram_unit_width():
    bins = histogram([1, 1, 2], bin_width=1)
    assert [(b.lower, b.upper, b.count) for b in bins] == [(1.0, 2.0, 2), (2.0, 3.0, 1)]


def test_histogram_keeps_empty_bins_and_edges():
    assert [b.count for b in histogram([0, 4], bin_width=2)] == [1, 0, 1]
    bins = histogram([5, 10, 25], bin_edges=[0, 10, 20])
    assert [b.count for b in bins] == [1, 1]
    assert histogram([], bin_width=1) == []


def test_histogram_counts_every_value():
    rng = random.Random(0)
    for _ in range(50):
        values = [rng.randint(-50, 400) for _ in range(rng.randint(1, 200))]
        width = rng.choice([1, 3, 7.5])
        assert sum(b.count for b in histogram(values, bin_width=width)) == len(values)


def test_histogram_errors():
    with pytest.raises(InvalidInput):
        histogram([1], bin_width=0)
    with pytest.raises(InvalidInput):
        histogram([1])
    with pytest.raises(InvalidInput):
        histogram([1], bin_width=1, bin_edges=[0, 1])
    with pytest.raises(InvalidInput):
        histogram([1], bin_edges=[0, 5, 5])


# ---------- agreement ----------
def test_agreements_from_verdicts():
    verdicts = [
        verdict("10.5555/a", "m1", ghosts=["p"] * 2),
        verdict("10.5555/a", "m2", ghosts=["p"] * 2),
        verdict("10.5555/b", "m1", ghosts=["p"]),
        verdict("10.5555/b", "m2", ghosts=["p"] * 15),
        verdict("10.5555/c", "m1", status="no-pdf"),
        verdict("10.5555/c", "m2", status="no-pdf"),
        verdict("10.5555/d", "m1", ghosts=["p"]),
    ]
    records = agreements_from_verdicts(verdicts)
    assert [(r.doi, r.agreement, r.delta) for r in records] == [
        ("10.5555/a", True, 0),
        ("10.5555/b", False, 14),
    ]
    s = tally_agreement(records)
    assert (s.compared, s.agreed, s.disagreed, s.large_disagreements) == (2, 1, 1, 1)
    assert (s.m1_total, s.m2_total) == (3, 17)


# ---------- report files ----------
def _sample_verdicts():
    return [
        verdict("10.5555/a", "m1", ghosts=["10.38124/x", "10.38124/y"]),
        verdict("10.5555/a", "m2", ghosts=["10.38124/x", "10.38124/y"]),
        verdict("10.5555/b", "m1"),
        verdict("10.5555/b", "m2"),
        verdict("10.5555/c", "m1", status="no-references", n_registered=0),
        verdict("10.5555/c", "m2", status="no-references", n_registered=0),
    ]


def test_build_reports(tmp_path):
    works = {"10.38124/x": cited("10.38124/x", CREATED - timedelta(days=3))}
    summary = build_reports(_sample_verdicts(), tmp_path, works.get)
    assert summary["primary_method"] == "m1"
    assert summary["methods"]["m1"]["total_sneaked"] == 2
    assert summary["agreement"]["agreed"] == 2
    assert summary["beneficiaries"]["count"] == 2
    assert summary["temporal"]["count"] == 1
    for name in (
        "summary.json",
        "agreement.csv",
        "beneficiaries.csv",
        "temporal.csv",
        "timeline.csv",
        "hist_sneaked_per_doi.csv",
        "hist_length_diff.csv",
    ):
        assert (tmp_path / name).exists(), name
    assert json.loads((tmp_path / "summary.json").read_text()) == json.loads(
        json.dumps(summary)
    )
    temporal = pd.read_csv(tmp_path / "temporal.csv")
    assert temporal.loc[0, "delta_days"] == 3
    assert temporal.loc[0, "cited_created"] == "2024-05-19T10:00:00Z"


def test_build_reports_is_deterministic(tmp_path):
    build_reports(_sample_verdicts(), tmp_path / "a")
    build_reports(_sample_verdicts(), tmp_path / "b")
    for path in sorted((tmp_path / "a").iterdir()):
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes(), path.name


def test_build_reports_m0_screen(tmp_path):
    verdicts = [
        verdict("10.5555/a", "m0", estimate=6, flagged=True, n_registered=100, n_extracted=94)
    ]
    summary = build_reports(verdicts, tmp_path)
    assert summary["primary_method"] == "m0"
    assert summary["m0_screen"]["in_band"] == 1
    assert "agreement" not in summary


# ---------- verdict store ----------
def test_repository_round_trip(tmp_path):
    repo = VerdictRepository()
    for v in _sample_verdicts():
        repo.add(v)
    repo.add(verdict("10.5555/d", "m1", status="no-pdf", n_extracted=None, created=None))
    repo.skip("10.5555/e", "no-pdf")
    repo.write_reports(tmp_path)

    assert read_verdicts(tmp_path) == repo.items()
    assert (tmp_path / "skipped.txt").read_text() == "10.5555/e\tno-pdf\n"
    table = pd.read_csv(tmp_path / "verdicts.csv")
    assert list(table.columns)[:3] == ["doi", "method", "status"]
    assert table.loc[0, "n_ghost"] == 2
    assert pd.isna(table.loc[6, "n_extracted"])
    assert "20.0" not in (tmp_path / "verdicts.csv").read_text()


def test_read_verdicts_reports_offset(tmp_path):
    repo = VerdictRepository()
    repo.add(verdict("10.5555/a"))
    repo.to_jsonl(tmp_path / "verdicts.jsonl")
    good = (tmp_path / "verdicts.jsonl").read_bytes()
    (tmp_path / "verdicts.jsonl").write_bytes(good + b"{not json\n")
    with pytest.raises(ParseError) as e:
        read_verdicts(tmp_path / "verdicts.jsonl")
    assert e.value.offset == len(good)
