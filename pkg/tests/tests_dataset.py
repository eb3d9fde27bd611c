"""
Full run over the released corpus. Needs SNEAKREF_DATASET pointing at a
directory with records/ and corpus/ (with cached tei/ and txt/), and takes hours.
"""
import json
import os
from pathlib import Path

import pytest

from main import main

DATASET = os.environ.get("SNEAKREF_DATASET")

pytestmark = pytest.mark.skipif(not DATASET, reason="SNEAKREF_DATASET not set")


@pytest.fixture(scope="module")
def summary(tmp_path_factory):
    root = Path(DATASET)
    out = tmp_path_factory.mktemp("dataset")
    argv = [
        "--out", str(out),
        "--records", str(root / "records"),
        "detect", str(root / "corpus"),
        "--method", "all",
        "--prefix", "10.38124",
    ]
    assert main(argv) == 0
    return json.loads((out / "summary.json").read_text())


def test_m1_total(summary):
    assert summary["methods"]["m1"]["total_sneaked"] == pytest.approx(80205, rel=0.02)


def test_m2_total(summary):
    assert summary["methods"]["m2"]["total_sneaked"] == pytest.approx(80909, rel=0.02)


def test_m0_overestimates(summary):
    m0 = summary["methods"]["m0"]["total_sneaked"]
    assert m0 == pytest.approx(84270, rel=0.02)
    assert m0 > summary["methods"]["m1"]["total_sneaked"]
