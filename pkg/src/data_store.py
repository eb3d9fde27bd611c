from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd

from errors import ParseError
from types_ import DetectionVerdict, GhostRef

CSV_COLUMNS = [
    "doi",
    "method",
    "status",
    "n_registered",
    "n_extracted",
    "n_ghost",
    "case",
    "flagged",
]


def _iso(dt: Optional[datetime]) -> Optional[str]:
    if dt is None:
        return None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_iso(s: Optional[str]) -> Optional[datetime]:
    if not s:
        return None
    return datetime.fromisoformat(s.replace("Z", "+00:00"))


def verdict_to_dict(v: DetectionVerdict) -> Dict[str, Any]:
    return {
        "doi": v.doi,
        "method": v.method,
        "case": v.case,
        "status": v.status,
        "n_registered": v.n_registered,
        "n_extracted": v.n_extracted,
        "n_ghost": v.n_ghost,
        "ghost": [{"position": g.position, "doi": g.doi, "snippet": g.snippet} for g in v.ghost],
        "undecidable_count": v.undecidable_count,
        "cleaned_away": v.cleaned_away,
        "backward_rescued": v.backward_rescued,
        "estimate": v.estimate,
        "flagged": v.flagged,
        "created": _iso(v.created),
        "warnings": list(v.warnings),
    }


def verdict_from_dict(d: Dict[str, Any]) -> DetectionVerdict:
    return DetectionVerdict(
        doi=d["doi"],
        method=d["method"],
        case=d.get("case"),
        status=d["status"],
        n_registered=int(d["n_registered"]),
        n_extracted=d.get("n_extracted"),
        ghost=[
            GhostRef(position=g["position"], doi=g.get("doi"), snippet=g.get("snippet", ""))
            for g in d.get("ghost") or []
        ],
        undecidable_count=d.get("undecidable_count", 0),
        cleaned_away=d.get("cleaned_away", 0),
        backward_rescued=d.get("backward_rescued", 0),
        estimate=d.get("estimate"),
        flagged=bool(d.get("flagged")),
        created=_parse_iso(d.get("created")),
        warnings=list(d.get("warnings") or []),
    )


class VerdictRepository:
    """Collects detection verdicts and DOIs that could not be processed."""

    def __init__(self):
        self._items: List[DetectionVerdict] = []
        self._skipped: List[Tuple[str, str]] = []

    def add(self, verdict: DetectionVerdict):
        self._items.append(verdict)

    def skip(self, doi: str, reason: str = ""):
        self._skipped.append((doi, reason))

    def items(self) -> List[DetectionVerdict]:
        return list(self._items)

    def skipped(self) -> List[Tuple[str, str]]:
        return list(self._skipped)

    def to_jsonl(self, out_path: Path):
        lines = [json.dumps(verdict_to_dict(v), sort_keys=True) for v in self._items]
        out_path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    def to_csv(self, out_path: Path):
        rows = []
        for v in self._items:
            rows.append(
                {
                    "doi": v.doi,
                    "method": v.method,
                    "status": v.status,
                    "n_registered": v.n_registered,
                    "n_extracted": v.n_extracted,
                    "n_ghost": v.n_ghost,
                    "case": v.case,
                    "flagged": v.flagged,
                }
            )
        df = pd.DataFrame(rows, columns=CSV_COLUMNS)
        # nullable ints, so missing extraction counts do not turn into floats
        df["n_extracted"] = df["n_extracted"].astype("Int64")
        df.to_csv(out_path, index=False, lineterminator="\n")

    def write_reports(self, out_dir: Path):
        out_dir.mkdir(parents=True, exist_ok=True)
        self.to_jsonl(out_dir / "verdicts.jsonl")
        self.to_csv(out_dir / "verdicts.csv")
        (out_dir / "skipped.txt").write_text(
            "".join(f"{doi}\t{reason}\n" for doi, reason in self._skipped),
            encoding="utf-8",
        )


def read_verdicts(path: Path) -> List[DetectionVerdict]:
    """Verdicts from a verdicts.jsonl file, or from a directory holding one."""
    path = Path(path)
    if path.is_dir():
        path = path / "verdicts.jsonl"
    verdicts = []
    offset = 0
    with path.open("rb") as f:
        for raw in f:
            line = raw.strip()
            if line:
                try:
                    verdicts.append(verdict_from_dict(json.loads(line)))
                except (ValueError, KeyError) as e:
                    raise ParseError(f"{path}: bad verdict line ({e})", offset) from e
            offset += len(raw)
    return verdicts
