from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

from errors import ConfigError

VERSION = "0.3.0"

METHODS = ("m0", "m1", "m2")


@dataclass(frozen=True)
class EndpointConfig:
    api_base: str = "https://api.crossref.org"
    mailto: str = "anonymous@example.org"
    # politeness delay between two requests, seconds
    delay: float = 1.0
    retries: int = 3
    backoff: float = 2.0
    timeout: float = 30.0

    @property
    def user_agent(self) -> str:
        return f"sneakref/{VERSION} (mailto:{self.mailto})"


@dataclass(frozen=True)
class ServiceConfig:
    url: str = "http://localhost:8070"
    path: str = "/api/processReferences"
    timeout: float = 120.0
    retries: int = 3
    pool_size: int = 4


@dataclass(frozen=True)
class DetectConfig:
    theta: float = 60.0
    theta_eq: float = 90.0
    min_needle: int = 30
    benefit_prefix: Optional[str] = None
    infer_prefix: bool = False
    m0_factor: float = 0.95
    large_delta: int = 10
    distance: str = "indel"
    # haystacks up to this many characters are searched exhaustively
    exact_limit: int = 512


@dataclass(frozen=True)
class DupConfig:
    min_dup_refs: int = 20
    excluded_types: Tuple[str, ...] = ("book", "book-chapter")
    top: int = 10


@dataclass(frozen=True)
class AppConfig:
    corpus: Optional[Path] = None
    records: Optional[Path] = None
    cache_dir: Path = Path("cache")
    out: Path = Path("output")
    jobs: int = 1
    methods: Tuple[str, ...] = ("m1",)
    resolve_cited: bool = False
    endpoint: EndpointConfig = EndpointConfig()
    service: ServiceConfig = ServiceConfig()
    detect: DetectConfig = DetectConfig()
    dups: DupConfig = DupConfig()


# ---------- Flat key=value files ----------
def _to_bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _to_methods(v: str) -> Tuple[str, ...]:
    v = v.strip().lower()
    if v == "all":
        return METHODS
    names = tuple(x.strip() for x in v.split(",") if x.strip())
    unknown = [n for n in names if n not in METHODS]
    if unknown or not names:
        raise ValueError(f"unknown detector: {', '.join(unknown) or v!r}")
    return names


def _to_types(v: str) -> Tuple[str, ...]:
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _opt_str(v: str) -> Optional[str]:
    return v.strip() or None


# flat key -> (section or None, field name, converter)
KEYS: Dict[str, Tuple[Optional[str], str, Callable[[str], Any]]] = {
    "corpus": (None, "corpus", Path),
    "records": (None, "records", Path),
    "cache": (None, "cache_dir", Path),
    "out": (None, "out", Path),
    "jobs": (None, "jobs", int),
    "method": (None, "methods", _to_methods),
    "resolve-cited": (None, "resolve_cited", _to_bool),
    "api-base": ("endpoint", "api_base", str),
    "mailto": ("endpoint", "mailto", str),
    "delay": ("endpoint", "delay", float),
    "retries": ("endpoint", "retries", int),
    "backoff": ("endpoint", "backoff", float),
    "timeout": ("endpoint", "timeout", float),
    "grobid-url": ("service", "url", str),
    "grobid-path": ("service", "path", str),
    "grobid-timeout": ("service", "timeout", float),
    "grobid-pool": ("service", "pool_size", int),
    "grobid-retries": ("service", "retries", int),
    "theta": ("detect", "theta", float),
    "theta-eq": ("detect", "theta_eq", float),
    "min-needle": ("detect", "min_needle", int),
    "prefix": ("detect", "benefit_prefix", _opt_str),
    "infer-prefix": ("detect", "infer_prefix", _to_bool),
    "m0-factor": ("detect", "m0_factor", float),
    "large-delta": ("detect", "large_delta", int),
    "distance": ("detect", "distance", str),
    "exact-limit": ("detect", "exact_limit", int),
    "min-dup-refs": ("dups", "min_dup_refs", int),
    "exclude-types": ("dups", "excluded_types", _to_types),
    "top": ("dups", "top", int),
}


def read_key_values(path: Path) -> Dict[str, str]:
    values: Dict[str, str] = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        values[k.strip().lower().replace("_", "-")] = v.strip()
    return values


def apply_values(cfg: AppConfig, values: Dict[str, Any]) -> AppConfig:
    """
    Return `cfg` with flat keys applied. String values are converted,
    anything else (already typed CLI values) is taken as is.
    """
    top: Dict[str, Any] = {}
    sections: Dict[str, Dict[str, Any]] = {}
    for key, raw in values.items():
        if raw is None:
            continue
        if key not in KEYS:
            raise ConfigError(f"unknown config key: {key}")
        section, name, conv = KEYS[key]
        try:
            value = conv(raw) if isinstance(raw, str) else raw
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for {key}: {e}") from e
        if section is None:
            top[name] = value
        else:
            sections.setdefault(section, {})[name] = value

    for section, changes in sections.items():
        top[section] = replace(getattr(cfg, section), **changes)
    out = replace(cfg, **top)

    if out.detect.distance != "indel":
        raise ConfigError("only distance=indel is supported")
    if out.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if not 0 < out.detect.theta_eq <= 100:
        raise ConfigError("theta-eq must be in (0, 100]")
    return out


def load_config_file(path: Path, base: Optional[AppConfig] = None) -> AppConfig:
    return apply_values(base or AppConfig(), read_key_values(path))
