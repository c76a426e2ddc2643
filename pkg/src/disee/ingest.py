"""OpenAlex client that turns a field-filtered corpus into a single-event network.

Responses are cached on disk, one line-delimited JSON file per request,
so a rebuild from a warm cache makes no network calls.
"""

from __future__ import annotations

import calendar
import datetime as dt
import hashlib
import json
import logging
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import EmptyNetwork, IngestError
from .network import SingleEventNetwork

logger = logging.getLogger(__name__)

WORKS_URL = "https://api.openalex.org/works"
SELECT = "id,publication_date,publication_year,referenced_works,cited_by_count"
RETRY_STATUS = frozenset({429, 500, 502, 503, 504})

# Concept ids are editable starting points, not a record of any published corpus.
PRESETS = {
    "ml": {"filter": "concepts.id:C119857082", "from_date": "2010-01-01", "to_date": "2020-12-31"},
    "phys": {"filter": "concepts.id:C121332964", "from_date": "2010-01-01", "to_date": "2020-12-31"},
    "sosci": {"filter": "concepts.id:C144024400", "from_date": "2010-01-01", "to_date": "2020-12-31"},
}


@dataclass(frozen=True)
class IngestSpec:
    filter: str
    from_date: str
    to_date: str
    min_citations: int = 10
    max_works: int | None = None
    polite_email: str | None = None
    cache_dir: str = ".disee-cache"
    per_page: int = 200
    max_retries: int = 5
    backoff: float = 1.0
    max_rate: float = 10.0
    base_url: str = WORKS_URL

    def __post_init__(self):
        if self.min_citations < 0:
            raise ValueError("min_citations must be >= 0")
        if dt.date.fromisoformat(self.from_date) > dt.date.fromisoformat(self.to_date):
            raise ValueError("from_date must not be after to_date")
        if self.max_works is not None and self.max_works < 0:
            raise ValueError("max_works must be >= 0")
        if not 1 <= self.per_page <= 200:
            raise ValueError("per_page must be in [1, 200]")
        if not self.max_rate > 0:
            raise ValueError("max_rate must be positive")

    def query(self):
        """Request parameters shared by every page (the cursor is added per page)."""
        q = {
            "filter": f"{self.filter},from_publication_date:{self.from_date},"
                      f"to_publication_date:{self.to_date}",
            "select": SELECT,
            "per-page": str(self.per_page),
        }
        if self.polite_email:
            q["mailto"] = self.polite_email
        return q


def preset_spec(name, **overrides):
    return IngestSpec(**{**PRESETS[name], **overrides})


@dataclass(frozen=True)
class WorkRecord:
    id: str
    publication_date: str
    references: tuple
    cited_by_count: int = 0


@dataclass
class FetchResult:
    records: list
    skipped: int = 0
    requests: int = 0
    pages: int = 0


def short_id(value):
    """``https://openalex.org/W123`` -> ``W123``."""
    return str(value).rstrip("/").rsplit("/", 1)[-1]


def parse_work(raw):
    """WorkRecord from one API result, or None when a required field is unusable."""
    if not isinstance(raw, dict) or not raw.get("id"):
        return None
    date = raw.get("publication_date")
    if not date and raw.get("publication_year"):
        date = str(raw["publication_year"])
    if not date or fractional_year(date) is None:
        return None
    refs = raw.get("referenced_works") or []
    if not isinstance(refs, list):
        return None
    refs = tuple(dict.fromkeys(short_id(r) for r in refs if r))
    try:
        cited = int(raw.get("cited_by_count") or 0)
    except (TypeError, ValueError):
        cited = 0
    return WorkRecord(short_id(raw["id"]), str(date), refs, cited)


_DATE = re.compile(r"^(\d{4})(?:-(\d{1,2})(?:-(\d{1,2}))?)?$")


def fractional_year(date):
    """Calendar date to fractional years at day resolution.

    A bare year maps to July 1 and a year-month to the 15th of that month.
    Returns None for text that is not a valid date.
    """
    m = _DATE.match(str(date).strip())
    if m is None:
        return None
    year = int(m.group(1))
    if m.group(2) is None:
        month, day = 7, 1
    else:
        month = int(m.group(2))
        day = 15 if m.group(3) is None else int(m.group(3))
    try:
        d = dt.date(year, month, day)
    except ValueError:
        return None
    days = 366 if calendar.isleap(year) else 365
    return year + (d.timetuple().tm_yday - 1) / days


class _RateLimiter:
    def __init__(self, rate, clock=time.monotonic, sleep=time.sleep):
        self.interval = 1.0 / rate
        self.clock, self.sleep = clock, sleep
        self.last = None

    def wait(self):
        now = self.clock()
        if self.last is not None and now - self.last < self.interval:
            self.sleep(self.interval - (now - self.last))
            now = self.clock()
        self.last = now


def _request_key(url, params):
    blob = json.dumps([url, sorted(params.items())], separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _read_cache(path):
    with open(path, encoding="utf-8") as fh:
        head = json.loads(fh.readline())
        results = [json.loads(line) for line in fh if line.strip()]
    return head, results


def _write_cache(path, head, results):
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for r in results:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _get(session, url, params, spec, limiter, sleep):
    """One page with retries; returns the decoded JSON body."""
    delay = spec.backoff
    last = None
    for attempt in range(spec.max_retries + 1):
        limiter.wait()
        try:
            resp = session.get(url, params=params, timeout=60)
        except requests.RequestException as exc:
            last = f"{type(exc).__name__}: {exc}"
        else:
            if resp.status_code == 200:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise IngestError(f"invalid JSON from {url}: {exc}") from exc
            if resp.status_code not in RETRY_STATUS:
                raise IngestError(f"HTTP {resp.status_code} from {url}")
            last = f"HTTP {resp.status_code}"
            retry_after = resp.headers.get("Retry-After") if resp.headers else None
            if retry_after and retry_after.isdigit():
                delay = max(delay, float(retry_after))
        if attempt < spec.max_retries:
            logger.warning("request failed (%s); retrying in %.1fs", last, delay)
            sleep(delay)
            delay *= 2
    raise IngestError(f"giving up after {spec.max_retries + 1} attempts: {last}")


def fetch_works(spec, session=None, sleep=time.sleep, clock=time.monotonic):
    """Cursor-paginated retrieval of the works matching ``spec``.

    Each page is cached under ``spec.cache_dir`` keyed by a hash of the
    request, so an interrupted crawl resumes where it stopped.  Records
    lacking an id or a usable date are skipped and counted.
    """
    session = session or requests.Session()
    cache = Path(spec.cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    limiter = _RateLimiter(spec.max_rate, clock=clock, sleep=sleep)
    base = spec.query()
    out = FetchResult([])
    cursor = "*"
    cap = spec.max_works
    while cursor and (cap is None or len(out.records) < cap):
        params = {**base, "cursor": cursor}
        path = cache / f"{_request_key(spec.base_url, params)}.jsonl"
        if path.exists():
            head, results = _read_cache(path)
        else:
            body = _get(session, spec.base_url, params, spec, limiter, sleep)
            out.requests += 1
            if not isinstance(body, dict):
                raise IngestError("unexpected response body")
            results = body.get("results") or []
            head = {"next_cursor": (body.get("meta") or {}).get("next_cursor"),
                    "count": (body.get("meta") or {}).get("count")}
            _write_cache(path, head, results)
        out.pages += 1
        for raw in results:
            rec = parse_work(raw)
            if rec is None:
                out.skipped += 1
                continue
            out.records.append(rec)
            if cap is not None and len(out.records) >= cap:
                break
        cursor = head.get("next_cursor") if results else None
    if out.skipped:
        logger.warning("skipped %d malformed work records", out.skipped)
    return out


@dataclass
class BuildStats:
    works: int = 0
    edges: int = 0
    dropped_acausal: int = 0
    self_citations: int = 0
    duplicate_works: int = 0
    targets: int = 0
    sources: int = 0


def citation_edges(records):
    """In-corpus ``(citing, cited)`` pairs plus per-work fractional dates.

    Pairs whose citing work predates the cited one are dropped and counted.
    """
    dates, stats = {}, BuildStats()
    works = {}
    for r in records:
        if r.id in works:
            stats.duplicate_works += 1
            continue
        works[r.id] = r
        dates[r.id] = fractional_year(r.publication_date)
    stats.works = len(works)
    edges = []
    for citing in sorted(works):
        for cited in works[citing].references:
            if cited not in works:
                continue
            if cited == citing:
                stats.self_citations += 1
                continue
            if dates[citing] < dates[cited]:
                stats.dropped_acausal += 1
                continue
            edges.append((citing, cited))
    stats.edges = len(edges)
    return edges, dates, stats


def build_sen(records, spec, return_stats=False):
    """Network whose targets are works cited in-corpus at least ``min_citations`` times.

    A threshold of zero keeps every work cited at least once.  Event time
    is the citing work's publication date in fractional years; the horizon
    is the end of the query window or the latest date, whichever is later.
    """
    edges, dates, stats = citation_edges(records)
    counts = {}
    for _, cited in edges:
        counts[cited] = counts.get(cited, 0) + 1
    threshold = max(spec.min_citations, 1)
    targets = {w for w, c in counts.items() if c >= threshold}
    if not targets:
        raise EmptyNetwork(f"no work has >= {threshold} in-corpus citations")
    kept = [(s, t, dates[s]) for s, t in edges if t in targets]
    sources = {s for s, _, _ in kept}
    stats.targets, stats.sources = len(targets), len(sources)
    horizon = max(max(dates[w] for w in targets | sources),
                  fractional_year(spec.to_date))
    net = SingleEventNetwork.from_records(
        kept, {w: dates[w] for w in sorted(targets)}, {w: dates[w] for w in sorted(sources)},
        horizon=horizon)
    if stats.dropped_acausal:
        logger.warning("dropped %d citations dated before the cited work", stats.dropped_acausal)
    return (net, stats) if return_stats else net
