"""k-anonymous trajectory windows: publish only subsequences shared by k people."""

from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..errors import InvalidConfig

DAY_NAMES = ("MON", "TUE", "WED", "THU", "FRI", "SAT", "SUN")
BUCKETINGS = ("how", "hod", "none")


def time_bucket(ts: int, bucketing: str = "how") -> str:
    """Coarse time slot label: hour-of-week ("MON_08"), hour-of-day ("H08") or "*"."""
    if bucketing == "how":
        t = time.gmtime(ts)
        return f"{DAY_NAMES[t.tm_wday]}_{t.tm_hour:02d}"
    if bucketing == "hod":
        return f"H{(ts % 86400) // 3600:02d}"
    if bucketing == "none":
        return "*"
    raise InvalidConfig(f"unknown time bucketing {bucketing!r}")


def bucket_hour(bucket: str) -> int | None:
    """Hour of day a bucket label refers to, if any."""
    if bucket == "*":
        return None
    return int(bucket[-2:])


@dataclass(frozen=True)
class KAnonConfig:
    k: int = 5
    L: int = 3
    time_bucketing: str = "how"

    def validate(self) -> "KAnonConfig":
        if self.k < 1:
            raise InvalidConfig("k must be >= 1")
        if self.L < 1:
            raise InvalidConfig("L must be >= 1")
        if self.time_bucketing not in BUCKETINGS:
            raise InvalidConfig(f"time_bucketing must be one of {BUCKETINGS}")
        return self


@dataclass
class AnonWindow:
    window: tuple[str, ...]
    bucket: str
    support: int
    supporters: frozenset = field(default=frozenset(), repr=False, compare=False)
    class_id: int | None = None

    @property
    def key(self) -> tuple:
        return (self.window, self.bucket)


@dataclass
class LossReport:
    suppressed_window_fraction: float = 0.0
    mean_age_interval_width: float = 0.0
    generalization_height: dict = field(default_factory=dict)
    n_window_occurrences: int = 0
    n_published_occurrences: int = 0
    n_distinct_windows: int = 0
    n_published_windows: int = 0

    def to_json(self) -> dict:
        return {"suppressed_window_fraction": self.suppressed_window_fraction,
                "mean_age_interval_width": self.mean_age_interval_width,
                "generalization_height": dict(sorted(self.generalization_height.items())),
                "n_window_occurrences": self.n_window_occurrences,
                "n_published_occurrences": self.n_published_occurrences,
                "n_distinct_windows": self.n_distinct_windows,
                "n_published_windows": self.n_published_windows}


def path_windows(timed: Sequence[tuple[str, int]], L: int, bucketing: str):
    """Yield (window, bucket) for every length-L window of a timed cell sequence.

    A sequence shorter than L yields one window covering all of it.
    """
    if not timed:
        return
    if len(timed) < L:
        yield tuple(c for c, _ in timed), time_bucket(timed[0][1], bucketing)
        return
    cells = [c for c, _ in timed]
    for i in range(len(timed) - L + 1):
        yield tuple(cells[i:i + L]), time_bucket(timed[i][1], bucketing)


def count_windows(paths: Iterable, cfg: KAnonConfig):
    """Multiset of window occurrences and distinct supporters per (window, bucket)."""
    supporters: dict[tuple, set] = defaultdict(set)
    occurrences: dict[tuple, int] = defaultdict(int)
    for p in paths:
        for key in path_windows(p.timed_cells(), cfg.L, cfg.time_bucketing):
            supporters[key].add(p.pseudonym)
            occurrences[key] += 1
    return supporters, occurrences


def kanon_windows(paths: Iterable, cfg: KAnonConfig | None = None) -> tuple[list[AnonWindow], LossReport]:
    """Publish the (window, bucket) pairs supported by at least k distinct pseudonyms.

    Support counts people, not occurrences, so a daily commuter cannot
    vouch for their own route.
    """
    cfg = (cfg or KAnonConfig()).validate()
    supporters, occurrences = count_windows(paths, cfg)
    published = []
    total = kept = 0
    for key in sorted(supporters):
        n = occurrences[key]
        total += n
        sup = supporters[key]
        if len(sup) >= cfg.k:
            kept += n
            published.append(AnonWindow(key[0], key[1], len(sup), frozenset(sup)))
    loss = LossReport(
        suppressed_window_fraction=(total - kept) / total if total else 0.0,
        n_window_occurrences=total, n_published_occurrences=kept,
        n_distinct_windows=len(supporters), n_published_windows=len(published))
    return published, loss


@dataclass(frozen=True)
class _WindowPath:
    pseudonym: str
    cells: tuple
    ts: int

    def timed_cells(self):
        return [(c, self.ts) for c in self.cells]


def windows_as_paths(windows: Iterable[AnonWindow], bucket_ts) -> list[_WindowPath]:
    """Re-expand published windows into one pseudo-path per supporter.

    ``bucket_ts`` maps a bucket label back to a representative timestamp.
    """
    return [_WindowPath(p, w.window, bucket_ts(w.bucket)) for w in windows for p in sorted(w.supporters)]


def bucket_start_ts(bucket: str, week_start_ts: int = 1704067200) -> int:
    """First second of a bucket in the week starting at ``week_start_ts`` (a Monday 00:00 UTC)."""
    if bucket == "*":
        return week_start_ts
    if bucket.startswith("H"):
        return week_start_ts + int(bucket[1:]) * 3600
    day, hour = bucket.split("_")
    return week_start_ts + DAY_NAMES.index(day) * 86400 + int(hour) * 3600
