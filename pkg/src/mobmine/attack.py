"""Adversarial checks: the home/work linkability attack and an independent k-anonymity scanner.

The scanner deliberately shares no code with the anonymizer. It re-derives
windows and time buckets from the serialized paths and counts supporters
with plain loops over an inverted cell index.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import InvalidConfig, ParseError

AUX_HEADER = ["label", "home_zone", "work_zone"]


@dataclass(frozen=True)
class AuxEntry:
    label: str
    home_zone: str
    work_zone: str


@dataclass
class AuxDirectory:
    entries: list[AuxEntry]

    def __post_init__(self):
        labels = [e.label for e in self.entries]
        if len(labels) != len(set(labels)):
            raise InvalidConfig("aux directory labels must be unique")
        self._by_pair: dict[tuple[str, str], list[str]] = defaultdict(list)
        for e in self.entries:
            self._by_pair[(e.home_zone, e.work_zone)].append(e.label)

    @classmethod
    def read(cls, path) -> "AuxDirectory":
        entries = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != AUX_HEADER:
                raise ParseError(path, 1, f"expected header {','.join(AUX_HEADER)!r}")
            for row in reader:
                if len(row) != 3:
                    raise ParseError(path, reader.line_num, "expected 3 fields")
                entries.append(AuxEntry(*row))
        return cls(entries)

    def candidates(self, homes: set | None, works: set | None) -> list[str]:
        """Labels consistent with the inferred home and work zone sets (None = unconstrained)."""
        return sorted(e.label for e in self.entries
                      if (homes is None or e.home_zone in homes) and (works is None or e.work_zone in works))


@dataclass(frozen=True)
class AttackConfig:
    night_hours: tuple[int, int] = (0, 6)     # [start, end) hour of day
    work_hours: tuple[int, int] = (9, 17)


@dataclass
class ReidReport:
    n_targets: int = 0
    n_unique_matches: int = 0
    n_correct: int | None = None
    reid_rate: float = 0.0
    mean_candidate_set_size: float = 0.0
    max_confidence: float = 0.0
    mode: str = ""

    def to_json(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# dataset adapters: each yields (key, multiplicity, [(hour, zone set), ...])


def _hour(ts: int) -> int:
    return (ts % 86400) // 3600


def records_from_stream(stream, zones: Mapping[str, str]):
    obs = defaultdict(list)
    for e in stream.events:
        obs[e.sub].append((_hour(e.ts), frozenset([zones[e.cell]])))
    return [(p, 1, obs[p]) for p in sorted(obs)]


def records_from_cloaked(ds, zones: Mapping[str, str]):
    region_zones = {r: frozenset(zones[c] for c in cells) for r, cells in ds.region_cells.items()}
    obs = defaultdict(list)
    for p, t, r in ds.records:
        obs[p].append((_hour(t), region_zones[r]))
    return [(p, 1, obs[p]) for p in sorted(obs)]


def records_from_anonymized(ds, zones: Mapping[str, str]):
    """One record per published window; its supporters are indistinguishable, so multiplicity = support."""
    out = []
    for i, w in enumerate(ds.windows):
        hour = None if w.bucket == "*" else int(w.bucket[-2:])
        zs = frozenset(zones[c] for c in w.window)
        out.append((i, w.support, [] if hour is None else [(hour, zs)]))
    return out


def records_from_synthetic(ds):
    out = []
    for a in ds.agents:
        obs = [(h, frozenset([s])) for day in a.days for h, s in enumerate(day) if s != "-"]
        out.append((a.agent_id, 1, obs))
    return out


def dataset_records(dataset, zones: Mapping[str, str]) -> tuple[str, list]:
    from .anonymizer import AnonymizedDataset, CloakedDataset, DensityGraph, SyntheticDataset
    from .ingest import AnnotatedStream

    if isinstance(dataset, DensityGraph):
        return "density_graph", []
    if isinstance(dataset, AnnotatedStream):
        return "pseudonymized", records_from_stream(dataset, zones)
    if isinstance(dataset, CloakedDataset):
        return "cloaked", records_from_cloaked(dataset, zones)
    if isinstance(dataset, AnonymizedDataset):
        return "anonymized", records_from_anonymized(dataset, zones)
    if isinstance(dataset, SyntheticDataset):
        return "synthetic", records_from_synthetic(dataset)
    raise InvalidConfig(f"unsupported dataset type {type(dataset).__name__}")


def _modal_zones(obs, hours: tuple[int, int]) -> set | None:
    """Zones tied for most observations in the hour range, or None if unobserved."""
    lo, hi = hours
    c: Counter = Counter()
    for h, zs in obs:
        if lo <= h < hi:
            for z in zs:
                c[z] += 1
    if not c:
        return None
    top = max(c.values())
    return {z for z, v in c.items() if v == top}


def linkability_attack(dataset, aux: AuxDirectory, zones: Mapping[str, str],
                       cfg: AttackConfig | None = None, truth: Mapping | None = None) -> ReidReport:
    """Infer home (night) and work (day) zones per record and match them against aux.

    A record is re-identified when exactly one aux entry fits and the record
    stands for a single person. Confidence of a guess is
    1 / max(candidates, multiplicity). ``truth`` maps record keys to aux
    labels; when given, correct unique matches are counted.
    """
    cfg = cfg or AttackConfig()
    mode, records = dataset_records(dataset, zones)
    report = ReidReport(mode=mode)
    if truth is not None:
        report.n_correct = 0
    sizes = []
    for key, mult, obs in records:
        homes = _modal_zones(obs, cfg.night_hours)
        works = _modal_zones(obs, cfg.work_hours)
        cands = aux.candidates(homes, works)
        size = max(len(cands), mult)
        sizes.append(size)
        if cands:
            report.max_confidence = max(report.max_confidence, 1.0 / size)
        if len(cands) == 1 and mult == 1:
            report.n_unique_matches += 1
            if truth is not None and truth.get(key) == cands[0]:
                report.n_correct += 1
    report.n_targets = len(records)
    report.reid_rate = report.n_unique_matches / report.n_targets if report.n_targets else 0.0
    report.mean_candidate_set_size = sum(sizes) / len(sizes) if sizes else 0.0
    return report


def write_report(report: ReidReport, path, extra: Mapping | None = None) -> None:
    doc = {**report.to_json(), **(extra or {})}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=1) + "\n")


# ---------------------------------------------------------------------------
# independent k-anonymity scanner

_WEEKDAYS = ["MON", "TUE", "WED", "THU", "FRI", "SAT", "SUN"]


def _label(ts: int, bucketing: str) -> str:
    moment = dt.datetime.fromtimestamp(ts, tz=dt.timezone.utc)
    if bucketing == "how":
        return _WEEKDAYS[moment.weekday()] + "_" + str(moment.hour).zfill(2)
    if bucketing == "hod":
        return "H" + str(moment.hour).zfill(2)
    return "*"


def _sequence(path: Mapping) -> list[tuple[str, int]]:
    raw = [(path["origin_cell"], int(path["depart_ts"]))]
    raw += [(h[0], int(h[1])) for h in path["hops"]]
    raw.append((path["dest_cell"], int(path["arrive_ts"])))
    seq = []
    for cell, ts in raw:
        if not seq or seq[-1][0] != cell:
            seq.append((cell, ts))
    return seq


@dataclass
class VerifyReport:
    passed: bool
    n_windows: int
    n_classes: int
    counterexamples: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.passed


def verify_kanonymity(windows: Sequence, classes: Sequence, raw_paths: Iterable[Mapping], k: int,
                      L: int, bucketing: str, demographics: Mapping | None = None,
                      limit: int = 10) -> VerifyReport:
    """Recount every published window's supporters and every class's size from scratch.

    ``windows`` and ``classes`` are the published records as dicts (as read
    back from anon.jsonl and classes.json); ``raw_paths`` are path dicts as
    written to paths.jsonl. When ``demographics`` (pseudonym -> record) is
    given, each class box is also counted against the raw table.
    """
    paths = [(p["pseud"], _sequence(p)) for p in raw_paths]
    index: dict[str, set[int]] = defaultdict(set)
    for i, (_, seq) in enumerate(paths):
        for cell, _ in seq:
            index[cell].add(i)
    bad = []
    for w in windows:
        window = list(w["window"])
        bucket = w["bucket"]
        candidates = set.intersection(*(index.get(c, set()) for c in window)) if window else set()
        who = set()
        for i in sorted(candidates):
            pseud, seq = paths[i]
            n = len(seq)
            if n < L:
                if [c for c, _ in seq] == window and _label(seq[0][1], bucketing) == bucket:
                    who.add(pseud)
                continue
            for s in range(n - L + 1):
                if [c for c, _ in seq[s:s + L]] == window and _label(seq[s][1], bucketing) == bucket:
                    who.add(pseud)
                    break
        if len(who) < k or len(who) != w.get("support", len(who)):
            bad.append({"kind": "window", "window": window, "bucket": bucket,
                        "published_support": w.get("support"), "recounted_support": len(who)})
    for c in classes:
        if c["member_count"] < k:
            bad.append({"kind": "class", "class_id": c["class_id"], "member_count": c["member_count"]})
            continue
        if demographics is not None:
            lo, hi = c["age"]
            inside = 0
            for rec in demographics.values():
                if not lo <= rec.age <= hi:
                    continue
                if c["gender"] != "*" and rec.gender != c["gender"]:
                    continue
                if c["zone"] != "*" and c.get("zone_level", 0) == 0 and rec.home_zone != c["zone"]:
                    continue
                inside += 1
            if inside < k:
                bad.append({"kind": "class_box", "class_id": c["class_id"], "records_in_box": inside})
    return VerifyReport(not bad, len(windows), len(classes), bad[:limit])
