"""Operator-premises boundary: parse inputs, join with demographics, pseudonymize.

Nothing downstream of :func:`pseudonymize` ever sees a raw subscriber id or
the salt.
"""

from __future__ import annotations

import csv
import hashlib
import hmac
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

from .errors import ParseError, ReferentialError, WeakSaltError
from .records import DemoRecord, EventKind, NetworkEvent, sort_events
from .synthnet import CellMap, CellSite

log = logging.getLogger(__name__)

MIN_SALT_BYTES = 16
SALT_ENV = "MOBMINE_SALT"

CELLS_HEADER = ["cell", "lat", "lon", "radius_m", "la"]
EVENTS_HEADER = ["ts", "sub", "kind", "cell"]
DEMO_HEADER = ["sub", "age", "gender", "postcode", "home_zone"]
ZONES_HEADER = ["cell", "zone"]
_KINDS = {k.value: k for k in EventKind}


def _rows(path, header):
    """Yield (line_number, row) after checking the header matches exactly."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first != header:
            raise ParseError(path, 1, f"expected header {','.join(header)!r}, got {first!r}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(path, reader.line_num, f"expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, row


def read_cells(path) -> CellMap:
    sites = []
    seen = set()
    for line, (cell, lat, lon, radius, la) in _rows(path, CELLS_HEADER):
        try:
            site = CellSite(cell, float(lat), float(lon), float(radius), la)
        except ValueError as exc:
            raise ParseError(path, line, str(exc)) from None
        if not cell or not la:
            raise ParseError(path, line, "empty cell or la id")
        if not 100.0 <= site.radius_m <= 35000.0:
            raise ParseError(path, line, f"radius_m {site.radius_m} outside [100, 35000]")
        if cell in seen:
            raise ParseError(path, line, f"duplicate cell {cell!r}")
        seen.add(cell)
        sites.append(site)
    return CellMap.from_sites(sites)


def read_events(path) -> list[NetworkEvent]:
    events = []
    for line, (ts, sub, kind, cell) in _rows(path, EVENTS_HEADER):
        try:
            t = int(ts)
        except ValueError:
            raise ParseError(path, line, f"bad timestamp {ts!r}") from None
        if t < 0:
            raise ParseError(path, line, "negative timestamp")
        if kind not in _KINDS:
            raise ParseError(path, line, f"unknown event kind {kind!r}")
        if not sub or not cell:
            raise ParseError(path, line, "empty sub or cell")
        events.append(NetworkEvent(t, sub, _KINDS[kind], cell))
    return events


def read_demographics(path) -> dict[str, DemoRecord]:
    table = {}
    for line, (sub, age, gender, postcode, zone) in _rows(path, DEMO_HEADER):
        try:
            a = int(age)
        except ValueError:
            raise ParseError(path, line, f"bad age {age!r}") from None
        if not 0 <= a <= 130:
            raise ParseError(path, line, f"age {a} outside [0, 130]")
        if not all((sub, gender, postcode, zone)):
            raise ParseError(path, line, "empty demographic field")
        if sub in table:
            raise ParseError(path, line, f"duplicate sub {sub!r}")
        table[sub] = DemoRecord(sub, a, gender, postcode, zone)
    return table


def read_zones(path) -> dict[str, str]:
    zones = {}
    for line, (cell, zone) in _rows(path, ZONES_HEADER):
        if not cell or not zone:
            raise ParseError(path, line, "empty cell or zone")
        zones[cell] = zone
    return zones


class LoadedInputs(NamedTuple):
    events: list[NetworkEvent]
    cells: CellMap
    demographics: dict[str, DemoRecord]
    zones: dict[str, str]
    unknown_subs: frozenset[str]


def load_inputs(events, cells, demographics, zones=None) -> LoadedInputs:
    """Parse and cross-reference the input files.

    Events referencing unknown cells are a hard error; events of subscribers
    without a demographic record are kept and reported.
    """
    net = read_cells(cells)
    evs = sort_events(read_events(events))
    demo = read_demographics(demographics)
    zone_map = read_zones(zones) if zones else {c: net.la_of(c) for c in net.cells}
    bad_cells = {e.cell for e in evs if e.cell not in net}
    if bad_cells:
        raise ReferentialError("events reference unknown cells", bad_cells)
    unzoned = set(net.cells) - set(zone_map)
    if unzoned:
        raise ReferentialError("cells without a zone", unzoned)
    unknown = frozenset({e.sub for e in evs} - set(demo))
    if unknown:
        log.warning("%d subscribers have events but no demographic record", len(unknown))
    return LoadedInputs(evs, net, demo, zone_map, unknown)


# ---------------------------------------------------------------------------
# pseudonymization


def load_salt(salt_file=None, environ: Mapping[str, str] | None = None) -> bytes:
    """Salt from ``salt_file`` (raw bytes, or hex text) or the MOBMINE_SALT env var (hex)."""
    environ = os.environ if environ is None else environ
    if salt_file is not None:
        data = Path(salt_file).read_bytes()
        text = data.strip()
        try:
            salt = bytes.fromhex(text.decode("ascii"))
        except (UnicodeDecodeError, ValueError):
            salt = data
    elif environ.get(SALT_ENV):
        try:
            salt = bytes.fromhex(environ[SALT_ENV].strip())
        except ValueError:
            raise WeakSaltError(f"{SALT_ENV} is not valid hex") from None
    else:
        raise WeakSaltError(f"no salt: pass --salt-file or set {SALT_ENV}")
    _check_salt(salt)
    return salt


def _check_salt(salt: bytes) -> None:
    if len(salt) < MIN_SALT_BYTES:
        raise WeakSaltError(f"salt must be at least {MIN_SALT_BYTES} bytes, got {len(salt)}")


def salt_id(salt: bytes) -> str:
    """Public fingerprint of a salt, safe to publish in provenance blocks."""
    return hashlib.sha256(b"mobmine-salt-id\x00" + salt).hexdigest()[:16]


def make_pseudonymizer(salt: bytes):
    _check_salt(salt)
    cache: dict[str, str] = {}

    def pseud(sub: str) -> str:
        p = cache.get(sub)
        if p is None:
            p = hmac.new(salt, sub.encode("utf-8"), hashlib.sha256).hexdigest()
            cache[sub] = p
        return p

    return pseud


@dataclass(frozen=True)
class Provenance:
    salt_id: str
    created_ts: int


@dataclass
class AnnotatedStream:
    """Events and demographics keyed by pseudonym."""

    events: list[NetworkEvent]
    demographics: dict[str, DemoRecord]
    provenance: Provenance

    @property
    def n_pseudonyms(self) -> int:
        return len({e.sub for e in self.events} | set(self.demographics))

    def by_pseudonym(self) -> dict[str, list[NetworkEvent]]:
        out: dict[str, list[NetworkEvent]] = {}
        for e in self.events:
            out.setdefault(e.sub, []).append(e)
        return out


def pseudonymize(events: Iterable[NetworkEvent], demo: Mapping[str, DemoRecord], salt: bytes,
                 created_ts: int | None = None) -> AnnotatedStream:
    """Replace every subscriber id with HMAC-SHA256(salt, sub).

    ``created_ts`` defaults to the latest event time so that identical inputs
    give identical provenance.
    """
    pseud = make_pseudonymizer(salt)
    out_events = [NetworkEvent(e.ts, pseud(e.sub), e.kind, e.cell) for e in events]
    out_demo = {}
    for sub, rec in demo.items():
        p = pseud(sub)
        out_demo[p] = DemoRecord(p, rec.age, rec.gender, rec.postcode, rec.home_zone)
    if created_ts is None:
        created_ts = max((e.ts for e in out_events), default=0)
    stream = AnnotatedStream(sort_events(out_events), dict(sorted(out_demo.items())),
                             Provenance(salt_id(salt), int(created_ts)))
    log.info("pseudonymized %d events, %d distinct pseudonyms", len(out_events), stream.n_pseudonyms)
    return stream


def write_stream(stream: AnnotatedStream, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"events": out / "stream_events.csv", "demographics": out / "stream_demo.csv",
             "provenance": out / "provenance.json"}
    with open(paths["events"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ts", "pseud", "kind", "cell"])
        w.writerows((e.ts, e.sub, e.kind.value, e.cell) for e in stream.events)
    with open(paths["demographics"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pseud", "age", "gender", "postcode", "home_zone"])
        w.writerows(stream.demographics.values())
    paths["provenance"].write_text(json.dumps({"salt_id": stream.provenance.salt_id,
                                               "created_ts": stream.provenance.created_ts},
                                              sort_keys=True) + "\n", encoding="utf-8")
    return paths


def read_stream(out_dir, with_demographics: bool = True) -> AnnotatedStream:
    out = Path(out_dir)
    events = []
    for line, (ts, p, kind, cell) in _rows(out / "stream_events.csv", ["ts", "pseud", "kind", "cell"]):
        if kind not in _KINDS:
            raise ParseError(out / "stream_events.csv", line, f"unknown event kind {kind!r}")
        events.append(NetworkEvent(int(ts), p, _KINDS[kind], cell))
    demo = {}
    if with_demographics:
        for _, (p, age, gender, postcode, zone) in _rows(out / "stream_demo.csv", ["pseud", *DEMO_HEADER[1:]]):
            demo[p] = DemoRecord(p, int(age), gender, postcode, zone)
    prov = json.loads((out / "provenance.json").read_text(encoding="utf-8"))
    return AnnotatedStream(events, demo, Provenance(prov["salt_id"], int(prov["created_ts"])))
