"""Demographic interval aggregation by multidimensional median splits.

Age becomes a closed interval. Gender generalizes value -> "*". Home zone
generalizes zone -> parent grouping -> "*" when a parent map is supplied,
otherwise zone -> "*".

The split rule depends only on the records, never on k: at each node the
widest normalized attribute is cut at its median and k only decides where
recursion stops. Partitions for a larger k are therefore coarsenings of
those for a smaller k, which makes information loss monotone in k.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..errors import InvalidConfig

ANY = "*"
ATTRS = ("age", "gender", "zone")


@dataclass
class DemoClass:
    class_id: int
    age_lo: int
    age_hi: int
    gender_class: str
    zone_class: str
    member_count: int
    members: frozenset = field(default=frozenset(), repr=False, compare=False)
    undersized: bool = False
    zone_level: int = field(default=0, compare=False)

    @property
    def age_width(self) -> int:
        return self.age_hi - self.age_lo

    def to_json(self) -> dict:
        return {"class_id": self.class_id, "age": [self.age_lo, self.age_hi],
                "gender": self.gender_class, "zone": self.zone_class,
                "member_count": self.member_count, "undersized": self.undersized,
                "zone_level": self.zone_level}

    @classmethod
    def from_json(cls, d) -> "DemoClass":
        return cls(int(d["class_id"]), int(d["age"][0]), int(d["age"][1]), d["gender"], d["zone"],
                   int(d["member_count"]), undersized=bool(d.get("undersized", False)),
                   zone_level=int(d.get("zone_level", 0)))


def _zone_rank(zone_parent: Mapping[str, str] | None):
    # ordinal for zones that keeps siblings under one parent contiguous
    def rank(z):
        return ((zone_parent or {}).get(z, ""), z)
    return rank


def _zone_label(zones: set, zone_parent) -> tuple[str, int]:
    if len(zones) == 1:
        return next(iter(zones)), 0
    if zone_parent:
        parents = {zone_parent.get(z) for z in zones}
        if len(parents) == 1 and None not in parents:
            return next(iter(parents)), 1
        return ANY, 2
    return ANY, 1


def _key(rec, attr, zrank):
    if attr == "age":
        return rec.age
    if attr == "gender":
        return rec.gender
    return zrank(rec.home_zone)


def _width(recs, attr, zrank, full) -> float:
    if attr == "age":
        lo, hi = min(r.age for r in recs), max(r.age for r in recs)
        return (hi - lo) / full["age"] if full["age"] else 0.0
    distinct = len({_key(r, attr, zrank) for r in recs})
    return (distinct - 1) / full[attr] if full[attr] else 0.0


def _split(recs, attr, zrank):
    """Median cut on ``attr``; of the two candidate cuts take the more balanced one."""
    keys = sorted(_key(r, attr, zrank) for r in recs)
    med = keys[(len(keys) - 1) // 2]
    best = None
    for left_pred in (lambda v: v <= med, lambda v: v < med):
        left = [r for r in recs if left_pred(_key(r, attr, zrank))]
        if 0 < len(left) < len(recs):
            imbalance = abs(2 * len(left) - len(recs))
            if best is None or imbalance < best[0]:
                right = [r for r in recs if not left_pred(_key(r, attr, zrank))]
                best = (imbalance, left, right)
    return None if best is None else (best[1], best[2])


def interval_aggregate(demo: Mapping[str, object], k: int,
                       zone_parent: Mapping[str, str] | None = None) -> list[DemoClass]:
    """Partition demographic records into classes of at least k members.

    ``demo`` maps pseudonym to a record with ``age``, ``gender`` and
    ``home_zone``. With fewer than k records a single class flagged
    ``undersized`` is returned.
    """
    if k < 1:
        raise InvalidConfig("k must be >= 1")
    records = [(p, r) for p, r in sorted(demo.items())]
    if not records:
        return []
    zrank = _zone_rank(zone_parent)
    recs_only = [r for _, r in records]
    full = {"age": max(r.age for r in recs_only) - min(r.age for r in recs_only),
            "gender": len({r.gender for r in recs_only}) - 1,
            "zone": len({r.home_zone for r in recs_only}) - 1}
    pseud_of = {id(r): p for p, r in records}

    leaves: list[list] = []
    stack = [recs_only]
    while stack:
        part = stack.pop()
        widths = [(_width(part, a, zrank, full), -i, a) for i, a in enumerate(ATTRS)]
        w, _, attr = max(widths)
        halves = _split(part, attr, zrank) if w > 0 else None
        if halves is None or min(len(halves[0]), len(halves[1])) < k:
            leaves.append(part)
            continue
        stack.append(halves[1])
        stack.append(halves[0])

    classes = []
    for part in leaves:
        zone_cls, zone_level = _zone_label({r.home_zone for r in part}, zone_parent)
        genders = {r.gender for r in part}
        classes.append(DemoClass(
            0, min(r.age for r in part), max(r.age for r in part),
            next(iter(genders)) if len(genders) == 1 else ANY, zone_cls, len(part),
            frozenset(pseud_of[id(r)] for r in part), undersized=len(part) < k, zone_level=zone_level))
    classes.sort(key=lambda c: (c.age_lo, c.age_hi, c.gender_class, c.zone_class, min(c.members)))
    for i, c in enumerate(classes):
        c.class_id = i
    return classes


def class_of(classes: Sequence[DemoClass]) -> dict[str, int]:
    return {p: c.class_id for c in classes for p in c.members}


def generalization_level(c: DemoClass) -> dict[str, int]:
    return {"gender": int(c.gender_class == ANY), "zone": c.zone_level}


def mean_age_interval_width(classes: Sequence[DemoClass]) -> float:
    """Record-weighted mean width of the age intervals."""
    n = sum(c.member_count for c in classes)
    return sum(c.age_width * c.member_count for c in classes) / n if n else 0.0


def generalization_height(classes: Sequence[DemoClass]) -> dict[str, float]:
    """Record-weighted mean hierarchy level per attribute; age reported as normalized width."""
    n = sum(c.member_count for c in classes)
    if not n:
        return {"age": 0.0, "gender": 0.0, "zone": 0.0}
    span = max(c.age_hi for c in classes) - min(c.age_lo for c in classes)
    out = {"age": sum(c.age_width * c.member_count for c in classes) / n / span if span else 0.0}
    for attr in ("gender", "zone"):
        out[attr] = sum(generalization_level(c)[attr] * c.member_count for c in classes) / n
    return out
