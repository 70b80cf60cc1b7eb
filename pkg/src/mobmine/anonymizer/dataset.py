"""The flagship publishable dataset: k-anonymous windows annotated with demographic classes."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from ..errors import PrivacyGateError
from .intervals import (DemoClass, class_of, generalization_height, interval_aggregate,
                        mean_age_interval_width)
from .kanon import AnonWindow, KAnonConfig, LossReport, kanon_windows


@dataclass
class AnonymizedDataset:
    windows: list[AnonWindow]
    classes: list[DemoClass]
    params: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return int(self.params.get("k", 1))


def _generality(c: DemoClass) -> tuple:
    return (int(c.gender_class == "*") + c.zone_level, c.age_width, c.member_count)


def assemble(windows: Sequence[AnonWindow], classes: Sequence[DemoClass],
             join: Mapping[str, int] | None = None, params: Mapping | None = None,
             unannotated: frozenset = frozenset()) -> AnonymizedDataset:
    """Annotate each window with the majority class of its supporters.

    Ties go to the more general class. ``unannotated`` lists pseudonyms known
    to lack a demographic record (subscribers without a contract); they count
    towards support but not towards the vote. Any other supporter without a
    class, or any undersized class, refuses publication.
    """
    undersized = [c.class_id for c in classes if c.undersized]
    if undersized:
        raise PrivacyGateError(f"{len(undersized)} demographic class(es) below k; refusing to publish")
    join = class_of(classes) if join is None else join
    by_id = {c.class_id: c for c in classes}
    out = []
    for w in windows:
        missing = [p for p in w.supporters if p not in join and p not in unannotated]
        if missing:
            raise PrivacyGateError(f"{len(missing)} supporter(s) of a published window have no demographic class")
        votes = Counter(join[p] for p in w.supporters if p in join)
        if votes:
            best = max(votes.items(), key=lambda kv: (kv[1], _generality(by_id[kv[0]]), -kv[0]))[0]
        else:
            best = None
        out.append(AnonWindow(w.window, w.bucket, w.support, w.supporters, best))
    return AnonymizedDataset(out, list(classes), dict(params or {}))


def anonymize(paths, demographics: Mapping, cfg: KAnonConfig, salt_id: str,
              zone_parent: Mapping[str, str] | None = None,
              unannotated: frozenset = frozenset()) -> tuple[AnonymizedDataset, LossReport]:
    """kanon_windows, interval_aggregate and assemble in one call."""
    cfg = cfg.validate()
    windows, loss = kanon_windows(paths, cfg)
    classes = interval_aggregate(demographics, cfg.k, zone_parent)
    loss.mean_age_interval_width = mean_age_interval_width(classes)
    loss.generalization_height = generalization_height(classes)
    params = {"k": cfg.k, "L": cfg.L, "time_bucketing": cfg.time_bucketing, "salt_id": salt_id}
    return assemble(windows, classes, params=params, unannotated=unannotated), loss


# ---------------------------------------------------------------------------
# serialization: supporters never leave memory


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_dataset(ds: AnonymizedDataset, out_dir, loss: LossReport | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"anon": out / "anon.jsonl", "classes": out / "classes.json"}
    params = dict(sorted(ds.params.items()))
    with open(paths["anon"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dump({"params": params}) + "\n")
        for w in ds.windows:
            fh.write(_dump({"window": list(w.window), "bucket": w.bucket, "support": w.support,
                            "class": w.class_id}) + "\n")
    paths["classes"].write_text(_dump({"params": params, "classes": [c.to_json() for c in ds.classes]}) + "\n",
                                encoding="utf-8")
    if loss is not None:
        paths["loss"] = out / "loss.json"
        paths["loss"].write_text(_dump({"params": params, **loss.to_json()}) + "\n", encoding="utf-8")
    return paths


def read_dataset(out_dir) -> AnonymizedDataset:
    out = Path(out_dir)
    with open(out / "anon.jsonl", encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    has_header = bool(lines) and "params" in lines[0]
    params = lines[0]["params"] if has_header else {}
    windows = [AnonWindow(tuple(d["window"]), d["bucket"], int(d["support"]), class_id=d["class"])
               for d in lines[int(has_header):]]
    classes_doc = json.loads((out / "classes.json").read_text(encoding="utf-8"))
    classes = [DemoClass.from_json(c) for c in classes_doc["classes"]]
    return AnonymizedDataset(windows, classes, params)
