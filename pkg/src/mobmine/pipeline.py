"""Stage orchestration with file-access wiring, privacy scans and a provenance manifest.

Every stage reads its inputs through a :class:`StageContext`. Stages after
ingest get a context that refuses raw events, raw demographics and the salt,
so a stage cannot quietly re-identify anything even by mistake.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from . import anonymizer as anon
from . import attack, ingest, odmatrix, routeminer, synthnet, timegeo
from .config import PipelineConfig
from .errors import PrivacyGateError, ReferentialError

log = logging.getLogger(__name__)


class Workspace:
    """Fixed layout of stage outputs under one directory."""

    def __init__(self, root):
        self.root = Path(root)

    def __getattr__(self, name):
        rel = LAYOUT.get(name)
        if rel is None:
            raise AttributeError(name)
        return self.root / rel

    def dir(self, stage: str) -> Path:
        d = self.root / stage
        d.mkdir(parents=True, exist_ok=True)
        return d

    def rel(self, path) -> str:
        return Path(path).resolve().relative_to(self.root.resolve()).as_posix()


LAYOUT = {
    "cells": "net/cells.csv",
    "zones": "net/zones.csv",
    "events": "sim/events.csv",
    "demographics": "sim/demographics.csv",
    "truth": "sim/truth.jsonl",
    "aux": "sim/aux.csv",
    "stream": "ingest",
    "stream_events": "ingest/stream_events.csv",
    "stream_demo": "ingest/stream_demo.csv",
    "provenance": "ingest/provenance.json",
    "stations": "mine/stations.jsonl",
    "paths": "mine/paths.jsonl",
    "bundles": "mine/bundles.jsonl",
    "routes": "mine/routes.jsonl",
    "anon": "anon",
    "anon_windows": "anon/anon.jsonl",
    "classes": "anon/classes.json",
    "loss": "anon/loss.json",
    "density": "anon/density.csv",
    "od": "od/odmatrix.csv",
    "od_anon": "od/odmatrix_anon.csv",
    "heatmap": "od/od_heatmap.csv",
    "reid": "attack/reid_report.json",
    "verify": "attack/verify.json",
    "manifest": "manifest.json",
}

PRE_INGEST_DIRS = ("net", "sim")
POST_INGEST_DIRS = ("ingest", "mine", "anon", "od", "attack")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class StageRecord:
    stage: str
    params: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"stage": self.stage, "params": self.params,
                "inputs": dict(sorted(self.inputs.items())), "outputs": dict(sorted(self.outputs.items()))}


class StageContext:
    """Gatekeeper for a stage's file reads; records hashes for the manifest."""

    def __init__(self, ws: Workspace, stage: str, params: Mapping, forbidden: Iterable = ()):
        self.ws = ws
        self.record = StageRecord(stage, dict(params))
        self._forbidden = {Path(p).resolve() for p in forbidden}

    def input(self, path) -> Path:
        p = Path(path)
        if p.resolve() in self._forbidden:
            raise PrivacyGateError(f"stage {self.record.stage!r} may not read {p.name}")
        self.record.inputs[self._name(p)] = sha256_file(p)
        return p

    def output(self, path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def seal(self, *paths) -> StageRecord:
        for p in paths:
            self.record.outputs[self._name(p)] = sha256_file(p)
        return self.record

    def _name(self, p: Path) -> str:
        try:
            return self.ws.rel(p)
        except ValueError:
            return p.name


def post_ingest_forbidden(ws: Workspace, salt_file=None) -> list[Path]:
    out = [ws.events, ws.demographics]
    if salt_file:
        out.append(Path(salt_file))
    return out


# ---------------------------------------------------------------------------
# stages


def _zones(ctx: StageContext, cfg: PipelineConfig, net) -> dict[str, str]:
    if ctx.ws.zones.exists():
        return ingest.read_zones(ctx.input(ctx.ws.zones))
    return {c: net.la_of(c) for c in net.cells}


def stage_gen_net(ws: Workspace, cfg: PipelineConfig) -> StageRecord:
    params = {"seed": cfg.run.seed, **cfg.as_dict()["network"]}
    ctx = StageContext(ws, "gen-net", params)
    net = synthnet.generate_network(cfg.network, seed=cfg.run.seed)
    synthnet.write_cells(net, ctx.output(ws.cells))
    if cfg.run.zones:
        zones = ingest.read_zones(ctx.input(cfg.run.zones))
        missing = set(net.cells) - set(zones)
        if missing:
            raise ReferentialError("zones file misses cells", missing)
    else:
        zones = {c: net.la_of(c) for c in net.cells}
    synthnet.write_zones(zones, ctx.output(ws.zones))
    return ctx.seal(ws.cells, ws.zones)


def stage_simulate(ws: Workspace, cfg: PipelineConfig) -> StageRecord:
    params = {"seed": cfg.run.seed, "population": cfg.as_dict()["population"], "sim": cfg.as_dict()["sim"]}
    params["sim"].pop("workers")
    ctx = StageContext(ws, "simulate", params)
    net = ingest.read_cells(ctx.input(ws.cells))
    zones = _zones(ctx, cfg, net)
    pop = synthnet.generate_population(cfg.population, net, seed=cfg.run.seed + 1, zones=zones)
    sim_cfg = synthnet.SimConfig(**{**cfg.as_dict()["sim"], "workers": cfg.run.threads})
    events, truth = synthnet.simulate_events(pop, net, sim_cfg, seed=cfg.run.seed + 2, zones=zones)
    synthnet.write_events(events, ctx.output(ws.events))
    synthnet.write_demographics((a.demographics for a in pop), ctx.output(ws.demographics))
    synthnet.write_truth(truth, ctx.output(ws.truth))
    synthnet.write_aux(pop, zones, ctx.output(ws.aux))
    log.info("simulated %d agents: %d events, %d trips", len(pop), len(events), len(truth.trips))
    return ctx.seal(ws.events, ws.demographics, ws.truth, ws.aux)


@dataclass
class IngestResult:
    record: StageRecord
    raw_ids: frozenset
    pseudonyms: frozenset


def stage_ingest(ws: Workspace, cfg: PipelineConfig, salt: bytes, salt_source: str,
                 events=None, cells=None, demographics=None) -> IngestResult:
    ctx = StageContext(ws, "ingest", {"salt_source": salt_source})
    loaded = ingest.load_inputs(ctx.input(events or ws.events), ctx.input(cells or ws.cells),
                                ctx.input(demographics or ws.demographics),
                                ctx.input(ws.zones) if ws.zones.exists() else None)
    stream = ingest.pseudonymize(loaded.events, loaded.demographics, salt)
    paths = ingest.write_stream(stream, ws.dir("ingest"))
    raw_ids = frozenset({e.sub for e in loaded.events} | set(loaded.demographics))
    pseuds = frozenset({e.sub for e in stream.events} | set(stream.demographics))
    ctx.record.params["salt_id"] = stream.provenance.salt_id
    return IngestResult(ctx.seal(*paths.values()), raw_ids, pseuds)


def _post_ctx(ws, stage, params, salt_file):
    return StageContext(ws, stage, params, post_ingest_forbidden(ws, salt_file))


def stage_timegeo(ws: Workspace, cfg: PipelineConfig, salt_file=None) -> StageRecord:
    ctx = _post_ctx(ws, "timegeo", cfg.as_dict()["timegeo"], salt_file)
    net = ingest.read_cells(ctx.input(ws.cells))
    for p in (ws.stream_events, ws.provenance):
        ctx.input(p)
    stream = ingest.read_stream(ws.stream, with_demographics=False)
    stations = timegeo.detect_stations(stream, net.adjacency, cfg.timegeo)
    paths = timegeo.extract_paths(stream, stations)
    bundles = timegeo.bundle_paths(paths, cfg.timegeo)
    timegeo.write_stations(stations, ctx.output(ws.stations))
    timegeo.write_paths(paths, ctx.output(ws.paths))
    timegeo.write_bundles(bundles, ctx.output(ws.bundles))
    return ctx.seal(ws.stations, ws.paths, ws.bundles)


def stage_routes(ws: Workspace, cfg: PipelineConfig, salt_file=None, source: str = "paths") -> StageRecord:
    params = {**cfg.as_dict()["routes"], "source": source}
    ctx = _post_ctx(ws, "routes", params, salt_file)
    if source == "paths":
        paths = timegeo.read_paths(ctx.input(ws.paths))
        clusters, _ = routeminer.mine_routes(paths, cfg.routes)
    else:
        ds = anon.read_dataset(ctx.input(ws.anon_windows).parent)
        width = max(7, len(str(len(ds.windows))))
        ids = [f"w{i:0{width}d}" for i in range(len(ds.windows))]
        seqs = [w.window for w in ds.windows]
        graph = routeminer.build_graph(routeminer.sketch_sequences(ids, seqs, cfg.routes), cfg.routes)
        clusters = routeminer.cluster(graph, dict(zip(ids, seqs)))
    routeminer.write_routes(clusters, ctx.output(ws.routes))
    return ctx.seal(ws.routes)


def stage_anonymize(ws: Workspace, cfg: PipelineConfig, salt_file=None) -> StageRecord:
    params = {**cfg.as_dict()["kanon"], "density_bucket_s": cfg.baselines.density_bucket_s}
    ctx = _post_ctx(ws, "anonymize", params, salt_file)
    paths = timegeo.read_paths(ctx.input(ws.paths))
    for p in (ws.stream_events, ws.stream_demo, ws.provenance):
        ctx.input(p)
    stream = ingest.read_stream(ws.stream)
    unannotated = frozenset({e.sub for e in stream.events} - set(stream.demographics))
    ds, loss = anon.anonymize(paths, stream.demographics, cfg.kanon, stream.provenance.salt_id,
                              unannotated=unannotated)
    written = anon.write_dataset(ds, ws.dir("anon"), loss)
    anon.density_graph(stream, anon.DensityGraphMode(cfg.baselines.density_bucket_s)).write(
        ctx.output(ws.density))
    log.info("published %d windows, %d classes, suppressed %.3f", len(ds.windows), len(ds.classes),
             loss.suppressed_window_fraction)
    return ctx.seal(*written.values(), ws.density)


def stage_od(ws: Workspace, cfg: PipelineConfig, salt_file=None) -> StageRecord:
    ctx = _post_ctx(ws, "od", {"bucket_s": cfg.od.bucket_s, "L": cfg.kanon.L,
                               "time_bucketing": cfg.kanon.time_bucketing}, salt_file)
    net = ingest.read_cells(ctx.input(ws.cells))
    zones = odmatrix.ZoneMap.for_network(net, _zones(ctx, cfg, net))
    paths = timegeo.read_paths(ctx.input(ws.paths))
    raw = odmatrix.build_od(paths, zones, cfg.od.bucket_s)
    odmatrix.export_od(raw, ctx.output(ws.od))
    odmatrix.export_heatmap(raw, ctx.output(ws.heatmap))
    outputs = [ws.od, ws.heatmap]
    if ws.anon_windows.exists():
        ds = anon.read_dataset(ctx.input(ws.anon_windows).parent)
        est = odmatrix.build_od_anonymized(paths, ds.windows, zones, cfg.kanon.L, cfg.kanon.time_bucketing,
                                           cfg.od.bucket_s)
        odmatrix.export_od(est, ctx.output(ws.od_anon))
        outputs.append(ws.od_anon)
    return ctx.seal(*outputs)


def stage_attack(ws: Workspace, cfg: PipelineConfig, salt_file=None) -> StageRecord:
    b = cfg.baselines
    params = {"attack": cfg.as_dict()["attack"], "baselines": cfg.as_dict()["baselines"], "seed": cfg.run.seed}
    ctx = _post_ctx(ws, "attack", params, salt_file)
    net = ingest.read_cells(ctx.input(ws.cells))
    zones = _zones(ctx, cfg, net)
    aux = attack.AuxDirectory.read(ctx.input(ws.aux))
    for p in (ws.stream_events, ws.stream_demo, ws.provenance):
        ctx.input(p)
    stream = ingest.read_stream(ws.stream)
    ds = anon.read_dataset(ctx.input(ws.anon_windows).parent)
    ctx.input(ws.classes)
    raw_paths = [p.to_json() for p in timegeo.read_paths(ctx.input(ws.paths))]

    verdict = attack.verify_kanonymity(
        [{"window": list(w.window), "bucket": w.bucket, "support": w.support} for w in ds.windows],
        [c.to_json() for c in ds.classes], raw_paths, ds.k, int(ds.params["L"]),
        ds.params["time_bucketing"], demographics=stream.demographics)
    Path(ctx.output(ws.verify)).write_text(json.dumps(
        {"passed": verdict.passed, "n_windows": verdict.n_windows, "n_classes": verdict.n_classes,
         "counterexamples": verdict.counterexamples, "k": ds.k}, sort_keys=True, indent=1) + "\n",
        encoding="utf-8")

    datasets = {
        "pseudonymized": stream,
        "anonymized": ds,
        "density_graph": anon.density_graph(stream, anon.DensityGraphMode(b.density_bucket_s)),
        "rotated": anon.rotate_pseudonyms(stream, anon.RotateMode(b.rotate_period_s, cfg.run.seed)),
        "cloaked": anon.cloak(stream, net, anon.CloakMode(b.cloak_min_users, b.cloak_grid)),
        "synthetic": anon.synthesize(stream, zones, anon.SyntheticMode(cfg.run.seed, b.synthetic_agents,
                                                                        cfg.sim.days)),
    }
    reports = {name: attack.linkability_attack(d, aux, zones, cfg.attack).to_json()
               for name, d in datasets.items()}
    with open(ctx.output(ws.reid), "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"k": ds.k, "reports": reports}, sort_keys=True, indent=1) + "\n")
    record = ctx.seal(ws.verify, ws.reid)
    if not verdict.passed:
        raise PrivacyGateError(f"k-anonymity verification failed: {verdict.counterexamples[:1]}")
    return record


# ---------------------------------------------------------------------------
# scans and the full run


def scan_for(needles: Iterable[str], files: Iterable[Path]) -> list[tuple[str, str]]:
    """(file, needle) for every needle found verbatim in a file.

    Needles are grouped by a short prefix; each prefix is located with a
    plain bytes search and only then compared against the full needles.
    """
    needles = {n.encode("utf-8") for n in needles if n}
    if not needles:
        return []
    plen = min(4, min(len(n) for n in needles))
    by_prefix: dict[bytes, set[bytes]] = {}
    for n in needles:
        by_prefix.setdefault(n[:plen], set()).add(n)
    lengths = {p: sorted({len(n) for n in ns}) for p, ns in by_prefix.items()}
    hits = []
    for f in files:
        data = Path(f).read_bytes()
        found = set()
        for prefix, group in by_prefix.items():
            i = data.find(prefix)
            while i != -1:
                for ln in lengths[prefix]:
                    cand = data[i:i + ln]
                    if cand in group:
                        found.add(cand.decode("utf-8"))
                i = data.find(prefix, i + 1)
        hits.extend((str(f), n) for n in sorted(found))
    return hits


def post_ingest_files(ws: Workspace) -> list[Path]:
    out = []
    for d in POST_INGEST_DIRS:
        if (ws.root / d).is_dir():
            out.extend(sorted(p for p in (ws.root / d).rglob("*") if p.is_file()))
    if ws.manifest.exists():
        out.append(ws.manifest)
    return out


def flagship_files(ws: Workspace) -> list[Path]:
    return [p for p in (ws.anon_windows, ws.classes, ws.loss) if p.exists()]


def write_manifest(ws: Workspace, records: list[StageRecord], cfg: PipelineConfig) -> Path:
    doc = {"config": cfg.as_dict(), "stages": [r.to_json() for r in records]}
    doc["config"]["sim"].pop("workers", None)
    doc["config"]["run"].pop("threads", None)
    doc["config"]["run"]["zones"] = Path(cfg.run.zones).name if cfg.run.zones else ""
    ws.manifest.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return ws.manifest


def run_pipeline(cfg: PipelineConfig, out_dir, salt: bytes, salt_source: str, salt_file=None) -> list[StageRecord]:
    """All stages in order, then the raw-id and pseudonym scans. Returns the stage records."""
    cfg.validate()
    ws = Workspace(out_dir)
    ws.root.mkdir(parents=True, exist_ok=True)
    records = [stage_gen_net(ws, cfg), stage_simulate(ws, cfg)]
    ing = stage_ingest(ws, cfg, salt, salt_source)
    records.append(ing.record)
    records.append(stage_timegeo(ws, cfg, salt_file))
    if cfg.run.order == "mine-first":
        records.append(stage_routes(ws, cfg, salt_file))
        records.append(stage_anonymize(ws, cfg, salt_file))
    else:
        records.append(stage_anonymize(ws, cfg, salt_file))
        records.append(stage_routes(ws, cfg, salt_file, source="anon"))
    records.append(stage_od(ws, cfg, salt_file))
    records.append(stage_attack(ws, cfg, salt_file))
    write_manifest(ws, records, cfg)

    leaks = scan_for(ing.raw_ids, post_ingest_files(ws))
    if leaks:
        raise PrivacyGateError(f"raw subscriber id found downstream of ingest in {leaks[0][0]}")
    leaks = scan_for(ing.pseudonyms, flagship_files(ws))
    if leaks:
        raise PrivacyGateError(f"pseudonym found in published dataset {leaks[0][0]}")
    return records


def demo_salt(seed: int) -> bytes:
    """Deterministic salt for self-contained demo runs. Never use on real data."""
    return hashlib.sha256(f"mobmine-demo-salt:{seed}".encode()).digest()


def resolve_salt(salt_file=None, environ: Mapping[str, str] | None = None, seed: int | None = None):
    """(salt, source). Falls back to a seed-derived demo salt only when ``seed`` is given."""
    environ = os.environ if environ is None else environ
    if salt_file is not None or environ.get(ingest.SALT_ENV):
        return ingest.load_salt(salt_file, environ), "file" if salt_file is not None else "env"
    if seed is None:
        return ingest.load_salt(None, environ), "env"
    log.warning("no salt given; using a salt derived from the seed (demo only, not private)")
    return demo_salt(seed), "derived"
