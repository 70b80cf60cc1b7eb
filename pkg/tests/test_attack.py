import copy
import json

import pytest

from mobmine import anonymizer as anon
from mobmine import attack, ingest, synthnet, timegeo
from mobmine.errors import InvalidConfig, ParseError

from conftest import SALT


def _aux(pop, zones):
    return attack.AuxDirectory([attack.AuxEntry(a.sub_id, zones[a.home_cell], zones[a.work_cell]) for a in pop])


@pytest.fixture(scope="session")
def unique_world(net):
    """Commuters with unique (home, work) cells, zones = cells."""
    zones = {c: c for c in net.cells}
    pop = synthnet.generate_population(
        synthnet.PopulationConfig(n_agents=150, unique_home_work=True, stationary_fraction=0.0),
        net, seed=41, zones=zones)
    events, _ = synthnet.simulate_events(pop, net, synthnet.SimConfig(days=7), seed=42, zones=zones)
    stream = ingest.pseudonymize(events, {a.sub_id: a.demographics for a in pop}, SALT)
    pseud = ingest.make_pseudonymizer(SALT)
    truth = {pseud(a.sub_id): a.sub_id for a in pop}
    return pop, zones, stream, truth


@pytest.fixture(scope="session")
def medium_aux(medium_world, la_zones):
    pop, _, _, _ = medium_world
    return _aux(pop, la_zones)


def test_aux_labels_unique():
    with pytest.raises(InvalidConfig):
        attack.AuxDirectory([attack.AuxEntry("x", "A", "B"), attack.AuxEntry("x", "A", "C")])


def test_aux_candidates():
    aux = attack.AuxDirectory([attack.AuxEntry("x", "A", "B"), attack.AuxEntry("y", "A", "C"),
                               attack.AuxEntry("z", "D", "B")])
    assert aux.candidates({"A"}, {"B"}) == ["x"]
    assert aux.candidates({"A"}, None) == ["x", "y"]
    assert aux.candidates(None, None) == ["x", "y", "z"]
    assert aux.candidates({"Q"}, None) == []


def test_aux_file(net, small_world, la_zones, tmp_path):
    pop, _, _ = small_world
    synthnet.write_aux(pop, la_zones, tmp_path / "aux.csv")
    assert attack.AuxDirectory.read(tmp_path / "aux.csv") == _aux(pop, la_zones)
    (tmp_path / "bad.csv").write_text("name,home\n")
    with pytest.raises(ParseError):
        attack.AuxDirectory.read(tmp_path / "bad.csv")


def test_density_graph_is_not_linkable(medium_world, medium_aux, la_zones):
    _, stream, _, _ = medium_world
    rep = attack.linkability_attack(anon.density_graph(stream, anon.DensityGraphMode()), medium_aux, la_zones)
    assert rep.mode == "density_graph"
    assert rep.reid_rate == 0.0 and rep.n_unique_matches == 0 and rep.n_targets == 0


def test_unique_home_work_fully_reidentified(unique_world):
    pop, zones, stream, truth = unique_world
    rep = attack.linkability_attack(stream, _aux(pop, zones), zones, truth=truth)
    # oracle: the simulator knows which agent sits behind each pseudonym
    assert rep.n_targets == len(pop)
    assert rep.n_correct == rep.n_targets
    assert rep.reid_rate == 1.0 and rep.max_confidence == 1.0


def test_flagship_candidate_sets(medium_world, medium_aux, la_zones):
    _, stream, paths, _ = medium_world
    ds, _ = anon.anonymize(paths, stream.demographics, anon.KAnonConfig(k=5), "sid")
    rep = attack.linkability_attack(ds, medium_aux, la_zones)
    assert rep.n_targets == len(ds.windows) > 0
    assert rep.mean_candidate_set_size >= 5
    assert rep.max_confidence <= 1 / 5
    assert rep.reid_rate == 0.0


def test_flagship_candidate_sets_exhaustive(medium_world, medium_aux, la_zones):
    """Each published window's candidate set, enumerated directly over the aux entries."""
    _, stream, paths, _ = medium_world
    ds, _ = anon.anonymize(paths, stream.demographics, anon.KAnonConfig(k=5), "sid")
    sizes = []
    for w in ds.windows:
        hour = int(w.bucket[-2:])
        zs = {la_zones[c] for c in w.window}
        fits = [e for e in medium_aux.entries
                if (not 0 <= hour < 6 or e.home_zone in zs) and (not 9 <= hour < 17 or e.work_zone in zs)]
        sizes.append(max(len(fits), w.support))
    rep = attack.linkability_attack(ds, medium_aux, la_zones)
    assert rep.mean_candidate_set_size == pytest.approx(sum(sizes) / len(sizes))
    assert min(sizes) >= 5


def test_reid_non_increasing_in_k(medium_world, medium_aux, la_zones):
    _, stream, paths, _ = medium_world
    rates, conf = [], []
    for k in (1, 2, 5, 10):
        ds, _ = anon.anonymize(paths, stream.demographics, anon.KAnonConfig(k=k), "sid")
        rep = attack.linkability_attack(ds, medium_aux, la_zones)
        rates.append(rep.reid_rate)
        conf.append(rep.max_confidence)
        assert rep.max_confidence <= 1 / k
    assert rates == sorted(rates, reverse=True)
    assert conf == sorted(conf, reverse=True)


def test_report_invariants_across_modes(net, medium_world, medium_aux, la_zones):
    pop, stream, paths, _ = medium_world
    pseud = ingest.make_pseudonymizer(SALT)
    truth = {pseud(a.sub_id): a.sub_id for a in pop}
    ds, _ = anon.anonymize(paths, stream.demographics, anon.KAnonConfig(), "sid")
    datasets = [stream, ds, anon.density_graph(stream, anon.DensityGraphMode()),
                anon.rotate_pseudonyms(stream, anon.RotateMode()),
                anon.cloak(stream, net, anon.CloakMode()),
                anon.synthesize(stream, la_zones, anon.SyntheticMode(n_agents=200, days=2))]
    reports = {}
    for d in datasets:
        rep = attack.linkability_attack(d, medium_aux, la_zones, truth=truth)
        assert 0 <= rep.n_correct <= rep.n_unique_matches <= rep.n_targets
        assert 0.0 <= rep.reid_rate <= 1.0
        reports[rep.mode] = rep
    assert set(reports) == {"pseudonymized", "anonymized", "density_graph", "cloaked", "synthetic"}
    # synthetic agents are nobody
    assert reports["synthetic"].n_correct == 0


def test_report_json(tmp_path):
    rep = attack.ReidReport(n_targets=3, mode="x")
    attack.write_report(rep, tmp_path / "r.json", {"k": 5})
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["n_targets"] == 3 and doc["k"] == 5 and doc["mode"] == "x"


# ---------------------------------------------------------------------------
# independent scanner


def _published(paths, demo, k, L=3, bucketing="how"):
    ds, _ = anon.anonymize(paths, demo, anon.KAnonConfig(k=k, L=L, time_bucketing=bucketing), "sid")
    windows = [{"window": list(w.window), "bucket": w.bucket, "support": w.support, "class": w.class_id}
               for w in ds.windows]
    return windows, [c.to_json() for c in ds.classes]


@pytest.mark.parametrize("k,L,bucketing", [(5, 3, "how"), (2, 2, "hod"), (3, 4, "none"), (10, 1, "how")])
def test_scanner_passes_anonymizer_output(medium_world, k, L, bucketing):
    _, stream, paths, _ = medium_world
    windows, classes = _published(paths, stream.demographics, k, L, bucketing)
    raw = [p.to_json() for p in paths]
    rep = attack.verify_kanonymity(windows, classes, raw, k, L, bucketing, demographics=stream.demographics)
    assert rep.passed, rep.counterexamples
    assert rep.n_windows == len(windows)


def test_scanner_catches_planted_violation(medium_world):
    _, stream, paths, _ = medium_world
    windows, classes = _published(paths, stream.demographics, 5)
    raw = [p.to_json() for p in paths]
    bad = copy.deepcopy(windows)
    bad[-1]["support"] = 4
    rep = attack.verify_kanonymity(bad, classes, raw, 5, 3, "how")
    assert not rep
    (ce,) = rep.counterexamples
    assert ce["window"] == windows[-1]["window"] and ce["bucket"] == windows[-1]["bucket"]
    assert ce["published_support"] == 4


def test_scanner_catches_window_below_k(medium_world):
    _, stream, paths, _ = medium_world
    windows, classes = _published(paths, stream.demographics, 2)
    raw = [p.to_json() for p in paths]
    rep = attack.verify_kanonymity(windows, classes, raw, 5, 3, "how")
    assert not rep.passed
    assert len(rep.counterexamples) == 10
    assert all(ce["recounted_support"] < 5 for ce in rep.counterexamples)


def test_scanner_catches_small_class(medium_world):
    _, stream, paths, _ = medium_world
    windows, classes = _published(paths, stream.demographics, 5)
    classes = copy.deepcopy(classes)
    classes[0]["member_count"] = 4
    rep = attack.verify_kanonymity(windows, classes, [p.to_json() for p in paths], 5, 3, "how")
    assert rep.counterexamples == [{"kind": "class", "class_id": classes[0]["class_id"], "member_count": 4}]


def test_scanner_vacuous_at_k1(medium_world):
    _, stream, paths, _ = medium_world
    windows, classes = _published(paths, stream.demographics, 1)
    assert attack.verify_kanonymity(windows, classes, [p.to_json() for p in paths], 1, 3, "how").passed


def test_scanner_reads_serialized_paths(small_paths, small_stream, tmp_path):
    _, paths = small_paths
    timegeo.write_paths(paths, tmp_path / "paths.jsonl")
    raw = [json.loads(line) for line in (tmp_path / "paths.jsonl").read_text().splitlines()]
    windows, classes = _published(paths, small_stream.demographics, 3)
    assert attack.verify_kanonymity(windows, classes, raw, 3, 3, "how").passed
