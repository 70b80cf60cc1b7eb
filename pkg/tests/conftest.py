import pytest

from mobmine import ingest, synthnet, timegeo

SALT = bytes(range(32))

_acceptance: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    n, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = "PASS" if rep.outcome == "passed" else "FAIL"
        if _acceptance.get(n, ("", "PASS"))[1] == "PASS":
            _acceptance[n] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        title, status = _acceptance[n]
        terminalreporter.write_line(f"[{status}] criterion {n:2d}: {title}")


@pytest.fixture(scope="session")
def net():
    return synthnet.generate_network(seed=11)


@pytest.fixture(scope="session")
def la_zones(net):
    return {c: net.la_of(c) for c in net.cells}


@pytest.fixture(scope="session")
def small_world(net, la_zones):
    """100 agents over 3 days: (population, events, truth)."""
    pop = synthnet.generate_population(synthnet.PopulationConfig(n_agents=100), net, seed=12, zones=la_zones)
    events, truth = synthnet.simulate_events(pop, net, synthnet.SimConfig(days=3), seed=13, zones=la_zones)
    return pop, events, truth


@pytest.fixture(scope="session")
def small_stream(small_world):
    pop, events, _ = small_world
    return ingest.pseudonymize(events, {a.sub_id: a.demographics for a in pop}, SALT)


@pytest.fixture(scope="session")
def small_paths(net, small_stream):
    stations = timegeo.detect_stations(small_stream, net.adjacency)
    return stations, timegeo.extract_paths(small_stream, stations)


@pytest.fixture(scope="session")
def medium_world(net, la_zones):
    """300 agents over 7 days with their stream and paths."""
    pop = synthnet.generate_population(synthnet.PopulationConfig(n_agents=300), net, seed=22, zones=la_zones)
    events, truth = synthnet.simulate_events(pop, net, synthnet.SimConfig(days=7), seed=23, zones=la_zones)
    stream = ingest.pseudonymize(events, {a.sub_id: a.demographics for a in pop}, SALT)
    stations = timegeo.detect_stations(stream, net.adjacency)
    paths = timegeo.extract_paths(stream, stations)
    return pop, stream, paths, truth


# every hop observed: ~120 data sessions per hour against 120 s per hop
DENSE_DATA_RATE = 120.0


def planted_paths(data_rate=DENSE_DATA_RATE, net_seed=1):
    """Morning paths of 3 planted routes x 50 commuters plus 10% noise agents.

    Returns (paths, labels) with labels aligned to paths; noise paths get
    distinct negative labels so they count as singletons.
    """
    net = synthnet.generate_network(seed=net_seed)
    pop, labels = synthnet.planted_route_population(net, seed=5)
    events, _ = synthnet.simulate_events(pop, net, synthnet.SimConfig(days=1, data_rate=data_rate), seed=3)
    stream = ingest.pseudonymize(events, {a.sub_id: a.demographics for a in pop}, SALT)
    pseud = ingest.make_pseudonymizer(SALT)
    by_pseud = {pseud(s): lab for s, lab in labels.items()}
    stations = timegeo.detect_stations(stream, net.adjacency)
    paths = [p for p in timegeo.extract_paths(stream, stations)
             if (p.depart_ts - synthnet.DEFAULT_START_TS) % 86400 < 12 * 3600]
    out = [by_pseud[p.pseudonym] for p in paths]
    return paths, [lab if lab >= 0 else -1 - i for i, lab in enumerate(out)]


@pytest.fixture(scope="session")
def planted():
    return planted_paths()
