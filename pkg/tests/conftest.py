import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import synthetic  # noqa: E402

_criteria: dict[int, dict] = {}
_node_criterion: dict[str, int] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            number, title = m.args
            _criteria.setdefault(number, {"title": title, "outcomes": []})
            _node_criterion[item.nodeid] = number


def pytest_runtest_logreport(report):
    number = _node_criterion.get(report.nodeid)
    if number is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _criteria[number]["outcomes"].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        info = _criteria[number]
        outcomes = info["outcomes"]
        if not outcomes:
            status = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {status:<7} {info['title']}")


@pytest.fixture(scope="session")
def corpus():
    return synthetic.build_corpus()


@pytest.fixture(scope="session")
def corpus_store(corpus):
    return synthetic.build_store(corpus)


@pytest.fixture(scope="session")
def toy_bench(corpus):
    """The 60-question benchmark over the 500-passage corpus, built in-process."""
    from evidencerag.benchbuild import build_benchmark
    from evidencerag.dense import VectorIndex
    from evidencerag.sparse import InvertedIndex

    store = synthetic.build_store(corpus)
    backend = synthetic.corpus_backend(corpus)
    gw = synthetic.gateways(backend)
    dense = VectorIndex.build(store, gw["embedder"])
    sparse = InvertedIndex.build(store)
    built = build_benchmark(store, gw["drafter"], dense, 60, seed=3, judge=gw["judge"])
    return {"store": store, "gateways": gw, "dense": dense, "sparse": sparse, "built": built,
            "items": [b.item for b in built]}


@pytest.fixture(scope="session")
def cli_workspace(tmp_path_factory, corpus):
    """A config, mock script and ingested, indexed store driven through the CLI."""
    import json

    from evidencerag.cli import main

    root = tmp_path_factory.mktemp("workspace")
    synthetic.write_documents(corpus, root / "docs")
    (root / "mock.json").write_text(json.dumps(synthetic.mock_script(corpus)), encoding="utf-8")
    (root / "evidencerag.conf").write_text(
        "paths.store_dir = store\n"
        "paths.sparse_index = sparse.idx\n"
        "paths.dense_dir = dense\n"
        "paths.cache_dir = cache\n"
        "chunking.min_tokens = 1\n"
        f"chunking.max_tokens = {synthetic.CHUNK_MAX_TOKENS}\n",
        encoding="utf-8",
    )
    base = ["--config", str(root / "evidencerag.conf"), "--mock-providers", str(root / "mock.json")]
    for argv in (["ingest", str(root / "docs")], ["index", "sparse"], ["index", "dense"]):
        assert main(argv + base) == 0, argv
    return {"root": root, "args": base}
