"""Guards against drift between the code and the committed fixtures."""

import filecmp
from pathlib import Path

from flowsmith.scenarios import SCENARIOS, build_fixtures, corpus_flows

from conftest import REPO_ROOT

FIXTURES = REPO_ROOT / "fixtures"


def _tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*.json"))}


def test_regenerated_fixtures_match_committed(tmp_path):
    build_fixtures(tmp_path)
    fresh = _tree(tmp_path)
    committed = _tree(FIXTURES)
    assert fresh.keys() == committed.keys()
    for name in fresh:
        assert fresh[name] == committed[name], f"fixture drift in {name}; rerun scripts/build_fixtures.py"


def test_every_scenario_has_a_cassette():
    for name in SCENARIOS:
        assert (FIXTURES / name / f"{name}.json").is_file()


def test_corpus_files_committed():
    names = {filename for filename, _flow in corpus_flows()}
    committed = {p.name for p in (FIXTURES / "corpus").glob("*.flow.json")}
    assert names == committed
