from pathlib import Path

import pytest

from scenerelight.data import ImageRecord, SceneIndex, all_illuminations, generate_toy_dataset, parse_manifest

ACCEPTANCE_RESULTS = []


def synthetic_index(n_scenes, prefix="s"):
    """Complete index without image files, for pair arithmetic."""
    records = [
        ImageRecord(f"{prefix}{k}", illum, Path(f"/nonexistent/{prefix}{k}/{illum.direction}_{illum.color_temperature}.png"))
        for k in range(n_scenes)
        for illum in all_illuminations()
    ]
    return SceneIndex(records)


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    generate_toy_dataset(out, n_scenes=3, image_size=64, seed=7)
    return out


@pytest.fixture(scope="session")
def toy_index(toy_dir):
    return parse_manifest(toy_dir / "manifest.csv")


@pytest.fixture(scope="session")
def toy128_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy128")
    generate_toy_dataset(out, n_scenes=3, image_size=128, seed=0)
    return out


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        ACCEPTANCE_RESULTS.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
