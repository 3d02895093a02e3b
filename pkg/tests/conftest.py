from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
CORA_DIR = Path(os.environ.get("MGAE_CORA_DIR", ROOT / "data" / "cora"))


def random_graph(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Canonical edge array of an Erdos-Renyi graph."""
    iu, iv = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return np.stack([iu[keep], iv[keep]], axis=1).astype(np.int64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cora_paths():
    paths = {
        "edges": CORA_DIR / "cora.edges.tsv",
        "features": CORA_DIR / "cora.features.csv",
        "labels": CORA_DIR / "cora.labels.tsv",
    }
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        pytest.fail(f"Cora files missing ({', '.join(missing)}); see README 'Data' to regenerate them")
    return paths


_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    _ACCEPTANCE[number] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[number]
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"criterion {number:2d} {status}: {title}{suffix}")
