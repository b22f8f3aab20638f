from __future__ import annotations

import sys

import pytest

from bookindex.gateway import mock_gateway
from bookindex.index import build_index
from bookindex.ingest import load_blocks

from helpers import SYNTHETIC, global_blocks, make_source, write_png


@pytest.fixture(scope="session")
def synthetic_src():
    return load_blocks(SYNTHETIC)


@pytest.fixture(scope="session")
def synthetic_index(synthetic_src):
    return build_index(synthetic_src, mock_gateway())


@pytest.fixture
def gw():
    return mock_gateway()


@pytest.fixture(scope="session")
def global_index(tmp_path_factory):
    root = tmp_path_factory.mktemp("global")
    blocks = global_blocks()
    for b in blocks:
        if b["type"] == "Image":
            write_png(root / b["content"], b["page"])
    src = make_source(blocks, "global", base_dir=root)
    return build_index(src, mock_gateway())


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        terminalreporter.write_line(results[num])
