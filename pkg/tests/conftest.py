from __future__ import annotations

import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).parent
sys.path.insert(0, str(TESTS_DIR))

from tikzmill.harness import SandboxConfig, detect_compiler_command, detect_raster_command

STUB_TEX = TESTS_DIR / "stubtex.py"
STUB_RASTER = TESTS_DIR / "stubraster.py"


def stub_sandbox_config(**overrides) -> SandboxConfig:
    defaults = dict(
        compiler_command=[sys.executable, str(STUB_TEX), "{input}"],
        raster_command=[sys.executable, str(STUB_RASTER), "{pdf}", "{png}", "{dpi}"],
        timeout_s=20.0,
        render_dpi=72,
    )
    defaults.update(overrides)
    return SandboxConfig(**defaults)


@pytest.fixture
def stub_sandbox() -> SandboxConfig:
    return stub_sandbox_config()


def real_engine_available() -> bool:
    return detect_compiler_command() is not None and detect_raster_command() is not None


requires_real_tex = pytest.mark.skipif(
    not real_engine_available(),
    reason="no TeX engine + rasterizer on this host",
)


@pytest.fixture(scope="session")
def fixture_corpus():
    from corpus_builder import build_corpus

    return build_corpus(n_docs=120, seed=0)
