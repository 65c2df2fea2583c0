from __future__ import annotations

import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).parent
sys.path.insert(0, str(TESTS_DIR))

SMOKE = TESTS_DIR / "data" / "smoke"

from synthcorpus import write_latent_full, write_mami_full  # noqa: E402


@pytest.fixture(scope="session")
def smoke_dir() -> Path:
    return SMOKE


@pytest.fixture(scope="session")
def latent_full_path(tmp_path_factory) -> Path:
    return write_latent_full(tmp_path_factory.mktemp("latent_full") / "latent_full.tsv")


@pytest.fixture(scope="session")
def mami_full_dir(tmp_path_factory) -> Path:
    return write_mami_full(tmp_path_factory.mktemp("mami_full"))


@pytest.fixture()
def store(tmp_path):
    from contexthsd.cache import ContextStore

    return ContextStore(tmp_path / "cache.jsonl")


@pytest.fixture()
def echo_session(store):
    from contexthsd.contextgen import GenerationSession
    from contexthsd.providers import EchoProvider, RetryPolicy

    return GenerationSession(
        provider=EchoProvider(),
        store=store,
        retry=RetryPolicy(attempts=3, base_delay=0.0, sleep=lambda _s: None),
    )


@pytest.fixture(scope="session")
def mock_encoder():
    from contexthsd.encoders import HashEncoder

    return HashEncoder()
