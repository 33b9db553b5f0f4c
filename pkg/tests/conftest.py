from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from deeprefine.retrieval import HashingEmbedder


@pytest.fixture
def embedder():
    return HashingEmbedder(dim=32, seed=7)
