import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
parent_dir = str(Path(__file__).parent.parent)
sys.path.insert(0, parent_dir)

from models.backbone import Backbone, BackboneConfig  # noqa: E402


def pytest_collection_modifyitems(config, items):
    if os.getenv('TINYATTN_RUN_SLOW') == '1':
        return
    skip_slow = pytest.mark.skip(reason='set TINYATTN_RUN_SLOW=1 to run desk-scale experiments')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_config():
    return BackboneConfig(num_layers=2, hidden=32, heads=4, ffn=64, vocab_size=64, max_len=32)


@pytest.fixture
def toy_backbone(toy_config):
    return Backbone.initialize(toy_config, seed=7)


@pytest.fixture(autouse=True)
def _isolate_env(monkeypatch, tmp_path):
    monkeypatch.delenv('TINYATTN_SEED', raising=False)
    monkeypatch.chdir(tmp_path)
