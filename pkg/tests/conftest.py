import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from historynet.config import TrainConfig  # noqa: E402
from historynet.data.parsing import Palette, parsing_target  # noqa: E402
from historynet.synthetic import make_dataset  # noqa: E402
from historynet.training import arrays_to_batch  # noqa: E402

FIXTURE = Path(__file__).resolve().parents[1] / "src" / "historynet" / "assets" / "fixture"


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def palette():
    return Palette.load()


def synthetic_batch(n=8, size=32, seed=0, label_count=4, palette=None):
    palette = palette or Palette.load()
    data = make_dataset(n, size, seed, num_classes=label_count)
    parsing = np.stack([parsing_target(p, palette) for p in data.parsing])
    return arrays_to_batch(data.images, data.labels, parsing, label_count)


@pytest.fixture
def test_config():
    return TrainConfig.test()
