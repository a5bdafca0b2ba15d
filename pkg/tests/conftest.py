import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from activation_bottleneck.graph import VARIANTS, build_reference_model  # noqa: E402
from activation_bottleneck.training import generate_line  # noqa: E402


@pytest.fixture(scope="session")
def line():
    return generate_line()


@pytest.fixture(scope="session")
def reference_models():
    return {v: build_reference_model(v, seed=0) for v in VARIANTS}


@pytest.fixture(params=VARIANTS)
def variant(request):
    return request.param
