import pytest

from owcl import _pykernels
from owcl.datagen import GenSpec, generate, split_tasks
from owcl.model import ArchConfig, MultimodalNet
from owcl.numcore import make_rng
from owcl.train import TrainConfig

try:
    from owcl import _kernels as _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = [pytest.param(_pykernels, id="python")]
if _ckernels is not None:
    BACKENDS.append(pytest.param(_ckernels, id="cython"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


SMALL_SPEC = GenSpec(num_classes=6, train_per_class=12, test_per_class=8, dims=(5, 3, 3),
                     informativeness=(1.0, 0.5, 0.5), dominance_scale=(2.0, 1.0, 1.0), seed=3)

FAST_TRAIN = TrainConfig(epochs=3, batch_size=16, decay_epochs=(1, 2), buffer_capacity=24,
                         arch=ArchConfig(hidden=8, embed=4, fusion=8))


@pytest.fixture(scope="session")
def small_dataset():
    return generate(SMALL_SPEC)


@pytest.fixture(scope="session")
def small_stream(small_dataset):
    return split_tasks(small_dataset, 2, 0)


@pytest.fixture
def tiny_net():
    return MultimodalNet(("m0", "m1"), (3, 2), 3, make_rng(0), ArchConfig(hidden=4, embed=3, fusion=4))


# filled by tests/test_acceptance.py, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
