import pytest

from bifrnet.numerics import set_default_dtype


@pytest.fixture(autouse=True)
def _float64_default():
    """Training code switches the global dtype; every test starts at 64-bit."""
    set_default_dtype("float64")
    yield
    set_default_dtype("float64")


TINY = {"train": 60, "val": 24, "test_per_class_level": 4, "seed": 1}


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    from bifrnet.synth import DatasetConfig, gen_dataset

    root = tmp_path_factory.mktemp("tiny")
    gen_dataset(DatasetConfig.from_dict(TINY), root)
    return root


@pytest.fixture(scope="session")
def tiny_teacher(tiny_data, tmp_path_factory):
    from bifrnet.training import TrainConfig, pretrain_teacher

    out = tmp_path_factory.mktemp("teacher")
    cfg = TrainConfig(batch_size=12, teacher_epochs=2, teacher_floor=0.0)
    teacher, _ = pretrain_teacher(tiny_data, cfg, out)
    return out


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def acceptance_verdicts(request):
    return request.config.stash.setdefault(_VERDICTS, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
