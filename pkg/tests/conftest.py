import pytest

from mvweak.core_data import DatasetIndex, split_dataset
from mvweak.detect_featurize import featurize_corpus
from mvweak.synth_office import ScenarioConfig, build_corpus
from mvweak.train_eval import load_arrays

TINY_SCENARIO = dict(num_views=2, num_frames=8, image_size=16, block_size=4, num_classes=3, event_length=(2, 6))


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Ten featurized sequences matching the scaled model config (2x2 grid, N=4)."""
    root = tmp_path_factory.mktemp("corpus")
    index = build_corpus(ScenarioConfig(**TINY_SCENARIO), 10, 0, root)
    index = split_dataset(index, 0.5, 0)
    index.save()
    featurize_corpus(index, 2, 2)
    return DatasetIndex.load(root)


@pytest.fixture(scope="session")
def tiny_arrays(tiny_corpus):
    return load_arrays(tiny_corpus, "train", require_frame_labels=True), load_arrays(tiny_corpus, "test", require_frame_labels=True)


ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    """Record one acceptance line and fail the test when the criterion fails."""

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
