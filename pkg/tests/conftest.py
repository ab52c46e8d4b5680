import numpy as np
import pytest

from elsroc.study_data import Dataset, StudyTable


def random_tables(rng, n, sens=(0.6, 0.95), fpr=(0.05, 0.4)):
    tables = []
    for i in range(n):
        n1 = int(rng.poisson(40)) + 2
        n0 = int(rng.poisson(160)) + 2
        tp = int(rng.binomial(n1, rng.uniform(*sens)))
        fp = int(rng.binomial(n0, rng.uniform(*fpr)))
        tables.append(StudyTable(tp, n1 - tp, fp, n0 - fp, label=f"s{i + 1}"))
    return tables


def random_dataset(rng, n):
    return Dataset.from_tables(random_tables(rng, n))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def dataset10():
    return random_dataset(np.random.default_rng(11), 10)


@pytest.fixture
def dataset5():
    return random_dataset(np.random.default_rng(5), 5)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
