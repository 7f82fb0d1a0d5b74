import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from slnscreen.synthetic import SyntheticLayout, generate_synthetic_corpus  # noqa: E402

# 12 cases, 24 slides, 240 patches; splits 8/2/2 cases
SMALL_LAYOUT = SyntheticLayout((3, 3, 3, 3), 10, fractions=(8 / 12, 2 / 12, 2 / 12))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    return generate_synthetic_corpus(tmp_path_factory.mktemp("small"), seed=0, layout=SMALL_LAYOUT)


# default 34-case layout at 10 patches per slide; splits 540/60/80
MEDIUM_LAYOUT = SyntheticLayout(patches_per_slide=10)


@pytest.fixture(scope="session")
def medium_corpus(tmp_path_factory):
    return generate_synthetic_corpus(tmp_path_factory.mktemp("medium"), seed=0, layout=MEDIUM_LAYOUT)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, title, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
