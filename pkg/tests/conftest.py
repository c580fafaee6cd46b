import numpy as np
import pytest

from pgdm.archetypal import ArchetypeSet
from pgdm.pipeline import RunConfig, run_experiment

SQUARE = np.array([[0.0, 1.0, 1.0, 0.0],
                   [0.0, 0.0, 1.0, 1.0]])


@pytest.fixture
def square():
    return ArchetypeSet.from_archetypes(SQUARE)


def tiny_config(tmp_path=None, **over):
    raw = {
        "workdir": str(tmp_path) if tmp_path else "unused",
        "data": {"T": 2, "H": 2,
                 "synthetic": {"d": 3, "p_true": 3, "n_sequences": 30, "sequence_length": 12}},
        "archetypes": {"p": 3},
        "predictor": {"hidden": [16], "max_epochs": 15, "patience": 5},
        "diffusion": {"S": 20, "hidden": [32, 32], "n_steps": 150, "lr_final": None},
        "evaluation": {"num_samples": 2, "max_windows": 10},
    }
    for k, v in over.items():
        raw.setdefault(k, {}).update(v) if isinstance(v, dict) else raw.__setitem__(k, v)
    return RunConfig.load(None, raw)


@pytest.fixture(scope="session")
def tiny():
    """A fully trained but very small pipeline, shared across tests."""
    return run_experiment(tiny_config())


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def record_criterion(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
