import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from beliefprune.belief import ParticleBelief  # noqa: E402
from beliefprune.models import BeaconWorldConfig  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def make_world(**overrides) -> BeaconWorldConfig:
    base = dict(start=(0.0, 5.0), goal=(10.0, 5.0), beacons=((2.0, 5.0), (5.0, 5.0), (8.0, 5.0)),
                step=2.0, prior_sigma=0.5, transition_sigma=0.1, observation_sigma=0.1, r_min=1.0)
    base.update(overrides)
    return BeaconWorldConfig(**base)


def load_raw(name: str) -> dict:
    return json.loads((CONFIGS / name).read_text())


def bench_worlds():
    """Settings I and II exactly as committed in the benchmark config."""
    from beliefprune.harness import validate_config
    return validate_config(load_raw("plan_bench.json")).worlds


def random_belief(rng, n, spread=1.0, center=(0.0, 0.0)):
    x = np.asarray(center) + spread * rng.normal(size=(n, 2))
    return ParticleBelief(x, rng.uniform(0.05, 1.0, size=n))


# acceptance reporting: one PASS/FAIL line per criterion, repeated in the terminal summary

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report(capsys):
    def emit(number: int, title: str, passed: bool, detail: str):
        line = f"CRITERION {number} [{title}]: {'PASS' if passed else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
