import glob
import os

# timings are stated for a single thread; must be set before numpy loads
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import pytest

from scenforge import dsl

HERE = os.path.dirname(__file__)
CORPUS = sorted(glob.glob(os.path.join(HERE, "corpus", "*.scn")))
FIG1A_PROMPT = "on a rainy day, there is a car cut in"


def read(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def cut_in_spec(seed=0, side=None):
    side_kv = f" side={side}" if side else ""
    return dsl.parse(f"scenario c\nseed {seed}\nego: forward speed=10\n"
                     f"agent a1: vehicle cut_in target=ego safe_dis=10{side_kv}\n")


@pytest.fixture(scope="session")
def corpus():
    return [(os.path.basename(p), read(p)) for p in CORPUS]


TEMPLATES = (
    "ego: forward speed=10\nagent a1: vehicle cut_in target=ego",
    "ego: forward speed=8\nagent p1: pedestrian pedestrian_cross direction=left",
    "ego: forward speed=7\nagent p1: pedestrian pedestrian_cross direction=right at=15",
    "ego: u_turn",
    "ego: lane_change_left speed=10\nagent a1: vehicle forward start=(30,-3.5) speed=9",
    "ego: forward speed=9\nagent a1: vehicle overtake target=ego",
    "ego: steer_right angle=40deg duration=2",
    "ego: brake speed=12\nagent a1: vehicle follow target=ego",
)


def template_scenes(n):
    """``n`` seeded specs cycling through the templates."""
    specs = [dsl.parse(t) for t in TEMPLATES]
    return [specs[i % len(specs)].with_seed(i) for i in range(n)]


# Acceptance lines, one per criterion, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def report(criterion, ok, detail):
    """``ok`` is a bool, or a status word for criteria that are not pass/fail."""
    status = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
    line = f"{status}  {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
