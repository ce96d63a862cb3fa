import textwrap

import pytest

from tagplan.cli.projectfile import bundled, load_project, parse_project
from tagplan.valuation import PlanningContext

TWO_PHASE = textwrap.dedent(
    """
    schema: tagplan-project/1
    name: two-phase
    camera: {fu: 450.0, fv: 450.0, cu: 320.0, cv: 240.0, width: 640, height: 480}
    planning:
      install_heights: [1.5]
      tag_sizes: [0.165, 0.23]
      max_tags_per_phase: 4
    cost: {alpha: [0.5, 1.0]}
    ga: {max_iters: 60}
    phases:
      - name: A
        obstacles:
          - vertices: [[2, 2], [3, 2], [3, 3], [2, 3]]
            installable: all
        rois:
          - vertices: [[0, 0], [5, 0], [5, 5], [0, 5]]
      - name: B
        obstacles:
          - vertices: [[2, 2], [3, 2], [3, 3], [2, 3]]
            installable: all
          - vertices: [[0.5, 0.5], [1.1, 0.5], [1.1, 1.1], [0.5, 1.1]]
            installable: all
        rois:
          - vertices: [[0, 0], [5, 0], [5, 5], [0, 5]]
            importance: 2.0
    """
)


@pytest.fixture(scope="session")
def tiny_loaded():
    return load_project(bundled("tiny"))


@pytest.fixture(scope="session")
def tiny_ctx(tiny_loaded):
    ctx = PlanningContext(tiny_loaded.project, workers=1)
    ctx.precompute()
    return ctx


@pytest.fixture(scope="session")
def two_phase_loaded():
    return parse_project(TWO_PHASE, "two-phase.yaml")


@pytest.fixture(scope="session")
def two_phase_ctx(two_phase_loaded):
    ctx = PlanningContext(two_phase_loaded.project, workers=1)
    ctx.precompute()
    return ctx


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(name: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
