import json
import os
import subprocess
import sys
import textwrap
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from tagplan import ga
from tagplan.cli import main, plan_project
from tagplan.cli.planfile import PlanFile, PlanFileError, history_dumps, history_loads
from tagplan.cli.projectfile import ProjectError, bundled, load_project, parse_project
from tagplan.cli.render import ramp_color, render_convergence, render_phase
from tagplan.valuation import count_changes

SVG = "{http://www.w3.org/2000/svg}"

MINIMAL = textwrap.dedent(
    """
    schema: tagplan-project/1
    camera: {fu: 450.0, fv: 450.0, cu: 320.0, cv: 240.0, width: 640, height: 480}
    phases:
      - obstacles:
          - vertices: [[1, 1], [2, 1], [2, 2], [1, 2]]
            installable: all
        rois:
          - vertices: [[0, 0], [3, 0], [3, 3], [0, 3]]
    """
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


# ---------------------------------------------------------------- project file


def test_defaults_applied():
    lp = parse_project(MINIMAL)
    pl = lp.project.planning
    assert pl.cell_size == 0.5
    assert pl.delta_theta == 20
    assert pl.d_res == 0.3
    assert lp.project.camera.dov == 8.0
    assert pl.importance_default == 1.0
    assert lp.project.phases[0].rois[0].importance == 1.0
    assert lp.ga.population == 50
    assert lp.ga.max_iters == 5000
    assert lp.ga.mutation_kind == "flip"
    assert lp.ga.crossover_kind == "single_point"


def test_content_hash_tracks_text():
    a = parse_project(MINIMAL)
    b = parse_project(MINIMAL + "\n# comment\n")
    assert a.content_hash != b.content_hash
    assert a.content_hash == parse_project(MINIMAL).content_hash


@pytest.mark.parametrize("name", ["tiny", "room", "unit3", "large5"])
def test_bundled_projects_parse(name):
    lp = load_project(bundled(name))
    assert lp.project.phases


def test_schema_error_reports_line():
    bad = MINIMAL.replace("[[0, 0], [3, 0], [3, 3], [0, 3]]", "[[0, 0], [3, 0]]")
    with pytest.raises(ProjectError) as ei:
        parse_project(bad)
    assert "rois" in str(ei.value)
    assert "line" in str(ei.value)


def test_unknown_schema_rejected():
    with pytest.raises(ProjectError):
        parse_project(MINIMAL.replace("tagplan-project/1", "tagplan-project/9"))


def test_invalid_yaml_rejected():
    with pytest.raises(ProjectError) as ei:
        parse_project("phases: [\n  - {a: 1\n")
    assert "YAML" in str(ei.value)


# ------------------------------------------------------------------ plan file


@pytest.fixture(scope="module")
def tiny_run(tiny_loaded):
    return plan_project(tiny_loaded, seed=3, max_iters=20, workers=1)


def test_plan_round_trip(tiny_run, tmp_path):
    path = tmp_path / "plan.json"
    tiny_run.plan.save(path)
    back = PlanFile.load(path)
    assert back == tiny_run.plan
    ctx = tiny_run.ctx
    assert np.array_equal(back.genes(ctx.n_phases, ctx.n_slots), tiny_run.genes)


def test_plan_matches_evaluation(tiny_run):
    ctx, plan = tiny_run.ctx, tiny_run.plan
    ev = ctx.evaluate(tiny_run.genes)
    assert plan.utility == pytest.approx(ev.utility)
    assert plan.score == pytest.approx(ev.score)
    ch = count_changes(tiny_run.genes, ctx.mask, ctx.params.n_sizes)
    assert plan.n_rmv == ch.n_rmv
    placed = sum(1 for p in plan.phases for t in p.tags if t.action == "place")
    removed = sum(1 for p in plan.phases for t in p.tags if t.action == "remove")
    assert placed == int(np.sum(ch.n_plc))
    assert removed == ch.n_rmv


def test_plan_rejects_unknown_schema(tiny_run):
    d = tiny_run.plan.to_dict()
    d["schema"] = "other/1"
    with pytest.raises(PlanFileError):
        PlanFile.from_dict(d)


def test_plan_rejects_unknown_action(tiny_run):
    d = json.loads(tiny_run.plan.dumps())
    for p in d["phases"]:
        if p["tags"]:
            p["tags"][0]["action"] = "move"
            break
    else:
        pytest.skip("empty plan")
    with pytest.raises(PlanFileError):
        PlanFile.from_dict(d)


def test_history_round_trip(tiny_run):
    back = history_loads(history_dumps(tiny_run.history))
    assert back == [ga.Generation(*g) for g in tiny_run.history]


# --------------------------------------------------------------------- render


def test_ramp_endpoints():
    assert ramp_color(0.0) == "#d00000"
    assert ramp_color(1.0) == "#00a000"
    assert ramp_color(-1.0) == ramp_color(0.0)
    assert ramp_color(2.0) == ramp_color(1.0)


def test_heatmap_well_formed(tiny_run):
    ctx = tiny_run.ctx
    for j in range(ctx.n_phases):
        root = ET.fromstring(render_phase(ctx, tiny_run.genes, j))
        assert root.tag == SVG + "svg"
        assert root.get("viewBox")
        vals = [float(r.get("data-u")) for r in root.iter(SVG + "rect") if r.get("data-u") is not None]
        assert len(vals) == len(ctx.phases[j].cells)
        assert all(0.0 <= v <= 1.0 for v in vals)


def test_heatmap_all_occupied_is_full(tiny_ctx):
    genes = tiny_ctx.all_occupied()
    for j in range(tiny_ctx.n_phases):
        root = ET.fromstring(render_phase(tiny_ctx, genes, j))
        vals = np.array([float(r.get("data-u")) for r in root.iter(SVG + "rect") if r.get("data-u") is not None])
        cap = tiny_ctx.cell_capacity(j)
        assert np.allclose(vals[cap > 0], 1.0)
        assert np.all(vals[cap <= 0] == 0.0)


def test_convergence_well_formed(tiny_run):
    root = ET.fromstring(render_convergence(tiny_run.history))
    assert root.get("viewBox")
    assert len(list(root.iter(SVG + "polyline"))) == 2


# ---------------------------------------------------------------- entry point


def test_plan_and_render_commands(tmp_path, capsys):
    out = tmp_path / "out"
    rc = main(["plan", str(bundled("tiny")), "--seed", "1", "--max-iters", "10", "--threads", "1", "--out", str(out)])
    assert rc == 0
    names = {p.name for p in out.iterdir()}
    assert {"plan.json", "history.json", "convergence.svg", "heatmap_01.svg"} <= names
    assert "score\t" in capsys.readouterr().out
    rc = main(["render", str(out / "plan.json"), str(bundled("tiny")), "--out", str(tmp_path / "r")])
    assert rc == 0
    assert (tmp_path / "r" / "heatmap_01.svg").exists()


def test_render_refuses_other_project(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["plan", str(bundled("tiny")), "--max-iters", "5", "--threads", "1", "--out", str(out)]) == 0
    other = write(tmp_path, "other.yaml", bundled("tiny").read_text() + "\n# edited\n")
    rc = main(["render", str(out / "plan.json"), str(other), "--out", str(tmp_path / "r")])
    assert rc == 2
    assert "refusing" in capsys.readouterr().err


def test_exit_code_no_installable_edges(tmp_path, capsys):
    text = MINIMAL.replace("installable: all", "installable: []").replace("  - obstacles", "  - name: bare\n    obstacles")
    rc = main(["plan", str(write(tmp_path, "p.yaml", text)), "--out", str(tmp_path / "o")])
    assert rc == 3
    assert "bare" in capsys.readouterr().err


def test_exit_code_schema_error(tmp_path, capsys):
    text = MINIMAL.replace("installable: all", "installable: 7")
    rc = main(["plan", str(write(tmp_path, "p.yaml", text)), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "installable" in capsys.readouterr().err


def test_exit_code_missing_file(tmp_path):
    assert main(["plan", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 2


def run_cli(args, env_threads, cwd):
    env = dict(os.environ, TAGPLAN_THREADS=str(env_threads))
    return subprocess.run(
        [sys.executable, "-m", "tagplan", *args], cwd=cwd, env=env, capture_output=True, text=True, timeout=600
    )


def test_output_independent_of_threads(tmp_path):
    outs = []
    for n in (1, 8):
        out = tmp_path / f"t{n}"
        r = run_cli(["plan", str(bundled("tiny")), "--seed", "42", "--max-iters", "40", "--out", str(out)], n, tmp_path)
        assert r.returncode == 0, r.stderr
        outs.append(out)
    for name in ("plan.json", "history.json", "heatmap_01.svg", "convergence.svg"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
