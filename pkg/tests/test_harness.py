import json
import os

import numpy as np
import pytest

from qnsim import cli, harness
from qnsim.harness import (
    CSV_HEADER,
    ScenarioError,
    SimulationRun,
    calibrate_rho,
    export_frames,
    load_scenario,
    parse_scenario,
)

ASSETS = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "assets"))


def minimal_raw(**overrides):
    raw = {
        "mesh": {
            "node": os.path.join(ASSETS, "bar_small.node"),
            "ele": os.path.join(ASSETS, "bar_small.ele"),
        },
        "material": {"type": "neohookean", "mu": 1.0, "lambda": 10.0},
        "frames": 10,
    }
    raw.update(overrides)
    return raw


# --- schema --------------------------------------------------------------------


def test_minimal_scenario_defaults():
    scn = parse_scenario(minimal_raw())
    assert scn.frames == 10
    assert scn.h == pytest.approx(1.0 / 30.0)
    assert scn.solver.kind == "pd_qn"
    assert scn.solver.iterations == 10
    assert scn.solver.m == 5
    assert scn.solver.gamma == 0.3
    assert tuple(scn.gravity) == (0.0, 0.0, -9.8)


def test_unknown_material_rejected():
    with pytest.raises(ScenarioError, match="banana"):
        parse_scenario(minimal_raw(material={"type": "banana"}))


def test_bad_gamma_rejected():
    with pytest.raises(ScenarioError, match="gamma"):
        parse_scenario(minimal_raw(solver={"gamma": 1.5}))


def test_unknown_key_rejected_by_name():
    with pytest.raises(ScenarioError, match="turbo"):
        parse_scenario(minimal_raw(turbo=True))
    with pytest.raises(ScenarioError, match="color"):
        parse_scenario(minimal_raw(mesh={"node": "a", "ele": "b", "color": "red"}))


def test_missing_blocks_rejected():
    with pytest.raises(ScenarioError):
        parse_scenario({"frames": 3})
    with pytest.raises(ScenarioError):
        parse_scenario({"mesh": {"type": "tet"}, "material": {"type": "polynomial", "mu": 1}})


def test_bad_collider_and_motion_rejected():
    with pytest.raises(ScenarioError, match="cone"):
        parse_scenario(minimal_raw(colliders=[{"type": "cone"}]))
    with pytest.raises(ScenarioError, match="wobble"):
        parse_scenario(minimal_raw(fixed=[{"indices": [0], "motion": {"type": "wobble"}}]))


def test_bad_fit_interval_rejected():
    with pytest.raises(ScenarioError):
        parse_scenario(minimal_raw(fit_interval=[1.2, 1.5]))


def test_load_scenario_missing_file(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(str(tmp_path / "nope.json"))


def test_load_scenario_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ScenarioError, match="invalid JSON"):
        load_scenario(str(p))


def test_bundled_scenarios_parse():
    base = os.path.join(os.path.dirname(__file__), "..", "scenarios")
    for name in ("bar_twist", "jiggle", "recovery", "sphere_drop", "cloth_hang"):
        scn = load_scenario(os.path.join(base, f"{name}.json"))
        assert scn.frames >= 1


# --- running -------------------------------------------------------------------


def rest_raw(frames=5, **overrides):
    raw = minimal_raw(frames=frames, gravity=[0.0, 0.0, 0.0])
    raw["material"] = {"type": "corotated", "mu": 1e4, "lambda": 4e4}
    raw.update(overrides)
    return raw


def test_rest_scene_stays_at_rest(tmp_path):
    scn = parse_scenario(rest_raw(outputs={"csv": "rest.csv"}))
    report = harness.run(scn, out_dir=str(tmp_path))
    rest = SimulationRun(scn).system.mesh.vertices
    for x in report.states:
        assert np.array_equal(x, rest)
    for rec in report.records:
        assert all(abs(g) < 1e-10 for g in rec.g)


def test_csv_schema_and_row_count(tmp_path):
    scn = parse_scenario(rest_raw(frames=3, outputs={"csv": "out.csv"}))
    harness.run(scn, out_dir=str(tmp_path))
    lines = (tmp_path / "out.csv").read_text().strip().split("\n")
    assert lines[0] == CSV_HEADER
    assert len(lines) - 1 == 3 * scn.solver.iterations


def strip_cum_ms(text):
    # the wall-time column is the only nondeterministic field
    return "\n".join(",".join(line.split(",")[:-1]) for line in text.strip().split("\n"))


def test_determinism_same_seed(tmp_path):
    raw = minimal_raw(
        frames=4,
        material={"type": "polynomial", "mu": 1e4},
        perturbation={"seed": 3, "magnitude": 0.02},
        outputs={"csv": "run.csv"},
        fixed=[{"box": [[-1e-6, -1, -1], [1e-6, 1, 1]]}],
    )
    scn = parse_scenario(raw)
    harness.run(scn, out_dir=str(tmp_path / "a"))
    harness.run(scn, out_dir=str(tmp_path / "b"))
    a = strip_cum_ms((tmp_path / "a" / "run.csv").read_text())
    b = strip_cum_ms((tmp_path / "b" / "run.csv").read_text())
    assert a == b


def test_different_seed_differs(tmp_path):
    raw = minimal_raw(
        frames=2,
        material={"type": "polynomial", "mu": 1e4},
        perturbation={"seed": 3, "magnitude": 0.02},
        outputs={"csv": "run.csv"},
    )
    scn = parse_scenario(raw)
    harness.run(scn, out_dir=str(tmp_path / "a"), seed=3)
    harness.run(scn, out_dir=str(tmp_path / "b"), seed=4)
    a = strip_cum_ms((tmp_path / "a" / "run.csv").read_text())
    b = strip_cum_ms((tmp_path / "b" / "run.csv").read_text())
    assert a != b


def test_recorded_frames_have_relative_errors(tmp_path):
    raw = minimal_raw(
        frames=3,
        material={"type": "corotated", "mu": 1e4, "lambda": 4e4},
        fixed=[{"box": [[-1e-6, -1, -1], [1e-6, 1, 1]]}],
        outputs={"csv": "rec.csv", "record_frames": [1]},
        solver={"kind": "lbfgs", "iterations": 8},
    )
    scn = parse_scenario(raw)
    report = harness.run(scn, out_dir=str(tmp_path))
    rec = report.records[1]
    assert len(rec.rel_error) == 8
    assert all(-1e-9 <= e <= 1.0 + 1e-9 for e in rec.rel_error)
    assert all(b <= a + 1e-9 for a, b in zip(rec.rel_error, rec.rel_error[1:]))
    # non-recorded frames leave the column blank
    lines = (tmp_path / "rec.csv").read_text().strip().split("\n")[1:]
    for line in lines:
        frame, _, _, rel, _, _ = line.split(",")
        assert (rel == "") == (frame != "1")


def test_convergence_ordering_lbfgs_beats_base(tmp_path):
    raw = minimal_raw(
        frames=3,
        material={"type": "neohookean", "mu": 1e4, "lambda": 4e4},
        fixed=[{"box": [[-1e-6, -1, -1], [1e-6, 1, 1]]}],
        outputs={"record_frames": [2]},
    )
    scn = parse_scenario(raw)
    scn.solver = scn.solver.__class__(kind="pd_qn", iterations=10)
    base = harness.run(scn).final_rel_errors[2]
    scn.solver = scn.solver.__class__(kind="lbfgs", iterations=10)
    fast = harness.run(scn).final_rel_errors[2]
    assert fast <= base + 1e-12


def test_twist_motion_rotates_fixed_group():
    raw = minimal_raw(
        frames=1,
        material={"type": "corotated", "mu": 1e4, "lambda": 4e4},
        fixed=[
            {
                "box": [[-1e-6, -1, -1], [1e-6, 1, 1]],
                "motion": {
                    "type": "twist",
                    "axis": [1, 0, 0],
                    "center": [0.0, 0.1, 0.1],
                    "degrees_per_second": 90.0,
                },
            }
        ],
    )
    sim = SimulationRun(parse_scenario(raw))
    rest = sim.system.mesh.vertices[sim.system.fixed]
    targets = sim.fixed_targets(0)
    # same distance from the rotation center, but rotated
    c = np.array([0.0, 0.1, 0.1])
    assert np.allclose(
        np.linalg.norm(targets - c, axis=1), np.linalg.norm(rest - c, axis=1), atol=1e-12
    )
    assert not np.allclose(targets, rest)


def test_oscillate_motion_translates_along_axis():
    raw = minimal_raw(
        frames=1,
        material={"type": "corotated", "mu": 1e4, "lambda": 4e4},
        fixed=[
            {
                "indices": [0, 1],
                "motion": {"type": "oscillate", "axis": [0, 0, 1], "amplitude": 0.1, "frequency": 1.0},
            }
        ],
    )
    sim = SimulationRun(parse_scenario(raw))
    rest = sim.system.mesh.vertices[sim.system.fixed]
    t = sim.scn.h
    targets = sim.fixed_targets(0)
    expected = rest + 0.1 * np.sin(2 * np.pi * t) * np.array([0.0, 0.0, 1.0])
    assert np.allclose(targets, expected)


def test_divergence_raises_with_context(tmp_path):
    # an unstable setup (no line search, stiff polynomial, shaking base) must
    # surface a solver error or a non-finite-state report, not hang
    raw = minimal_raw(
        frames=60,
        material={"type": "polynomial", "mu": 1e5},
        solver={"kind": "pd_qn", "line_search": False},
        fixed=[
            {
                "box": [[-1e-6, -1, -1], [1e-6, 1, 1]],
                "motion": {"type": "oscillate", "axis": [0, 0, 1], "amplitude": 0.05, "frequency": 2.0},
            }
        ],
    )
    scn = parse_scenario(raw)
    sim = SimulationRun(scn)
    monotone = True
    for frame in range(scn.frames):
        rec = sim.step()
        gs = [rec.g0] + rec.g
        if any(b > a + 1e-9 * max(abs(a), 1.0) for a, b in zip(gs, gs[1:])):
            monotone = False
            break
        if not np.all(np.isfinite(sim.state.q_l)):
            monotone = False
            break
    assert not monotone


# --- outputs -------------------------------------------------------------------


def test_export_frames_names_and_content(tmp_path):
    states = [np.zeros((3, 3)), np.ones((3, 3)), np.zeros((3, 3))]
    faces = np.array([[0, 1, 2]])
    paths = export_frames(states, str(tmp_path), faces)
    assert [os.path.basename(p) for p in paths] == [
        "frame_0000.obj",
        "frame_0001.obj",
        "frame_0002.obj",
    ]
    a = open(paths[0]).read()
    c = open(paths[2]).read()
    assert a == c  # identical states give byte-identical files
    assert "f 1 2 3" in a


def test_export_frames_translation_shows_in_vertices(tmp_path):
    base = np.zeros((3, 3))
    shifted = base + np.array([1.0, 0.0, 0.0])
    paths = export_frames([base, shifted], str(tmp_path), np.array([[0, 1, 2]]))
    va = open(paths[0]).read().splitlines()[0]
    vb = open(paths[1]).read().splitlines()[0]
    assert va == "v 0 0 0"
    assert vb == "v 1 0 0"


def test_run_writes_obj_sequence(tmp_path):
    scn = parse_scenario(rest_raw(frames=2, outputs={"obj_dir": "objs"}))
    harness.run(scn, out_dir=str(tmp_path))
    files = sorted(os.listdir(tmp_path / "objs"))
    assert files == ["frame_0000.obj", "frame_0001.obj"]


def test_calibrate_rho_reasonable():
    errs = [0.9 * 0.5**k for k in range(20)]
    rho = calibrate_rho(errs, S=10)
    assert 0.0 < rho < 1.0
    assert rho == pytest.approx(np.sqrt(0.5), rel=1e-6)


# --- CLI -----------------------------------------------------------------------


def test_cli_simulate(tmp_path, capsys):
    scn_path = tmp_path / "scene.json"
    raw = rest_raw(frames=2, outputs={"csv": "out.csv"})
    scn_path.write_text(json.dumps(raw))
    code = cli.main(["simulate", str(scn_path), "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "out.csv").exists()
    out = capsys.readouterr().out
    assert "simulated 2 frames" in out


def test_cli_simulate_overrides(tmp_path):
    scn_path = tmp_path / "scene.json"
    scn_path.write_text(json.dumps(rest_raw(frames=1, outputs={"csv": "out.csv"})))
    code = cli.main(
        ["simulate", str(scn_path), "--out", str(tmp_path), "--solver", "lbfgs", "--iterations", "3"]
    )
    assert code == 0
    lines = (tmp_path / "out.csv").read_text().strip().split("\n")
    assert len(lines) - 1 == 3


def test_cli_bad_scenario(tmp_path, capsys):
    scn_path = tmp_path / "scene.json"
    scn_path.write_text(json.dumps(minimal_raw(material={"type": "banana"})))
    code = cli.main(["simulate", str(scn_path)])
    assert code == 1
    assert "banana" in capsys.readouterr().err


def test_cli_make_assets(tmp_path):
    code = cli.main(["make-assets", "--dir", str(tmp_path / "assets")])
    assert code == 0
    names = set(os.listdir(tmp_path / "assets"))
    assert {"bar.node", "bar.ele", "bar_small.node", "bar_small.ele", "sphere.node", "sphere.ele", "cloth20.obj"} <= names
