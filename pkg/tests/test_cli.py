import json
from types import SimpleNamespace

import numpy as np
import pytest

from plenoptic import cli
from plenoptic.io import format_report, read_pfm, write_pfm
from plenoptic.scene import SceneSpec, count_local_minima, load_spec


def _spec(tmp_path, data, name="spec.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data) if not isinstance(data, str) else data)
    return str(p)


def _report(text):
    return dict(line.split(" = ", 1) for line in text.splitlines() if " = " in line)


def test_bad_inputs_exit_2_with_field_path(tmp_path, capsys):
    assert cli.main(["gen-scene", "--spec", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err
    bad = _spec(tmp_path, {"panels": [{"name": "a", "material": "black", "grid": 4, "colour": 1}]})
    assert cli.main(["gen-scene", "--spec", bad, "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "panels.0.grid" in err and "panels.0.colour" in err
    broken = _spec(tmp_path, '{"panels": [\n  {"name": }]}', "broken.json")
    assert cli.main(["render", "--spec", broken, "--out", str(tmp_path)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["render", "--threads", "0", "--spec", bad]) == 2


def test_spec_rules():
    with pytest.raises(ValueError):
        SceneSpec.model_validate({"panels": [{"name": "a", "material": "black", "brdf": {
            "diffuse_albedo": 0.1, "roughness": 0.2, "ior": 1.5, "specular": 1.0}}]})
    with pytest.raises(ValueError):
        SceneSpec.model_validate({"panels": [{"name": "a", "material": "black"}, {"name": "a", "material": "white"}]})
    with pytest.raises(ValueError):
        SceneSpec.model_validate({"schema_version": 2, "panels": [{"name": "a", "material": "black"}]})


def test_run_block_overrides_flags_which_override_defaults(tmp_path):
    spec = load_spec(_spec(tmp_path, {"panels": [{"name": "a", "material": "black"}], "run": {"seed": 9}}))
    args = SimpleNamespace(seed=3, threads=2, sao_depth=None)
    cfg = cli.settings(args, spec)
    assert cfg["seed"] == 9 and cfg["threads"] == 2 and cfg["sao_depth"] == cli.DEFAULTS["sao_depth"]


def test_gen_scene_counts_dents(tmp_path, capsys):
    spec = _spec(tmp_path, {"panels": [
        {"name": "grid", "material": "white", "grid": 96, "dent_grid": {"count": 16}},
        {"name": "flat", "material": "black", "grid": 16}], "run": {"vlo_depth": 4, "sao_depth": 2}})
    out = tmp_path / "scene"
    assert cli.main(["gen-scene", "--spec", spec, "--out", str(out)]) == 0
    rep = _report(capsys.readouterr().out)
    assert rep["grid.local_minima"] == "16" and rep["grid.dents"] == "16"
    assert rep["flat.local_minima"] == "0"
    assert np.all(read_pfm(out / "flat_truth_depth.pfm") == 0)
    assert read_pfm(out / "grid_height.pfm").shape == (96, 96)
    assert {p.name for p in out.iterdir()} >= {"scene.vlo", "environment.sao", "scene.txt", "grid_brdf.json"}


def test_rmsd_subcommand(tmp_path, capsys):
    a = np.random.default_rng(0).normal(size=(10, 10)).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", a)
    write_pfm(tmp_path / "b.pfm", a + 3.0)
    write_pfm(tmp_path / "c.pfm", a[:5])
    assert cli.main(["rmsd", str(tmp_path / "a.pfm"), str(tmp_path / "b.pfm"), "--extent", "0.05"]) == 0
    rep = _report(capsys.readouterr().out)
    assert abs(float(rep["rmsd"])) < 1e-5 and "relative_error_ppt" in rep
    assert cli.main(["rmsd", str(tmp_path / "a.pfm"), str(tmp_path / "c.pfm")]) == 2
    assert cli.main(["rmsd", str(tmp_path / "a.pfm"), str(tmp_path / "nope.pfm")]) == 2


def test_reconstruct_reports_unmet_goal(tmp_path, capsys):
    spec = _spec(tmp_path, {
        "panels": [{"name": "p", "material": "black", "grid": 8, "dent_grid": {"count": 1, "radius": 0.008}}],
        "capture": {"n_loi": 20, "loi_resolution": 4},
        "run": {"sao_depth": 3, "alternations": 0, "goal_um": 1e-9}})
    assert cli.main(["reconstruct", "--spec", spec, "--out", str(tmp_path / "r")]) == 1
    text = capsys.readouterr().out
    assert _report(text)["status"] == "goal not met"
    assert "panel diffuse_reflectivity mean_dolp rmsd_um relative_error_ppt" in text
    assert read_pfm(tmp_path / "r" / "p_normals.pfm").shape == (8, 8, 3)


def test_stage_failure_exits_3_with_stage_name(tmp_path, capsys, monkeypatch):
    spec = _spec(tmp_path, {"panels": [{"name": "a", "material": "black"}]})

    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "build_vlo", boom)
    assert cli.main(["render", "--spec", spec, "--out", str(tmp_path)]) == 3
    assert "stage 'vlo'" in capsys.readouterr().err


@pytest.mark.parametrize("shape", [(5, 7), (4, 6, 3)])
def test_pfm_round_trip(tmp_path, shape):
    img = np.random.default_rng(1).normal(size=shape).astype(np.float32)
    write_pfm(tmp_path / "x.pfm", img)
    assert np.array_equal(read_pfm(tmp_path / "x.pfm"), img)


def test_local_minima_counts_plateaus_once():
    z = np.zeros((9, 9))
    z[3:5, 3:5] = -1.0
    z[7, 7] = -0.5
    assert count_local_minima(z, 0.1) == 2
    assert count_local_minima(np.zeros((4, 4)), 0.0) == 0


def test_report_format():
    text = format_report("t", [("a", 1), ("b", 0.1234567891234), ("c", [1.0, 2.0])])
    assert text.splitlines()[0] == "# t"
    assert _report(text)["b"] == "0.123456789"
