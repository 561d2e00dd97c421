import json
import math
import subprocess
import sys

import numpy as np
import pytest

from monoplan import bundled_scene
from monoplan.cli import main
from monoplan.harness import RunConfig
from monoplan.mapio import DEPTH_MAGIC, DISPARITY_MAGIC, read_pnm, write_map
from monoplan.scene import camera_pose, load_scene, observe

COLORS = {"free": (0, 0, 0), "occupied": (0, 255, 0), "path": (255, 0, 0), "path_on_occupied": (255, 255, 0)}


def stored_disparity(tmp_path, magic=DISPARITY_MAGIC):
    scene = load_scene(bundled_scene("single_stack"))
    scene.boxes = [b.__class__((b.lo[0], b.lo[1] - 2.0, b.lo[2]), (b.hi[0], b.hi[1] - 2.0, b.hi[2]))
                   for b in scene.boxes]
    obs = observe(scene, camera_pose(scene.start, math.radians(scene.start_yaw_deg)),
                  RunConfig().intrinsics(), with_image=False)
    path = tmp_path / ("frame.disp" if magic == DISPARITY_MAGIC else "frame.dmap")
    write_map(path, obs.disparity if magic == DISPARITY_MAGIC else obs.true_depth, magic)
    return path


def test_run_bundled_scene(tmp_path, capsys):
    code = main(["run", "--scene", "single_stack", "--noise", "0.05", "--out", str(tmp_path)])
    summary = json.loads(capsys.readouterr().out)
    assert code == 0 and summary["outcome"] == "reached" and summary["collisions"] == 0
    assert (tmp_path / "run.jsonl").is_file() and (tmp_path / "summary.json").is_file()
    assert (tmp_path / "cycle_000_plan.ppm").is_file()
    assert not list(tmp_path.glob("cycle_*.png"))


def test_run_step_budget_exit_code(tmp_path, capsys):
    code = main(["run", "--scene", bundled_scene("two_stacks"), "--steps", "2", "--out", str(tmp_path)])
    summary = json.loads(capsys.readouterr().out)
    assert code == 2 and summary["reached"] is False and summary["cycles"] == 2


def test_run_goal_override(tmp_path, capsys):
    code = main(["run", "--scene", "two_stacks", "--goal", "0,1.25,1", "--out", str(tmp_path)])
    summary = json.loads(capsys.readouterr().out)
    assert code == 0 and summary["cycles"] <= 3


@pytest.mark.parametrize("magic", [DISPARITY_MAGIC, DEPTH_MAGIC])
def test_plan_once(tmp_path, capsys, magic):
    disp = stored_disparity(tmp_path, magic)
    out = tmp_path / "out"
    code = main(["plan-once", "--disp", str(disp), "--goal", "0,6,0", "--out", str(out)])
    result = json.loads(capsys.readouterr().out)
    assert code == 0
    assert result["occupied"] > 0 and len(result["actions"]) == 3
    assert all(max(map(abs, a)) == 1 for a in result["actions"])
    assert read_pnm(out / "depth.pgm").shape == (96, 128)
    rgb = read_pnm(out / "plan.ppm")
    colors = {tuple(int(v) for v in c) for c in rgb.reshape(-1, 3)}
    assert colors <= set(COLORS.values())
    assert COLORS["occupied"] in colors and COLORS["path"] in colors


def test_plan_once_rejects_wrong_size(tmp_path, capsys):
    path = tmp_path / "small.disp"
    write_map(path, np.ones((4, 4)), DISPARITY_MAGIC)
    assert main(["plan-once", "--disp", str(path), "--goal", "0,1,0"]) == 1
    assert "expected 128x96" in capsys.readouterr().err


def test_errors_exit_one(tmp_path, capsys):
    assert main(["run", "--scene", "no_such_scene", "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.txt"
    bad.write_text("start 0 0 1 0\nwidget 1\n")
    assert main(["run", "--scene", str(bad), "--out", str(tmp_path)]) == 1
    assert "line 2" in capsys.readouterr().err
    assert main(["plan-once", "--disp", str(tmp_path / "missing.disp"), "--goal", "0,1,0"]) == 1


def test_bad_goal_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--scene", "two_stacks", "--goal", "1,2", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "monoplan", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "plan-once" in proc.stdout
