import json
import subprocess
import sys

import pytest
from PIL import Image

from scenerelight.cli import main
from scenerelight.trainer import preset


@pytest.fixture(scope="module")
def trained(tmp_path_factory, toy_dir):
    root = tmp_path_factory.mktemp("cli")
    cfg = preset("illum_predicter", {"image_size": 64, "base_channels": 4}, manifest=str(toy_dir / "manifest.csv"),
                 output_dir=str(root / "run"), steps=2, batch_size=2, image_every=0)
    path = root / "config.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert main(["train", "--config", str(path)]) == 0
    return root, root / "run" / "ckpt_2.pt"


def test_gen_toy(tmp_path, capsys):
    assert main(["gen-toy", "--out", str(tmp_path / "d"), "--scenes", "2", "--size", "64"]) == 0
    assert (tmp_path / "d" / "manifest.csv").is_file()
    assert len(list((tmp_path / "d").glob("scene_*/*.png"))) == 80


def test_gen_toy_one_scene(tmp_path, capsys):
    assert main(["gen-toy", "--out", str(tmp_path), "--scenes", "1"]) == 1
    assert "needs ≥ 2 scenes" in capsys.readouterr().err


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen-toy"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1


def test_train_writes_run(trained):
    root, ckpt = trained
    assert ckpt.is_file()
    assert (root / "run" / "metrics.jsonl").is_file()


def test_train_missing_manifest(tmp_path):
    cfg = preset("illum_predicter", manifest=str(tmp_path / "none.csv"), output_dir=str(tmp_path / "r"))
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert main(["train", "--config", str(path)]) == 2


def test_eval(trained, toy_dir, tmp_path, capsys):
    _, ckpt = trained
    out = tmp_path / "report.json"
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(toy_dir), "--limit", "3", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert set(report["subsets"]) == {"Eval", "Eval_c_I=c_T", "Eval_d_I=d_T"}
    assert "score_l2" in capsys.readouterr().out


def test_eval_identity_baseline(trained, toy_dir, tmp_path):
    _, ckpt = trained
    out = tmp_path / "id.json"
    args = ["eval", "--ckpt", str(ckpt), "--data", str(toy_dir), "--limit", "3", "--identity-baseline",
            "--eval-scenes", "scene_1,scene_2", "--out", str(out)]
    assert main(args) == 0
    for stats in json.loads(out.read_text())["subsets"].values():
        assert abs(stats["score_l2"] - 1.0) < 1e-9


def test_eval_errors(trained, toy_dir, tmp_path):
    _, ckpt = trained
    assert main(["eval", "--ckpt", str(tmp_path / "x.pt"), "--data", str(toy_dir)]) == 2
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(toy_dir), "--variant", "envmap_only"]) == 1
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(tmp_path)]) == 2


def test_relight(trained, toy_dir, tmp_path):
    _, ckpt = trained
    out = tmp_path / "relit.png"
    args = ["relight", "--ckpt", str(ckpt), "--input", str(toy_dir / "scene_0" / "N_2500.png"),
            "--target", str(toy_dir / "scene_1" / "E_6500.png"), "--out", str(out),
            "--ground-truth", str(toy_dir / "scene_0" / "E_6500.png")]
    assert main(args) == 0
    assert Image.open(out).size == (64, 64)
    assert Image.open(tmp_path / "relit_strip.png").size == (256, 64)


def test_relight_missing_input(trained, tmp_path):
    _, ckpt = trained
    args = ["relight", "--ckpt", str(ckpt), "--input", str(tmp_path / "a.png"), "--target", str(tmp_path / "b.png"),
            "--out", str(tmp_path / "o.png")]
    assert main(args) == 2


def test_envmap_preview(tmp_path):
    out = tmp_path / "env.png"
    assert main(["envmap-preview", "--kelvin", "2500", "--direction", "E", "--out", str(out)]) == 0
    img = Image.open(out)
    assert img.size == (256, 128)
    r, g, b = img.getpixel((8 * 8, 0))
    assert r == 255 and b < g < r
    assert main(["envmap-preview", "--kelvin", "3000", "--direction", "E", "--out", str(out)]) == 1


def test_console_entry_point():
    result = subprocess.run([sys.executable, "-m", "scenerelight.cli", "--help"], capture_output=True, text=True)
    assert result.returncode == 0
    for cmd in ("gen-toy", "train", "eval", "relight", "envmap-preview"):
        assert cmd in result.stdout
