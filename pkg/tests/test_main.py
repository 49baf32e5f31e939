import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

import main  # noqa: E402


def test_make_toy_then_generate_then_audit(tmp_path, capsys):
    toy_dir = tmp_path / "toy"
    assert main.main(["make-toy", "--output", str(toy_dir), "--frames", "6", "--subjects", "1"]) == 0
    assert (toy_dir / "toy_1subj" / "sequence.json").exists()

    out = tmp_path / "out"
    code = main.main(["generate", "--input", str(toy_dir), "--output", str(out), "--grid-res", "8",
                      "--warmup", "2", "--quiet"])
    assert code == 0
    assert (out / "generation_config.env").read_text(encoding="utf-8").count("grid_res=8") == 1
    manifest = json.loads((out / "annotations" / "person_keypoints_train.json").read_text(encoding="utf-8"))
    assert len(manifest["images"]) > 0

    assert main.main(["audit", "--output", str(out)]) == 0
    assert "Manifest entries and frame files match" in capsys.readouterr().out


def test_failures_become_exit_code_one(tmp_path):
    assert main.main(["audit", "--output", str(tmp_path / "nothing")]) == 0
    assert main.main(["evaluate", "--pred", str(tmp_path / "missing"),
                      "--gt-manifest", str(tmp_path / "missing.json")]) == 1


def test_unknown_flag_value_is_rejected():
    with pytest.raises(SystemExit):
        main.build_parser().parse_args(["generate", "--input", "x", "--output", "y", "--encoder", "gif"])
