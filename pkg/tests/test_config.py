import pytest

from config import GenerationConfig, env_overrides, load_config, read_config_file
from errors import ConfigError


def test_defaults_match_documented_values():
    config = load_config(environ={})
    assert config.grid_res == 76
    assert config.substeps == 15
    assert config.collision_iters == 10
    assert config.margin == 0.0005
    assert config.warmup == 24
    assert config.min_restart_gap == 48
    assert config.detach_threshold == 0.30
    assert config.encoder == "png"
    assert config.sun_direction is None


def test_environment_is_read_with_prefix():
    overrides = env_overrides({"BLANKETGEN_GRID_RES": "30", "BLANKETGEN_SUPERSAMPLE": "yes", "OTHER": "1"})
    assert overrides == {"grid_res": "30", "supersample": "yes"}
    config = load_config(environ={"BLANKETGEN_GRID_RES": "30", "BLANKETGEN_SUPERSAMPLE": "yes"})
    assert config.grid_res == 30
    assert config.supersample is True


def test_precedence_env_then_file_then_cli(tmp_path):
    config_file = tmp_path / "run.env"
    config_file.write_text("grid-res=40\nsubsteps=8\nsun_direction=0,0,1\n")
    config = load_config(
        config_file=config_file,
        cli_overrides={"substeps": 3, "seed": None},
        environ={"BLANKETGEN_GRID_RES": "30", "BLANKETGEN_SEED": "7"},
    )
    assert config.grid_res == 40          # file beats environment
    assert config.substeps == 3           # CLI beats file
    assert config.seed == 7               # unset CLI flag leaves the environment value
    assert config.sun_direction == (0.0, 0.0, 1.0)


def test_unknown_key_is_rejected(tmp_path):
    config_file = tmp_path / "run.env"
    config_file.write_text("grid_resolution=40\n")
    with pytest.raises(ConfigError, match="grid_resolution"):
        load_config(config_file=config_file, environ={})


@pytest.mark.parametrize("key, value", [
    ("grid_res", "many"),
    ("grid_res", "1"),
    ("encoder", "gif"),
    ("stretch_stiffness", "1.5"),
    ("margin", "0"),
    ("sun_direction", "1,2"),
])
def test_invalid_values_are_rejected(key, value):
    with pytest.raises(ConfigError):
        GenerationConfig().with_overrides({key: value})


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_config_file(tmp_path / "absent.env")


def test_env_text_replays_the_same_config(tmp_path):
    config = GenerationConfig().with_overrides({"grid_res": 20, "sun_direction": "0.5,0,1", "telemetry": "true"})
    path = tmp_path / "generation_config.env"
    path.write_text(config.to_env_text())
    assert load_config(config_file=path, environ={}) == config
