import pandas as pd
import pytest

from telemetry import TelemetryRecorder, plot_telemetry, read_telemetry


def _recorded(tmp_path):
    recorder = TelemetryRecorder(tmp_path / "telemetry" / "toy_subject0_000.tsv")
    for frame in range(-3, 0):
        recorder.record(frame, "warmup", 0.02 - 0.005 * (frame + 3), 0.1)
    for frame in range(5):
        recorder.record(frame, "video", 0.005 + 0.08 * frame, 0.01 * frame)
    return recorder.save()


def test_round_trip(tmp_path):
    df = read_telemetry(_recorded(tmp_path))
    assert list(df.columns) == ["frame", "phase", "min_body_distance", "kinetic_energy"]
    assert df["frame"].tolist() == [-3, -2, -1, 0, 1, 2, 3, 4]
    assert (df["phase"] == "video").sum() == 5


def test_chart_is_written(tmp_path):
    output = plot_telemetry(_recorded(tmp_path), tmp_path / "chart.html", detach_threshold=0.30)
    html = output.read_text(encoding="utf-8")
    assert "distance (video)" in html
    assert "energy (warmup)" in html


def test_missing_columns(tmp_path):
    path = tmp_path / "bad.tsv"
    pd.DataFrame({"frame": [0]}).to_csv(path, sep="\t", index=False)
    with pytest.raises(ValueError):
        read_telemetry(path)
    with pytest.raises(FileNotFoundError):
        read_telemetry(tmp_path / "none.tsv")
