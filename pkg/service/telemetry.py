"""
Per-segment simulation telemetry: one TSV row per simulated frame, and a
plotly chart of a telemetry file for looking at drapes that slide off.
"""
from pathlib import Path
from typing import List

import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

COLUMNS = ["frame", "phase", "min_body_distance", "kinetic_energy"]


class TelemetryRecorder:
    def __init__(self, path: Path):
        self.path = Path(path)
        self.rows: List[dict] = []

    def record(self, frame: int, phase: str, min_body_distance: float, kinetic_energy: float) -> None:
        self.rows.append({
            "frame": int(frame),
            "phase": phase,
            "min_body_distance": float(min_body_distance),
            "kinetic_energy": float(kinetic_energy),
        })

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=COLUMNS)

    def save(self) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(self.path, sep="\t", index=False)
        return self.path


def read_telemetry(path: Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Telemetry file not found: {path}")
    df = pd.read_csv(path, sep="\t")
    missing = [c for c in COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{path} is missing columns {missing}")
    return df


def plot_telemetry(path: Path, output: Path, detach_threshold: float = None) -> Path:
    """Write an HTML chart of body distance and kinetic energy per frame."""
    df = read_telemetry(path)
    fig = make_subplots(rows=2, cols=1, shared_xaxes=True, vertical_spacing=0.08,
                        subplot_titles=("Min cloth-to-body distance (m)", "Kinetic energy (J)"))
    colors = {"warmup": "#8B95A6", "video": "#3498db"}
    for phase, part in df.groupby("phase", sort=False):
        fig.add_trace(go.Scatter(
            x=part["frame"], y=part["min_body_distance"], mode="lines", name=f"distance ({phase})",
            line=dict(color=colors.get(phase, "#e67e22"), width=1.5),
            hovertemplate="frame %{x}<br>%{y:.4f} m<extra></extra>",
        ), row=1, col=1)
        fig.add_trace(go.Scatter(
            x=part["frame"], y=part["kinetic_energy"], mode="lines", name=f"energy ({phase})",
            line=dict(color=colors.get(phase, "#e67e22"), width=1.5, dash="dot"),
            hovertemplate="frame %{x}<br>%{y:.5f} J<extra></extra>",
        ), row=2, col=1)
    if detach_threshold is not None:
        fig.add_hline(y=detach_threshold, line_dash="dash", line_color="rgba(231,76,60,0.6)", line_width=1,
                      row=1, col=1)
    fig.update_layout(
        template="plotly_dark",
        height=600,
        margin=dict(l=40, r=20, t=40, b=40),
        hovermode="x unified",
        title=Path(path).stem,
    )
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(output))
    return output
