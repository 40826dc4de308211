"""On-disk formats: delimited trajectories and graphs, JSON sidecars.

All writes are atomic (temp file + rename in the same directory), so a
killed run never leaves a parseable but truncated artifact. Floats are
written with shortest round-trip precision.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .structure import CausalGraph
from .trajectory import Trajectory


def atomic_write_text(path: str | Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | Path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_trajectory_csv(path: str | Path, traj: Trajectory):
    """Header t,x0,...,x{n-1}; one row per time point; LF newlines."""
    header = "t," + ",".join(f"x{j}" for j in range(traj.dim))
    lines = [header]
    for t, row in zip(traj.times, traj.states):
        lines.append(repr(float(t)) + "," + ",".join(repr(float(v)) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_trajectory_csv(path: str | Path) -> Trajectory:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "t":
            raise ValueError(f"{path}: expected header starting with 't'")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return Trajectory(data[:, 0], data[:, 1:])


def write_graph_csv(path: str | Path, matrix: np.ndarray):
    """n x n comma-separated floats, row i = effect variable, no header."""
    matrix = np.asarray(matrix, dtype=float)
    lines = [",".join(repr(float(v)) for v in row) for row in matrix]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_graph_csv(path: str | Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


@dataclass
class DatasetBundle:
    trajectory: Trajectory
    truth: CausalGraph | None
    system: dict
    corruption: dict
    directory: Path


def write_dataset_bundle(
    directory: str | Path,
    traj: Trajectory,
    truth: CausalGraph | None,
    system_config: dict,
    corruption_config: dict,
):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(directory / "trajectory.csv", traj)
    if truth is not None:
        write_graph_csv(directory / "truth_graph.csv", truth.adjacency.astype(float))
    write_json(directory / "system.json", system_config)
    write_json(directory / "corruption.json", corruption_config)


def read_dataset_bundle(directory: str | Path) -> DatasetBundle:
    directory = Path(directory)
    traj = read_trajectory_csv(directory / "trajectory.csv")
    truth = None
    truth_path = directory / "truth_graph.csv"
    if truth_path.exists():
        truth = CausalGraph.from_adjacency(read_graph_csv(truth_path) > 0.5)
    system = read_json(directory / "system.json")
    corruption_path = directory / "corruption.json"
    corruption = read_json(corruption_path) if corruption_path.exists() else {}
    return DatasetBundle(traj, truth, system, corruption, directory)


def write_training_log(path: str | Path, data_losses, penalties):
    lines = ["epoch,data_loss,penalty"]
    for e, (d, p) in enumerate(zip(data_losses, penalties)):
        lines.append(f"{e},{repr(float(d))},{repr(float(p))}")
    atomic_write_text(path, "\n".join(lines) + "\n")
