import numpy as np

from dpac import experiments as ex
from dpac import report


def test_figures_are_written(tmp_path):
    base = ex.ExperimentConfig(algorithm="osp-laplace", backend="plaintext", trials=10, iterate=False)
    rows = ex.sweep(base, "n", [10, 20], baselines=["dpca-laplace"])
    rows.append(ex._failed(base, "osp-laplace", "n", 250.0, OverflowError("too big")))
    paths = report.write_figures(rows, str(tmp_path / "figs"))
    assert len(paths) == 3
    traj = report.plot_trajectories({"a": np.geomspace(1, 1e-3, 20)}, str(tmp_path / "t.png"))
    for p in paths + [traj]:
        with open(p, "rb") as fh:
            assert fh.read(8) == b"\x89PNG\r\n\x1a\n"
