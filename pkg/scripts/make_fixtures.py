"""Regenerate the point clouds used by the shipped scenario fixtures."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from vlabkit.geometry import PointCloud, box_cloud, sphere_cloud

OUT = Path(__file__).resolve().parents[1] / "src" / "vlabkit" / "data" / "scenarios" / "clouds"


def open_box(size, spacing):
    """Box resting on z = 0 with its top face removed."""
    c = box_cloud((0, 0, size[2] / 2), size, spacing)
    keep = c.points[:, 2] < size[2] - 1e-9
    return PointCloud(c.points[keep], "local")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    sphere_cloud((0, 0, 0), 0.035, 160, "local").save(OUT / "fruit_round.pclb")
    banana = sphere_cloud((0, 0, 0), 1.0, 160, "local").points * np.array([0.06, 0.025, 0.025])
    PointCloud(banana, "local").save(OUT / "fruit_long.pclb")
    open_box((0.2, 0.2, 0.1), 0.02).save(OUT / "basket.pclb")
    c = box_cloud((0, 0, 0.1), (0.14, 0.14, 0.2), 0.02)
    PointCloud(c.points, "local").save(OUT / "juicer.pclb")
    c = box_cloud((0, 0, 0.025), (0.05, 0.05, 0.05), 0.01)
    PointCloud(c.points, "local").save(OUT / "toy_block.pclb")
    sphere_cloud((0, 0, 0), 0.03, 120, "local").save(OUT / "toy_duck.pclb")


if __name__ == "__main__":
    main()
