"""Scatter plot of a density.csv written by `fisherattitude density`.

Usage:
    python tools/plot_sphere_density.py density.csv [out.png]

Needs the `plot` extra (matplotlib).
"""
import csv
import sys
import pathlib

import matplotlib.pyplot as plt
import numpy as np


def read_density(path: pathlib.Path) -> dict[int, np.ndarray]:
    rows: dict[int, list[list[float]]] = {}

    with open(path, newline='') as file:
        for record in csv.DictReader(file):
            axis = int(record['axis_index'])
            rows.setdefault(axis, []).append(
                [float(record[key]) for key in ('x', 'y', 'z', 'density')])

    return {axis: np.array(values) for axis, values in rows.items()}


def main() -> None:
    if len(sys.argv) < 2:
        print(__doc__)
        sys.exit(1)

    in_path = pathlib.Path(sys.argv[1])
    out_path = pathlib.Path(sys.argv[2]) if len(sys.argv) > 2 \
        else in_path.with_suffix('.png')

    data = read_density(in_path)
    vmax = max(values[:, 3].max() for values in data.values())

    fig = plt.figure(figsize=[10, 3.5])

    for n, axis in enumerate(sorted(data), start=1):
        values = data[axis]
        ax = fig.add_subplot(1, len(data), n, projection='3d')
        points = ax.scatter(values[:, 0], values[:, 1], values[:, 2],
                            c=values[:, 3], cmap='viridis', vmin=0.0,
                            vmax=vmax, s=4)
        ax.set_title(f'axis {axis}')
        ax.set_box_aspect((1, 1, 1))
        ax.set_axis_off()

    fig.colorbar(points, ax=fig.axes, shrink=0.7, label='density')
    fig.savefig(out_path, dpi=200)

    print(f'Wrote {out_path}')


if __name__ == '__main__':
    main()
