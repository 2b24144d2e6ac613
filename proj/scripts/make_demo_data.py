#!/usr/bin/env python3
"""Regenerates the synthetic CSVs under data/demo/. Committed output; run
only when the shapes need to change."""
import math
import random
import os

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "data", "demo")


def write_csv(name, header, rows):
    os.makedirs(OUT, exist_ok=True)
    path = os.path.join(OUT, name)
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(f"{v:.6f}" if isinstance(v, float) else str(v)
                             for v in row) + "\n")
    print("wrote", path, len(rows), "rows")


def blobs():
    rng = random.Random(20240901)
    centers = [(0.0, 0.0, 0.0, 0.0),
               (4.0, 4.0, 0.0, -2.0),
               (-4.0, 3.5, 2.5, 1.0)]
    rows = []
    for label, center in enumerate(centers):
        for _ in range(40):
            row = [rng.gauss(c, 0.9) for c in center]
            row.append(f"c{label}")
            rows.append(row)
    rng.shuffle(rows)
    write_csv("blobs.csv", ["x0", "x1", "x2", "x3", "cls"], rows)


def rings():
    rng = random.Random(20240902)
    rows = []
    for label, radius in enumerate((1.0, 3.0)):
        for _ in range(60):
            angle = rng.uniform(0.0, 2.0 * math.pi)
            r = radius + rng.gauss(0.0, 0.18)
            rows.append([r * math.cos(angle), r * math.sin(angle),
                         f"r{label}"])
    rng.shuffle(rows)
    write_csv("rings.csv", ["x", "y", "cls"], rows)


if __name__ == "__main__":
    blobs()
    rings()
