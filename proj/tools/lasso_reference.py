"""Reference solution for data/lasso.json, computed with numpy only.

Plain proximal-gradient iteration with step 1/||H||^2, run until the iterate stops
changing in floating point (capped at 10^7 steps).

    python3 tools/lasso_reference.py data/lasso.json data/lasso_reference.json
"""
import json
import sys

import numpy as np


def solve(H, o, alpha, max_steps=10_000_000):
    tau = 1.0 / np.linalg.norm(H, 2) ** 2
    G = H.T @ H
    c = H.T @ o
    x = np.zeros(H.shape[1])
    for step in range(max_steps):
        u = x - tau * (G @ x - c)
        xn = np.sign(u) * np.maximum(np.abs(u) - tau * alpha, 0.0)
        if np.array_equal(xn, x):
            break
        x = xn
    return x, step


def main(src, dst):
    with open(src) as f:
        p = json.load(f)
    H = np.array(p["H"], dtype=float)
    o = np.array(p["o"], dtype=float)
    alpha = float(p["alpha"])
    x, steps = solve(H, o, alpha)
    obj = 0.5 * np.sum((H @ x - o) ** 2) + alpha * np.sum(np.abs(x))
    with open(dst, "w") as f:
        json.dump({"x": x.tolist(), "objective": obj, "steps": steps}, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
