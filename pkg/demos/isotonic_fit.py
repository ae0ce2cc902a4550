"""Fit noisy scores to an owner's ranking and compare with the raw scores.

Run with ``python demos/isotonic_fit.py``.
"""
import numpy as np

from isomech.isotonic import isotonic_fit
from isomech.experiments import mse


def main():
    rng = np.random.default_rng(0)
    R = np.sort(rng.normal(5.0, 1.5, size=8))[::-1]
    y = R + rng.normal(0.0, 1.0, size=R.size)
    ranking = list(range(R.size))  # the owner knows the true order
    fitted = isotonic_fit(y, ranking)
    print("true     ", np.round(R, 2))
    print("observed ", np.round(y, 2))
    print("fitted   ", np.round(fitted, 2))
    print(f"mse raw {mse(R, y):.3f}  mse fitted {mse(R, fitted):.3f}")


if __name__ == "__main__":
    main()
