#!/usr/bin/env python3
"""Fraction of magnitude scales g that a half format rounds to exactly 1.

Uses the gaussian model by default, or one value per line from ``--from-file``.
"""

import argparse

import numpy as np

from dorafactor.stability import collapse_fractions, sample_g


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=10**6)
    p.add_argument("--std", type=float, default=0.0015)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--from-file", help="text file of g values; overrides the gaussian model")
    a = p.parse_args(argv)

    if a.from_file:
        g = sample_g("from_file", path=a.from_file)
        src = a.from_file
    else:
        g = sample_g("gaussian", a.n, a.seed, std=a.std)
        src = f"gaussian(1, {a.std}), an approximation of trained-adapter statistics"
    print(f"{g.size} samples from {src}; |g-1| median {np.median(np.abs(g - 1)):.2e}")
    rule = collapse_fractions(g)
    exact = collapse_fractions(g, exact=True)
    for name in rule:
        print(f"  {name:>5}: threshold rule {rule[name]:.4f}   rounds to 1 {exact[name]:.4f}")


if __name__ == "__main__":
    main()
