"""High-precision retention values on a random (d, E, alpha, n) grid.

Writes fixtures/oracles/retention_grid.csv. alpha is drawn as a double and
written with repr() so both sides start from the same binary value.
"""
import csv
import random
import sys
from pathlib import Path

import mpmath

mpmath.mp.dps = 50


def retention(d, e, alpha, n):
    if d < e:
        return mpmath.mpf(1)
    ratio = mpmath.mpf(d - e + 1) / (n - e)
    return 1 - ratio ** (1 / (mpmath.e * mpmath.mpf(alpha)))


def main(out):
    rng = random.Random(20240611)
    rows = []
    sizes = [8, 16, 32, 64, 128, 256, 512, 1024]
    while len(rows) < 1000:
        n = rng.choice(sizes)
        e = rng.randrange(0, n)
        alpha = rng.uniform(0.05, 25.0)
        k = len(rows) % 10
        if k == 0:
            d = n - 1
        elif k == 1 and e > 0:
            d = rng.randrange(0, e)
        else:
            d = rng.randrange(0, n)
        rows.append((d, e, alpha, n, retention(d, e, alpha, n)))
    with open(out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["d", "E", "alpha", "n", "retention"])
        for d, e, alpha, n, r in rows:
            w.writerow([d, e, repr(alpha), n, mpmath.nstr(r, 30, min_fixed=-1, max_fixed=1)])


if __name__ == "__main__":
    root = Path(__file__).resolve().parents[2]
    main(sys.argv[1] if len(sys.argv) > 1 else root / "fixtures/oracles/retention_grid.csv")
