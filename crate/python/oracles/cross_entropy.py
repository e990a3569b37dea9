"""Mean cross-entropy of rational logits, evaluated exactly with mpmath."""
import json
from fractions import Fraction
from pathlib import Path

import mpmath

mpmath.mp.dps = 50

LOGITS = [
    [Fraction(1, 3), Fraction(-2, 7), Fraction(5, 4), Fraction(0), Fraction(-9, 8)],
    [Fraction(7, 2), Fraction(7, 2), Fraction(-1, 16), Fraction(3, 5), Fraction(2)],
    [Fraction(-40), Fraction(25, 3), Fraction(1, 1024), Fraction(-3, 11), Fraction(6)],
]
TARGETS = [2, 4, 0]


def main():
    total = mpmath.mpf(0)
    for row, t in zip(LOGITS, TARGETS):
        xs = [mpmath.mpf(x.numerator) / x.denominator for x in row]
        total += mpmath.log(mpmath.fsum(mpmath.exp(x) for x in xs)) - xs[t]
    loss = total / len(TARGETS)
    out = {
        "logits": [[[x.numerator, x.denominator] for x in row] for row in LOGITS],
        "targets": TARGETS,
        "loss": mpmath.nstr(loss, 30),
    }
    path = Path(__file__).resolve().parents[2] / "fixtures/oracles/cross_entropy.json"
    path.write_text(json.dumps(out, indent=2) + "\n")


if __name__ == "__main__":
    main()
