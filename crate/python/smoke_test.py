"""Smoke test for the fleeting_py extension.

Build and install first:  maturin build -m crates/py/Cargo.toml -o dist && pip install dist/*.whl
"""
import math

import fleeting_py as fp


def main():
    curve = fp.retention_curve(5, 3.0, 256)
    assert len(curve) == 256
    assert curve[:5] == [1.0] * 5 and curve[-1] == 0.0
    assert all(b <= a for a, b in zip(curve[5:], curve[6:]))
    expect = 1 - (1 / 251) ** (1 / (math.e * 3.0))
    assert abs(fp.retention_value(5, 5, 3.0, 256) - expect) < 1e-12

    assert fp.param_count(6, 6, 384, 8000, 256) == 13_693_824

    tok = fp.Tokenizer.train("the cat sat on the mat. the cat ran.", 270)
    ids = tok.encode("the cat sat")
    assert tok.decode(ids) == "the cat sat"
    assert len(tok) == 270 and len(tok.merges()) == 13
    again = fp.Tokenizer.from_merges(tok.merges_text())
    assert again.encode("the mat") == tok.encode("the mat")

    r = fp.bootstrap_t_test([0.1, -0.05, 0.2, 0.15, 0.05], n_boot=10_000, seed=1)
    assert r["ci"][0] <= r["mean"] <= r["ci"][1] and 0 < r["p"] <= 1

    rows = fp.quintile_errors([float(i) for i in range(10)], [1.0, -2.0] * 5, 2.5)
    assert [row["n"] for row in rows] == [2] * 5
    assert sum(row["norm_under"] + row["norm_over"] for row in rows) / 5 == 1.0

    try:
        fp.retention_value(0, 10, 3.0, 8)
    except ValueError:
        pass
    else:
        raise AssertionError("E >= n accepted")
    print("smoke test ok")


if __name__ == "__main__":
    main()
