"""Smoke test for the qanneal extension module.

Build and run from the repository root:

    cargo build --release -p qanneal-py
    cp target/release/libqanneal.so python/qanneal.so
    python3 python/smoke_test.py
"""

import math
import os
import random
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import qanneal  # noqa: E402


def main():
    ks, errs = qanneal.quantize([0.3, -1.125, 2.5], 4)
    assert ks == [1, -4, 10], ks
    assert all(abs(e) <= 0.5 for e in errs)
    assert abs(errs[0] - (1 - 1.2)) < 1e-12

    s = qanneal.Schedule(n=10)
    assert s.q_p == 4 and s.h_bar == 2
    rows = s.table(100)
    assert len(rows) == 101
    assert abs(rows[98]["sigma_inf"] - 1e6 / math.log(100)) < 1e-6
    assert all(b["sigma"] <= a["sigma"] for a, b in zip(rows, rows[1:]))

    opt = qanneal.Optimizer([0.05, -0.03], learning_rate="1/2", h_bar0=2, enforcement="off")
    out = opt.step([0.05, -0.03])
    assert out["h_bar"] == 4 and out["rescue_raises"] == 2, out
    assert out["direction"] == [1 / 16, 0.0], out
    assert opt.lattice_closed()

    rec = qanneal.run('name = "quadratic"\nn = 2', 'epochs = 50\nlearning_rate = "1/4"', seed=1)
    assert rec["meta"]["label"] == "QSGD"
    assert rec["trajectory"][-1] <= rec["trajectory"][0]

    rng = random.Random(0)
    errors = [[qanneal.quantize([rng.uniform(-100, 100)], 1024)[1][0]] for _ in range(20000)]
    report = qanneal.wnh_test(errors)
    assert report["passed"], report
    assert abs(report["empirical_variance"] - 1 / 12) < 0.005

    ens = qanneal.sde_ensemble(
        'name = "quadratic"\nn = 1',
        'alpha = 0.5\nhorizon = 10\nnoise = { kind = "off" }',
        paths=8,
    )
    assert ens["diverged"] == 0 and len(ens["epochs"]) == 11

    print("qanneal smoke test passed")


if __name__ == "__main__":
    main()
