"""Smoke test for the Python extension.

Build it first:

    cargo build --release -p pcs-isac-py --features extension-module
    cp target/release/libpcs_isac_py.so python/pcs_isac_py.so

then run ``python3 python/smoke_test.py`` from the repository root.
"""

import json
import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import pcs_isac_py as pi  # noqa: E402


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    q16 = pi.Constellation.qam(16)
    assert q16.order == 16 and q16.num_rings == 3
    assert len(q16.points()) == 16
    lo, hi = q16.feasible_range()
    assert close(lo, 1.0, 1e-12) and close(hi, 1.64, 1e-12), (lo, hi)

    u = pi.Distribution.uniform(q16)
    assert close(u.moment(q16, 4), 1.32, 1e-12)
    assert close(u.entropy_bits(), 4.0, 1e-12)

    bits, se = pi.mutual_information(q16, u, 0.01, n_mc=20_000, seed=3)
    assert close(bits, 4.0, 0.05) and se < 0.05, (bits, se)

    heu = pi.solve_heuristic(q16, 1.2, n_mc=5_000)
    assert all(close(a, b, 1e-9) for a, b in zip(heu.ring_mass, [0.15625, 0.6875, 0.15625]))
    assert heu.multipliers is None

    opt = pi.run_mba(q16, 1.2, n_mc=4_000, report_n_mc=5_000, seed=2)
    assert opt.converged and opt.multipliers is not None
    assert all(close(a, b, 1e-3) for a, b in zip(opt.ring_mass, heu.ring_mass))
    assert json.loads(opt.to_json())["method"] == "optimal"
    assert close(opt.distribution(q16).moment(q16, 4), 1.2, 1e-8)

    try:
        pi.Constellation.qam(12)
    except ValueError:
        pass
    else:
        raise AssertionError("qam(12) should be rejected")

    psk = pi.Constellation.psk(64)
    lags, db = pi.zero_doppler_slice(psk, pi.Distribution.uniform(psk), n_mc=50)
    assert len(lags) == 127 and db[63] == 0.0 and all(math.isfinite(v) for v in db)

    pts = pi.pd_curve(psk, pi.Distribution.uniform(psk), [10.0, 14.0], n_mc=300)
    assert len(pts) == 2 and all(p[2] <= p[1] <= p[3] for p in pts)

    print("smoke test passed")


if __name__ == "__main__":
    main()
