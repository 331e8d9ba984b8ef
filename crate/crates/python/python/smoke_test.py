"""Smoke test for the klever extension module.

Build and install first, e.g. `pip install ./crates/python` (maturin backend),
then run `python3 crates/python/python/smoke_test.py [params.json]`.
"""

import math
import sys

import klever


def main() -> None:
    params = klever.ModelParams.load(sys.argv[1]) if len(sys.argv) > 1 else klever.ModelParams.default_start()

    assert klever.scenarios()[0] == "baseline"
    assert abs(klever.composite_index(100.0, 100.0, 100.0) - 100.0) < 1e-12

    # Jump-free flow from the fixed point stays put.
    levers = klever.LeverVector()
    h, s, r = klever.flow(params, levers, (60.0, 50.0, 55.0), 0.0)
    assert (h, s, r) == (60.0, 50.0, 55.0)

    grid, k, shocks = klever.simulate_path(params, klever.LeverVector.scenario("full_klrm"), seed=7)
    assert len(grid) == len(k) == 101
    assert all(c in ("H", "S", "R") for _, c, _ in shocks)

    ens = klever.run_ensemble(params, "baseline", n_paths=500, seed=1)
    again = klever.run_ensemble(params, "baseline", n_paths=500, seed=1)
    assert ens.terminal_k == again.terminal_k, "same seed must reproduce"
    row = ens.summary()
    assert math.isclose(row["sharpe"] * row["cv_pct"] / 100.0, 1.0, rel_tol=1e-12)
    assert row["first_passage_pct"] >= row["crisis_pct"]

    single = klever.run_ensemble(params, "baseline", n_paths=1).summary()
    assert single["sharpe"] is None

    try:
        klever.run_ensemble(params, "no_such_scenario")
    except ValueError as e:
        assert "baseline" in str(e)
    else:
        raise AssertionError("unknown scenario accepted")

    for r in klever.table1(params, n_paths=300):
        print(f"{r['scenario']:14} mean {r['mean_K']:6.2f} cv {r['cv_pct']:5.2f}% crisis {r['crisis_pct']:5.2f}%")
    print(f"improvement(87.39, 53.35) = {klever.improvement(87.39, 53.35):.1f}%")

    fitted, loss, evals, exhausted = klever.calibrate(budget=3, eval_paths=100)
    assert evals <= 3 and loss >= 0.0 and isinstance(exhausted, bool)
    print("smoke test passed")


if __name__ == "__main__":
    main()
