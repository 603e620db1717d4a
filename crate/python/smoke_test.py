"""Smoke test for the pyloadshape extension.

Build and install first:
    pip install --no-build-isolation -e crates/python
"""

import math
import random

import pyloadshape as ls


def main():
    s = ls.Scenario.generate(n_homes=3, seed=1, horizon=8)
    assert s.n_homes == 3 and s.horizon == 8
    lo, hi = s.price_box
    print(s, "price box", (lo, hi), "appliances of home 0:", s.appliances(0))

    # JSON round trip keeps the scenario intact
    again = ls.Scenario.from_json(s.to_json())
    assert again.to_json() == s.to_json()

    rng = random.Random(7)
    prices = [rng.uniform(lo + 0.1, hi - 0.1) for _ in range(s.horizon)]

    sol = ls.solve_home(s, 0, prices)
    assert sol["status"] == "optimal", sol["status"]
    assert all(p >= -1e-9 for p in sol["p_star"])
    jac = ls.price_jacobian(s, 0, prices)
    assert len(jac) == len(sol["p_star"]) and len(jac[0]) == s.horizon

    g, weak = ls.coordinator_gradient(s, prices)
    fd = ls.finite_difference_gradient(s, prices)
    scale = max(1.0, max(abs(v) for v in fd))
    err = max(abs(a - b) for a, b in zip(g, fd)) / scale
    print(f"gradient vs finite differences: rel error {err:.2e}, weakly active homes {weak}")
    if weak == 0:
        assert err <= 1e-4, err

    z0 = ls.objective(s, prices)
    r = ls.run_coordination(s, batch_size=2, k_max=20, epsilon=1e-9, seed=3)
    assert len(r["final_prices"]) == s.horizon
    assert all(lo - 1e-12 <= p <= hi + 1e-12 for p in r["final_prices"])
    assert math.isfinite(r["final_objective"])
    assert r["final_objective"] <= r["initial_objective"]
    print(
        f"coordination: z {r['initial_objective']:.4f} -> {r['final_objective']:.4f} "
        f"after {len(r['objectives'])} iterations ({r['stop_reason']}); z at random prices {z0:.4f}"
    )

    try:
        ls.run_coordination(s, batch_size=10)
    except ValueError as e:
        print("oversized batch rejected:", e)
    else:
        raise AssertionError("batch larger than the neighborhood was accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
