"""Smoke test for the compiled `mode0` extension.

Build and run from the repository root:

    cargo build --release -p mode0-py
    cp target/release/libmode0.so python/mode0.so
    python3 python/smoke_test.py
"""

import json
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import mode0  # noqa: E402


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL: {what}")
    print(f"ok   {what}")


def main():
    floors = [round(mode0.nash_floor(5, n), 3) for n in (2, 3, 4, 5, 7, 10)]
    check(floors == [0.2, 0.36, 0.488, 0.59, 0.738, 0.866], "nash floor table")
    mean, se = mode0.monte_carlo_random_floor(5, 4, trials=200_000, seed=1)
    check(abs(mean - 0.488) < 0.005 and se > 0, "monte carlo floor")
    check([mode0.regime(k, 2)[1] for k in (2, 3, 5)] == ["deterministic", "probabilistic", "anti-helpful"], "regime labels")

    env = mode0.Env(4, m=5, seed=3)
    first = env.initial()
    check(len(first["observations"]) == 4 and len(first["observations"][0]) == env.obs_dim, "observation shape")
    while not env.done:
        out = env.step([(i % 5, 4) for i in range(env.n)])
    check(out["done"] and env.tti == 100, "episode runs to completion")
    metrics = env.metrics()
    check(metrics["m0_collision_rate"] == 0.0, "distinct channels never collide")

    pol = mode0.Policy.train(4, m=5, m0_pool=2, mode="0c", seed=0, episodes=20)
    check(pol.n_actors == 4 and pol.mode == "0c", "policy bundle")
    ev = pol.evaluate(episodes=3, seed=0)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "p.ckpt")
        pol.save(path)
        again = mode0.Policy.load(path, m=5, m0_pool=2).evaluate(episodes=3, seed=0)
    check(ev == again, "checkpoint reload reproduces evaluation")

    colors = mode0.color_graph(3, [(0, 1), (1, 2), (0, 2)], 3)
    check(colors is not None and len(set(colors)) == 3, "triangle coloring")
    check(mode0.color_graph(3, [(0, 1), (1, 2), (0, 2)], 2) is None, "infeasible coloring")

    samples = [
        {"c1_sensor_verified": True, "c2_density_exceeded": True, "c3_preauthorized": True, "now": 0.0},
        {"c1_sensor_verified": False, "c2_density_exceeded": True, "c3_preauthorized": True,
         "hazard_resolved": True, "now": 5.0},
    ]
    phase, log = mode0.escalate(json.dumps(samples))
    check(phase["phase"] == "cancelled" and mode0.verify_log(log.encode()) == 2, "escalation log")
    tampered = bytearray(log.encode())
    tampered[10] ^= 0x01
    try:
        mode0.verify_log(bytes(tampered))
        check(False, "tamper detected")
    except ValueError:
        check(True, "tamper detected")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
