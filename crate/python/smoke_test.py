"""Smoke test for the difflab extension module.

Build and install first:  pip install maturin && maturin develop -m crates/py/Cargo.toml
"""

import math

import difflab


def main():
    verdict, steps, trace = difflab.Program.anbn().run("aabb")
    assert verdict == "accept" and steps == len(trace) - 1, (verdict, steps)
    assert difflab.Program.parity().run("aaa")[0] == "reject"

    field = difflab.ForceField(difflab.Program.parity(), "aa", cell_size=6.0)
    assert len(field.force([0.0] * field.dims)) == field.dims
    lip = field.lipschitz_estimate(500, 0)
    assert 1.0 < lip < 10.0, lip
    stats = field.run_trials(step=0.005, t_max=2000.0, trials=10, seed=3)
    assert stats["wrong_verdicts"] == 0 and stats["trials"] == 10, stats

    sched = difflab.Schedule.constant(1.0)
    mix = difflab.Mixture.standard_normal(2)
    s = mix.score(sched, [1.0, -2.0], 0.5)
    assert all(math.isclose(a, b, rel_tol=1e-12) for a, b in zip(s, [-1.0, 2.0])), s
    xs = mix.sample(sched, n=2000, steps=64, seed=7)
    mean = sum(x[0] for x in xs) / len(xs)
    assert abs(mean) < 0.1, mean

    curve = difflab.circle_convergence([4, 64], samples=2000, seed=1)
    assert curve[1]["tv"] < curve[0]["tv"], curve

    c = difflab.Circuit.is_in(5, [1, 4])
    assert c.depth == 3
    assert all(c([b >> i & 1 == 1 for i in range(5)]) == (bin(b).count("1") in (1, 4)) for b in range(32))
    assert difflab.Circuit.from_json(c.to_json()).gate_count == c.gate_count

    print("difflab smoke test ok")


if __name__ == "__main__":
    main()
