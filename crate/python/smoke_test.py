"""Smoke test for the `nnm` extension module.

Build and install first:
    pip install --no-build-isolation ./crates/py
"""

import math
import os
import tempfile

import nnm


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    assert nnm.singular_values([[3.0, 0.0], [0.0, 4.0]]) == [4.0, 3.0]
    assert close(nnm.nuclear_norm([[1.0, 0.0], [0.0, 1.0]]), 2.0)
    assert close(nnm.frobenius_norm([[3.0, 4.0]]), 5.0)

    identity = [[float(i == j) for j in range(4)] for i in range(4)]
    assert close(nnm.nnm_reward(identity), 1.0)
    rank_one = [[1.0 / 3.0] * 3 for _ in range(9)]
    assert close(nnm.nnm_reward(rank_one), 1.0 / 3.0)

    assert close(nnm.disagreement_reward([[0.0, 0.0], [2.0, 2.0]]), 1.0)
    assert close(nnm.icm_reward([1.0, 2.0, 2.0], [0.0, 0.0, 0.0]), 9.0)
    assert close(nnm.rnd_reward([0.5, 0.5], [0.0, 0.0]), 0.5)
    assert close(nnm.apt_reward([0.0], [[math.sqrt(math.e - 1.0)]]), 1.0)
    assert close(nnm.combine(0.5, 1.0), 2.5)

    u, s, v = nnm.svd([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    assert len(u) == 3 and len(s) == 2 and len(v) == 2

    assert close(nnm.wilcoxon_greater([float(i + 2) for i in range(10)], [0.0] * 10), 2.0**-10)

    rows = nnm.synthetic_study(trials=5, levels=[0.0, 1.0])
    assert {r["method"] for r in rows} == {"nnm", "disagreement", "apt"}
    assert all(r["mean_rel_dev"] == 0.0 for r in rows if r["level"] == 0.0)

    env = nnm.Env("chain", length=5, seed=1)
    obs = env.reset()
    assert obs == [1.0, 0.0, 0.0, 0.0, 0.0] and env.action_count == 2
    for _ in range(4):
        obs, r, done = env.step(1)
    assert (r, done) == (1.0, True)

    agent = nnm.Agent(env="chain", length=10, method="nnm", seed=3, rollout_len=128)
    report = agent.iterate()
    assert report["env_steps"] == 128 and agent.env_steps == 128

    with tempfile.TemporaryDirectory() as tmp:
        cfg = os.path.join(tmp, "tiny.cfg")
        with open(cfg, "w") as f:
            f.write("mode = train\nenv.kind = chain\nseeds = 1\ntotal_steps = 512\n")
        out = nnm.run_config(cfg, [f"output_dir={tmp}/out"])
        assert [o["seed"] for o in out] == [1]

    try:
        nnm.nnm_reward([[1.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("single-column matrix accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
