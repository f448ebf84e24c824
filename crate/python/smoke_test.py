"""Smoke test for the choicelab_py extension.

Build it first, e.g. `maturin develop --release -m crates/python/Cargo.toml`
or `pip install --no-build-isolation ./crates/python`.
"""

import math

import choicelab_py as cl


def main():
    p = cl.ChoiceProblem("p1", [(1.0, 27.0)], [(0.9, 25.0), (0.1, 92.0)])
    ev_a, ev_b = p.expected_values()
    assert math.isclose(ev_b, 31.7) and ev_a == 27.0
    assert p.ev_oracle() == 1.0
    assert math.isclose(p.complexity_oracle(), 1 / 3)
    assert p.render().splitlines()[1].startswith("Option B offers")

    text = "Option B has the higher expected value.\n" + cl.format_target_json(0.71)
    assert cl.parse_prediction(text) == (0.29, 0.71)
    assert math.isclose(cl.outcome_reward(text, 0.6), 0.89)
    assert cl.format_reward(text) == 0.5
    assert cl.parse_prediction('{"option_A": 40, "option_B": 50}') is None
    assert cl.strip_final_json(text) == "Option B has the higher expected value."

    assert cl.group_advantages([1.0, 0.0]) == [0.5, -0.5]
    assert math.isclose(cl.clipped_term(1.5, 0.3), 1.28 * 0.3)
    assert math.isclose(cl.masked_nll([-math.log(7)] * 3, [True, False, True]), math.log(7))

    cot = "1. Compute EVs.\n2. Consider risk aversion.\n3. Estimate."
    assert len(cl.segment_thoughts(cot)) == 3

    problems = cl.generate_problems(50, seed=0)
    targets = [q.ev_oracle() for q in problems]
    policy, curve = cl.train_grpo(problems, targets, epochs=3)
    assert curve[-1] > curve[0] and curve[-1] >= 0.9, curve
    sample = policy.sample(problems[0], seed=1)
    assert cl.parse_prediction(sample) is not None, sample
    assert math.isclose(sum(pr for _, pr in policy.prediction_distribution(problems[0])), 1.0)

    _, losses = cl.train_sft(problems, targets, epochs=6, bracketed=True)
    assert all(b < a for a, b in zip(losses, losses[1:])), losses

    preds = {q.id: policy.expected_prediction(q) for q in problems}
    mse, se, invalid = cl.mse_eval(preds, dict(zip((q.id for q in problems), targets)))
    assert mse < 0.25 and invalid == 0.0

    t, df, p_val = cl.one_sample_t_summary(61.5, 5.2, 20, 50.0)
    assert abs(t - 2.19) < 0.05 and df == 19 and 0.0 < p_val < 0.05
    t, df, _ = cl.paired_t([0.1, 0.2, 0.4], [0.0, 0.1, 0.1])
    assert df == 2 and t > 0

    pts = [[0.0, 0.1], [0.1, 0.0], [10.0, 10.1], [10.1, 10.0]]
    assign, objective = cl.kmeans(pts, 2, seed=3)
    assert assign[0] == assign[1] != assign[2] == assign[3]
    assert all(b <= a for a, b in zip(objective, objective[1:]))
    ids = cl.cluster_thoughts(["expected value of B", "expected value of A", "loss aversion", "losses loom"], 2)
    assert len(ids) == 4

    print(f"ok: GRPO curve {[round(c, 3) for c in curve]}, toy MSE {mse:.4f}")


if __name__ == "__main__":
    main()
