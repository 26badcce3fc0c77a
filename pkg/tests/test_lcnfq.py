import numpy as np
import pytest

from ltlcontrol.automata import SINK, parse_ldba
from ltlcontrol.environment import LineWorld
from ltlcontrol.lcnfq import (HybridQ, TrainConfig, build_pattern_set, greedy_policy,
                              lcnfq_train)
from ltlcontrol.neural import Mlp
from ltlcontrol.product import (ExperienceSet, ProductState, RewardParams,
                                gather_experience, product_actions)

REACH = """
states: a b
initial: a
accepting: F1 = {b}
a -- !t --> a
a -- t --> b
b -- true --> b
"""


def zero_hq(aut, env, bias=None):
    actions = product_actions(env, aut)
    d = env.dim + len(actions)
    nets = {q: Mlp(d, 2) for q in aut.states}
    for q, b in (bias or {}).items():
        nets[q].b2[0] = b
    return HybridQ(aut.states, actions, env.low, env.high, nets, gain=10.0)


def test_q_value_repeatable_and_per_state(reach_avoid):
    env = LineWorld(10, {9: ["t"]})
    hq = HybridQ.create(reach_avoid, product_actions(env, reach_avoid), env.low, env.high, 8,
                        np.random.default_rng(0))
    s = env.state_of(3)
    v1 = hq.q_value(ProductState(s, "q1"), "left")
    assert np.isfinite(v1) and v1 == hq.q_value(ProductState(s, "q1"), "left")
    assert v1 != hq.q_value(ProductState(s, "q2"), "left")
    assert hq.q_value(ProductState(s, SINK), "left") == 0.0
    assert set(hq.nets) == set(reach_avoid.states)


def test_encoding_range(reach_avoid):
    env = LineWorld(10, {})
    hq = zero_hq(reach_avoid, env)
    X = hq.encode(np.array([[-0.5], [9.5], [4.5]]), [0, 1, 2])
    assert np.allclose(X[:, 0], [-10, 10, 0])
    assert np.array_equal(X[:, 1:], np.eye(3))


def test_pattern_targets(reach_avoid):
    env = LineWorld(10, {9: ["t"]})
    exp = ExperienceSet(1)
    exp.add([8.0], "right", [9.0], 1.0, "q1", "q2")      # next value 0
    exp.add([3.0], "stay", [3.0], 0.0, "q1", "q1")       # self-loop
    exp.add([2.0], "left", [1.0], 0.0, "q1", SINK)       # sink
    hq = zero_hq(reach_avoid, env, {"q1": 3.0})
    ps = build_pattern_set(hq, exp, 0.9)
    assert ps.targets.tolist() == pytest.approx([1.0, 0.9 * 3.0, 0.0])
    again = build_pattern_set(hq, exp, 0.9)
    assert np.array_equal(ps.targets, again.targets)
    assert np.array_equal(ps.inputs, again.inputs)


def test_zero_cycles_returns_initialised_nets(reach_avoid):
    env = LineWorld(10, {9: ["t"], 0: ["u"]}, start=5)
    exp = gather_experience(env, reach_avoid, RewardParams(), None, 50, np.random.default_rng(0))
    hq, rep = lcnfq_train(env, reach_avoid, exp, TrainConfig(max_cycles=0), RewardParams())
    assert rep.cycles == [] and rep.iterations == 0
    assert set(hq.nets) == set(reach_avoid.states)
    s0 = env.state_of(5)
    for q in reach_avoid.states:
        # one action at s0 was fitted to the neutral reward (0 with y = 0)
        assert np.min(np.abs(hq.q_matrix(s0, q))) < 1e-2


def test_tie_break_and_hand_built_policy(reach_avoid):
    env = LineWorld(10, {})
    pol = greedy_policy(zero_hq(reach_avoid, env), env, reach_avoid)
    assert pol(ProductState(env.state_of(3), "q1")) == "left"
    hq = zero_hq(reach_avoid, env)
    right = hq.actions.index("right")
    hq.nets["q1"].W1[0, env.dim + right] = 1.0
    hq.nets["q1"].w2[0] = 1.0
    assert greedy_policy(hq, env, reach_avoid)(ProductState(env.state_of(3), "q1")) == "right"


def test_toy_corridor_moves_right():
    aut = parse_ldba(REACH)
    env = LineWorld(8, {7: ["t"]}, start=None)
    params = RewardParams(y=1)
    exp = gather_experience(env, aut, params, 20, 600, np.random.default_rng(0))
    hq, rep = lcnfq_train(env, aut, exp, TrainConfig(epochs=200, max_cycles=15, seed=0), params)
    pol = greedy_policy(hq, env, aut)
    rng = np.random.default_rng(0)
    moves = [pol(ProductState(env.state_of(c), "a"), rng) for c in range(7)]
    assert moves == ["right"] * 7


def test_snapshot_roundtrip(tmp_path, reach_avoid):
    env = LineWorld(10, {})
    hq = HybridQ.create(reach_avoid, product_actions(env, reach_avoid), env.low, env.high, 4,
                        np.random.default_rng(0), gain=10.0)
    hq.save(tmp_path / "m")
    back = HybridQ.load(tmp_path / "m")
    S = np.array([[1.0], [7.0]])
    for q in reach_avoid.states:
        assert np.array_equal(back.q_matrix(S, q), hq.q_matrix(S, q))
    assert back.gain == 10.0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.0)
    with pytest.raises(ValueError):
        TrainConfig(normalize="other")
