import itertools

import numpy as np
import pytest

from ltlcontrol.automata import SINK
from ltlcontrol.environment import LineWorld
from ltlcontrol.product import ProductState, RewardParams, product_actions
from ltlcontrol.vq import Quantizer, VqConfig, VqPolicy, ql_update, quantize, vq_train


def make_qz(delta=0.4, dim=2):
    return Quantizer(["q1", "q2"], ["left", "right", "stay"], dim, delta)


def test_quantize_examples():
    qz = make_qz()
    c, new = quantize(qz, ProductState(np.array([0.0, 0.0]), "q1"))
    assert new and c == ("q1", 0)
    assert np.all(qz.q_row(c) == 0.0)
    c, new = quantize(qz, ProductState(np.array([0.3, 0.0]), "q1"))
    assert not new and c == ("q1", 0)
    qz2 = make_qz()
    quantize(qz2, ProductState(np.array([1.0, 0.0]), "q1"))
    quantize(qz2, ProductState(np.array([-2.0, 0.0]), "q1"))
    c, new = quantize(qz2, ProductState(np.array([0.0, 0.0]), "q1"))
    assert new and c == ("q1", 2)
    # automaton states keep separate centroid sets
    c, new = quantize(qz2, ProductState(np.array([1.0, 0.0]), "q2"))
    assert new and c == ("q2", 0)


def test_ql_update_examples():
    qz = make_qz()
    c, _ = quantize(qz, ProductState(np.zeros(2), "q1"))
    n, _ = quantize(qz, ProductState(np.ones(2), "q1"))
    qz.q_row(c)[1] = 5.0
    qz.q_row(n)[:] = [0.0, 2.0, 1.0]
    assert ql_update(qz, c, "right", 1.0, n, mu=1.0, gamma=0.9) == pytest.approx(2.8)
    qz.q_row(c)[0] = 0.0
    qz.q_row(n)[:] = 0.0
    assert ql_update(qz, c, 0, 1.0, n, mu=0.5, gamma=0.9) == pytest.approx(0.5)
    assert ql_update(qz, c, 2, 1.0, None, mu=1.0, gamma=0.9) == 1.0
    with pytest.raises(ValueError):
        ql_update(qz, c, 0, 1.0, n, mu=0.0, gamma=0.9)
    with pytest.raises(KeyError):
        qz.q_row(("q1", 99))


@pytest.mark.property
def test_q_bounded_by_contraction_limit():
    rng = np.random.default_rng(0)
    qz = make_qz(delta=0.1, dim=1)
    cells = [quantize(qz, ProductState(np.array([float(i)]), q))[0]
             for i in range(10) for q in ("q1", "q2")]
    for _ in range(100_000):
        c = cells[rng.integers(len(cells))]
        n = cells[rng.integers(len(cells))]
        ql_update(qz, c, int(rng.integers(3)), float(rng.random() < 0.5), n,
                  float(rng.uniform(0.01, 1.0)), 0.9)
    for q in ("q1", "q2"):
        assert np.all(qz.table(q) <= 1.0 / (1 - 0.9) + 1e-9)
        assert np.all(qz.table(q) >= 0.0)


def test_single_episode_sample_count(reach_avoid):
    env = LineWorld(50, {}, start=25)
    qz, rep = vq_train(env, reach_avoid, RewardParams(),
                       VqConfig(delta=0.5, episodes=1, steps=17, eval_trials=1, eval_steps=5))
    assert rep.samples == 17 and rep.episodes == 1


def test_centroid_separation_and_reproducibility(reach_avoid, coprates_env):
    cfg = VqConfig(delta=1.2, episodes=20, steps=150, seed=4, eval_trials=5)
    qz, rep = vq_train(coprates_env, reach_avoid, RewardParams(), cfg)
    for q in reach_avoid.states:
        C = qz.centroids(q)
        for a, b in itertools.combinations(range(len(C)), 2):
            assert np.linalg.norm(C[a] - C[b]) > cfg.delta
    qz2, rep2 = vq_train(coprates_env, reach_avoid, RewardParams(), cfg)
    assert rep2.samples == rep.samples
    for q in reach_avoid.states:
        assert np.array_equal(qz.centroids(q), qz2.centroids(q))
        assert np.array_equal(qz.table(q), qz2.table(q))


def test_centroids_lie_near_visited_states(reach_avoid):
    # every centroid is itself a visited state, so it is within D of the path
    env = LineWorld(30, {29: ["t"], 0: ["u"]}, start=15)
    qz, _ = vq_train(env, reach_avoid, RewardParams(), VqConfig(delta=0.5, episodes=30, seed=1,
                                                          eval_trials=2))
    for q in reach_avoid.states:
        C = qz.centroids(q)
        assert np.all(np.abs(C - np.round(C)) == 0)
        assert np.all((C >= 0) & (C <= 29))


def test_huge_delta_keeps_one_centroid_per_state(reach_avoid, coprates_env):
    cfg = VqConfig(delta=10 * coprates_env.diagonal, episodes=5, steps=100, eval_trials=5)
    qz, rep = vq_train(coprates_env, reach_avoid, RewardParams(), cfg)
    assert all(n <= 1 for n in qz.counts().values())
    assert rep.success_rate == 0.0


def test_policy_uses_nearest_centroid(reach_avoid):
    env = LineWorld(10, {})
    actions = product_actions(env, reach_avoid)
    qz = Quantizer(reach_avoid.states, actions, 1, 0.5)
    a, _ = quantize(qz, ProductState(np.array([2.0]), "q1"))
    b, _ = quantize(qz, ProductState(np.array([8.0]), "q1"))
    qz.q_row(a)[actions.index("left")] = 1.0
    qz.q_row(b)[actions.index("right")] = 1.0
    pol = VqPolicy(qz, env, reach_avoid)
    assert pol(ProductState(np.array([3.0]), "q1")) == "left"
    assert pol(ProductState(np.array([6.0]), "q1")) == "right"
    # no centroids yet, and the sink: ties resolve to the first action
    assert pol(ProductState(np.array([3.0]), "q2")) == "left"
    assert pol(ProductState(np.array([3.0]), SINK)) == "left"


def test_snapshot_roundtrip(tmp_path, reach_avoid):
    env = LineWorld(10, {9: ["t"]}, start=None)
    cfg = VqConfig(delta=0.5, episodes=10, eval_trials=2)
    qz, _ = vq_train(env, reach_avoid, RewardParams(), cfg)
    qz.save(tmp_path / "vq.json")
    back = Quantizer.load(tmp_path / "vq.json")
    for q in reach_avoid.states:
        assert np.array_equal(back.centroids(q), qz.centroids(q))
        assert np.array_equal(back.table(q), qz.table(q))
    qz.export_centroids(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "x0,q" and len(lines) == len(qz) + 1


def test_config_validation():
    with pytest.raises(ValueError):
        VqConfig(delta=0)
    with pytest.raises(ValueError):
        VqConfig(mu=1.5)
