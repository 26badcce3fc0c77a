"""Policy rollouts on the product: success rate, discounted reward, paths.

A rollout succeeds once the accepting frontier has been exhausted and reset
at least once, i.e. every accepting set was visited, within the step cap.
Rollouts stop at success or on entering the rejecting sink; the discounted
reward is summed over the steps actually taken, with the reward of the
``n``-th transition weighted by ``gamma**n``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .automata import LDBA, SINK, frontier_update
from .product import Eps, ProductState, RewardParams, action_name, product_actions, reward


def first_argmax(values: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Row-wise argmax; near-ties (relative ``rtol``) go to the lowest index."""
    values = np.asarray(values, dtype=float)
    best = np.max(values, axis=-1, keepdims=True)
    tol = rtol * np.maximum(1.0, np.abs(best))
    return np.argmax(values >= best - tol, axis=-1)


class Policy:
    """Greedy policy over product actions.

    Subclasses implement ``scores(S, q, rng)`` returning an ``(N, |A|)``
    matrix over ``self.actions`` (invalid actions may be ``-inf``) and
    ``value(S, q, rng)`` used to resolve nondeterministic automaton moves.
    """

    actions: tuple = ()

    def scores(self, S, q, rng):
        raise NotImplementedError

    def value(self, S, q, rng):
        sc = self.scores(S, q, rng)
        return np.max(sc, axis=1)

    def act_batch(self, S, q: str, rng) -> np.ndarray:
        return first_argmax(self.scores(np.atleast_2d(S), q, rng))

    def __call__(self, ps: ProductState, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        return self.actions[int(self.act_batch(np.atleast_2d(ps.s), ps.q, rng)[0])]


def step_cap(env) -> int:
    """Default evaluation horizon: ten map diagonals worth of full steps."""
    return max(1, int(round(10.0 * env.diagonal / env.max_step)))


@dataclass
class RolloutResult:
    success: np.ndarray
    discounted: np.ndarray
    steps: np.ndarray
    paths: list = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.success))

    @property
    def mean_discounted(self) -> float:
        return float(np.mean(self.discounted))


def run_rollouts(policy: Policy, env, aut: LDBA, params: RewardParams, trials: int,
                 T: int, gamma: float, seed, record: bool = False) -> RolloutResult:
    if trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.default_rng(seed)
    actions = product_actions(env, aut)
    if tuple(policy.actions) != actions:
        raise ValueError("policy actions do not match the product actions")
    n_base = len(env.actions)
    S = np.stack([np.asarray(env.initial_state(rng), dtype=float).reshape(env.dim)
                  for _ in range(trials)])
    Q = [aut.initial] * trials
    frontier = [aut.accepting_union] * trials
    alive = np.ones(trials, dtype=bool)
    success = np.zeros(trials, dtype=bool)
    disc = np.zeros(trials)
    steps = np.zeros(trials, dtype=np.int64)
    paths = [[(S[i].tolist(), Q[i], None, 0.0)] for i in range(trials)] if record else []
    for t in range(T):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        A = np.empty(idx.size, dtype=np.int64)
        qs = np.array([Q[i] for i in idx], dtype=object)
        for q in dict.fromkeys(qs):
            sel = np.flatnonzero(qs == q)
            A[sel] = policy.act_batch(S[idx[sel]], q, rng)
        base = A < n_base
        S_next = S[idx].copy()
        if base.any():
            S_next[base] = env.step_batch(S[idx[base]], A[base], rng)
            labels = env.label_batch(S_next[base])
        li = 0
        for k, i in enumerate(idx):
            a = actions[A[k]]
            ps = ProductState(S[i], Q[i])
            if isinstance(a, Eps):
                q2 = a.target
            else:
                succ = aut.step(Q[i], labels[li])
                li += 1
                if len(succ) == 1:
                    q2 = next(iter(succ))
                else:
                    opts = sorted(succ)
                    vals = [float(policy.value(S_next[k][None, :], o, rng)[0])
                            if o != SINK else 0.0 for o in opts]
                    q2 = opts[int(first_argmax(np.array(vals)))]
            nxt = ProductState(S_next[k], q2)
            r, frontier[i], _ = reward(ps, a, nxt, frontier[i], params, rng)
            frontier[i], done = frontier_update(q2, frontier[i], aut.accepting_sets)
            disc[i] += gamma ** t * r
            S[i] = S_next[k]
            Q[i] = q2
            steps[i] = t + 1
            if record:
                paths[i].append((S[i].tolist(), q2, action_name(a), r))
            if done:
                success[i] = True
                alive[i] = False
            elif q2 == SINK:
                alive[i] = False
    return RolloutResult(success=success, discounted=disc, steps=steps, paths=paths)


def evaluate_policy(policy: Policy, env, aut: LDBA, params: RewardParams, trials: int = 100,
                    T: int | None = None, gamma: float = 0.9, seed=0):
    """``(success_rate, discounted_reward_estimate)`` over seeded rollouts."""
    T = step_cap(env) if T is None else T
    res = run_rollouts(policy, env, aut, params, trials, T, gamma, seed)
    return res.success_rate, res.mean_discounted


def export_path(policy: Policy, env, aut: LDBA, params: RewardParams, seed, path=None,
                T: int | None = None, gamma: float = 0.9) -> list:
    """Roll out once and return (optionally write as CSV) the sequence of
    ``(x..., q, action, reward, label)`` rows, starting with the initial state."""
    T = step_cap(env) if T is None else T
    res = run_rollouts(policy, env, aut, params, 1, T, gamma, seed, record=True)
    rows = []
    for k, (s, q, a, r) in enumerate(res.paths[0]):
        lab = "" if k == 0 else "&".join(sorted(env.label(np.asarray(s))))
        rows.append(list(s) + [q, a or "", r, lab])
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            coords = (["x", "y", "z"][: env.dim] if env.dim <= 3
                      else [f"x{i}" for i in range(env.dim)])
            w.writerow(coords + ["q", "action", "reward", "label"])
            w.writerows(rows)
    return rows


def read_path(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        dim = header.index("q")
        out = []
        for row in r:
            out.append([float(x) for x in row[:dim]] + [row[dim], row[dim + 1],
                                                         float(row[dim + 2]), row[dim + 3]])
        return out
