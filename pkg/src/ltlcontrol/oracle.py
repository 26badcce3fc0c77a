"""Exact discounted Q-iteration on a finite product MDP, used as ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .automata import LDBA, SINK, frontier_update
from .evaluation import Policy, first_argmax
from .product import Eps, RewardParams, product_actions, valid_mask


class OracleError(RuntimeError):
    pass


@dataclass
class OracleResult:
    """Optimal Q-values keyed by ``(cell, q, frontier)``.

    ``Q[key]`` has one entry per product action (``-inf`` where invalid).
    """

    actions: tuple
    Q: dict
    initial_frontier: frozenset
    iterations: int

    def values(self, cell: int, q: str, frontier=None) -> np.ndarray:
        return self.Q[(cell, q, self.initial_frontier if frontier is None else frontier)]

    def value(self, cell: int, q: str, frontier=None) -> float:
        return float(np.max(self.values(cell, q, frontier)))

    def policy(self, cell: int, q: str, frontier=None):
        return self.actions[int(first_argmax(self.values(cell, q, frontier)))]

    def optimal_actions(self, cell: int, q: str, frontier=None, tol: float = 1e-6) -> set:
        v = self.values(cell, q, frontier)
        return {a for a, x in zip(self.actions, v) if x >= np.max(v) - tol}


def exact_dp_oracle(env, aut: LDBA, params: RewardParams, gamma: float,
                    tol: float = 1e-9, max_iter: int = 100_000) -> OracleResult:
    """Q-iteration to a sup-norm change below ``tol`` on the finite product of
    ``env`` (which must expose ``transitions()``) and ``aut``.

    The state carries the accepting frontier so that rewards are exact.  The
    reward noise enters through its mean.  Nondeterministic automaton moves
    are resolved in the agent's favour.
    """
    if not (0 <= gamma < 1):
        raise ValueError("gamma must lie in [0, 1)")
    model = env.transitions()
    actions = product_actions(env, aut)
    n_cells = env.n
    if n_cells * (len(aut.states) + 1) > 10_000:
        raise ValueError("product too large to enumerate")
    union = aut.accepting_union
    noise = params.y * params.m * 0.5

    # enumerate reachable (q, frontier) pairs
    keys = [(aut.initial, union)]
    seen = set(keys)
    labels = {c: env.label(env.state_of(c)) for c in range(n_cells)}
    while keys:
        q, fr = keys.pop()
        nxt = set(aut.epsilon_targets(q))
        for lab in set(labels.values()):
            nxt |= aut.step(q, lab)
        for q2 in nxt:
            if q2 == SINK:
                continue
            key = (q2, frontier_update(q2, fr, aut.accepting_sets)[0])
            if key not in seen:
                seen.add(key)
                keys.append(key)
    modes = sorted(seen, key=lambda k: (k[0], sorted(k[1])))
    index = {(c, q, fr): i for i, (c, (q, fr)) in
             enumerate((c, m) for m in modes for c in range(n_cells))}
    n = len(index)
    k = len(actions)

    # transition lists: per (state, action) the options for each random outcome
    plan = []
    for (c, q, fr), i in index.items():
        mask = valid_mask(env, aut, q, actions)
        for j, a in enumerate(actions):
            if not mask[j]:
                plan.append((i, j, None))
                continue
            outcomes = []
            if isinstance(a, Eps):
                outcomes.append((1.0, [(c, a.target)]))
            else:
                for c2, p in model[(c, a)]:
                    outcomes.append((p, [(c2, q2) for q2 in sorted(aut.step(q, labels[c2]))]))
            opts = []
            for p, succ in outcomes:
                choices = []
                for c2, q2 in succ:
                    hit = q2 in fr
                    r = (params.M if hit else 0.0) + noise
                    nxt = None
                    if q2 != SINK:
                        fr2 = frontier_update(q2, fr, aut.accepting_sets)[0]
                        nxt = index[(c2, q2, fr2)]
                    choices.append((r, nxt))
                opts.append((p, choices))
            plan.append((i, j, opts))

    Q = np.zeros((n, k))
    invalid = np.zeros((n, k), dtype=bool)
    for i, j, opts in plan:
        if opts is None:
            invalid[i, j] = True
    for it in range(1, max_iter + 1):
        V = np.where(invalid, -np.inf, Q).max(axis=1)
        new = np.zeros_like(Q)
        for i, j, opts in plan:
            if opts is None:
                continue
            new[i, j] = sum(p * max(r + (gamma * V[nx] if nx is not None else 0.0)
                                    for r, nx in choices) for p, choices in opts)
        delta = float(np.max(np.abs(new - Q)))
        Q = new
        if delta < tol:
            break
    else:
        raise OracleError(f"no convergence within {max_iter} iterations")
    Q = np.where(invalid, -np.inf, Q)
    table = {key: Q[i] for key, i in index.items()}
    return OracleResult(actions=actions, Q=table, initial_frontier=union, iterations=it)


def reachable_states(env, aut: LDBA) -> list:
    """``(cell, q)`` pairs reachable from a start cell under some policy, sink excluded."""
    model = env.transitions()
    actions = product_actions(env, aut)
    if getattr(env, "start", 0) is None:
        starts = [(c, aut.initial) for c in range(env.n) if not env.label(env.state_of(c))]
    else:
        starts = [(env.cell(env.initial_state()), aut.initial)]
    seen, todo = set(starts), list(starts)
    while todo:
        c, q = todo.pop()
        for a in actions:
            if isinstance(a, Eps):
                if a.target not in aut.epsilon_targets(q):
                    continue
                succ = [(c, a.target)]
            else:
                succ = [(c2, q2) for c2, _ in model[(c, a)]
                        for q2 in aut.step(q, env.label(env.state_of(c2)))]
            for x in succ:
                if x[1] != SINK and x not in seen:
                    seen.add(x)
                    todo.append(x)
    return sorted(seen, key=lambda x: (x[1], x[0]))


def policy_agreement(policy, oracle: OracleResult, env, aut: LDBA, states=None) -> float:
    """Fraction of states where ``policy`` picks one of the oracle's optimal actions."""
    states = reachable_states(env, aut) if states is None else states
    rng = np.random.default_rng(0)
    hits = 0
    for c, q in states:
        S = env.state_of(c)[None, :]
        a = policy.actions[int(policy.act_batch(S, q, rng)[0])]
        hits += a in oracle.optimal_actions(c, q)
    return hits / len(states)


class OraclePolicy(Policy):
    """Greedy oracle policy with the product-policy interface used by rollouts."""

    def __init__(self, oracle: OracleResult, env):
        self.oracle = oracle
        self.env = env
        self.actions = oracle.actions

    def scores(self, S, q, rng=None):
        S = np.atleast_2d(S)
        if q == SINK:
            return np.zeros((len(S), len(self.actions)))
        return np.stack([self.oracle.values(self.env.cell(s), q) for s in S])

    def value(self, S, q, rng=None):
        return self.scores(S, q, rng).max(axis=1)

    def act_batch(self, S, q, rng=None):
        return first_argmax(self.scores(S, q, rng))
