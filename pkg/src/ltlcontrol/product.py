"""On-the-fly product of an environment with an LDBA, the frontier-based
reward, and episodic experience gathering."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np

from .automata import LDBA, frontier_update


@dataclass(frozen=True)
class Eps:
    """Product action that takes the eps-move to ``target``."""

    target: str

    def __str__(self) -> str:
        return f"eps:{self.target}"


def action_name(a) -> str:
    return str(a)


def parse_action(name: str):
    return Eps(name[4:]) if name.startswith("eps:") else name


class ProductState(NamedTuple):
    s: np.ndarray
    q: str


def product_actions(env, aut: LDBA) -> tuple:
    """All product actions: base actions then one eps action per eps target."""
    targets = []
    for q in aut.states:
        for t in aut.epsilon_targets(q):
            if t not in targets:
                targets.append(t)
    return tuple(env.actions) + tuple(Eps(t) for t in targets)


def valid_actions(env, aut: LDBA, q: str) -> list:
    return list(env.actions) + [Eps(t) for t in aut.epsilon_targets(q)]


def valid_mask(env, aut: LDBA, q: str, all_actions: Sequence) -> np.ndarray:
    ok = set(valid_actions(env, aut, q))
    return np.array([a in ok for a in all_actions])


def product_step(env, aut: LDBA, ps: ProductState, a, rng,
                 choose: Callable | None = None) -> ProductState:
    """One product transition.

    For a base action the environment moves and the automaton reads the new
    label.  When several automaton successors exist, ``choose(s', succ)``
    picks one (uniformly at random if not given).  An eps action leaves
    ``s`` untouched and consumes no randomness.
    """
    if isinstance(a, Eps):
        if a.target not in aut.epsilon_targets(ps.q):
            raise ValueError(f"no eps-move from {ps.q!r} to {a.target!r}")
        return ProductState(ps.s, a.target)
    s2 = env.step(ps.s, a, rng)
    succ = aut.step(ps.q, env.label(s2))
    return ProductState(s2, resolve_successor(succ, s2, rng, choose))


def resolve_successor(succ: frozenset, s, rng, choose=None) -> str:
    if len(succ) == 1:
        return next(iter(succ))
    options = sorted(succ)
    if choose is not None:
        return choose(s, options)
    return options[int(rng.integers(len(options)))]


@dataclass(frozen=True)
class RewardParams:
    M: float = 1.0
    m: float = 0.05
    y: int = 0

    def __post_init__(self):
        if not (self.M > 0 and 0 < self.m < self.M / 10):
            raise ValueError(f"need 0 < m < M/10, got M={self.M}, m={self.m}")
        if self.y not in (0, 1):
            raise ValueError(f"y must be 0 or 1, got {self.y}")


def _rand_open(rng) -> float:
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return u


def reward(ps: ProductState, a, ps_next: ProductState, frontier: frozenset,
           params: RewardParams, rng, accepting_sets=None):
    """Frontier reward: ``(r, new_frontier, hit)``.

    ``hit`` is true iff the next automaton state is in the frontier, which is
    exactly when ``r`` is the positive reward.  ``accepting_sets`` must be
    given to update the frontier.
    """
    noise = params.y * params.m * _rand_open(rng) if params.y else 0.0
    hit = ps_next.q in frontier
    r = params.M + noise if hit else noise
    new = frontier
    if accepting_sets is not None:
        new, _ = frontier_update(ps_next.q, frontier, accepting_sets)
    return r, new, hit


@dataclass(frozen=True)
class ExperienceTuple:
    s: tuple
    a: object
    s_next: tuple
    r: float
    q: str
    q_next: str


class ExperienceSet:
    """Column-oriented store of product transitions."""

    def __init__(self, dim: int):
        self.dim = dim
        self._s: list = []
        self._s2: list = []
        self.actions: list = []
        self.rewards: list = []
        self.qs: list = []
        self.q_nexts: list = []

    def __len__(self) -> int:
        return len(self.actions)

    def add(self, s, a, s_next, r, q, q_next):
        self._s.append(np.asarray(s, dtype=float).reshape(self.dim))
        self._s2.append(np.asarray(s_next, dtype=float).reshape(self.dim))
        self.actions.append(a)
        self.rewards.append(float(r))
        self.qs.append(q)
        self.q_nexts.append(q_next)

    @property
    def states(self) -> np.ndarray:
        return np.array(self._s).reshape(-1, self.dim)

    @property
    def next_states(self) -> np.ndarray:
        return np.array(self._s2).reshape(-1, self.dim)

    def __iter__(self) -> Iterator[ExperienceTuple]:
        for i in range(len(self)):
            yield ExperienceTuple(tuple(self._s[i]), self.actions[i], tuple(self._s2[i]),
                                  self.rewards[i], self.qs[i], self.q_nexts[i])

    def project(self, q: str) -> "ExperienceSet":
        out = ExperienceSet(self.dim)
        for i, x in enumerate(self.qs):
            if x == q:
                out.add(self._s[i], self.actions[i], self._s2[i], self.rewards[i],
                        x, self.q_nexts[i])
        return out

    def extend(self, other: "ExperienceSet"):
        for t in other:
            self.add(t.s, t.a, t.s_next, t.r, t.q, t.q_next)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self:
                fh.write(json.dumps({"s": list(t.s), "a": action_name(t.a),
                                     "s_next": list(t.s_next), "r": t.r,
                                     "q": t.q, "q_next": t.q_next}) + "\n")

    @classmethod
    def load(cls, path) -> "ExperienceSet":
        out = None
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                if out is None:
                    out = cls(len(d["s"]))
                out.add(d["s"], parse_action(d["a"]), d["s_next"], d["r"],
                        d["q"], d["q_next"])
        if out is None:
            raise ValueError(f"{path}: empty experience file")
        return out


def default_threshold(env) -> int:
    """Episode length cap without positive reward: cross the map twice."""
    return max(1, int(round(2.0 * env.diagonal / env.max_step)))


def gather_experience(env, aut: LDBA, params: RewardParams, th: int | None,
                      budget: int, rng, initial=None) -> ExperienceSet:
    """Uniformly random exploration of the product, restarting an episode on
    positive reward or after ``th`` steps without one."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    th = default_threshold(env) if th is None else th
    out = ExperienceSet(env.dim)
    union = aut.accepting_union
    while len(out) < budget:
        s = env.initial_state(rng) if initial is None else np.array(initial, dtype=float)
        ps = ProductState(s, aut.initial)
        frontier = union
        since = 0
        while len(out) < budget:
            acts = valid_actions(env, aut, ps.q)
            a = acts[int(rng.integers(len(acts)))]
            nxt = product_step(env, aut, ps, a, rng)
            r, frontier, hit = reward(ps, a, nxt, frontier, params, rng, aut.accepting_sets)
            out.add(ps.s, a, nxt.s, r, ps.q, nxt.q)
            ps = nxt
            since += 1
            if hit or since >= th:
                break
    return out
