"""Episodic Voronoi quantizer with tabular Q-learning on the product.

Each automaton state owns a growing set of centroids.  A visited state joins
the cell of its nearest centroid unless that centroid is farther than the
minimum resolution ``delta``, in which case it becomes a new centroid with a
zero row in the Q-table.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .automata import LDBA, SINK, frontier_update
from .evaluation import Policy, evaluate_policy, step_cap
from .product import (ProductState, RewardParams, action_name, default_threshold,
                      parse_action, product_actions, product_step, reward, valid_mask)


class Quantizer:
    """Per-automaton-state centroid sets with a Q-row per centroid.

    Centroid ids are ``(q, index)`` pairs; indices are stable since centroids
    are only ever appended.
    """

    def __init__(self, states, actions, dim: int, delta: float):
        if delta <= 0:
            raise ValueError("delta must be positive")
        self.states = tuple(states)
        self.actions = tuple(actions)
        self.dim = dim
        self.delta = float(delta)
        self._c = {q: np.zeros((0, dim)) for q in self.states}
        self._Q = {q: np.zeros((0, len(self.actions))) for q in self.states}
        self._n = {q: 0 for q in self.states}

    def centroids(self, q: str) -> np.ndarray:
        return self._c[q][: self._n[q]]

    def table(self, q: str) -> np.ndarray:
        return self._Q[q][: self._n[q]]

    def __len__(self) -> int:
        return sum(self._n.values())

    def counts(self) -> dict:
        return dict(self._n)

    def _append(self, q: str, s) -> int:
        n = self._n[q]
        if n == len(self._c[q]):
            cap = max(16, 2 * n)
            c = np.zeros((cap, self.dim))
            c[:n] = self._c[q][:n]
            Q = np.zeros((cap, len(self.actions)))
            Q[:n] = self._Q[q][:n]
            self._c[q], self._Q[q] = c, Q
        self._c[q][n] = s
        self._Q[q][n] = 0.0
        self._n[q] = n + 1
        return n

    def nearest(self, s, q: str):
        """``(index, distance)`` of the closest centroid in ``q``, or ``(None, inf)``."""
        n = self._n[q]
        if n == 0:
            return None, np.inf
        d = self._c[q][:n] - np.asarray(s, dtype=float)
        d2 = np.einsum("ij,ij->i", d, d)
        i = int(np.argmin(d2))
        return i, float(np.sqrt(d2[i]))

    def nearest_batch(self, S, q: str) -> np.ndarray:
        C = self.centroids(q)
        if len(C) == 0:
            raise ValueError(f"no centroids for automaton state {q!r}")
        S = np.atleast_2d(np.asarray(S, dtype=float))
        d2 = ((S[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)

    def q_row(self, cid) -> np.ndarray:
        q, i = cid
        if q not in self._n or not (0 <= i < self._n[q]):
            raise KeyError(f"unknown centroid {cid!r}")
        return self._Q[q][i]

    def to_dict(self) -> dict:
        return {"kind": "vq", "version": 1, "delta": self.delta, "dim": self.dim,
                "states": list(self.states),
                "actions": [action_name(a) for a in self.actions],
                "centroids": {q: self.centroids(q).tolist() for q in self.states},
                "q_table": {q: self.table(q).tolist() for q in self.states}}

    @classmethod
    def from_dict(cls, d: dict) -> "Quantizer":
        if d.get("kind") != "vq" or d.get("version") != 1:
            raise ValueError("not a version-1 quantizer snapshot")
        qz = cls(d["states"], [parse_action(a) for a in d["actions"]], d["dim"], d["delta"])
        for q in qz.states:
            for s, row in zip(d["centroids"][q], d["q_table"][q]):
                i = qz._append(q, s)
                qz._Q[q][i] = row
        return qz

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Quantizer":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def export_centroids(self, path):
        """Write every centroid as a CSV row ``x..., q``."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(self.dim)] + ["q"])
            for q in self.states:
                for c in self.centroids(q):
                    w.writerow(list(c) + [q])


def quantize(qz: Quantizer, ps: ProductState):
    """Cell of ``ps``: ``((q, index), inserted)``; inserts a new centroid when
    the nearest one is farther than ``delta`` or ``q`` has none yet."""
    if ps.q not in qz._n:
        raise KeyError(f"unknown automaton state {ps.q!r}")
    i, dist = qz.nearest(ps.s, ps.q)
    if i is None or dist > qz.delta:
        return (ps.q, qz._append(ps.q, np.asarray(ps.s, dtype=float))), True
    return (ps.q, i), False


def ql_update(qz: Quantizer, c, a, r: float, c_next, mu: float, gamma: float,
              next_mask=None) -> float:
    """``Q(c,a) <- (1-mu) Q(c,a) + mu (r + gamma max Q(c_next, .))``.

    ``c_next=None`` marks a terminal (sink) successor valued 0.  ``a`` is an
    action or its index.  Returns the new entry.
    """
    if not (0 < mu <= 1):
        raise ValueError("mu must lie in (0, 1]")
    row = qz.q_row(c)
    k = a if isinstance(a, (int, np.integer)) else qz.actions.index(a)
    nxt = 0.0
    if c_next is not None:
        vals = qz.q_row(c_next)
        nxt = float(np.max(vals if next_mask is None else vals[next_mask]))
    row[k] = (1.0 - mu) * row[k] + mu * (r + gamma * nxt)
    return float(row[k])


class VqPolicy(Policy):
    """Greedy policy reading the Q-row of the nearest centroid."""

    def __init__(self, qz: Quantizer, env, aut: LDBA):
        self.qz = qz
        self.actions = qz.actions
        self._masks = {q: valid_mask(env, aut, q, self.actions) for q in aut.states}

    def scores(self, S, q, rng=None):
        S = np.atleast_2d(S)
        if q == SINK or self.qz.counts().get(q, 0) == 0:
            M = np.zeros((len(S), len(self.actions)))
        else:
            M = self.qz.table(q)[self.qz.nearest_batch(S, q)]
        mask = self._masks.get(q)
        if mask is not None and not mask.all():
            M = np.where(mask, M, -np.inf)
        return M


@dataclass
class VqConfig:
    delta: float = 1.2
    episodes: int = 2000
    steps: int | None = None
    mu: float = 0.5
    gamma: float = 0.9
    eps_start: float = 0.3
    eps_end: float = 0.05
    seed: int = 0
    check_every: int = 0
    stop_success: float = 1.0
    eval_trials: int = 100
    eval_steps: int | None = None
    eval_seed: int = 12345

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not (0 < self.mu <= 1):
            raise ValueError("mu must lie in (0, 1]")
        if not (0 <= self.gamma < 1):
            raise ValueError("gamma must lie in [0, 1)")
        if self.episodes < 1:
            raise ValueError("need at least one episode")


@dataclass
class VqReport:
    samples: int
    centroids: int
    episodes: int
    success_rate: float
    discounted_reward: float
    train_time: float
    successes: int = 0

    @property
    def iterations(self) -> int:
        return self.episodes

    def to_dict(self) -> dict:
        return asdict(self)


def _epsilon(cfg: VqConfig, ep: int) -> float:
    if cfg.episodes == 1:
        return cfg.eps_start
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * ep / (cfg.episodes - 1)


def vq_train(env, aut: LDBA, params: RewardParams, cfg: VqConfig, initial=None):
    """Episodic VQ; returns ``(Quantizer, VqReport)``.

    Actions are epsilon-greedy with epsilon decaying linearly over episodes;
    greedy ties are broken uniformly at random so that zero-initialised rows
    do not lock the rover into the first action.  Every transition updates
    the table.  An episode ends on success, on entering the sink or after
    ``cfg.steps`` transitions.  With ``cfg.check_every > 0`` the greedy policy
    is evaluated every so many episodes and training stops early once its
    success rate reaches ``cfg.stop_success``.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    actions = product_actions(env, aut)
    qz = Quantizer(aut.states, actions, env.dim, cfg.delta)
    masks = {q: valid_mask(env, aut, q, actions) for q in aut.states}
    steps = cfg.steps or default_threshold(env)
    T = cfg.eval_steps or step_cap(env)
    samples = successes = 0
    episodes = 0
    rate = disc = None
    for ep in range(cfg.episodes):
        eps = _epsilon(cfg, ep)
        s0 = env.initial_state(rng) if initial is None else np.asarray(initial, dtype=float)
        ps = ProductState(s0, aut.initial)
        c, _ = quantize(qz, ps)
        frontier = aut.accepting_union
        for _ in range(steps):
            mask = masks[ps.q]
            valid = np.flatnonzero(mask)
            if rng.random() < eps:
                k = int(valid[rng.integers(len(valid))])
            else:
                row = qz.q_row(c)[valid]
                best = np.flatnonzero(row >= row.max() - 1e-12 * max(1.0, abs(row.max())))
                k = int(valid[best[rng.integers(len(best))]])
            a = actions[k]
            nxt = product_step(env, aut, ps, a, rng)
            r, frontier, _ = reward(ps, a, nxt, frontier, params, rng)
            frontier, done = frontier_update(nxt.q, frontier, aut.accepting_sets)
            samples += 1
            if nxt.q == SINK:
                ql_update(qz, c, k, r, None, cfg.mu, cfg.gamma)
                break
            c_next, _ = quantize(qz, nxt)
            ql_update(qz, c, k, r, c_next, cfg.mu, cfg.gamma, masks[nxt.q])
            ps, c = nxt, c_next
            if done:
                successes += 1
                break
        episodes = ep + 1
        if cfg.check_every and episodes % cfg.check_every == 0:
            rate, disc = evaluate_policy(VqPolicy(qz, env, aut), env, aut, params,
                                         cfg.eval_trials, T, cfg.gamma, cfg.eval_seed)
            if rate >= cfg.stop_success:
                break
    if rate is None or (cfg.check_every and episodes % cfg.check_every):
        rate, disc = evaluate_policy(VqPolicy(qz, env, aut), env, aut, params,
                                     cfg.eval_trials, T, cfg.gamma, cfg.eval_seed)
    report = VqReport(samples=samples, centroids=len(qz), episodes=episodes,
                      success_rate=rate, discounted_reward=disc,
                      train_time=time.perf_counter() - t0, successes=successes)
    return qz, report
