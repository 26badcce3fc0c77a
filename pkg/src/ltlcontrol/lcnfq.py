"""Logically-constrained neural fitted Q-iteration.

One perceptron per automaton state approximates the product Q-function.
Training is offline over a fixed experience set: each cycle rebuilds the
regression targets from the current networks and fits every network with
Rprop, visiting automaton states from the accepting side backwards.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .automata import LDBA, SINK
from .evaluation import Policy, evaluate_policy, step_cap
from .neural import Mlp, RpropState, rprop_epoch, train_rprop
from .product import (ExperienceSet, RewardParams, _rand_open, action_name, parse_action,
                      product_actions, valid_mask)


class HybridQ:
    """Family of networks indexed by automaton state.

    Inputs are the state coordinates scaled to ``[0, 1]`` by ``low``/``high``,
    then centred and stretched to ``[-gain, gain]``, followed by a one-hot
    code of the product action.  A gain well above 1 lets small-weight
    networks form features at the scale of a target region.  The implicit
    sink has no network and is valued 0.
    """

    def __init__(self, states, actions, low, high, nets: dict, gain: float = 1.0):
        self.states = tuple(states)
        self.actions = tuple(actions)
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        self.gain = float(gain)
        self.nets = nets
        dims = {n.input_dim for n in nets.values()}
        if set(nets) != set(self.states) or dims != {self.input_dim}:
            raise ValueError("need exactly one network of matching width per automaton state")

    @classmethod
    def create(cls, aut: LDBA, actions, low, high, hidden: int, rng,
               gain: float = 1.0) -> "HybridQ":
        d = len(low) + len(actions)
        nets = {q: Mlp.random(d, hidden, rng) for q in aut.states}
        return cls(aut.states, actions, low, high, nets, gain)

    @property
    def input_dim(self) -> int:
        return len(self.low) + len(self.actions)

    def encode(self, S, a_idx) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        X = np.zeros((len(S), self.input_dim))
        z = (S - self.low) / (self.high - self.low)
        X[:, : S.shape[1]] = self.gain * (2.0 * z - 1.0)
        X[np.arange(len(S)), S.shape[1] + np.asarray(a_idx, dtype=np.int64)] = 1.0
        return X

    def q_matrix(self, S, q: str) -> np.ndarray:
        """Q-values of every product action at each row of ``S``."""
        S = np.atleast_2d(np.asarray(S, dtype=float))
        n, k = len(S), len(self.actions)
        if q == SINK:
            return np.zeros((n, k))
        if q not in self.nets:
            raise KeyError(f"unknown automaton state {q!r}")
        X = self.encode(np.repeat(S, k, axis=0), np.tile(np.arange(k), n))
        return self.nets[q].forward(X).reshape(n, k)

    def q_value(self, ps, a) -> float:
        if ps.q == SINK:
            return 0.0
        if ps.q not in self.nets:
            raise KeyError(f"unknown automaton state {ps.q!r}")
        return float(self.nets[ps.q].forward(self.encode(ps.s, [self.actions.index(a)]))[0])

    def copy(self) -> "HybridQ":
        return HybridQ(self.states, self.actions, self.low, self.high,
                       {q: n.copy() for q, n in self.nets.items()}, self.gain)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = {}
        for i, q in enumerate(self.states):
            name = f"net_{i}_{q}.json"
            self.nets[q].save(directory / name)
            files[q] = name
        manifest = {"kind": "lcnfq", "version": 1, "states": list(self.states),
                    "actions": [action_name(a) for a in self.actions],
                    "low": self.low.tolist(), "high": self.high.tolist(), "gain": self.gain,
                    "nets": files}
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "HybridQ":
        directory = Path(directory)
        m = json.loads((directory / "manifest.json").read_text())
        if m.get("kind") != "lcnfq":
            raise ValueError(f"{directory} is not an LCNFQ snapshot")
        nets = {q: Mlp.load(directory / f) for q, f in m["nets"].items()}
        return cls(m["states"], [parse_action(a) for a in m["actions"]], m["low"], m["high"],
                   nets, m.get("gain", 1.0))


class LcnfqPolicy(Policy):
    def __init__(self, hq: HybridQ, env, aut: LDBA):
        self.hq = hq
        self.actions = hq.actions
        self._masks = {q: valid_mask(env, aut, q, self.actions) for q in aut.states}

    def scores(self, S, q, rng=None):
        M = self.hq.q_matrix(S, q)
        mask = self._masks.get(q)
        if mask is not None and not mask.all():
            M = np.where(mask, M, -np.inf)
        return M


def greedy_policy(hq: HybridQ, env, aut: LDBA) -> LcnfqPolicy:
    return LcnfqPolicy(hq, env, aut)


@dataclass
class PatternSet:
    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)


@dataclass
class _Batch:
    S: np.ndarray
    a_idx: np.ndarray
    r: np.ndarray
    S2: np.ndarray
    q2: np.ndarray


def _as_batch(exp: ExperienceSet, actions) -> _Batch:
    index = {a: i for i, a in enumerate(actions)}
    return _Batch(S=exp.states, a_idx=np.array([index[a] for a in exp.actions], dtype=np.int64),
                  r=np.array(exp.rewards, dtype=float), S2=exp.next_states,
                  q2=np.array(exp.q_nexts, dtype=object))


def next_state_max(hq: HybridQ, S2, q2, masks: dict) -> np.ndarray:
    """``max_a' Q(s', q', a')`` over the actions valid at ``q'``."""
    out = np.zeros(len(S2))
    for q in dict.fromkeys(q2):
        if q == SINK:
            continue
        rows = np.flatnonzero(q2 == q)
        M = hq.q_matrix(S2[rows], q)
        mask = masks.get(q)
        if mask is not None:
            M = np.where(mask, M, -np.inf)
        out[rows] = M.max(axis=1)
    return out


def build_pattern_set(hq: HybridQ, exp_q: ExperienceSet, gamma: float, masks=None) -> PatternSet:
    """Regression targets ``r + gamma * max_a' Q(s', a')`` read from the current networks."""
    if len(exp_q) == 0:
        return PatternSet(np.zeros((0, hq.input_dim)), np.zeros(0))
    b = _as_batch(exp_q, hq.actions)
    masks = masks or {}
    targets = b.r + gamma * next_state_max(hq, b.S2, b.q2, masks)
    return PatternSet(hq.encode(b.S, b.a_idx), targets)


@dataclass
class TrainConfig:
    gamma: float = 0.9
    epochs: int = 300
    max_cycles: int = 40
    patience: int = 5
    eval_trials: int = 100
    eval_steps: int | None = None
    eval_seed: int = 12345
    hidden: int = 32
    init_epochs: int = 50
    seed: int = 0
    normalize: str = "map"
    gain: float = 10.0

    def __post_init__(self):
        if not (0 <= self.gamma < 1):
            raise ValueError("gamma must lie in [0, 1)")
        if self.normalize not in ("map", "data"):
            raise ValueError("normalize must be 'map' or 'data'")


@dataclass
class CycleRecord:
    cycle: int
    losses: dict
    success_rate: float
    discounted_reward: float


@dataclass
class LcnfqReport:
    samples: int
    cycles: list = field(default_factory=list)
    best_cycle: int | None = None
    train_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.cycles)

    def to_dict(self) -> dict:
        return asdict(self)


def _normalisation(env, exp: ExperienceSet, mode: str):
    if mode == "map":
        return np.asarray(env.low, dtype=float), np.asarray(env.high, dtype=float)
    pts = np.vstack([exp.states, exp.next_states])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = np.maximum((hi - lo) * 0.05, 1e-6)
    return lo - pad, hi + pad


def lcnfq_train(env, aut: LDBA, experience: ExperienceSet, cfg: TrainConfig,
                params: RewardParams, initial=None):
    """Fit the hybrid Q-function; returns ``(HybridQ, LcnfqReport)``.

    Each cycle trains the networks in backward automaton order and then
    evaluates the greedy policy.  Training stops once a nonzero success rate
    has not improved for ``cfg.patience`` cycles, or after ``cfg.max_cycles``,
    returning the best networks seen.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    actions = product_actions(env, aut)
    low, high = _normalisation(env, experience, cfg.normalize)
    hq = HybridQ.create(aut, actions, low, high, cfg.hidden, rng, cfg.gain)
    masks = {q: valid_mask(env, aut, q, actions) for q in aut.states}
    subsets = {q: experience.project(q) for q in aut.states}
    if not any(len(e) for e in subsets.values()):
        raise ValueError("experience set has no transitions from any automaton state")

    # initial fit: every net maps (s0, random action) to the neutral reward
    s0 = env.initial_state(rng) if initial is None else np.asarray(initial, dtype=float)
    for q in aut.states:
        a = int(rng.integers(len(env.actions)))
        r_n = params.y * params.m * _rand_open(rng) if params.y else 0.0
        train_rprop(hq.nets[q], hq.encode(s0, [a]), [r_n], cfg.init_epochs)

    report = LcnfqReport(samples=len(experience))
    if cfg.max_cycles <= 0:
        report.train_time = time.perf_counter() - t0
        return hq, report

    batches = {q: _as_batch(e, actions) for q, e in subsets.items() if len(e)}
    inputs = {q: hq.encode(b.S, b.a_idx) for q, b in batches.items()}
    order = [q for q in aut.backward_order() if q in batches]
    T = cfg.eval_steps or step_cap(env)
    best, best_rate, stale = hq.copy(), -1.0, 0
    for cycle in range(1, cfg.max_cycles + 1):
        losses = {}
        for q in order:
            b = batches[q]
            targets = b.r + cfg.gamma * next_state_max(hq, b.S2, b.q2, masks)
            state = RpropState.for_net(hq.nets[q])
            loss = None
            for _ in range(cfg.epochs):
                loss = rprop_epoch(hq.nets[q], state, inputs[q], targets)
            losses[q] = loss / len(targets)
        rate, disc = evaluate_policy(greedy_policy(hq, env, aut), env, aut, params,
                                     cfg.eval_trials, T, cfg.gamma, cfg.eval_seed)
        report.cycles.append(CycleRecord(cycle, losses, rate, disc))
        if rate > best_rate:
            best, best_rate, stale = hq.copy(), rate, 0
            report.best_cycle = cycle
        elif best_rate > 0:
            # patience only runs once some rollout has succeeded
            stale += 1
            if stale >= cfg.patience:
                break
    report.train_time = time.perf_counter() - t0
    return best, report
