"""Fitted value iteration with a kernel averager on the product.

Every automaton state carries values on the same uniform grid of centres.
Between centres the value is the exponential-kernel average of the centre
values, computed on coordinates scaled to the unit box.  Bellman backups are
Monte-Carlo means over a fixed cache of sampled successors, and there is no
discount: reward enters only through the initial values of accepting states.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .automata import LDBA, SINK
from .evaluation import Policy, evaluate_policy, step_cap
from .product import Eps, RewardParams, _rand_open, product_actions, valid_mask


def uniform_grid(low, high, k: int) -> np.ndarray:
    """``k`` cell centres of an axis-aligned grid over the box; ``k`` must be a
    perfect ``dim``-th power."""
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    dim = len(low)
    n = int(round(k ** (1.0 / dim)))
    if n ** dim != k:
        raise ValueError(f"k={k} is not a perfect power of the dimension {dim}")
    axes = [lo + (np.arange(n) + 0.5) * (hi - lo) / n for lo, hi in zip(low, high)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


class ValueTable:
    """Centre values per automaton state sharing one set of centres."""

    def __init__(self, centers, low, high, h: float, Z: int, values: dict):
        if h <= 0 or Z < 1:
            raise ValueError("need h > 0 and Z >= 1")
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        self.h = float(h)
        self.Z = int(Z)
        self.values = {q: np.asarray(v, dtype=float) for q, v in values.items()}
        if any(v.shape != (len(self.centers),) for v in self.values.values()):
            raise ValueError("every automaton state needs one value per centre")
        self._zc = self._scale(self.centers)

    @property
    def k(self) -> int:
        return len(self.centers)

    def _scale(self, S) -> np.ndarray:
        return (np.atleast_2d(np.asarray(S, dtype=float)) - self.low) / (self.high - self.low)

    def weights(self, S) -> np.ndarray:
        """Row-normalised kernel weights of the centres at each row of ``S``."""
        Z = self._scale(S)
        d = np.sqrt(((Z[:, None, :] - self._zc[None, :, :]) ** 2).sum(axis=2))
        # shifting by the row minimum keeps the largest weight at 1
        K = np.exp(-(d - d.min(axis=1, keepdims=True)) / self.h)
        return K / K.sum(axis=1, keepdims=True)

    def lv(self, S, q: str) -> np.ndarray:
        if q == SINK:
            return np.zeros(len(np.atleast_2d(S)))
        return self.weights(S) @ self.values[q]

    def copy(self) -> "ValueTable":
        return ValueTable(self.centers, self.low, self.high, self.h, self.Z,
                          {q: v.copy() for q, v in self.values.items()})

    def to_dict(self) -> dict:
        return {"kind": "fvi", "version": 1, "h": self.h, "Z": self.Z,
                "low": self.low.tolist(), "high": self.high.tolist(),
                "centers": self.centers.tolist(),
                "values": {q: v.tolist() for q, v in self.values.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "ValueTable":
        if d.get("kind") != "fvi" or d.get("version") != 1:
            raise ValueError("not a version-1 value table snapshot")
        return cls(d["centers"], d["low"], d["high"], d["h"], d["Z"], d["values"])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ValueTable":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def export_field(self, path, q: str, resolution: int = 50):
        """Kernel value of ``q`` on a regular lattice, one CSV row per point."""
        axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(self.low, self.high)]
        pts = np.stack([m.reshape(-1) for m in np.meshgrid(*axes, indexing="ij")], axis=1)
        vals = self.lv(pts, q)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(pts.shape[1])] + ["value"])
            for p, v in zip(pts, vals):
                w.writerow(list(p) + [v])


def kernel_value(vt: ValueTable, ps) -> float:
    """Kernel-averaged value of a single product state."""
    return float(vt.lv(np.asarray(ps.s, dtype=float).reshape(1, -1), ps.q)[0])


class SampleCache:
    """Successor product states drawn once per (centre, automaton state, action).

    ``entries[(q, a)]`` is ``(S_next, q_next)`` with ``S_next`` of shape
    ``(k, Z, dim)`` and ``q_next`` an object array of shape ``(k, Z)``.
    """

    def __init__(self, entries: dict):
        self.entries = entries

    def __getitem__(self, key):
        if key not in self.entries:
            raise KeyError(f"no cached successors for {key!r}")
        return self.entries[key]

    @property
    def samples(self) -> int:
        return sum(q2.size for _, q2 in self.entries.values())


def _successor_states(env, aut: LDBA, S, q: str, a, rng, pick=None):
    """Product successors of every row of ``S`` under ``a``.  Nondeterministic
    automaton moves go to ``pick(S_next, options)`` or a uniform choice."""
    if isinstance(a, Eps):
        return S.copy(), np.full(len(S), a.target, dtype=object)
    S2 = env.step_batch(S, np.full(len(S), env.actions.index(a)), rng)
    out = np.empty(len(S), dtype=object)
    for i, lab in enumerate(env.label_batch(S2)):
        succ = aut.step(q, lab)
        if len(succ) == 1:
            out[i] = next(iter(succ))
        elif pick is not None:
            out[i] = pick(S2[i], sorted(succ))
        else:
            opts = sorted(succ)
            out[i] = opts[int(rng.integers(len(opts)))]
    return S2, out


def sample_cache(env, aut: LDBA, centers, Z: int, rng, states=None) -> SampleCache:
    actions = product_actions(env, aut)
    entries = {}
    k = len(centers)
    for q in (aut.states if states is None else states):
        for a, ok in zip(actions, valid_mask(env, aut, q, actions)):
            if not ok:
                continue
            S = np.repeat(centers, Z, axis=0)
            S2, q2 = _successor_states(env, aut, S, q, a, rng)
            entries[(q, a)] = (S2.reshape(k, Z, -1), q2.reshape(k, Z))
    return SampleCache(entries)


def mc_backup(vt: ValueTable, cache: SampleCache, i: int, q: str, a) -> float:
    """Mean kernel value over the cached successors of centre ``i``."""
    S2, q2 = cache[(q, a)]
    vals = [vt.lv(S2[i, z][None, :], q2[i, z])[0] for z in range(S2.shape[1])]
    return float(np.mean(vals))


@dataclass
class FviConfig:
    k: int = 100
    h: float = 0.18
    Z: int = 25
    sweeps: int = 80
    tol: float = 1e-6
    Zp: int | None = None
    seed: int = 0
    eval_trials: int = 100
    eval_steps: int | None = None
    eval_seed: int = 12345
    gamma: float = 0.9

    def __post_init__(self):
        if self.k < 1 or self.Z < 1:
            raise ValueError("need k >= 1 and Z >= 1")
        if self.h <= 0:
            raise ValueError("h must be positive")
        if self.sweeps < 0:
            raise ValueError("sweeps must be non-negative")


@dataclass
class FviReport:
    sample_complexity: int
    samples_drawn: int
    sweeps: int
    final_change: float
    train_time: float
    success_rate: float | None = None
    discounted_reward: float | None = None

    @property
    def iterations(self) -> int:
        return self.sweeps

    def to_dict(self) -> dict:
        return asdict(self)


def fvi_sample_complexity(k: int, Z: int, n_actions: int, n_states: int) -> int:
    """Successor draws with the accepting state's centres left unsampled."""
    return k * Z * n_actions * (n_states - 1)


def initial_values(aut: LDBA, k: int, params: RewardParams, rng) -> dict:
    """``r_p`` on accepting automaton states, ``r_n`` elsewhere, per centre."""
    def draw(base):
        if not params.y:
            return np.full(k, base)
        return np.array([base + params.y * params.m * _rand_open(rng) for _ in range(k)])
    acc = aut.accepting_union
    return {q: draw(params.M) if q in acc else draw(0.0) for q in aut.states}


def _backup_operators(vt: ValueTable, cache: SampleCache, q: str, actions, mask):
    """Per action, ``{q': (W, sel)}`` so that the backup of all centres is
    ``sum_q' W @ v[q']`` (the 1/Z mean is folded into ``W``)."""
    ops = []
    for a, ok in zip(actions, mask):
        if not ok:
            continue
        S2, q2 = cache[(q, a)]
        k, Z = q2.shape
        flat_s, flat_q = S2.reshape(k * Z, -1), q2.reshape(-1)
        parts = {}
        for qn in dict.fromkeys(flat_q):
            if qn == SINK:
                continue
            rows = np.flatnonzero(flat_q == qn)
            W = np.zeros((k, vt.k))
            np.add.at(W, rows // Z, vt.weights(flat_s[rows]) / Z)
            parts[qn] = W
        ops.append(parts)
    return ops


def fvi_train(env, aut: LDBA, params: RewardParams, cfg: FviConfig):
    """Run fitted value iteration; returns ``(ValueTable, FviReport)``.

    Sweeps visit automaton states in backward order.  Within one automaton
    state all centres are backed up from the values at the start of that
    state's update.  Centres of accepting automaton states keep their initial
    values and are never sampled.  Stops after ``cfg.sweeps`` sweeps or once
    the largest change falls below ``cfg.tol``.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    centers = uniform_grid(env.low, env.high, cfg.k)
    vt = ValueTable(centers, env.low, env.high, cfg.h, cfg.Z,
                    initial_values(aut, cfg.k, params, rng))
    actions = product_actions(env, aut)
    acc = aut.accepting_union
    order = [q for q in aut.backward_order() if q not in acc]
    cache = sample_cache(env, aut, centers, cfg.Z, rng, order)
    ops = {q: _backup_operators(vt, cache, q, actions, valid_mask(env, aut, q, actions))
           for q in order}
    done, change = 0, 0.0
    for sweep in range(cfg.sweeps):
        change = 0.0
        for q in order:
            backups = [sum(W @ vt.values[qn] for qn, W in parts.items())
                       if parts else np.zeros(vt.k) for parts in ops[q]]
            new = np.max(np.stack(backups), axis=0)
            change = max(change, float(np.max(np.abs(new - vt.values[q]))))
            vt.values[q] = new
        done = sweep + 1
        if change < cfg.tol:
            break
    report = FviReport(
        sample_complexity=fvi_sample_complexity(cfg.k, cfg.Z, len(env.actions), len(aut.states)),
        samples_drawn=cache.samples, sweeps=done, final_change=change,
        train_time=time.perf_counter() - t0)
    return vt, report


class FviPolicy(Policy):
    """Greedy policy on fresh Monte-Carlo estimates of the next kernel value."""

    def __init__(self, vt: ValueTable, env, aut: LDBA, Zp: int | None = None):
        self.vt = vt
        self.env = env
        self.aut = aut
        self.Zp = vt.Z if Zp is None else Zp
        self.actions = product_actions(env, aut)
        self._masks = {q: valid_mask(env, aut, q, self.actions) for q in aut.states}

    def _pick(self, s, options):
        vals = [self.vt.lv(s[None, :], o)[0] for o in options]
        return options[int(np.argmax(vals))]

    def scores(self, S, q, rng):
        S = np.atleast_2d(np.asarray(S, dtype=float))
        n = len(S)
        M = np.full((n, len(self.actions)), -np.inf)
        if q == SINK:
            M[:, : len(self.env.actions)] = 0.0
            return M
        rep = np.repeat(S, self.Zp, axis=0)
        for j, (a, ok) in enumerate(zip(self.actions, self._masks[q])):
            if not ok:
                continue
            S2, q2 = _successor_states(self.env, self.aut, rep, q, a, rng, self._pick)
            vals = np.empty(len(S2))
            for qn in dict.fromkeys(q2):
                rows = np.flatnonzero(q2 == qn)
                vals[rows] = self.vt.lv(S2[rows], qn)
            M[:, j] = vals.reshape(n, self.Zp).mean(axis=1)
        return M

    def value(self, S, q, rng):
        return self.vt.lv(S, q)


def fvi_policy(vt: ValueTable, env, aut: LDBA, Zp: int | None = None) -> FviPolicy:
    return FviPolicy(vt, env, aut, Zp)


def fvi_evaluate(vt: ValueTable, env, aut: LDBA, params: RewardParams, cfg: FviConfig):
    T = cfg.eval_steps or step_cap(env)
    return evaluate_policy(fvi_policy(vt, env, aut, cfg.Zp), env, aut, params,
                           cfg.eval_trials, T, cfg.gamma, cfg.eval_seed)
