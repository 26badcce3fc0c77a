"""Continuous-state environments with labelled regions.

``RoverEnv`` is the planar rover: directional moves of random length in
(0, D], a small random jitter for ``stay``, clamping at the map border.
``LineWorld`` is a deterministic 1-D corridor used as an exactly solvable
test bed.  Both expose the same duck-typed interface consumed by the
learners: ``actions``, ``low``/``high``, ``step``, ``step_batch``,
``label``, ``label_batch`` and ``initial_state``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

ROVER_ACTIONS = ("left", "right", "up", "down", "stay")
_DIRECTIONS = {"left": (0, -1.0), "right": (0, 1.0), "down": (1, -1.0), "up": (1, 1.0)}

MAX_REJECTION_DRAWS = 10**6


class MapError(ValueError):
    pass


@dataclass(frozen=True)
class Circle:
    center: tuple
    diameter: float

    def contains(self, pts: np.ndarray) -> np.ndarray:
        d = pts - np.asarray(self.center)
        return np.einsum("ij,ij->i", d, d) <= (self.diameter / 2.0) ** 2

    def contains_point(self, x: float, y: float) -> bool:
        cx, cy = self.center
        return (x - cx) ** 2 + (y - cy) ** 2 <= (self.diameter / 2.0) ** 2

    def bbox(self):
        r = self.diameter / 2.0
        cx, cy = self.center
        return cx - r, cy - r, cx + r, cy + r


@dataclass(frozen=True)
class Rect:
    lo: tuple
    hi: tuple

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.all((pts >= np.asarray(self.lo)) & (pts <= np.asarray(self.hi)), axis=1)

    def contains_point(self, x: float, y: float) -> bool:
        return self.lo[0] <= x <= self.hi[0] and self.lo[1] <= y <= self.hi[1]

    def bbox(self):
        return (*self.lo, *self.hi)


@dataclass(frozen=True)
class Polygon:
    vertices: tuple

    def contains(self, pts: np.ndarray) -> np.ndarray:
        v = np.asarray(self.vertices, dtype=float)
        x, y = pts[:, 0][:, None], pts[:, 1][:, None]
        x1, y1 = v[:, 0][None, :], v[:, 1][None, :]
        x2, y2 = np.roll(v[:, 0], -1)[None, :], np.roll(v[:, 1], -1)[None, :]
        # even-odd ray casting for the interior
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside = (np.sum(crosses & (x < xint), axis=1) % 2) == 1
        # closed set: points on an edge count as inside
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        scale = np.hypot(x2 - x1, y2 - y1) + 1e-300
        on_line = np.abs(cross) / scale <= 1e-9
        within = ((x >= np.minimum(x1, x2) - 1e-9) & (x <= np.maximum(x1, x2) + 1e-9)
                  & (y >= np.minimum(y1, y2) - 1e-9) & (y <= np.maximum(y1, y2) + 1e-9))
        return inside | np.any(on_line & within, axis=1)

    def contains_point(self, x: float, y: float) -> bool:
        v = self.vertices
        inside = False
        for (x1, y1), (x2, y2) in zip(v, v[1:] + v[:1]):
            cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
            if (abs(cross) / (math.hypot(x2 - x1, y2 - y1) + 1e-300) <= 1e-9
                    and min(x1, x2) - 1e-9 <= x <= max(x1, x2) + 1e-9
                    and min(y1, y2) - 1e-9 <= y <= max(y1, y2) + 1e-9):
                return True
            if (y1 > y) != (y2 > y) and x < x1 + (y - y1) * (x2 - x1) / (y2 - y1):
                inside = not inside
        return inside

    def bbox(self):
        v = np.asarray(self.vertices, dtype=float)
        return (*v.min(axis=0), *v.max(axis=0))


@dataclass(frozen=True)
class Region:
    shape: object
    label: frozenset


@dataclass(frozen=True, eq=False)
class LabelledMap:
    """Bounding box ``[0, width] x [0, height]`` (km) with ordered labelled regions.

    Regions are closed; the first region containing a point decides its label.
    """

    width: float
    height: float
    regions: tuple
    default_label: frozenset = frozenset()
    name: str = ""
    landing: tuple | None = None

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise MapError("map dimensions must be positive")
        for i, reg in enumerate(self.regions):
            x0, y0, x1, y1 = reg.shape.bbox()
            tol = 1e-9
            if x0 < -tol or y0 < -tol or x1 > self.width + tol or y1 > self.height + tol:
                raise MapError(f"region {i} ({sorted(reg.label)}) leaves the bounding box")

    @property
    def labels(self) -> tuple:
        """Label table: index ``i`` is region ``i``; the last entry is the default."""
        return tuple(r.label for r in self.regions) + (self.default_label,)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def in_bounds(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return ((pts[:, 0] >= 0) & (pts[:, 0] <= self.width)
                & (pts[:, 1] >= 0) & (pts[:, 1] <= self.height))

    def label_index(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.full(len(pts), len(self.regions), dtype=np.int64)
        undecided = np.ones(len(pts), dtype=bool)
        for i, reg in enumerate(self.regions):
            if not undecided.any():
                break
            hit = np.zeros(len(pts), dtype=bool)
            hit[undecided] = reg.shape.contains(pts[undecided])
            out[hit] = i
            undecided &= ~hit
        return out


def label_of(world: LabelledMap, s) -> frozenset:
    x, y = (float(v) for v in np.asarray(s, dtype=float).reshape(2))
    if not (0.0 <= x <= world.width and 0.0 <= y <= world.height):
        raise MapError(f"state {[x, y]} lies outside the map")
    for reg in world.regions:
        x0, y0, x1, y1 = reg.shape.bbox()
        if x0 <= x <= x1 and y0 <= y <= y1 and reg.shape.contains_point(x, y):
            return reg.label
    return world.default_label


def _shape_from_dict(d: dict):
    kind = d.get("shape")
    if kind == "circle":
        return Circle(tuple(map(float, d["center"])), float(d["diameter"]))
    if kind == "rect":
        return Rect(tuple(map(float, d["min"])), tuple(map(float, d["max"])))
    if kind == "polygon":
        verts = tuple(tuple(map(float, v)) for v in d["vertices"])
        if len(verts) < 3:
            raise MapError("polygon needs at least three vertices")
        return Polygon(verts)
    raise MapError(f"unknown region shape {kind!r}")


def map_from_dict(doc: dict) -> LabelledMap:
    try:
        regions = tuple(Region(_shape_from_dict(r), frozenset(r.get("label", ())))
                        for r in doc.get("regions", ()))
        landing = doc.get("landing")
        return LabelledMap(width=float(doc["width"]), height=float(doc["height"]),
                           regions=regions,
                           default_label=frozenset(doc.get("default_label", ())),
                           name=str(doc.get("name", "")),
                           landing=tuple(map(float, landing)) if landing else None)
    except (KeyError, TypeError) as exc:
        raise MapError(f"malformed map document: {exc}") from exc


def load_map(path) -> LabelledMap:
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise MapError(f"{path}: expected a mapping at top level")
    return map_from_dict(doc)


@dataclass(frozen=True)
class RoverDynamics:
    D: float = 2.0
    d: float = 0.02

    def __post_init__(self):
        if not (0 < self.d < self.D / 10):
            raise ValueError(f"need 0 < d < D/10, got D={self.D}, d={self.d}")


def _step_length(D: float, rng: np.random.Generator, size=None):
    # D * (1 - u) with u in [0, 1) covers (0, D] exactly
    return D * (1.0 - rng.random(size))


def env_step(dyn: RoverDynamics, world: LabelledMap, s, a: str,
             rng: np.random.Generator) -> np.ndarray:
    s = np.array(s, dtype=float)
    if a in _DIRECTIONS:
        axis, sign = _DIRECTIONS[a]
        s[axis] += sign * _step_length(dyn.D, rng)
    elif a == "stay":
        r = dyn.d * math.sqrt(rng.random())
        theta = 2.0 * math.pi * rng.random()
        s[0] += r * math.cos(theta)
        s[1] += r * math.sin(theta)
    else:
        raise ValueError(f"unknown action {a!r}")
    s[0] = min(max(s[0], 0.0), world.width)
    s[1] = min(max(s[1], 0.0), world.height)
    return s


def sample_initial(world: LabelledMap, mode: str, rng: np.random.Generator,
                   s0=None) -> np.ndarray:
    """``mode`` is ``"fixed"`` (returns ``s0``) or ``"uniform"`` (neutral area)."""
    if mode == "fixed":
        if s0 is None:
            raise ValueError("fixed mode needs s0")
        return np.array(s0, dtype=float)
    if mode != "uniform":
        raise ValueError(f"unknown initial-state mode {mode!r}")
    neutral = len(world.regions)
    drawn = 0
    while drawn < MAX_REJECTION_DRAWS:
        n = min(4096, MAX_REJECTION_DRAWS - drawn)
        pts = rng.random((n, 2)) * np.array([world.width, world.height])
        drawn += n
        ok = np.flatnonzero(world.label_index(pts) == neutral)
        if ok.size:
            return pts[ok[0]]
    raise MapError(f"no neutral point found in {MAX_REJECTION_DRAWS} draws")


class RoverEnv:
    """Planar rover on a labelled map."""

    actions = ROVER_ACTIONS
    dim = 2

    def __init__(self, world: LabelledMap, dynamics: RoverDynamics | None = None,
                 initial=None, initial_mode: str = "fixed"):
        self.world = world
        self.dynamics = dynamics or RoverDynamics()
        if initial is None and initial_mode == "fixed":
            initial = world.landing
        self.initial = None if initial is None else np.array(initial, dtype=float)
        self.initial_mode = initial_mode
        self.low = np.zeros(2)
        self.high = np.array([world.width, world.height])
        self._labels = world.labels
        self._dir_axis = np.array([_DIRECTIONS.get(a, (0, 0.0))[0] for a in self.actions])
        self._dir_sign = np.array([_DIRECTIONS.get(a, (0, 0.0))[1] for a in self.actions])
        self._stay = self.actions.index("stay")

    @property
    def diagonal(self) -> float:
        return self.world.diagonal

    @property
    def max_step(self) -> float:
        return self.dynamics.D

    def step(self, s, a: str, rng) -> np.ndarray:
        return env_step(self.dynamics, self.world, s, a, rng)

    def step_batch(self, S: np.ndarray, a_idx, rng) -> np.ndarray:
        """Vectorised step; ``a_idx`` holds one action index per row."""
        S = np.array(S, dtype=float, copy=True)
        a_idx = np.broadcast_to(np.asarray(a_idx, dtype=np.int64), (len(S),))
        n = len(S)
        u = rng.random((n, 2))
        move = a_idx != self._stay
        rows = np.flatnonzero(move)
        delta = self.dynamics.D * (1.0 - u[rows, 0])
        S[rows, self._dir_axis[a_idx[rows]]] += self._dir_sign[a_idx[rows]] * delta
        rows = np.flatnonzero(~move)
        r = self.dynamics.d * np.sqrt(u[rows, 0])
        theta = 2.0 * np.pi * u[rows, 1]
        S[rows, 0] += r * np.cos(theta)
        S[rows, 1] += r * np.sin(theta)
        np.clip(S, self.low, self.high, out=S)
        return S

    def label(self, s) -> frozenset:
        return label_of(self.world, s)

    def label_batch(self, S) -> list:
        return [self._labels[i] for i in self.world.label_index(S)]

    def initial_state(self, rng) -> np.ndarray:
        return sample_initial(self.world, self.initial_mode, rng, self.initial)


class LineWorld:
    """Deterministic corridor of ``n`` unit cells at positions ``0..n-1``.

    Moves shift by exactly one cell and clamp at the ends; ``cell_labels``
    maps a cell index to its label set (unlisted cells are neutral).  With
    ``start=None`` episodes begin in a uniformly drawn neutral cell.
    """

    actions = ("left", "right", "stay")
    dim = 1

    def __init__(self, n: int, cell_labels: dict, start: int | None = 0):
        self.n = n
        self.cell_labels = {int(k): frozenset(v) for k, v in cell_labels.items()}
        self.start = start
        self._neutral = [c for c in range(n) if not self.cell_labels.get(c)]
        if start is None and not self._neutral:
            raise MapError("no neutral cell to start from")
        self.low = np.array([-0.5])
        self.high = np.array([n - 0.5])
        self._shift = np.array([-1.0, 1.0, 0.0])

    @property
    def diagonal(self) -> float:
        return float(self.n - 1)

    @property
    def max_step(self) -> float:
        return 1.0

    def cell(self, s) -> int:
        return int(round(float(np.asarray(s).reshape(-1)[0])))

    def step(self, s, a: str, rng=None) -> np.ndarray:
        x = float(np.asarray(s).reshape(-1)[0]) + self._shift[self.actions.index(a)]
        return np.array([min(max(x, 0.0), self.n - 1.0)])

    def step_batch(self, S, a_idx, rng=None) -> np.ndarray:
        S = np.asarray(S, dtype=float).reshape(-1, 1)
        a_idx = np.broadcast_to(np.asarray(a_idx, dtype=np.int64), (len(S),))
        return np.clip(S + self._shift[a_idx][:, None], 0.0, self.n - 1.0)

    def label(self, s) -> frozenset:
        return self.cell_labels.get(self.cell(s), frozenset())

    def label_batch(self, S) -> list:
        return [self.cell_labels.get(int(round(x)), frozenset())
                for x in np.asarray(S, dtype=float).reshape(-1)]

    def initial_state(self, rng=None) -> np.ndarray:
        if self.start is None:
            return np.array([float(self._neutral[int(rng.integers(len(self._neutral)))])])
        return np.array([float(self.start)])

    def transitions(self) -> dict:
        """Exact model: ``{(cell, action): [(next_cell, prob)]}``."""
        out = {}
        for c in range(self.n):
            for a in self.actions:
                out[(c, a)] = [(self.cell(self.step(np.array([c]), a)), 1.0)]
        return out

    def state_of(self, cell: int) -> np.ndarray:
        return np.array([float(cell)])


ASSET_DIR = Path(__file__).parent / "assets"


def bundled(name: str) -> Path:
    return ASSET_DIR / name
