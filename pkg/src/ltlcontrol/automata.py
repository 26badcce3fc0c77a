"""Limit-deterministic Buchi automata, accepting frontier and trace checking.

Automata are read from a small line-oriented text format::

    # comment
    states: q1 q2 q3
    initial: q1
    deterministic: q1 q2 q3
    accepting: F1 = {q2}; F2 = {q3}
    q1 -- t & !u --> q2
    q1 --eps--> q3

Edge guards are conjunctions of literals over atomic propositions (``p``,
``!p``, or ``true``).  A label set matches a guard iff it satisfies every
literal.  Labels with no matching edge move to an implicit rejecting sink.
"""
from __future__ import annotations

import itertools
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

SINK = "sink"

Label = frozenset


class ParseError(ValueError):
    """Syntax error in an automaton document."""

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class LdbaError(ValueError):
    """The automaton violates a limit-deterministic structural condition."""


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class Guard:
    pos: frozenset = frozenset()
    neg: frozenset = frozenset()

    def matches(self, label: Iterable[str]) -> bool:
        label = label if isinstance(label, (set, frozenset)) else set(label)
        return self.pos <= label and not (self.neg & label)

    @property
    def props(self) -> frozenset:
        return self.pos | self.neg

    def __str__(self) -> str:
        lits = sorted(self.pos) + ["!" + p for p in sorted(self.neg)]
        return " & ".join(lits) if lits else "true"


@dataclass(frozen=True)
class Edge:
    src: str
    guard: Guard
    dst: str


@dataclass(frozen=True, eq=False)
class LDBA:
    """An LDBA over the alphabet 2^AP.

    ``states`` keeps declaration order; the implicit sink is not a member.
    Instances are immutable once built and safe to share between rollouts.
    """

    states: tuple
    initial: str
    accepting_sets: tuple
    edges: tuple
    epsilon_moves: dict
    deterministic: frozenset
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        validate_ldba(self)

    @property
    def props(self) -> frozenset:
        out = frozenset()
        for e in self.edges:
            out |= e.guard.props
        return out

    @property
    def accepting_union(self) -> frozenset:
        return frozenset().union(*self.accepting_sets)

    @property
    def nondeterministic(self) -> frozenset:
        return frozenset(self.states) - self.deterministic

    def step(self, q: str, label: Iterable[str]) -> frozenset:
        """Successor set of ``q`` on ``label``; unmatched labels go to the sink."""
        if q == SINK:
            return frozenset((SINK,))
        label = frozenset(label)
        key = (q, label)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if q not in self.states:
            raise KeyError(f"unknown automaton state {q!r}")
        succ = frozenset(e.dst for e in self.edges
                         if e.src == q and e.guard.matches(label))
        if not succ:
            succ = frozenset((SINK,))
        self._cache[key] = succ
        return succ

    def epsilon_targets(self, q: str) -> tuple:
        return tuple(self.epsilon_moves.get(q, ()))

    def distance_to_accepting(self) -> dict:
        """Shortest graph distance (edges and eps-moves) from each state to
        the nearest accepting state; ``inf`` when no accepting state is reachable."""
        preds: dict = {q: set() for q in self.states}
        for e in self.edges:
            preds[e.dst].add(e.src)
        for src, dsts in self.epsilon_moves.items():
            for d in dsts:
                preds[d].add(src)
        dist = {q: float("inf") for q in self.states}
        queue = deque()
        for q in self.states:
            if q in self.accepting_union:
                dist[q] = 0
                queue.append(q)
        while queue:
            q = queue.popleft()
            for p in preds[q]:
                if dist[p] == float("inf"):
                    dist[p] = dist[q] + 1
                    queue.append(p)
        return dist

    def backward_order(self) -> list:
        """States ordered accepting-side first (ties keep declaration order)."""
        dist = self.distance_to_accepting()
        return sorted(self.states, key=lambda q: (dist[q], self.states.index(q)))


def validate_ldba(aut: LDBA) -> None:
    states = set(aut.states)
    if not aut.states:
        raise LdbaError("automaton has no states")
    if len(states) != len(aut.states):
        raise LdbaError("duplicate state names")
    if SINK in states:
        raise LdbaError(f"state name {SINK!r} is reserved for the implicit sink")
    if aut.initial not in states:
        raise LdbaError(f"initial state {aut.initial!r} is not a declared state")
    if not aut.accepting_sets:
        raise LdbaError("at least one accepting set is required (f >= 1)")
    if not aut.deterministic <= states:
        raise LdbaError(f"deterministic part names unknown states: "
                        f"{sorted(aut.deterministic - states)}")
    for j, F in enumerate(aut.accepting_sets, 1):
        if not F:
            raise LdbaError(f"accepting set F{j} is empty")
        if not F <= states:
            raise LdbaError(f"accepting set F{j} names unknown states: {sorted(F - states)}")
        outside = F - aut.deterministic
        if outside:
            raise LdbaError(f"accepting set F{j} contains states outside the "
                            f"deterministic part: {sorted(outside)}")
    for e in aut.edges:
        for q in (e.src, e.dst):
            if q not in states:
                raise LdbaError(f"edge references unknown state {q!r}")
    for src, dsts in aut.epsilon_moves.items():
        if src not in states or not set(dsts) <= states:
            raise LdbaError(f"eps-move references unknown state from {src!r}")
        if src in aut.deterministic:
            raise LdbaError(f"eps-move originates in the deterministic part at {src!r}")
    props = sorted(aut.props)
    for q in aut.deterministic:
        out = [e for e in aut.edges if e.src == q]
        for bits in itertools.product((False, True), repeat=len(props)):
            label = frozenset(p for p, b in zip(props, bits) if b)
            succ = {e.dst for e in out if e.guard.matches(label)}
            if len(succ) > 1:
                raise LdbaError(f"deterministic state {q!r} has {len(succ)} successors "
                                f"on label {sorted(label)}")
            if not succ <= aut.deterministic:
                raise LdbaError(f"deterministic state {q!r} leaves the deterministic "
                                f"part on label {sorted(label)}")


_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_EDGE_RE = re.compile(rf"^\s*({_IDENT})\s*--(.*?)-->\s*({_IDENT})\s*$")
_SET_RE = re.compile(rf"^\s*({_IDENT})\s*=\s*\{{(.*)\}}\s*$")


def _parse_guard(text: str, lineno: int, col: int) -> Guard:
    text = text.strip().replace("∧", "&").replace("¬", "!")
    if text in ("true", "1", ""):
        if not text:
            raise ParseError("empty edge guard", lineno, col)
        return Guard()
    pos, neg = set(), set()
    for lit in text.split("&"):
        lit = lit.strip()
        negated = lit.startswith("!")
        name = lit[1:].strip() if negated else lit
        if not re.fullmatch(_IDENT, name):
            raise ParseError(f"bad literal {lit!r} in guard", lineno, col)
        (neg if negated else pos).add(name)
    if pos & neg:
        raise ParseError(f"guard {text!r} is unsatisfiable", lineno, col)
    return Guard(frozenset(pos), frozenset(neg))


def _names(text: str, lineno: int, col: int) -> list:
    names = [n for n in re.split(r"[\s,]+", text.strip()) if n]
    for n in names:
        if not re.fullmatch(_IDENT, n):
            raise ParseError(f"bad state name {n!r}", lineno, col)
    return names


def parse_ldba(text: str) -> LDBA:
    """Parse an automaton document and check every LDBA invariant."""
    header: dict = {}
    edges: list = []
    eps: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        col = len(line) - len(line.lstrip()) + 1
        m = re.match(r"^\s*(states|initial|deterministic|accepting)\s*:(.*)$", line)
        if m:
            key, rest = m.group(1), m.group(2)
            if key in header:
                raise ParseError(f"duplicate header {key!r}", lineno, col)
            vcol = line.index(":") + 2
            if key == "accepting":
                sets = []
                for part in rest.split(";"):
                    if not part.strip():
                        continue
                    sm = _SET_RE.match(part)
                    if not sm:
                        raise ParseError(f"expected 'F = {{...}}', got {part.strip()!r}",
                                         lineno, vcol)
                    sets.append(frozenset(_names(sm.group(2), lineno, vcol)))
                header[key] = sets
            else:
                header[key] = _names(rest, lineno, vcol)
            continue
        m = _EDGE_RE.match(line)
        if not m:
            raise ParseError(f"cannot parse line {line.strip()!r}", lineno, col)
        src, guard_text, dst = m.groups()
        if guard_text.strip() in ("eps", "ε"):
            eps.setdefault(src, [])
            if dst not in eps[src]:
                eps[src].append(dst)
        else:
            edges.append(Edge(src, _parse_guard(guard_text, lineno, line.index("--") + 3), dst))
    for key in ("states", "initial", "accepting"):
        if key not in header:
            raise ParseError(f"missing header {key!r}", len(text.splitlines()) or 1)
    initial = header["initial"]
    if len(initial) != 1:
        raise LdbaError(f"exactly one initial state is supported, got {initial}")
    states = tuple(header["states"])
    det = frozenset(header.get("deterministic", states))
    return LDBA(states=states, initial=initial[0],
                accepting_sets=tuple(header["accepting"]), edges=tuple(edges),
                epsilon_moves={k: tuple(v) for k, v in eps.items()},
                deterministic=det)


def load_ldba(path) -> LDBA:
    with open(path, encoding="utf-8") as fh:
        return parse_ldba(fh.read())


def format_ldba(aut: LDBA) -> str:
    lines = [f"states: {' '.join(aut.states)}",
             f"initial: {aut.initial}",
             f"deterministic: {' '.join(q for q in aut.states if q in aut.deterministic)}",
             "accepting: " + "; ".join(
                 f"F{j} = {{{' '.join(q for q in aut.states if q in F)}}}"
                 for j, F in enumerate(aut.accepting_sets, 1))]
    lines += [f"{e.src} -- {e.guard} --> {e.dst}" for e in aut.edges]
    for src, dsts in aut.epsilon_moves.items():
        lines += [f"{src} --eps--> {d}" for d in dsts]
    return "\n".join(lines) + "\n"


def step_automaton(aut: LDBA, q: str, label: Iterable[str]) -> frozenset:
    return aut.step(q, label)


def frontier_update(q: str, frontier: frozenset, accepting_sets: Sequence[frozenset]):
    """Accepting frontier update returning ``(new_frontier, pass_completed)``.

    ``pass_completed`` is true when ``q`` closes the last owed accepting set,
    i.e. the second branch of the update fires.  An empty result is reset to
    the union of all accepting sets.
    """
    union = frozenset().union(*accepting_sets)
    owning = [F for F in accepting_sets if q in F]
    if not owning:
        return frontier, False
    # q may belong to several sets; prefer one still owed a visit
    F = next((F for F in owning if F & frontier), owning[0])
    if frontier != F:
        new, completed = frontier - F, False
    else:
        new, completed = union - F, True
    if not new:
        new = union
    return new, completed


def accepting_frontier(q: str, frontier: Iterable[str],
                       accepting_sets: Sequence[Iterable[str]]) -> frozenset:
    sets = [frozenset(F) for F in accepting_sets]
    return frontier_update(q, frozenset(frontier), sets)[0]


@dataclass
class TraceReport:
    run: list
    visits: list
    frontier_passes: int
    first_pass_index: int | None = None

    @property
    def accepted(self) -> bool:
        return self.frontier_passes > 0


def check_trace(aut: LDBA, labels: Sequence[Iterable[str]],
                choices: Sequence = ()) -> TraceReport:
    """Run ``aut`` over a finite label sequence.

    ``choices`` resolves nondeterminism in order of need: at every position
    where the current state has eps-moves one choice is consumed (``None``
    to stay, or the eps target), and whenever a label yields several
    successors one choice names the successor taken.
    """
    choices = list(choices)
    pos = 0

    def take(what):
        nonlocal pos
        if pos >= len(choices):
            raise TraceError(f"choice sequence exhausted before labels ({what})")
        c = choices[pos]
        pos += 1
        return c

    q = aut.initial
    run = [q]
    for label in labels:
        if aut.epsilon_targets(q):
            c = take(f"eps-move at {q}")
            if c is not None:
                if c not in aut.epsilon_targets(q):
                    raise TraceError(f"{c!r} is not an eps-successor of {q!r}")
                q = c
                run.append(q)
        succ = aut.step(q, label)
        if len(succ) > 1:
            c = take(f"successor of {q} on {sorted(label)}")
            if c not in succ:
                raise TraceError(f"{c!r} is not a successor of {q!r} on {sorted(label)}")
            q = c
        else:
            (q,) = succ
        run.append(q)
    visits = [sum(1 for x in run if x in F) for F in aut.accepting_sets]
    frontier = aut.accepting_union
    passes, first = 0, None
    for i, x in enumerate(run[1:], 1):
        frontier, done = frontier_update(x, frontier, aut.accepting_sets)
        if done:
            passes += 1
            if first is None:
                first = i
    return TraceReport(run=run, visits=visits, frontier_passes=passes,
                       first_pass_index=first)
