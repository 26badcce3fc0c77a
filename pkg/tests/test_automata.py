import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ltlcontrol.automata import (SINK, LDBA, LdbaError, ParseError, TraceError,
                                 accepting_frontier, check_trace, format_ldba,
                                 frontier_update, parse_ldba, step_automaton)
from conftest import REACH_AVOID


def test_parse_reach_avoid(reach_avoid):
    assert reach_avoid.states == ("q1", "q2", "q3")
    assert reach_avoid.initial == "q1"
    assert reach_avoid.accepting_sets == (frozenset({"q2"}),)
    edges = {(e.src, str(e.guard), e.dst) for e in reach_avoid.edges}
    assert ("q1", "t & !u", "q2") in edges
    assert ("q2", "t & !u", "q2") in edges
    assert ("q3", "u", "q3") in edges


def test_accepting_state_with_eps_move_rejected():
    doc = """
    states: a b
    initial: a
    deterministic: b
    accepting: F1 = {a}
    a -- eps --> b
    b -- true --> b
    """
    with pytest.raises(LdbaError):
        parse_ldba(doc)


def test_empty_accepting_list_rejected():
    with pytest.raises((LdbaError, ParseError)):
        parse_ldba("states: a\ninitial: a\naccepting:\na -- true --> a\n")


def test_multiple_initial_states_rejected():
    with pytest.raises(LdbaError):
        parse_ldba("states: a b\ninitial: a b\naccepting: F1 = {a}\n")


def test_parse_error_has_position():
    with pytest.raises(ParseError) as e:
        parse_ldba("states: a\ninitial: a\naccepting: F1 = {a}\nthis is not an edge\n")
    assert e.value.line == 4


def test_format_roundtrip(melas_aut):
    again = parse_ldba(format_ldba(melas_aut))
    assert again.states == melas_aut.states
    assert again.accepting_sets == melas_aut.accepting_sets
    for q in melas_aut.states:
        for lab in [(), ("t1",), ("t2",), ("u",), ("t1", "u")]:
            assert again.step(q, lab) == melas_aut.step(q, lab)


def test_step_examples(reach_avoid, melas_aut):
    assert step_automaton(reach_avoid, "q1", {"t"}) == {"q2"}
    assert step_automaton(reach_avoid, "q1", set()) == {"q1"}
    assert step_automaton(melas_aut, "q1", {"u"}) == {"q4"}
    assert step_automaton(melas_aut, "q2", {"u"}) == {"q4"}


def test_unmatched_label_goes_to_sink(reach_avoid):
    assert step_automaton(reach_avoid, "q2", set()) == {SINK}
    assert step_automaton(reach_avoid, SINK, {"t"}) == {SINK}


def test_frontier_examples():
    qa, qb = frozenset({"qa"}), frozenset({"qb"})
    assert accepting_frontier("qc", {"qa", "qb"}, [qa, qb]) == {"qa", "qb"}
    assert accepting_frontier("qa", {"qa", "qb"}, [qa, qb]) == {"qb"}
    # f = 1: the second branch empties the frontier, which is reset
    assert accepting_frontier("q2", {"q2"}, [frozenset({"q2"})]) == {"q2"}


def test_check_trace_examples(reach_avoid):
    r = check_trace(reach_avoid, [set(), {"t"}, {"t"}])
    assert r.run == ["q1", "q1", "q2", "q2"]
    assert r.visits == [2]
    assert r.accepted and r.first_pass_index == 2
    r = check_trace(reach_avoid, [{"u"}])
    assert r.run == ["q1", "q3"] and r.visits == [0] and not r.accepted
    r = check_trace(reach_avoid, [])
    assert r.run == ["q1"] and r.visits == [0]


EPS_DOC = """
states: n a b
initial: n
deterministic: a b
accepting: F1 = {a}
n -- true --> n
n -- eps --> a
n -- eps --> b
a -- p --> a
b -- !p --> b
"""


def test_trace_with_eps_choices():
    aut = parse_ldba(EPS_DOC)
    r = check_trace(aut, [{"p"}, {"p"}], choices=["a", None])
    assert r.run == ["n", "a", "a", "a"]
    assert r.accepted
    with pytest.raises(TraceError):
        check_trace(aut, [{"p"}])
    with pytest.raises(TraceError):
        check_trace(aut, [{"p"}], choices=["zz"])


# ---------------------------------------------------------------- properties

@st.composite
def accepting_structures(draw):
    """States q0..q{n-1} (n <= 4) and f <= 2 nonempty accepting sets."""
    n = draw(st.integers(1, 4))
    states = [f"q{i}" for i in range(n)]
    f = draw(st.integers(1, 2))
    sets = [frozenset(draw(st.sets(st.sampled_from(states), min_size=1))) for _ in range(f)]
    return states, sets


@pytest.mark.property
@given(accepting_structures(), st.data())
def test_frontier_algebra(structure, data):
    states, sets = structure
    union = frozenset().union(*sets)
    frontier = frozenset(data.draw(st.sets(st.sampled_from(sorted(union)), min_size=1)))
    q = data.draw(st.sampled_from(states))
    new, completed = frontier_update(q, frontier, sets)
    assert new and new <= union
    owning = [F for F in sets if q in F]
    if not owning:
        assert new == frontier and not completed
        return
    F = next((F for F in owning if F & frontier), owning[0])
    if frontier != F:
        expect = frontier - F
        assert not completed
    else:
        expect = union - F
        assert completed
    assert new == (expect or union)


@pytest.mark.property
@given(accepting_structures(), st.data())
def test_one_visit_per_set_completes_a_pass(structure, data):
    states, sets = structure
    # sets must be pairwise disjoint for the closing state to be unambiguous
    if any(a & b for a, b in itertools.combinations(sets, 2)):
        return
    union = frozenset().union(*sets)
    order = data.draw(st.permutations(range(len(sets))))
    frontier, passes = union, 0
    for j in order:
        q = data.draw(st.sampled_from(sorted(sets[j])))
        frontier, done = frontier_update(q, frontier, sets)
        passes += done
    assert passes == 1
    # the closing set is dropped from the fresh frontier, or the union is restored
    last = sets[order[-1]]
    assert frontier == ((union - last) or union)


@pytest.mark.property
@given(st.data())
def test_deterministic_part_is_functional(data):
    props = ["p", "r"]
    n = data.draw(st.integers(1, 4))
    states = [f"q{i}" for i in range(n)]
    lines = [f"states: {' '.join(states)}", "initial: q0", "accepting: F1 = {q0}"]
    # one edge per (state, full label) keeps every state deterministic
    for q in states:
        for bits in itertools.product((False, True), repeat=2):
            if data.draw(st.booleans()):
                guard = " & ".join(p if b else f"!{p}" for p, b in zip(props, bits))
                lines.append(f"{q} -- {guard} --> {data.draw(st.sampled_from(states))}")
    aut = parse_ldba("\n".join(lines))
    for q in aut.deterministic:
        for bits in itertools.product((False, True), repeat=2):
            label = {p for p, b in zip(props, bits) if b}
            assert len(aut.step(q, label)) == 1


def test_bundled_automata_are_deterministic(melas_aut, coprates_aut):
    for aut in (melas_aut, coprates_aut):
        assert isinstance(aut, LDBA)
        props = sorted(aut.props)
        for q in aut.deterministic:
            for bits in itertools.product((False, True), repeat=len(props)):
                label = {p for p, b in zip(props, bits) if b}
                assert len(aut.step(q, label)) == 1


def test_reach_avoid_text_matches_bundled(coprates_aut):
    aut = parse_ldba(REACH_AVOID)
    for q in aut.states:
        for lab in [(), ("t",), ("u",), ("t", "u")]:
            assert aut.step(q, lab) == coprates_aut.step(q, lab)
