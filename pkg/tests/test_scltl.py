"""Formula parsing, bounded-semantics oracle, DFA compilation and export."""

import itertools
import json
import random

import numpy as np
import pytest
from conftest import random_formula

import robustsynth as rs
from robustsynth.scltl import (
    FALSE,
    TRUE,
    Atom,
    NotAtom,
    Until,
    f_until,
)

AP2 = ["p1", "p2"]


class TestParser:
    def test_case_study_reach_avoid(self):
        f = rs.parse_formula("(!p2) U p1", AP2)
        assert f == Until(NotAtom(1, "p2"), Atom(0, "p1"))

    def test_case_study_until(self):
        f = rs.parse_formula("p1 U p2", AP2)
        assert f == Until(Atom(0, "p1"), Atom(1, "p2"))

    def test_eventually_desugars(self):
        assert rs.parse_formula("F p1", AP2) == f_until(TRUE, Atom(0, "p1"))

    def test_constants(self):
        assert rs.parse_formula("true", AP2) is TRUE
        assert rs.parse_formula("false", AP2) is FALSE

    def test_canonical_flatten_sort_dedupe(self):
        a = rs.parse_formula("p1 & (p2 & p1)", AP2)
        b = rs.parse_formula("p2 & p1", AP2)
        assert a == b

    def test_true_false_absorption(self):
        assert rs.parse_formula("p1 & true", AP2) == Atom(0, "p1")
        assert rs.parse_formula("p1 & false", AP2) is FALSE
        assert rs.parse_formula("p1 | true", AP2) is TRUE

    def test_precedence_until_tighter_than_and(self):
        f = rs.parse_formula("p1 & p2 U p1", AP2)
        g = rs.parse_formula("p1 & (p2 U p1)", AP2)
        assert f == g

    def test_until_right_associative(self):
        f = rs.parse_formula("p1 U p2 U p1", AP2)
        assert f == rs.parse_formula("p1 U (p2 U p1)", AP2)

    def test_syntax_error_carries_position(self):
        text = "p1 U (p2 "
        with pytest.raises(rs.FormulaSyntaxError) as err:
            rs.parse_formula(text, AP2)
        assert err.value.position == len(text)

    def test_negation_on_compound_rejected(self):
        with pytest.raises(rs.FormulaSyntaxError):
            rs.parse_formula("!(p1 & p2)", AP2)
        with pytest.raises(rs.FormulaSyntaxError):
            rs.parse_formula("!X p1", AP2)

    def test_unknown_atom(self):
        with pytest.raises(rs.UnknownAtomError):
            rs.parse_formula("p3 U p1", AP2)

    def test_trailing_garbage(self):
        with pytest.raises(rs.FormulaSyntaxError):
            rs.parse_formula("p1 p2", AP2)

    def test_bad_character(self):
        with pytest.raises(rs.FormulaSyntaxError):
            rs.parse_formula("p1 + p2", AP2)


class TestGoodPrefixOracle:
    def test_witness_after_safe_prefix(self):
        f = rs.parse_formula("(!p2) U p1", AP2)
        assert rs.good_prefix_oracle(f, [0b00, 0b01]) is True

    def test_avoid_violated(self):
        f = rs.parse_formula("(!p2) U p1", AP2)
        assert rs.good_prefix_oracle(f, [0b10, 0b01]) is False

    def test_no_witness_in_prefix(self):
        f = rs.parse_formula("p1 U p2", AP2)
        assert rs.good_prefix_oracle(f, [0b01, 0b01, 0b01]) is False

    def test_empty_word(self):
        assert rs.good_prefix_oracle(TRUE, []) is True
        assert rs.good_prefix_oracle(rs.parse_formula("p1", AP2), []) is False


class TestCompile:
    def test_case_study_shapes(self):
        for text in ("(!p2) U p1", "p1 U p2"):
            dfa = rs.compile_to_dfa(rs.parse_formula(text, AP2), AP2)
            assert dfa.n == 3
            assert len(dfa.accepting) == 1
            (acc,) = dfa.accepting
            # accepting location absorbing, and exactly one rejecting sink
            assert np.all(dfa.delta[acc] == acc)
            sinks = [
                q
                for q in range(dfa.n)
                if q not in dfa.accepting and np.all(dfa.delta[q] == q)
            ]
            assert len(sinks) == 1

    def test_true_formula(self):
        dfa = rs.compile_to_dfa(TRUE, AP2)
        assert dfa.n == 1 and dfa.q0 in dfa.accepting

    def test_acceptance_matches_brute_force_enumeration(self):
        # all words up to length 4 over 2^AP, against the bounded-semantics oracle
        for text in ("(!p2) U p1", "p1 U p2"):
            f = rs.parse_formula(text, AP2)
            dfa = rs.compile_to_dfa(f, AP2)
            for length in range(5):
                for word in itertools.product(range(4), repeat=length):
                    assert dfa.accepts(word) == rs.good_prefix_oracle(f, word), (text, word)

    def test_random_formulas_match_oracle(self):
        rng = random.Random(99)
        for _ in range(200):
            num_atoms = rng.randint(1, 3)
            ap = [f"p{i + 1}" for i in range(num_atoms)]
            f = random_formula(rng, num_atoms, rng.randint(1, 4))
            dfa = rs.compile_to_dfa(f, ap)
            for _ in range(50):
                word = [rng.randrange(1 << num_atoms) for _ in range(rng.randint(0, 6))]
                assert dfa.accepts(word) == rs.good_prefix_oracle(f, word)

    def test_prefix_monotone_acceptance(self):
        rng = random.Random(17)
        for _ in range(100):
            num_atoms = rng.randint(1, 2)
            ap = [f"p{i + 1}" for i in range(num_atoms)]
            dfa = rs.compile_to_dfa(random_formula(rng, num_atoms, 3), ap)
            for _ in range(30):
                word = [rng.randrange(1 << num_atoms) for _ in range(rng.randint(0, 5))]
                if dfa.accepts(word):
                    extended = word + [rng.randrange(1 << num_atoms) for _ in range(3)]
                    assert dfa.accepts(extended)

    def test_observable_minimality(self):
        # no two distinct locations accept the same residual language:
        # search the pair graph for a distinguishing word
        rng = random.Random(5)
        formulas = [rs.parse_formula("(!p2) U p1", AP2), rs.parse_formula("p1 U p2", AP2)]
        formulas += [random_formula(rng, 2, 3) for _ in range(40)]
        for f in formulas:
            dfa = rs.compile_to_dfa(f, AP2)
            for q1 in range(dfa.n):
                for q2 in range(q1 + 1, dfa.n):
                    assert self._distinguishable(dfa, q1, q2), (f, q1, q2)

    @staticmethod
    def _distinguishable(dfa, q1, q2) -> bool:
        seen = {(q1, q2)}
        frontier = [(q1, q2)]
        while frontier:
            a, b = frontier.pop()
            if (a in dfa.accepting) != (b in dfa.accepting):
                return True
            for letter in range(dfa.num_letters):
                pair = (int(dfa.delta[a, letter]), int(dfa.delta[b, letter]))
                if pair not in seen:
                    seen.add(pair)
                    frontier.append(pair)
        return False

    def test_state_budget(self):
        f = rs.parse_formula("p1 U (p2 U (p1 & p2))", AP2)
        with pytest.raises(rs.StateBudgetError):
            rs.compile_to_dfa(f, AP2, max_states=2)

    def test_ap_cap(self):
        ap = [f"p{i}" for i in range(17)]
        with pytest.raises(ValueError):
            rs.compile_to_dfa(TRUE, ap)


class TestExport:
    def test_json_round_trip(self):
        dfa = rs.compile_to_dfa(rs.parse_formula("(!p2) U p1", AP2), AP2)
        back = rs.import_dfa(rs.export_dfa(dfa, "json"))
        assert back.ap == dfa.ap
        assert back.q0 == dfa.q0
        assert back.accepting == dfa.accepting
        assert np.array_equal(back.delta, dfa.delta)

    def test_json_schema_fields(self):
        dfa = rs.compile_to_dfa(rs.parse_formula("p1 U p2", AP2), AP2)
        payload = json.loads(rs.export_dfa(dfa, "json"))
        assert set(payload) == {"ap", "n", "q0", "accepting", "delta"}
        assert len(payload["delta"]) == payload["n"] * (1 << len(payload["ap"]))

    def test_dot_node_and_accepting_counts(self):
        dfa = rs.compile_to_dfa(rs.parse_formula("(!p2) U p1", AP2), AP2)
        dot = rs.export_dfa(dfa, "dot")
        assert dot.count("shape=circle") + dot.count("shape=doublecircle") == dfa.n
        assert dot.count("shape=doublecircle") == len(dfa.accepting)

    def test_unknown_format(self):
        dfa = rs.compile_to_dfa(TRUE, AP2)
        with pytest.raises(ValueError):
            rs.export_dfa(dfa, "xml")


class TestValidationEdges:
    def test_duplicate_ap_names_rejected(self):
        with pytest.raises(ValueError):
            rs.parse_formula("p1", ["p1", "p1"])

    def test_reserved_ap_name_rejected(self):
        with pytest.raises(ValueError):
            rs.parse_formula("p1", ["p1", "U"])

    def test_import_rejects_wrong_table_length(self):
        dfa = rs.compile_to_dfa(rs.parse_formula("p1 U p2", AP2), AP2)
        payload = json.loads(rs.export_dfa(dfa, "json"))
        payload["delta"] = payload["delta"][:-1]
        with pytest.raises(ValueError):
            rs.import_dfa(json.dumps(payload))

    def test_import_rejects_out_of_range_targets(self):
        dfa = rs.compile_to_dfa(rs.parse_formula("p1 U p2", AP2), AP2)
        payload = json.loads(rs.export_dfa(dfa, "json"))
        payload["delta"][0] = 99
        with pytest.raises(ValueError):
            rs.import_dfa(json.dumps(payload))
