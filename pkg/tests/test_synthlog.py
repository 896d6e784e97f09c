import math

import numpy as np
import pytest

from xnap.errors import InvalidSpec, NotACopyTask
from xnap.eventlog import compute_stats
from xnap.synthlog import (
    GrammarSpec,
    copy_task,
    generate,
    linear_grammar,
    oracle_relevant_position,
)


class TestLinearGrammar:
    def test_single_variant(self):
        log = generate(linear_grammar(["A", "B", "C"], 100, seed=1))
        assert len(log) == 100
        assert {t.activities for t in log} == {("A", "B", "C")}
        assert compute_stats(log).n_variants == 1

    def test_same_seed_identical(self):
        spec = linear_grammar(["A", "B"], 20, seed=9)
        assert generate(spec) == generate(spec)

    def test_timestamps_strictly_increase(self):
        log = generate(linear_grammar(["A", "B", "C", "D"], 10, seed=2))
        for trace in log:
            stamps = [e.timestamp for e in trace.events]
            assert all(a < b for a, b in zip(stamps, stamps[1:]))


class TestStochasticGrammar:
    def test_transition_frequencies_converge(self):
        spec = GrammarSpec(
            mode="markov", n_traces=2000, seed=3, start="A",
            transitions={
                "A": (("B", 0.7), ("C", 0.3)),
                "B": ((None, 1.0),),
                "C": ((None, 1.0),),
            })
        log = generate(spec)
        freq_b = sum(t.activities[1] == "B" for t in log) / len(log)
        sigma = math.sqrt(0.7 * 0.3 / len(log))
        assert abs(freq_b - 0.7) <= 3 * sigma

    def test_length_range_respected(self):
        spec = GrammarSpec(
            mode="markov", n_traces=200, seed=4, start="A",
            transitions={"A": (("A", 0.6), (None, 0.4))},
            min_length=2, max_length=5)
        log = generate(spec)
        assert all(2 <= len(t) <= 5 for t in log)

    def test_bad_probabilities_rejected(self):
        with pytest.raises(InvalidSpec):
            GrammarSpec(mode="markov", n_traces=1, seed=0, start="A",
                        transitions={"A": (("A", 0.5), (None, 0.4))})

    def test_unreachable_terminal_rejected(self):
        with pytest.raises(InvalidSpec):
            GrammarSpec(mode="markov", n_traces=1, seed=0, start="A",
                        transitions={"A": (("B", 1.0),), "B": (("A", 1.0),)})


class TestCopyTask:
    def test_rule_holds_on_every_trace(self):
        spec = copy_task(300, seed=5)  # X->P, Y->Q at distance 3
        log = generate(spec)
        mapping = dict(zip(spec.key_choices, spec.key_targets))
        seen = set()
        for trace in log:
            acts = trace.activities
            assert len(acts) == 4
            assert acts[0] in mapping
            assert acts[3] == mapping[acts[0]]
            assert acts[1:3] == ("F1", "F2")
            seen.add(acts[0])
        assert seen == {"X", "Y"}  # both keys drawn

    def test_oracle_position(self):
        spec = copy_task(5, seed=6)
        log = generate(spec)
        assert oracle_relevant_position(spec, log.traces[0]) == 1

    def test_multi_key_variant(self):
        spec = copy_task(50, seed=7, key_choices=("X", "Y", "Z"),
                         key_targets=("P", "Q", "R"), key_position=2,
                         key_distance=2, fillers=("F",))
        log = generate(spec)
        mapping = dict(zip(spec.key_choices, spec.key_targets))
        for trace in log:
            acts = trace.activities
            assert acts[0] == "F"
            assert acts[3] == mapping[acts[1]]
        assert oracle_relevant_position(spec, log.traces[0]) == 2

    def test_not_a_copy_task(self):
        spec = linear_grammar(["A", "B"], 5, seed=8)
        log = generate(spec)
        with pytest.raises(NotACopyTask):
            oracle_relevant_position(spec, log.traces[0])

    def test_invalid_copy_specs(self):
        with pytest.raises(InvalidSpec):
            copy_task(10, key_choices=("X",), key_targets=("P", "Q"))
        with pytest.raises(InvalidSpec):
            copy_task(10, key_distance=3, fillers=())
        with pytest.raises(InvalidSpec):
            copy_task(10, fillers=("X",))  # collides with a key
