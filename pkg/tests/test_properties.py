"""Randomized property suite plumbing."""

import numpy as np
import pytest

from senseauction.properties import (ALL_CHECKS, PropertyViolation,
                                     RandomInstance, random_instance,
                                     run_property_suite)


def test_random_instance_replay_is_serializable():
    import json
    rng = np.random.default_rng(0)
    inst = random_instance(rng)
    doc = inst.replay_doc()
    assert json.loads(json.dumps(doc)) == doc
    p = inst.problem("welfare")
    assert p.objective == "welfare"
    assert len(p.edges) == len(inst.tau)


def test_suite_runs_clean_and_counts_checks():
    counts = run_property_suite(trials=25, max_drivers=5, max_riders=5,
                                seed=0)
    assert set(counts) == set(ALL_CHECKS)
    assert counts["exactness"] == 25
    assert counts["settlement"] == 25
    # Strategic checks only apply to instances with competition.
    assert 0 < counts["group_ic"] <= 25
    assert 0 < counts["reporting"] <= 25


def test_suite_is_deterministic_per_seed():
    a = run_property_suite(trials=10, max_drivers=4, max_riders=4, seed=3)
    b = run_property_suite(trials=10, max_drivers=4, max_riders=4, seed=3)
    assert a == b


def test_violation_carries_replay_document():
    with pytest.raises(PropertyViolation) as exc_info:
        raise PropertyViolation("demo", "detail", {"k": 1})
    assert exc_info.value.replay == {"k": 1}
