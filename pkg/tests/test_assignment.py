"""Candidate construction and the two matching programs."""

import json
import math

import numpy as np
import pytest

from senseauction import assignment as asg
from senseauction import oracle
from senseauction.assignment import (CandidateEdge, MatchingProblem,
                                     build_candidates, marginal_objective,
                                     problem_from_json, problem_to_json,
                                     solve, solve_sensing_max,
                                     solve_welfare_max)
from senseauction.errors import ContractError
from senseauction.gridworld import build_grid, build_prospect_model
from senseauction.market import DriverState, Rates, RiderRequest
from senseauction.sensing import CoverageState, SensingParams

RATES = Rates(alpha=1.5, beta=2.75)


def edge(d, r, tau, P_d, P_r, zeta, h_r=1.0):
    return CandidateEdge(driver=d, rider=r, tau=tau, P_d=P_d, P_r=P_r,
                         zeta=zeta, h_r=h_r)


def two_rider_problem():
    # One driver, two riders: r1 has the higher sensing value, r2 the
    # higher surplus.
    e1 = edge("d", "r1", 0.5, 18.36, 19.80, zeta=3.0, h_r=7.2)
    e2 = edge("d", "r2", 0.5, 7.20, 13.20, zeta=1.0, h_r=4.8)
    return MatchingProblem(edges=[e1, e2], drivers=["d"],
                           riders=["r1", "r2"])


# --- candidate construction -------------------------------------------------

def make_scene():
    world = build_grid(4, 4, 1.0, [1.0] * 16)
    model = build_prospect_model(world, xi=50.0, p_star_frac=0.9)
    coverage = CoverageState(n_cells=16, n_intervals=1)
    params = SensingParams(exponent=0.2)
    return world, model, coverage, params


def driver_at(x, y, did="d0"):
    return DriverState(id=did, location=(x, y), b_true=1.0, b_reported=1.0)


def rider_from(world, origin, dest, rid="r0"):
    from senseauction.gridworld import route
    return RiderRequest(id=rid, origin=origin, dest=dest,
                        route=route(world, origin, dest),
                        delta_true=1.0, delta_reported=1.0)


def test_build_candidates_within_radius():
    world, model, coverage, params = make_scene()
    d = driver_at(0.5, 0.5)
    r = rider_from(world, (1.0, 0.5), (3.5, 0.5))
    prob = build_candidates([d], [r], world, RATES, model, coverage,
                            params, radius=2.0)
    assert len(prob.edges) == 1
    e = prob.edges[0]
    assert e.tau == pytest.approx(0.5)
    # Sole candidate, so the pickup is the minimum on both sides and the
    # reported rates drop out of the valuations.
    assert e.sigma == pytest.approx(e.P_r - e.P_d)
    assert e.zeta > 0


def test_build_candidates_respects_radius():
    world, model, coverage, params = make_scene()
    d = driver_at(0.5, 0.5)
    r = rider_from(world, (3.5, 0.5), (3.5, 3.5))
    prob = build_candidates([d], [r], world, RATES, model, coverage,
                            params, radius=2.0)
    assert list(prob.edges) == []


def test_build_candidates_minimum_pickup_per_driver():
    world, model, coverage, params = make_scene()
    d = driver_at(0.5, 0.5)
    near = rider_from(world, (1.0, 0.5), (3.0, 0.5), rid="near")
    far = rider_from(world, (1.5, 0.5), (3.0, 1.5), rid="far")
    prob = build_candidates([d], [near, far], world, RATES, model,
                            coverage, params, radius=2.0)
    by_r = {e.rider: e for e in prob.edges}
    assert by_r["near"].tau == pytest.approx(0.5)
    assert by_r["far"].tau == pytest.approx(1.0)
    # Pickup slack for the far rider is measured against the driver's
    # closest in-radius rider, so its valuation carries b * 0.5 plus a
    # non-negative opportunity-cost term.
    assert (by_r["far"].P_d
            >= RATES.alpha * by_r["far"].h_r + d.b_reported * 0.5 - 1e-9)


# --- welfare maximization ---------------------------------------------------

def test_welfare_max_picks_higher_surplus_rider():
    sol = solve_welfare_max(two_rider_problem())
    assert [(e.driver, e.rider) for e in sol.chosen] == [("d", "r2")]
    assert sol.objective_value == pytest.approx(6.0)
    assert sol.welfare_total == pytest.approx(6.0)


def test_welfare_max_drops_negative_surplus_edges():
    e = edge("d", "r", 0.5, 10.0, 8.0, zeta=5.0)
    sol = solve_welfare_max(MatchingProblem(edges=[e], drivers=["d"],
                                            riders=["r"]))
    assert list(sol.chosen) == []
    assert sol.objective_value == 0.0


def test_sensing_max_picks_higher_externality_rider():
    sol = solve_sensing_max(two_rider_problem())
    assert [(e.driver, e.rider) for e in sol.chosen] == [("d", "r1")]
    assert sol.objective_value == pytest.approx(3.0)
    assert sol.welfare_total == pytest.approx(1.44)


def test_sensing_max_floor_blocks_lone_negative_match():
    e = edge("d", "r", 0.5, 10.0, 5.0, zeta=3.0)   # sigma = -5
    sol = solve_sensing_max(MatchingProblem(edges=[e], drivers=["d"],
                                            riders=["r"]))
    assert list(sol.chosen) == []


def test_sensing_max_cross_subsidy_clears_floor():
    # A surplus-positive pair bankrolls a surplus-negative, high-sensing one.
    e1 = edge("d1", "r1", 0.5, 10.0, 5.0, zeta=3.0)   # sigma = -5
    e2 = edge("d2", "r2", 0.5, 4.0, 10.0, zeta=0.1)   # sigma = +6
    sol = solve_sensing_max(MatchingProblem(edges=[e1, e2],
                                            drivers=["d1", "d2"],
                                            riders=["r1", "r2"]))
    assert {(e.driver, e.rider) for e in sol.chosen} == {("d1", "r1"),
                                                         ("d2", "r2")}
    assert sol.objective_value == pytest.approx(3.1)
    assert sol.welfare_total == pytest.approx(1.0)


def test_solve_dispatches_on_objective():
    p = two_rider_problem()
    p.objective = "welfare"
    assert solve(p).chosen[0].rider == "r2"
    p.objective = "sensing"
    assert solve(p).chosen[0].rider == "r1"
    p.objective = "nope"
    with pytest.raises(ContractError):
        solve(p)


def test_duplicate_pair_rejected():
    with pytest.raises(ContractError):
        MatchingProblem(edges=[edge("d", "r", 0.5, 1, 2, 1),
                               edge("d", "r", 0.7, 1, 2, 1)],
                        drivers=["d"], riders=["r"])


# --- marginal objectives ----------------------------------------------------

def test_marginal_objective_hand_values():
    p = two_rider_problem()
    p.objective = "welfare"
    # Removing the unmatched rider leaves the optimum untouched; removing
    # the matched one forces the fallback pair.
    assert marginal_objective(p, "r1") == pytest.approx(6.0)
    assert marginal_objective(p, "r2") == pytest.approx(1.44)
    assert marginal_objective(p, "d") == pytest.approx(0.0)
    with pytest.raises(ContractError):
        marginal_objective(p, "ghost")


def test_removal_never_raises_objective():
    rng = np.random.default_rng(7)
    for _ in range(30):
        p = random_problem(rng)
        for objective in ("welfare", "sensing"):
            p.objective = objective
            base = solve(p).objective_value
            for who in p.drivers + p.riders:
                assert marginal_objective(p, who) <= base + 1e-9


# --- exactness against the brute-force oracle --------------------------------

def random_problem(rng, n_d=5, n_r=5):
    drivers = [f"d{i}" for i in range(rng.integers(1, n_d + 1))]
    riders = [f"r{j}" for j in range(rng.integers(1, n_r + 1))]
    edges = []
    for d in drivers:
        for r in riders:
            if rng.random() < 0.6:
                edges.append(edge(d, r, float(rng.uniform(0.05, 2.0)),
                                  float(rng.uniform(0, 10)),
                                  float(rng.uniform(0, 10)),
                                  float(rng.uniform(0, 3))))
    return MatchingProblem(edges=edges, drivers=drivers, riders=riders)


def test_welfare_max_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(80):
        p = random_problem(rng)
        sol = solve_welfare_max(p)
        v, w, pairs = oracle.brute_force_solve(p, objective="welfare",
                                               floor=False)
        assert sol.objective_value == pytest.approx(v, abs=1e-9)
        assert sorted(e.pair for e in sol.chosen) == sorted(pairs)


def test_sensing_max_matches_brute_force():
    rng = np.random.default_rng(13)
    for _ in range(80):
        p = random_problem(rng)
        sol = solve_sensing_max(p)
        v, w, pairs = oracle.brute_force_solve(p, objective="sensing",
                                               floor=True, drop_negative=False)
        assert sol.objective_value == pytest.approx(v, abs=1e-9)
        assert sol.welfare_total >= -1e-9
        assert sorted(e.pair for e in sol.chosen) == sorted(pairs)


def test_solvers_are_deterministic():
    rng = np.random.default_rng(17)
    p = random_problem(rng, 6, 6)
    first = solve_sensing_max(p)
    for _ in range(5):
        again = solve_sensing_max(p)
        assert [e.pair for e in again.chosen] == [e.pair for e in first.chosen]


# --- serialization ------------------------------------------------------------

def test_problem_json_round_trip(tmp_path):
    p = two_rider_problem()
    p.objective = "sensing"
    doc = problem_to_json(p)
    q = problem_from_json(doc)
    assert q.objective == p.objective
    assert sorted(e.pair for e in q.edges) == sorted(e.pair for e in p.edges)
    assert solve(q).objective_value == pytest.approx(
        solve(p).objective_value)
    # Also accepts a file path.
    path = tmp_path / "problem.json"
    path.write_text(doc)
    assert list(problem_from_json(path).riders) == list(p.riders)


def test_problem_from_json_handles_long_inline_documents():
    p = two_rider_problem()
    doc = problem_to_json(p)
    doc = json.dumps(json.loads(doc))  # normalize, still a plain string
    assert list(problem_from_json(doc + " " * 4096).drivers) == list(p.drivers)
