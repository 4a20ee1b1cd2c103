"""Exhaustive-enumeration reference for the matching programs.

Deliberately independent of the branch-and-bound solver: plain recursion over
riders, no bounding, no assignment library. Intended for small instances
(up to about 8x8) in verification harnesses.
"""

from __future__ import annotations

from .assignment import MatchingProblem

_TOL = 1e-9


def brute_force_solve(problem: MatchingProblem, objective: str | None = None,
                      floor: bool | None = None, drop_negative: bool = True):
    """Enumerate every matching; return (objective_value, welfare_total, pairs).

    Ranking mirrors the documented tie-break: objective, then total welfare,
    then lower total pick-up distance, then lexicographic pair list. Pass
    drop_negative=False to keep negative-welfare edges in the welfare program
    (the optimum value is unchanged; it verifies the solver's edge filter).
    """
    objective = objective or problem.objective
    floor = (objective == "sensing") if floor is None else floor
    edges = problem.edges
    if objective == "welfare" and drop_negative:
        edges = [e for e in edges if e.sigma >= 0.0]

    # Flat tuples keep the hot recursion free of attribute lookups.
    by_rider: dict[str, list[tuple]] = {}
    for e in edges:
        value = e.sigma if objective == "welfare" else e.zeta
        by_rider.setdefault(e.rider, []).append(
            (e.driver, value, e.sigma, e.tau, (e.driver, e.rider)))
    riders = sorted(by_rider)
    rider_edges = [by_rider[r] for r in riders]
    n = len(riders)

    best = [0.0, 0.0, 0.0, ()]   # value, welfare, tau, sorted pairs

    def recurse(i, used, value, welfare, tau, chosen):
        if i == n:
            if floor and welfare < -_TOL:
                return
            if (value, welfare, -tau) < (best[0], best[1], -best[2]):
                return
            pairs = tuple(sorted(c[4] for c in chosen))
            if (value > best[0]
                    or (value == best[0] and welfare > best[1])
                    or (value == best[0] and welfare == best[1] and tau < best[2])
                    or (value == best[0] and welfare == best[1]
                        and tau == best[2] and pairs < best[3])):
                best[0], best[1], best[2], best[3] = value, welfare, tau, pairs
            return
        recurse(i + 1, used, value, welfare, tau, chosen)
        for c in rider_edges[i]:
            if c[0] not in used:
                recurse(i + 1, used | {c[0]}, value + c[1], welfare + c[2],
                        tau + c[3], chosen + (c,))

    recurse(0, frozenset(), 0.0, 0.0, 0.0, ())
    return best[0], best[1], tuple(best[3])
